"""Pair-convolution graph network with a pooling-bypass substructure scorer.

Each convolution layer concatenates every atom's representation with each
of its neighbors', applies one weight matrix and a ReLU to the pairs, and
pools the transformed pairs back into a new per-atom representation with
an order-invariant function (max, sum, or mean). After the convolutions,
the same pooling collapses atoms into a fixed-size molecule vector (one
per layer, concatenated when skip connections are on) that feeds a dense
head ending in per-task sigmoids.

Because atom-wise pooling maps per-atom vectors to a molecule vector of
identical width, the head can equally be applied to a single atom's
representation. Doing so scores the substructure centered at that atom
with radius equal to the number of convolution layers; scores near one
mark substructures indicative of the positive class. Ranking those scores
over a validation set and verifying precision on a test set turns a
trained network into a substructure miner.

All arithmetic is float64 numpy with exact hand-rolled gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chem import MolecularGraph, atoms_within_radius, induced_subgraph, \
    write_smiles
from .densenet import AdamState, DenseNet, auc, masked_bce
from .patterns import match_pattern, pattern_from_graph

__all__ = [
    "AtomFeaturizer",
    "GraphConvNet",
    "GCNTrainConfig",
    "GCNTrainResult",
    "SubstructureScore",
    "ExtractedFragment",
    "conv_layer",
    "forward_molecule",
    "score_substructures",
    "extract_top_substructures",
    "train_gcn",
    "gcn_preset_config",
    "GCN_PRESETS",
]

_POOLS = ("max", "sum", "mean")


@dataclass(frozen=True)
class AtomFeaturizer:
    """One-hot atom features: element identity plus incident bond orders.

    Unknown elements fall into a reserved "other" slot instead of failing.
    The bond block holds, per bond order, how many incident bonds of that
    order the atom has (a multiset sum of one-hot bond encodings, keeping
    the representation strictly per-atom).
    """

    elements: tuple[str, ...] = ("B", "C", "N", "O", "P", "S",
                                 "F", "Cl", "Br", "I")
    bond_orders: tuple[str, ...] = ("single", "double", "triple", "aromatic")

    @property
    def dim(self) -> int:
        return len(self.elements) + 1 + len(self.bond_orders)

    def featurize(self, g: MolecularGraph) -> np.ndarray:
        n_el = len(self.elements)
        out = np.zeros((g.n_atoms, self.dim))
        index = {e: i for i, e in enumerate(self.elements)}
        for v, atom in enumerate(g.atoms):
            out[v, index.get(atom.element, n_el)] = 1.0
            for _, bidx in g.adjacency[v]:
                out[v, n_el + 1 + self.bond_orders.index(g.bonds[bidx].order)] += 1.0
        return out


def _pool_rows(rows: np.ndarray, pool: str):
    """Pool a (k, d) block to (d,); returns (pooled, argmax or None)."""
    if pool == "max":
        arg = rows.argmax(axis=0)
        return rows[arg, np.arange(rows.shape[1])], arg
    if pool == "sum":
        return rows.sum(axis=0), None
    return rows.mean(axis=0), None


class GraphConvNet:
    """Stack of pair-convolution layers plus a dense head.

    Args:
        conv_weights: One ``(2*d_l, d_{l+1})`` matrix per layer.
        head: DenseNet whose input width matches the pooled molecule
            representation (the per-layer sum of widths when
            ``skip_connections`` is on, the last width otherwise).
        pool: "max", "sum" or "mean"; used for both neighbor pooling and
            the atom-wise molecule pooling.
        skip_connections: Concatenate all per-layer molecule vectors.
    """

    def __init__(self, conv_weights, head: DenseNet, pool: str = "max",
                 skip_connections: bool = False,
                 featurizer: AtomFeaturizer | None = None):
        if pool not in _POOLS:
            raise ValueError(f"pool must be one of {_POOLS}")
        self.conv_weights = [np.asarray(w, dtype=np.float64)
                             for w in conv_weights]
        self.featurizer = featurizer or AtomFeaturizer()
        d = self.featurizer.dim
        dims = [d]
        for i, w in enumerate(self.conv_weights):
            if w.shape[0] != 2 * dims[-1]:
                raise ValueError(
                    f"conv layer {i} expects pair width {2 * dims[-1]}, "
                    f"got matrix with {w.shape[0]} rows")
            dims.append(w.shape[1])
        self.dims = dims
        head_in = sum(dims) if skip_connections else dims[-1]
        if head.input_dim != head_in:
            raise ValueError(
                f"head input width {head.input_dim} does not match the "
                f"pooled representation width {head_in}")
        self.head = head
        self.pool = pool
        self.skip_connections = skip_connections

    @property
    def n_layers(self) -> int:
        return len(self.conv_weights)

    @classmethod
    def initialize(cls, conv_filters, head_hidden, n_tasks, seed,
                   pool="max", skip_connections=False, featurizer=None):
        featurizer = featurizer or AtomFeaturizer()
        rng = np.random.default_rng(seed)
        dims = [featurizer.dim, *conv_filters]
        conv_weights = [
            rng.normal(0.0, 1.0 / np.sqrt(2 * d_in), (2 * d_in, d_out))
            for d_in, d_out in zip(dims[:-1], dims[1:])
        ]
        head_in = sum(dims) if skip_connections else dims[-1]
        head = DenseNet.initialize(head_in, head_hidden, n_tasks,
                                   seed=seed + 1)
        return cls(conv_weights, head, pool=pool,
                   skip_connections=skip_connections, featurizer=featurizer)

    # -- forward ----------------------------------------------------------

    def _conv_forward(self, g: MolecularGraph, features=None):
        """All conv layers with the caches needed for exact backprop."""
        h = self.featurizer.featurize(g) if features is None \
            else np.asarray(features, dtype=np.float64)
        if h.shape != (g.n_atoms, self.dims[0]):
            raise ValueError(
                f"features must be ({g.n_atoms}, {self.dims[0]})")
        reps = [h]
        layers = []
        for w in self.conv_weights:
            cache = _conv_layer_forward(reps[-1], g, w, self.pool)
            layers.append(cache)
            reps.append(cache["out"])
        return reps, layers

    def molecule_vector(self, g: MolecularGraph, features=None):
        reps, layers = self._conv_forward(g, features)
        pooled = []
        args = []
        for h in reps:
            vec, arg = _pool_rows(h, self.pool)
            pooled.append(vec)
            args.append(arg)
        h_g = np.concatenate(pooled) if self.skip_connections else pooled[-1]
        return h_g, reps, layers, args

    def predict(self, g: MolecularGraph, features=None) -> np.ndarray:
        """Per-task probabilities for one molecule."""
        if g.n_atoms == 0:
            raise ValueError("cannot run an empty molecule")
        h_g, _, _, _ = self.molecule_vector(g, features)
        probs, _ = self.head.forward(h_g)
        return probs

    def predict_many(self, graphs) -> np.ndarray:
        return np.stack([self.predict(g) for g in graphs])

    def atom_representations(self, g: MolecularGraph, features=None):
        """Per-atom vectors as fed to the head by the pooling bypass."""
        reps, _ = self._conv_forward(g, features)
        if self.skip_connections:
            return np.concatenate(reps, axis=1)
        return reps[-1]

    # -- backward ---------------------------------------------------------

    def _loss_grads(self, g, y, mask, features=None):
        """Loss and exact gradients for a single molecule.

        Returns (loss, conv weight grads, head weight grads, head bias
        grads, d(loss)/d(features)).
        """
        h_g, reps, layers, pool_args = self.molecule_vector(g, features)
        X = h_g[None, :]
        cache = self.head._forward_cache(X)
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        mask = np.atleast_2d(np.asarray(mask, dtype=bool))
        loss, d_logits = masked_bce(cache[3], y, mask)
        grads = self._backward(g, reps, layers, pool_args, X, cache, d_logits)
        return (loss, *grads)

    def _backward(self, g, reps, layers, pool_args, X, head_cache, d_logits):
        head_gw, head_gb, d_hg = self.head._backward(X, head_cache, d_logits)
        d_hg = d_hg[0]
        n_atoms = g.n_atoms

        # Route the molecule-vector gradient back through atom-wise pooling.
        d_reps = [np.zeros_like(h) for h in reps]
        if self.skip_connections:
            split = np.split(d_hg, np.cumsum(self.dims)[:-1])
        else:
            split = [None] * (len(reps) - 1) + [d_hg]
        for l, d_vec in enumerate(split):
            if d_vec is None:
                continue
            if self.pool == "max":
                arg = pool_args[l]
                d_reps[l][arg, np.arange(len(d_vec))] += d_vec
            elif self.pool == "sum":
                d_reps[l] += d_vec[None, :]
            else:
                d_reps[l] += d_vec[None, :] / n_atoms

        conv_grads = [np.zeros_like(w) for w in self.conv_weights]
        for l in range(self.n_layers - 1, -1, -1):
            cache = layers[l]
            d_out = d_reps[l + 1]
            d_in = _conv_layer_backward(cache, d_out, self.conv_weights[l],
                                        conv_grads[l], self.pool)
            d_reps[l] += d_in
        return conv_grads, head_gw, head_gb, d_reps[0]

    def parameters(self):
        return self.conv_weights + self.head.weights + self.head.biases

    def set_parameters(self, params):
        k = len(self.conv_weights)
        h = len(self.head.weights)
        self.conv_weights = [np.asarray(p, dtype=np.float64)
                             for p in params[:k]]
        self.head.weights = [np.asarray(p, dtype=np.float64)
                             for p in params[k:k + h]]
        self.head.biases = [np.asarray(p, dtype=np.float64)
                            for p in params[k + h:]]


def _conv_layer_forward(h, g: MolecularGraph, w, pool: str):
    """One pair-convolution layer; caches pair rows for backprop.

    Pair rows for atom v are its (h_v, h_w) concatenations over neighbors
    w; atoms without neighbors contribute a single (h_v, 0) row so the
    operation is total.
    """
    n_atoms = g.n_atoms
    d = h.shape[1]
    owners, partners = [], []
    starts = [0]
    for v in range(n_atoms):
        nbrs = g.neighbors(v)
        if nbrs:
            for nb in nbrs:
                owners.append(v)
                partners.append(nb)
        else:
            owners.append(v)
            partners.append(-1)
        starts.append(len(owners))
    owners = np.array(owners)
    partners = np.array(partners)

    pairs = np.zeros((len(owners), 2 * d))
    pairs[:, :d] = h[owners]
    real = partners >= 0
    pairs[real, d:] = h[partners[real]]

    z = pairs @ w
    a = np.maximum(z, 0.0)

    out = np.empty((n_atoms, w.shape[1]))
    argmax = np.empty((n_atoms, w.shape[1]), dtype=np.int64) \
        if pool == "max" else None
    for v in range(n_atoms):
        lo, hi = starts[v], starts[v + 1]
        pooled, arg = _pool_rows(a[lo:hi], pool)
        out[v] = pooled
        if arg is not None:
            argmax[v] = lo + arg
    return {"pairs": pairs, "z": z, "out": out, "owners": owners,
            "partners": partners, "starts": starts, "argmax": argmax}


def _conv_layer_backward(cache, d_out, w, w_grad, pool: str):
    """Backprop one conv layer; adds into w_grad, returns d(input reps)."""
    pairs, z = cache["pairs"], cache["z"]
    owners, partners, starts = cache["owners"], cache["partners"], cache["starts"]
    n_atoms = d_out.shape[0]
    d_rows = np.zeros_like(z)
    if pool == "max":
        argmax = cache["argmax"]
        cols = np.arange(z.shape[1])
        for v in range(n_atoms):
            d_rows[argmax[v], cols] += d_out[v]
    elif pool == "sum":
        for v in range(n_atoms):
            d_rows[starts[v]:starts[v + 1]] += d_out[v][None, :]
    else:
        for v in range(n_atoms):
            k = starts[v + 1] - starts[v]
            d_rows[starts[v]:starts[v + 1]] += d_out[v][None, :] / k

    d_z = d_rows * (z > 0)
    w_grad += pairs.T @ d_z
    d_pairs = d_z @ w.T
    d = w.shape[0] // 2
    d_in = np.zeros((n_atoms, d))
    np.add.at(d_in, owners, d_pairs[:, :d])
    real = partners >= 0
    np.add.at(d_in, partners[real], d_pairs[real, d:])
    return d_in


# ---------------------------------------------------------------------------
# functional wrappers
# ---------------------------------------------------------------------------


def conv_layer(reps, g: MolecularGraph, w, pool: str = "max") -> np.ndarray:
    """Apply one pair-convolution layer to per-atom representations."""
    reps = np.asarray(reps, dtype=np.float64)
    if reps.shape[0] != g.n_atoms:
        raise ValueError("representation rows must match atom count")
    if np.asarray(w).shape[0] != 2 * reps.shape[1]:
        raise ValueError("weight matrix rows must be twice the input width")
    return _conv_layer_forward(reps, g, np.asarray(w, dtype=np.float64),
                               pool)["out"]


def forward_molecule(net: GraphConvNet, g: MolecularGraph,
                     features=None) -> np.ndarray:
    """Per-task probabilities for one molecule."""
    return net.predict(g, features)


@dataclass(frozen=True)
class SubstructureScore:
    """Head output for one atom-centered substructure."""

    molecule_id: int
    center: int
    radius: int
    score: float
    atoms: frozenset[int]


def score_substructures(net: GraphConvNet, g: MolecularGraph, task: int = 0,
                        molecule_id: int = 0, features=None
                        ) -> list[SubstructureScore]:
    """Score every atom-centered substructure of one molecule.

    The atom-wise pooling step is bypassed: each atom's final (or, with
    skip connections, concatenated per-layer) representation is fed to the
    dense head directly. The receptive field attached to each score is
    the ball of graph distance <= number of conv layers around the center.
    """
    if not 0 <= task < net.head.n_tasks:
        raise IndexError(f"task {task} out of range")
    reps = net.atom_representations(g, features)
    probs = np.atleast_2d(net.head.predict(reps))
    radius = net.n_layers
    out = []
    for v in range(g.n_atoms):
        out.append(SubstructureScore(
            molecule_id=molecule_id,
            center=v,
            radius=radius,
            score=float(probs[v, task]),
            atoms=atoms_within_radius(g, v, radius),
        ))
    return out


@dataclass
class ExtractedFragment:
    """One ranked substructure with its test-set positive predictive value."""

    smiles: str
    score: float
    ppv: float | None
    support: int
    flag: str                   # "ok" | "support<5" | "no-test-matches"
    molecule_id: int
    center: int


LOW_SUPPORT = 5


def extract_top_substructures(net: GraphConvNet, valid_set, test_set,
                              task: int = 0, k: int = 10
                              ) -> list[ExtractedFragment]:
    """Mine the top-k indicative substructures from a validation set.

    Scores every atom-centered substructure of every validation molecule,
    deduplicates by the canonical form of the induced receptive-field
    fragment (keeping the best score per fragment), ranks by score, and
    computes each fragment's positive predictive value over the test set:
    the fraction of fragment-containing test molecules that are labeled
    positive. PPVs based on fewer than five containing molecules are
    flagged, as is the degenerate case of no containing molecule at all.
    """
    best: dict[str, tuple[float, ExtractedFragment, MolecularGraph]] = {}
    for mol_id, g in enumerate(valid_set.molecules):
        for s in score_substructures(net, g, task=task, molecule_id=mol_id):
            fragment = induced_subgraph(g, s.atoms)
            signature = write_smiles(fragment, canonical=True)
            if signature not in best or s.score > best[signature][0]:
                entry = ExtractedFragment(
                    smiles=signature, score=s.score, ppv=None, support=0,
                    flag="ok", molecule_id=mol_id, center=s.center)
                best[signature] = (s.score, entry, fragment)

    ranked = sorted(best.values(), key=lambda t: (-t[0], t[1].smiles))[:k]

    labels = test_set.labels[:, task]
    mask = test_set.mask[:, task]
    results = []
    for _, entry, fragment in ranked:
        pattern = pattern_from_graph(fragment)
        containing = [i for i, g in enumerate(test_set.molecules)
                      if match_pattern(pattern, g)]
        support = len(containing)
        entry.support = support
        if support == 0:
            entry.ppv = None
            entry.flag = "no-test-matches"
        else:
            positives = sum(1 for i in containing
                            if mask[i] and labels[i] == 1.0)
            entry.ppv = positives / support
            entry.flag = "ok" if support >= LOW_SUPPORT else "support<5"
        results.append(entry)
    return results


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GCNTrainConfig:
    """Architecture plus optimization settings; seed mandatory."""

    seed: int
    conv_filters: tuple[int, ...] = (1024, 1024, 1024)
    head_hidden: tuple[int, ...] = (512,)
    pool: str = "max"
    skip_connections: bool = False
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    patience: int | None = None

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size, learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.pool not in _POOLS:
            raise ValueError(f"pool must be one of {_POOLS}")


GCN_PRESETS = {
    "ames-gcn-3x1024-fc512": {"conv_filters": (1024,) * 3,
                              "head_hidden": (512,)},
}


def gcn_preset_config(name: str, seed: int, **overrides) -> GCNTrainConfig:
    if name not in GCN_PRESETS:
        raise KeyError(f"unknown preset {name!r}; have {sorted(GCN_PRESETS)}")
    kwargs = dict(GCN_PRESETS[name])
    kwargs.update(overrides)
    return GCNTrainConfig(seed=seed, **kwargs)


@dataclass
class GCNTrainResult:
    net: GraphConvNet
    history: list[dict] = field(default_factory=list)


def train_gcn(graphs, y, cfg: GCNTrainConfig, mask=None, valid_graphs=None,
              y_valid=None, mask_valid=None) -> GCNTrainResult:
    """Train a graph-convolution net on labeled molecules.

    Mini-batches of variable-size graphs are handled one molecule at a
    time with gradient accumulation, so batches need no padding and the
    result is deterministic for a fixed seed.
    """
    graphs = list(graphs)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if not graphs:
        raise ValueError("empty dataset")
    if mask is None:
        mask = np.ones_like(y, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[:, None]
    if (~mask).all(axis=1).any():
        raise ValueError("every molecule needs at least one unmasked label")
    y = np.where(mask, y, 0.0)

    n = len(graphs)
    n_tasks = y.shape[1]
    net = GraphConvNet.initialize(cfg.conv_filters, cfg.head_hidden, n_tasks,
                                  seed=cfg.seed, pool=cfg.pool,
                                  skip_connections=cfg.skip_connections)
    features = [net.featurizer.featurize(g) for g in graphs]
    rng = np.random.default_rng(cfg.seed + 1)
    params = net.parameters()
    opt = AdamState(params, cfg.learning_rate) if cfg.optimizer == "adam" \
        else None

    history = []
    best_auc = -np.inf
    best_params = None
    stale = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads = [np.zeros_like(p) for p in params]
            batch_loss = 0.0
            scale = 1.0 / len(idx)
            for i in idx:
                loss, conv_g, head_gw, head_gb, _ = net._loss_grads(
                    graphs[i], y[i], mask[i], features=features[i])
                batch_loss += loss * scale
                for acc, g_ in zip(grads, conv_g + head_gw + head_gb):
                    acc += g_ * scale
            if opt is not None:
                opt.step(params, grads)
            else:
                for p, g_ in zip(params, grads):
                    p -= cfg.learning_rate * g_
            epoch_loss += batch_loss
            n_batches += 1

        record = {"epoch": epoch, "loss": epoch_loss / max(n_batches, 1)}
        if valid_graphs is not None:
            val_auc = _gcn_auc(net, valid_graphs, y_valid, mask_valid)
            record["val_auc"] = val_auc
            mean_auc = np.nanmean(val_auc) if not np.all(np.isnan(val_auc)) \
                else np.nan
            record["val_auc_mean"] = float(mean_auc)
            if cfg.patience is not None and not np.isnan(mean_auc):
                if mean_auc > best_auc + 1e-12:
                    best_auc = mean_auc
                    best_params = [p.copy() for p in params]
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        history.append(record)
                        break
        history.append(record)

    if best_params is not None:
        net.set_parameters(best_params)
    return GCNTrainResult(net=net, history=history)


def _gcn_auc(net, graphs, y, mask=None):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if mask is None:
        mask = np.ones_like(y, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[:, None]
    scores = net.predict_many(graphs)
    out = np.full(y.shape[1], np.nan)
    for t in range(y.shape[1]):
        m = mask[:, t]
        labels = y[m, t]
        if m.sum() and len(np.unique(labels)) == 2:
            out[t] = auc(scores[m, t], labels)
    return out
