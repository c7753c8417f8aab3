"""Synthetic molecule sets, table ingestion, and deterministic splits.

Two generators are provided. The alcohol task labels a molecule positive
iff it carries a hydroxy group on a saturated carbon; negatives are either
completely oxygen-free or carry a carboxylic acid instead. The planted
task embeds chosen marker substructures into the positive class and
verifies the negative class is free of them, which gives a synthetic
ground truth for substructure-extraction experiments.

Every emitted molecule is re-verified against its class definition with
the pattern matcher, so the labels are exact by construction, and every
molecule draws its randomness from a (seed, index) stream so generation
order cannot change the output.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .chem import MolecularGraph, effective_valences, make_graph, parse_smiles, \
    shortest_path_lengths, write_smiles
from .patterns import Pattern, match_pattern, parse_pattern

__all__ = [
    "LabeledSet",
    "GeneratorConfig",
    "generate_alcohol_set",
    "generate_planted_set",
    "load_table",
    "save_table",
    "split",
    "ALCOHOL_PATTERN",
    "ACID_PATTERN",
    "FRAGMENTS",
]

log = logging.getLogger(__name__)

# Hydroxy on a saturated (four-connection) carbon; the acid hydroxyl sits
# on a three-connection carbonyl carbon and is excluded by the X4.
ALCOHOL_SMARTS = "[CX4][OH]"
ACID_SMARTS = "C(=O)[OH]"
ALCOHOL_PATTERN = parse_pattern(ALCOHOL_SMARTS)
ACID_PATTERN = parse_pattern(ACID_SMARTS)


@dataclass(frozen=True)
class Fragment:
    """An attachable marker substructure plus the pattern that detects it."""

    name: str
    atoms: tuple           # (element, charge) pairs
    bonds: tuple           # (a, b, order)
    attach: int            # fragment atom bonded to the host scaffold
    smarts: str

    @property
    def pattern(self) -> Pattern:
        return parse_pattern(self.smarts)


FRAGMENTS = {
    "azo": Fragment("azo", (("N", 0), ("N", 0)), ((0, 1, "double"),), 0, "N=N"),
    "nitro": Fragment("nitro", (("N", 1), ("O", 0), ("O", -1)),
                      ((0, 1, "double"), (0, 2, "single")), 0, "[N+](=O)[O-]"),
    "epoxide": Fragment("epoxide", (("C", 0), ("C", 0), ("O", 0)),
                        ((0, 1, "single"), (1, 2, "single"), (0, 2, "single")),
                        0, "C1CO1"),
    "amine": Fragment("amine", (("N", 0),), (), 0, "N"),
}


@dataclass(frozen=True)
class GeneratorConfig:
    """Composition and scaffold settings for the synthetic generators.

    ``n_positive`` / ``n_negative`` / ``n_acid`` are the class counts
    (the acid class only applies to the alcohol task). ``planted`` and
    ``decoys`` name entries of :data:`FRAGMENTS` for the planted task.
    """

    seed: int
    n_positive: int = 220
    n_negative: int = 4627
    n_acid: int = 153
    size_min: int = 4
    size_max: int = 12
    ring_probability: float = 0.2
    double_bond_probability: float = 0.1
    planted: tuple[str, ...] = ("azo", "nitro")
    decoys: tuple[str, ...] = ("amine",)
    decoy_probability: float = 0.5

    def __post_init__(self):
        if min(self.n_positive, self.n_negative, self.n_acid) < 0:
            raise ValueError("class counts must be non-negative")
        if self.size_min < 1 or self.size_max < self.size_min:
            raise ValueError("need 1 <= size_min <= size_max")
        for name in self.planted + self.decoys:
            if name not in FRAGMENTS:
                raise ValueError(f"unknown fragment {name!r}; "
                                 f"have {sorted(FRAGMENTS)}")


@dataclass
class LabeledSet:
    """Molecules with per-task labels and train/valid/test tags.

    ``labels`` is ``(n, T)`` float with nan marking missing entries;
    ``splits`` holds one of "train", "valid", "test" or "" per molecule.
    """

    smiles: list[str]
    molecules: list[MolecularGraph]
    labels: np.ndarray
    task_names: list[str]
    splits: np.ndarray = None
    skipped: tuple = ()

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.ndim == 1:
            self.labels = self.labels[:, None]
        n = len(self.smiles)
        if len(self.molecules) != n or self.labels.shape[0] != n:
            raise ValueError("molecules/labels/smiles lengths disagree")
        if self.labels.shape[1] != len(self.task_names):
            raise ValueError("label columns do not match task names")
        if self.splits is None:
            self.splits = np.array([""] * n, dtype=object)
        else:
            self.splits = np.asarray(self.splits, dtype=object)

    def __len__(self) -> int:
        return len(self.smiles)

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.labels)

    @property
    def y(self) -> np.ndarray:
        return np.where(self.mask, self.labels, 0.0)

    def subset(self, tag: str) -> "LabeledSet":
        idx = [i for i, t in enumerate(self.splits) if t == tag]
        return self.select(idx)

    def select(self, indices) -> "LabeledSet":
        indices = list(indices)
        return LabeledSet(
            smiles=[self.smiles[i] for i in indices],
            molecules=[self.molecules[i] for i in indices],
            labels=self.labels[indices].copy(),
            task_names=list(self.task_names),
            splits=self.splits[indices].copy(),
        )


# ---------------------------------------------------------------------------
# random scaffolds
# ---------------------------------------------------------------------------

_SCAFFOLD_ELEMENTS = ("C", "C", "C", "C", "C", "C", "C", "C", "N", "S", "F", "Cl")


class _Builder:
    """Mutable atom/bond accumulator with free-valence bookkeeping."""

    def __init__(self):
        self.atoms: list[tuple[str, int]] = []
        self.bonds: list[tuple[int, int, str]] = []

    def add_atom(self, element: str, charge: int = 0) -> int:
        self.atoms.append((element, charge))
        return len(self.atoms) - 1

    def add_bond(self, a: int, b: int, order: str = "single"):
        self.bonds.append((a, b, order))

    def bond_sum(self, idx: int) -> int:
        value = {"single": 1, "double": 2, "triple": 3, "aromatic": 1}
        return sum(value[o] for a, b, o in self.bonds if idx in (a, b))

    def free_valence(self, idx: int) -> int:
        # Scaffold growth sticks to the smallest valence alternative, so
        # generated sulfur/phosphorus stay in their common oxidation states.
        element, charge = self.atoms[idx]
        targets = effective_valences(element, charge)
        if not targets:
            return 0
        return min(targets) - self.bond_sum(idx)

    def saturated_carbons(self) -> list[int]:
        out = []
        for idx, (element, charge) in enumerate(self.atoms):
            if element != "C" or charge != 0:
                continue
            if all(o == "single" for a, b, o in self.bonds if idx in (a, b)):
                out.append(idx)
        return out

    def open_atoms(self, need: int = 1) -> list[int]:
        return [i for i in range(len(self.atoms)) if self.free_valence(i) >= need]

    def graph(self) -> MolecularGraph:
        specs = [(e, False, c) for e, c in self.atoms]
        return make_graph(specs, self.bonds)


def _random_scaffold(rng, cfg: GeneratorConfig, allow_nitrogen=True) -> _Builder:
    size = int(rng.integers(cfg.size_min, cfg.size_max + 1))
    elements = [e for e in _SCAFFOLD_ELEMENTS
                if allow_nitrogen or e != "N"]
    b = _Builder()
    b.add_atom("C")
    while len(b.atoms) < size:
        hosts = b.open_atoms(1)
        if not hosts:
            break
        host = int(rng.choice(hosts))
        element = str(rng.choice(elements))
        new = b.add_atom(element)
        order = "single"
        host_single = all(o == "single" for x, y, o in b.bonds
                          if host in (x, y))
        if element == "C" and b.atoms[host][0] == "C" and host_single \
                and b.free_valence(host) >= 2 \
                and rng.random() < cfg.double_bond_probability:
            order = "double"
        b.add_bond(host, new, order)
    if rng.random() < cfg.ring_probability and len(b.atoms) >= 3:
        g = b.graph()
        candidates = []
        for i in b.open_atoms(1):
            dist = shortest_path_lengths(g, i)
            for j in b.open_atoms(1):
                if j > i and dist[j] >= 2:
                    candidates.append((i, j))
        if candidates:
            i, j = candidates[int(rng.integers(len(candidates)))]
            b.add_bond(i, j, "single")
    return b


def _attach_fragment(b: _Builder, fragment: Fragment, host: int):
    offset = len(b.atoms)
    for element, charge in fragment.atoms:
        b.add_atom(element, charge)
    for a, c, order in fragment.bonds:
        b.add_bond(offset + a, offset + c, order)
    b.add_bond(host, offset + fragment.attach, "single")


def _molecule_rng(seed: int, index: int):
    return np.random.default_rng((seed, index))


_MAX_RETRIES = 200


def generate_alcohol_set(cfg: GeneratorConfig) -> LabeledSet:
    """Positive alcohols, oxygen-free negatives, and acid negatives.

    Every molecule is re-verified against the class rule via pattern
    matching before it is emitted; the emitted class counts equal the
    configured counts exactly.

    Raises:
        ValueError: If a class constraint cannot be satisfied within the
            retry budget (unsatisfiable configuration).
    """
    plan = ["positive"] * cfg.n_positive + ["negative"] * cfg.n_negative + \
        ["acid"] * cfg.n_acid
    smiles, molecules, labels = [], [], []
    for index, kind in enumerate(plan):
        rng = _molecule_rng(cfg.seed, index)
        g = _build_alcohol_molecule(rng, cfg, kind)
        smiles.append(write_smiles(g))
        molecules.append(g)
        labels.append(1.0 if kind == "positive" else 0.0)
    return LabeledSet(smiles=smiles, molecules=molecules,
                      labels=np.array(labels), task_names=["alcohol"])


def _build_alcohol_molecule(rng, cfg, kind) -> MolecularGraph:
    for _ in range(_MAX_RETRIES):
        b = _random_scaffold(rng, cfg)
        if kind == "positive":
            hosts = [i for i in b.saturated_carbons() if b.free_valence(i) >= 1]
            if not hosts:
                continue
            n_groups = 1 if rng.random() < 0.8 else 2
            for _ in range(n_groups):
                hosts = [i for i in b.saturated_carbons()
                         if b.free_valence(i) >= 1]
                if not hosts:
                    break
                host = int(rng.choice(hosts))
                o = b.add_atom("O")
                b.add_bond(host, o, "single")
        elif kind == "acid":
            hosts = b.open_atoms(1)
            if not hosts:
                continue
            host = int(rng.choice(hosts))
            c = b.add_atom("C")
            b.add_bond(host, c, "single")
            o1 = b.add_atom("O")
            b.add_bond(c, o1, "double")
            o2 = b.add_atom("O")
            b.add_bond(c, o2, "single")
        g = b.graph()
        if _alcohol_class_ok(g, kind):
            return g
    raise ValueError(f"could not satisfy class '{kind}' within "
                     f"{_MAX_RETRIES} attempts; configuration unsatisfiable?")


def _alcohol_class_ok(g: MolecularGraph, kind: str) -> bool:
    has_alcohol = bool(match_pattern(ALCOHOL_PATTERN, g))
    has_acid = bool(match_pattern(ACID_PATTERN, g))
    if kind == "positive":
        return has_alcohol and not has_acid
    if kind == "negative":
        return not any(a.element == "O" for a in g.atoms)
    return has_acid and not has_alcohol


def label_alcohol(g: MolecularGraph) -> int:
    """The ground-truth labeling rule for the alcohol task."""
    return 1 if match_pattern(ALCOHOL_PATTERN, g) else 0


def generate_planted_set(cfg: GeneratorConfig) -> LabeledSet:
    """Positives embed one planted marker fragment; negatives embed none.

    Negatives optionally carry decoy fragments so the classes are not
    separable by element counts alone. Every molecule is verified by
    matching: each positive matches at least one planted pattern, each
    negative matches none of them.
    """
    if not cfg.planted:
        raise ValueError("planted-set generation needs at least one fragment")
    planted = [FRAGMENTS[name] for name in cfg.planted]
    decoys = [FRAGMENTS[name] for name in cfg.decoys]
    patterns = [f.pattern for f in planted]

    plan = ["positive"] * cfg.n_positive + ["negative"] * cfg.n_negative
    smiles, molecules, labels = [], [], []
    for index, kind in enumerate(plan):
        rng = _molecule_rng(cfg.seed, index)
        g = _build_planted_molecule(rng, cfg, kind, planted, decoys, patterns)
        smiles.append(write_smiles(g))
        molecules.append(g)
        labels.append(1.0 if kind == "positive" else 0.0)
    return LabeledSet(smiles=smiles, molecules=molecules,
                      labels=np.array(labels), task_names=["planted"])


def _build_planted_molecule(rng, cfg, kind, planted, decoys, patterns):
    for _ in range(_MAX_RETRIES):
        b = _random_scaffold(rng, cfg, allow_nitrogen=False)
        if kind == "positive":
            fragment = planted[int(rng.integers(len(planted)))]
            hosts = b.open_atoms(1)
            if not hosts:
                continue
            _attach_fragment(b, fragment, int(rng.choice(hosts)))
        elif decoys and rng.random() < cfg.decoy_probability:
            fragment = decoys[int(rng.integers(len(decoys)))]
            hosts = b.open_atoms(1)
            if hosts:
                _attach_fragment(b, fragment, int(rng.choice(hosts)))
        g = b.graph()
        hit = any(match_pattern(p, g) for p in patterns)
        if kind == "positive" and hit:
            return g
        if kind == "negative" and not hit:
            return g
    raise ValueError(f"pattern embedding failed for class '{kind}' after "
                     f"{_MAX_RETRIES} attempts")


# ---------------------------------------------------------------------------
# file ingestion
# ---------------------------------------------------------------------------


def load_table(path, fmt: str = "smiles-tsv") -> LabeledSet:
    """Load a molecule table: first column SMILES, one column per task.

    Rows whose SMILES fail to parse are skipped (reason recorded in
    ``LabeledSet.skipped`` and logged); empty label cells become masked
    entries.

    Raises:
        ValueError: Unknown format, missing/malformed header, or no valid
            rows at all.
    """
    if fmt == "smiles-tsv":
        delimiter = "\t"
    elif fmt == "csv":
        delimiter = ","
    else:
        raise ValueError(f"unknown table format {fmt!r}")

    with open(path, newline="") as handle:
        rows = list(csv.reader(handle, delimiter=delimiter))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0].strip().lower() != "smiles":
        raise ValueError(f"{path}: header must start with a 'smiles' column")
    task_names = [h.strip() for h in header[1:]]
    if not task_names:
        raise ValueError(f"{path}: no task columns in header")

    smiles, molecules, labels, skipped = [], [], [], []
    seen: dict[str, int] = {}
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or not row[0].strip():
            continue
        text = row[0].strip()
        try:
            g = parse_smiles(text)
        except ValueError as exc:
            skipped.append((line_no, text, str(exc)))
            log.warning("%s line %d: skipping %r (%s)", path, line_no, text, exc)
            continue
        values = []
        for t in range(len(task_names)):
            cell = row[t + 1].strip() if t + 1 < len(row) else ""
            if cell == "":
                values.append(np.nan)
            else:
                values.append(float(cell))
        if text in seen:
            log.info("%s line %d: duplicate SMILES %r (first at line %d), kept",
                     path, line_no, text, seen[text])
        else:
            seen[text] = line_no
        smiles.append(text)
        molecules.append(g)
        labels.append(values)

    if not smiles:
        raise ValueError(f"{path}: no valid rows")
    return LabeledSet(smiles=smiles, molecules=molecules,
                      labels=np.array(labels, dtype=np.float64),
                      task_names=task_names, skipped=tuple(skipped))


def save_table(ls: LabeledSet, path, fmt: str = "smiles-tsv"):
    """Write a LabeledSet as a SMILES table; masked labels become empty cells."""
    delimiter = "\t" if fmt == "smiles-tsv" else ","
    if fmt not in ("smiles-tsv", "csv"):
        raise ValueError(f"unknown table format {fmt!r}")
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["smiles", *ls.task_names])
        for i, text in enumerate(ls.smiles):
            cells = []
            for t in range(len(ls.task_names)):
                v = ls.labels[i, t]
                cells.append("" if np.isnan(v) else format(v, "g"))
            writer.writerow([text, *cells])


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

_SPLIT_TAGS = ("train", "valid", "test")


def _allocate(n: int, fractions) -> list[int]:
    """Largest-remainder allocation of n items to the fractions."""
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: raw[i] - counts[i],
                   reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def split(ls: LabeledSet, fractions=(0.8, 0.1, 0.1), seed: int = 0,
          stratify: bool = False, stratify_task: int = 0) -> LabeledSet:
    """Tag molecules train/valid/test, deterministically per seed.

    With ``stratify=True`` the per-class ratios of the chosen task are
    preserved within one sample (missing labels form their own stratum).

    Raises:
        ValueError: Fractions not summing to one, or a stratum smaller
            than the number of nonzero fractions.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError("need exactly (train, valid, test) fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    n = len(ls)
    tags = np.array([""] * n, dtype=object)

    def assign(indices):
        indices = np.asarray(indices)
        perm = indices[rng.permutation(len(indices))]
        counts = _allocate(len(indices), fractions)
        start = 0
        for tag, count in zip(_SPLIT_TAGS, counts):
            tags[perm[start:start + count]] = tag
            start += count

    if not stratify:
        assign(np.arange(n))
    else:
        column = ls.labels[:, stratify_task]
        strata = [np.flatnonzero(np.isnan(column))]
        for value in (0.0, 1.0):
            strata.append(np.flatnonzero(column == value))
        n_nonzero = sum(1 for f in fractions if f > 0)
        for stratum in strata:
            if len(stratum) == 0:
                continue
            if len(stratum) < n_nonzero:
                raise ValueError("class too small to stratify")
            assign(stratum)

    out = replace_splits(ls, tags)
    return out


def replace_splits(ls: LabeledSet, tags) -> LabeledSet:
    return LabeledSet(smiles=list(ls.smiles), molecules=list(ls.molecules),
                      labels=ls.labels.copy(), task_names=list(ls.task_names),
                      splits=np.asarray(tags, dtype=object),
                      skipped=ls.skipped)
