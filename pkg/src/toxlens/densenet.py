"""Feed-forward multi-task classifier with exact, hand-rolled backprop.

Row-vector convention throughout: activations are ``(batch, dim)`` and a
layer computes ``h_next = f(h @ W + b)``. Hidden layers use the scaled
exponential linear unit; the output layer has one sigmoid unit per task.
Missing labels are handled by a mask that zeroes both the loss and the
gradient contribution of the absent entries.

Everything is float64 numpy and deterministic for a fixed seed, which the
gradient-based attribution code and the reproducibility tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DenseNet",
    "TrainConfig",
    "TrainResult",
    "train",
    "auc",
    "selu",
    "sigmoid",
    "preset_config",
    "PRESETS",
]

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(x))


def selu_derivative(x):
    x = np.asarray(x, dtype=np.float64)
    return SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(x))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class DenseNet:
    """Multi-layer perceptron: SELU hidden layers, per-task sigmoid outputs.

    Args:
        weights: List of ``(d_in, d_out)`` float64 matrices.
        biases: Matching list of ``(d_out,)`` vectors.
        output: ``"sigmoid"`` for probabilities or ``"identity"`` to expose
            the raw linear output (used for purely linear models).
    """

    def __init__(self, weights, biases, output="sigmoid"):
        if len(weights) != len(biases):
            raise ValueError("weights and biases must pair up")
        if not weights:
            raise ValueError("need at least one layer")
        for i in range(len(weights) - 1):
            if weights[i].shape[1] != weights[i + 1].shape[0]:
                raise ValueError(
                    f"layer {i} output dim {weights[i].shape[1]} does not "
                    f"match layer {i + 1} input dim {weights[i + 1].shape[0]}")
        for w, b in zip(weights, biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias shape does not match weight matrix")
        if output not in ("sigmoid", "identity"):
            raise ValueError(f"unknown output mode {output!r}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.output = output

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_tasks(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @classmethod
    def initialize(cls, input_dim, hidden_dims, n_tasks, seed,
                   output="sigmoid"):
        """Fan-in scaled normal init (variance preserving, suits SELU)."""
        rng = np.random.default_rng(seed)
        dims = [input_dim, *hidden_dims, n_tasks]
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(weights, biases, output=output)

    def copy(self) -> "DenseNet":
        return DenseNet([w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], output=self.output)

    # -- forward ----------------------------------------------------------

    def _forward_cache(self, x):
        """Forward pass keeping pre-activations for backprop.

        Returns (probabilities, hidden activations h1..hL, pre-activation
        list z1..z_out, output logits).
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.input_dim:
            raise ValueError(
                f"input dim {h.shape[1]} does not match network input "
                f"{self.input_dim}")
        activations = []
        pre = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w + b
            pre.append(z)
            h = selu(z)
            activations.append(h)
        logits = h @ self.weights[-1] + self.biases[-1]
        pre.append(logits)
        probs = sigmoid(logits) if self.output == "sigmoid" else logits
        if squeeze:
            probs = probs[0]
            activations = [a[0] for a in activations]
        return probs, activations, pre, logits

    def forward(self, x):
        """Task outputs and all hidden activations for one input or a batch.

        Returns:
            ``(outputs, activations)`` where activations is the list of
            per-hidden-layer activation arrays h^1..h^L.
        """
        probs, activations, _, _ = self._forward_cache(x)
        return probs, activations

    def predict(self, x):
        return self._forward_cache(x)[0]

    def logits(self, x):
        return self._forward_cache(np.atleast_2d(np.asarray(x)))[3]

    # -- gradients --------------------------------------------------------

    def grad_input(self, x, task, output=None):
        """Exact gradient of one task's output with respect to the input.

        Args:
            x: Single input vector or ``(batch, input_dim)`` matrix.
            task: Task index.
            output: Override the differentiation target: ``"sigmoid"``
                (post-sigmoid probability) or ``"identity"`` (logit).
                Defaults to the network's own output mode.

        Returns:
            Gradient array with the same shape as ``x``.
        """
        if not 0 <= task < self.n_tasks:
            raise IndexError(f"task {task} out of range ({self.n_tasks} tasks)")
        mode = output or self.output
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        X = np.atleast_2d(x)
        _, _, pre, logits = self._forward_cache(X)
        z_task = logits[:, task]
        if mode == "sigmoid":
            s = sigmoid(z_task)
            delta = (s * (1.0 - s))[:, None] * self.weights[-1][:, task][None, :]
        else:
            delta = np.broadcast_to(self.weights[-1][:, task][None, :],
                                    (X.shape[0], self.weights[-1].shape[0])).copy()
        for layer in range(self.n_hidden_layers - 1, -1, -1):
            delta = delta * selu_derivative(pre[layer])
            delta = delta @ self.weights[layer].T
        return delta[0] if squeeze else delta

    def _backward(self, X, cache, d_logits):
        """Gradients of a scalar loss given d(loss)/d(logits).

        Returns (weight grads, bias grads, d(loss)/d(input)).
        """
        _, activations, pre, _ = cache
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = d_logits
        for layer in range(len(self.weights) - 1, -1, -1):
            below = X if layer == 0 else activations[layer - 1]
            grads_w[layer] = below.T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * \
                    selu_derivative(pre[layer - 1])
            else:
                delta = delta @ self.weights[layer].T
        return grads_w, grads_b, delta

    def parameters(self):
        return self.weights + self.biases

    def set_parameters(self, params):
        n = len(self.weights)
        self.weights = [np.asarray(p, dtype=np.float64) for p in params[:n]]
        self.biases = [np.asarray(p, dtype=np.float64) for p in params[n:]]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; the seed is mandatory.

    ``hidden_dims`` fixes the architecture; ``patience`` (if set) stops
    training after that many epochs without validation-AUC improvement and
    restores the best parameters.
    """

    seed: int
    hidden_dims: tuple[int, ...] = (1024, 1024, 1024, 1024)
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    init: str = "fan-in-normal"
    patience: int | None = None

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size, learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.patience is not None and self.patience <= 0:
            raise ValueError("patience must be positive")


PRESETS = {
    "tox21-4x1024": {"hidden_dims": (1024,) * 4},
    "tox21-4x2048": {"hidden_dims": (2048,) * 4},
}


def preset_config(name: str, seed: int, **overrides) -> TrainConfig:
    """A named architecture preset as a TrainConfig."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    kwargs = dict(PRESETS[name])
    kwargs.update(overrides)
    return TrainConfig(seed=seed, **kwargs)


@dataclass
class TrainResult:
    net: DenseNet
    history: list[dict] = field(default_factory=list)


class AdamState:
    """Standard Adam accumulator over a flat parameter list."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self.t
        correction2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def masked_bce(logits, y, mask):
    """Masked binary cross-entropy and d(loss)/d(logits).

    The loss is the average over tasks of each task's mean BCE over its
    unmasked entries. Masked entries contribute exactly zero loss and zero
    gradient, and per-task normalization keeps one task's gradient
    independent of how many samples are masked for it elsewhere in the
    batch.
    """
    mask = mask.astype(np.float64)
    counts = mask.sum(axis=0)                       # per task
    n_tasks = logits.shape[1]
    if counts.sum() == 0:
        return 0.0, np.zeros_like(logits)
    safe = np.maximum(counts, 1.0)
    # log(1 + exp(-|z|)) + max(z, 0) - z*y, the stable BCE-with-logits form
    per = np.maximum(logits, 0.0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
    loss = float(((per * mask).sum(axis=0) / safe).sum() / n_tasks)
    d_logits = (sigmoid(logits) - y) * mask / safe / n_tasks
    return loss, d_logits


def train(x, y, cfg: TrainConfig, mask=None, x_valid=None, y_valid=None,
          mask_valid=None) -> TrainResult:
    """Train a dense net on labeled feature vectors.

    Args:
        x: ``(n, d)`` feature matrix.
        y: ``(n, T)`` binary labels (any float where masked).
        cfg: Training configuration; the architecture comes from
            ``cfg.hidden_dims``.
        mask: ``(n, T)`` boolean; False entries are missing labels. All
            present by default.
        x_valid / y_valid / mask_valid: Optional validation split; enables
            the per-epoch AUC report and early stopping.

    Returns:
        TrainResult with the trained network and a per-epoch history of
        training loss and per-task validation AUC (``nan`` for tasks with
        a single class in the validation split, which are reported and
        skipped).

    Raises:
        ValueError: Empty dataset, or some sample has no unmasked label.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    if mask is None:
        mask = np.ones_like(y, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[:, None]
    if (~mask).all(axis=1).any():
        raise ValueError("every sample needs at least one unmasked task label")
    y = np.where(mask, y, 0.0)

    n, d = x.shape
    n_tasks = y.shape[1]
    net = DenseNet.initialize(d, cfg.hidden_dims, n_tasks, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)

    params = net.parameters()
    opt = AdamState(params, cfg.learning_rate) if cfg.optimizer == "adam" else None

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
            xb, yb, mb = x[idx], y[idx], mask[idx]
            cache = net._forward_cache(xb)
            loss, d_logits = masked_bce(cache[3], yb, mb)
            grads_w, grads_b, _ = net._backward(xb, cache, d_logits)
            grads = grads_w + grads_b
            if opt is not None:
                opt.step(params, grads)
            else:
                for p, g in zip(params, grads):
                    p -= cfg.learning_rate * g
            epoch_loss += loss
            n_batches += 1

        record = {"epoch": epoch, "loss": epoch_loss / max(n_batches, 1)}
        if x_valid is not None:
            val_auc = evaluate_auc(net, x_valid, y_valid, mask_valid)
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
    return TrainResult(net=net, history=history)


def evaluate_auc(net, x, y, mask=None):
    """Per-task AUC; nan where the task has fewer than two classes."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if mask is None:
        mask = np.ones_like(y, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[:, None]
    scores = np.atleast_2d(net.predict(x))
    out = np.full(y.shape[1], np.nan)
    for t in range(y.shape[1]):
        m = mask[:, t]
        labels = y[m, t]
        if m.sum() == 0 or len(np.unique(labels)) < 2:
            continue
        out[t] = auc(scores[m, t], labels)
    return out


def auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative.

    Rank formulation with midrank ties (ties count one half).

    Raises:
        ValueError: If only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    neg = ~pos
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = _midranks(scores)
    r_pos = ranks[pos].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values assigned the mean of their ranks."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks
