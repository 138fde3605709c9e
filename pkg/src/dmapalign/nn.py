"""Minimal deterministic feedforward networks with activation taps.

Dense tanh/identity MLPs backed by NumPy. Everything is float64 and seeded;
two runs with the same seed, config and data produce bit-identical weights.
Networks are frozen after construction (weight arrays are read-only), so
concurrent forward/Jacobian evaluation is safe.

Layer indexing convention: layer 0 is the input itself; layer i >= 1 is the
post-activation output of the i-th weight layer. A "tap" addresses one neuron
as (layer_index, neuron_index) and reads its post-activation value.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, TapSelectionError, TrainingError

ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer widths plus one activation name per non-input layer."""

    layer_widths: tuple
    activations: tuple = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ShapeError("need at least input and output layers")
        if any(w < 1 for w in widths):
            raise ShapeError("all layer widths must be >= 1")
        acts = self.activations
        if acts is None:
            # hidden layers tanh, output identity
            acts = ("tanh",) * (len(widths) - 2) + ("identity",)
        acts = tuple(acts)
        if len(acts) != len(widths) - 1:
            raise ShapeError("need one activation per non-input layer")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ShapeError(f"unknown activation {a!r}")
        object.__setattr__(self, "activations", acts)

    @property
    def n_inputs(self):
        return self.layer_widths[0]

    @property
    def n_outputs(self):
        return self.layer_widths[-1]

    @classmethod
    def from_string(cls, text):
        """Parse shapes like '1-8-8-8-1'."""
        return cls(tuple(int(tok) for tok in text.split("-")))


def _freeze(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Mlp:
    """A trained or freshly initialized dense network (immutable)."""

    spec: ArchitectureSpec
    weights: tuple  # per layer, shape (out, in)
    biases: tuple  # per layer, shape (out,)
    seed: int = 0

    def __post_init__(self):
        widths = self.spec.layer_widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ShapeError("layer count mismatch between spec and parameters")
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = _freeze(w)
            b = _freeze(b)
            if w.shape != (widths[i + 1], widths[i]):
                raise ShapeError(
                    f"layer {i + 1}: weight shape {w.shape} != {(widths[i + 1], widths[i])}"
                )
            if b.shape != (widths[i + 1],):
                raise ShapeError(f"layer {i + 1}: bias shape {b.shape}")
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @classmethod
    def initialize(cls, spec, seed):
        """Uniform +-1/sqrt(fan_in) initialization from a seeded generator."""
        rng = np.random.default_rng(seed)
        widths = spec.layer_widths
        ws, bs = [], []
        for i in range(len(widths) - 1):
            bound = 1.0 / np.sqrt(widths[i])
            ws.append(rng.uniform(-bound, bound, size=(widths[i + 1], widths[i])))
            bs.append(rng.uniform(-bound, bound, size=widths[i + 1]))
        return cls(spec=spec, weights=tuple(ws), biases=tuple(bs), seed=int(seed))


def _apply_activation(name, z):
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_derivative(name, post):
    """Derivative of the activation expressed through its post-activation value."""
    if name == "tanh":
        return 1.0 - post * post
    return np.ones_like(post)


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.spec.n_inputs:
        raise ShapeError(
            f"input has shape {x.shape}, expected (*, {net.spec.n_inputs})"
        )
    return x, single


def layer_activations(net, x):
    """All post-activation values, one (N, width) array per layer (incl. input)."""
    X, _ = _as_batch(net, x)
    acts = [X]
    a = X
    for w, b, name in zip(net.weights, net.biases, net.spec.activations):
        a = _apply_activation(name, a @ w.T + b)
        acts.append(a)
    return acts


def forward(net, x):
    """Evaluate the network; accepts a single vector or a batch of rows."""
    X, single = _as_batch(net, x)
    out = layer_activations(net, X)[-1]
    return out[0] if single else out


@dataclass(frozen=True)
class TapSelection:
    """An ordered choice of neurons whose activations serve as observables."""

    neuron_ids: tuple  # of (layer_index, neuron_index)

    def __post_init__(self):
        ids = tuple((int(l), int(j)) for l, j in self.neuron_ids)
        if len(ids) < 1:
            raise TapSelectionError("need at least one tap")
        object.__setattr__(self, "neuron_ids", ids)

    @property
    def ell(self):
        return len(self.neuron_ids)

    def validate(self, spec):
        widths = spec.layer_widths
        for layer, j in self.neuron_ids:
            if not 0 <= layer < len(widths):
                raise TapSelectionError(f"layer {layer} does not exist")
            if not 0 <= j < widths[layer]:
                raise TapSelectionError(f"neuron {j} does not exist in layer {layer}")

    def whitney_ok(self, spec, intrinsic_dim):
        """True when the tap count and all upstream hidden widths reach 2d+1.

        The input layer is exempt: it carries the manifold itself, so its
        width is not an information bottleneck.
        """
        need = 2 * intrinsic_dim + 1
        if self.ell < need:
            return False
        for layer, _ in self.neuron_ids:
            for upstream in range(1, layer):
                if spec.layer_widths[upstream] < need:
                    return False
        return True

    @classmethod
    def layer(cls, spec, layer_index):
        """All neurons of one layer, in index order."""
        return cls(tuple((layer_index, j) for j in range(spec.layer_widths[layer_index])))

    @classmethod
    def last_hidden(cls, spec):
        return cls.layer(spec, len(spec.layer_widths) - 2)

    @classmethod
    def outputs(cls, spec):
        return cls.layer(spec, len(spec.layer_widths) - 1)


def check_whitney(spec, taps, intrinsic_dim):
    """Warn (never reject) when the tap selection cannot guarantee an embedding."""
    if not taps.whitney_ok(spec, intrinsic_dim):
        warnings.warn(
            f"tap selection (count {taps.ell}) does not satisfy the 2d+1={2 * intrinsic_dim + 1} "
            f"generic-observable guarantee for intrinsic dimension {intrinsic_dim}",
            stacklevel=2,
        )
        return False
    return True


def forward_with_taps(net, taps, x):
    """Post-activation values of the selected neurons, in tap order."""
    taps.validate(net.spec)
    X, single = _as_batch(net, x)
    acts = layer_activations(net, X)
    out = np.empty((X.shape[0], taps.ell), dtype=np.float64)
    for pos, (layer, j) in enumerate(taps.neuron_ids):
        out[:, pos] = acts[layer][:, j]
    return out[0] if single else out


def jacobian_to_taps(net, taps, x):
    """d(tap activations)/d(inputs) at a single point, exact forward-mode; (ell, k)."""
    return jacobian_to_taps_batch(net, taps, np.asarray(x, dtype=np.float64)[None, :])[0]


def jacobian_to_taps_batch(net, taps, X):
    """Exact tap Jacobians for a batch of inputs; returns (N, ell, k)."""
    taps.validate(net.spec)
    X, _ = _as_batch(net, X)
    n, k = X.shape
    by_layer = {}
    for pos, (layer, j) in enumerate(taps.neuron_ids):
        by_layer.setdefault(layer, []).append((pos, j))

    out = np.empty((n, taps.ell, k), dtype=np.float64)
    grad = np.broadcast_to(np.eye(k), (n, k, k)).copy()
    a = X
    for pos, j in by_layer.get(0, ()):
        out[:, pos, :] = grad[:, j, :]
    for layer, (w, b, name) in enumerate(
        zip(net.weights, net.biases, net.spec.activations), start=1
    ):
        a = _apply_activation(name, a @ w.T + b)
        grad = np.matmul(w, grad)  # (out, in) @ (N, in, k) -> (N, out, k)
        grad = _activation_derivative(name, a)[:, :, None] * grad
        for pos, j in by_layer.get(layer, ()):
            out[:, pos, :] = grad[:, j, :]
    return out


@dataclass(frozen=True)
class TrainingConfig:
    """Deterministic training setup; identical config+seed+data => identical weights."""

    optimizer: str = "adam"
    learning_rate: float = 1e-3
    epochs: int = 1000
    batch_size: int = 0  # 0 = full batch
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ShapeError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "mse":
            raise ShapeError("only mean-squared-error loss is supported")
        if self.learning_rate <= 0:
            raise ShapeError("learning_rate must be positive")
        if self.epochs < 1:
            raise ShapeError("epochs must be >= 1")


def _coerce_dataset(net, data):
    if isinstance(data, tuple) and len(data) == 2:
        X, Y = data
    else:
        pairs = list(data)
        if not pairs:
            raise ShapeError("training data is empty")
        X = np.asarray([np.atleast_1d(p[0]) for p in pairs])
        Y = np.asarray([np.atleast_1d(p[1]) for p in pairs])
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] == 0:
        raise ShapeError("training data is empty")
    if X.shape[0] != Y.shape[0]:
        raise ShapeError("input/target counts differ")
    if X.shape[1] != net.spec.n_inputs or Y.shape[1] != net.spec.n_outputs:
        raise ShapeError("training data shapes do not match the architecture")
    return X, Y


def mse(net, X, Y):
    """Mean squared error over all samples and output components."""
    r = forward(net, X) - Y
    return float(np.mean(r * r))


def train(net, data, cfg, curve=None):
    """Train a copy of the network; returns (trained Mlp, final training MSE).

    Full-batch when cfg.batch_size is 0 or >= n, otherwise seeded-shuffle
    minibatches. Raises TrainingError naming the epoch if the loss goes
    non-finite. If ``curve`` is a list, the per-epoch MSE is appended to it.
    """
    X, Y = _coerce_dataset(net, data)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    ws = [w.copy() for w in net.weights]
    bs = [b.copy() for b in net.biases]
    acts = net.spec.activations
    bsz = cfg.batch_size if 0 < cfg.batch_size < n else n

    optimizer_state = None
    if cfg.optimizer == "adam":
        optimizer_state = (
            [np.zeros_like(w) for w in ws],
            [np.zeros_like(w) for w in ws],
            [np.zeros_like(b) for b in bs],
            [np.zeros_like(b) for b in bs],
        )

    # divergence is caught per epoch via the finite-loss check below
    with np.errstate(invalid="ignore", over="ignore"):
        _train_loop(cfg, X, Y, ws, bs, acts, bsz, rng, optimizer_state, curve)
    trained = Mlp(spec=net.spec, weights=tuple(ws), biases=tuple(bs), seed=net.seed)
    return trained, mse(trained, X, Y)


def _train_loop(cfg, X, Y, ws, bs, acts, bsz, rng, optimizer_state, curve):
    n = X.shape[0]
    if cfg.optimizer == "adam":
        mw, vw, mb, vb = optimizer_state
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
    for epoch in range(cfg.epochs):
        if bsz < n:
            order = rng.permutation(n)
        else:
            order = np.arange(n)
        epoch_sse = 0.0
        for start in range(0, n, bsz):
            idx = order[start : start + bsz]
            xb, yb = X[idx], Y[idx]
            # forward pass, keeping post-activations for backprop
            layer_out = [xb]
            a = xb
            for w, b, name in zip(ws, bs, acts):
                a = _apply_activation(name, a @ w.T + b)
                layer_out.append(a)
            resid = layer_out[-1] - yb
            epoch_sse += float(np.sum(resid * resid))
            # backward pass
            d_a = (2.0 / resid.size) * resid
            grads_w, grads_b = [], []
            for layer in range(len(ws) - 1, -1, -1):
                d_z = d_a * _activation_derivative(acts[layer], layer_out[layer + 1])
                grads_w.append(d_z.T @ layer_out[layer])
                grads_b.append(d_z.sum(axis=0))
                if layer > 0:
                    d_a = d_z @ ws[layer]
            grads_w.reverse()
            grads_b.reverse()
            if cfg.optimizer == "sgd":
                for w, b, gw, gb in zip(ws, bs, grads_w, grads_b):
                    w -= cfg.learning_rate * gw
                    b -= cfg.learning_rate * gb
            else:
                step += 1
                c1 = 1.0 - beta1**step
                c2 = 1.0 - beta2**step
                for i in range(len(ws)):
                    for p, g, m, v in (
                        (ws[i], grads_w[i], mw[i], vw[i]),
                        (bs[i], grads_b[i], mb[i], vb[i]),
                    ):
                        m *= beta1
                        m += (1 - beta1) * g
                        v *= beta2
                        v += (1 - beta2) * g * g
                        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
        epoch_mse = epoch_sse / (n * Y.shape[1])
        if not np.isfinite(epoch_mse):
            raise TrainingError(f"loss became non-finite at epoch {epoch}")
        if curve is not None:
            curve.append(epoch_mse)


def network_to_dict(net):
    return {
        "format": "dmapalign.network",
        "version": 1,
        "layer_widths": list(net.spec.layer_widths),
        "activations": list(net.spec.activations),
        "seed": int(net.seed),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def network_from_dict(doc):
    spec = ArchitectureSpec(tuple(doc["layer_widths"]), tuple(doc["activations"]))
    return Mlp(
        spec=spec,
        weights=tuple(np.asarray(w) for w in doc["weights"]),
        biases=tuple(np.asarray(b) for b in doc["biases"]),
        seed=int(doc["seed"]),
    )


def save_network(path, net):
    """Exact-round-trip JSON serialization (floats via repr)."""
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_network(path):
    with open(path) as fh:
        return network_from_dict(json.load(fh))
