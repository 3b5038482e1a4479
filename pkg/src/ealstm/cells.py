"""Standard LSTM and entity-aware LSTM cells in sequence-to-value mode.

Both variants share one parameter container. The standard cell consumes
``x[t]`` (dynamic forcings, optionally concatenated with the static
attributes at every step); the entity-aware cell computes its input gate
once from the static attributes and holds it fixed over the sequence.

Batched evaluation goes through :func:`forward_batch` / :func:`backward_batch`,
which delegate the time recurrence to :mod:`ealstm.kernels`.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .exceptions import ConfigurationError, NumericError, VariantError
from .storage import read_container, write_container

VARIANTS = ("lstm", "ealstm")
GATES = ("i", "f", "g", "o")
FORGET_BIAS_INIT = 3.0


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class CellParameters:
    """Weights of one cell plus the linear head.

    ``arrays`` holds ``W_<gate>``, ``U_<gate>``, ``b_<gate>``, ``head_w`` and
    ``head_b`` (0-d). The entity-aware variant has no ``U_i`` and its ``W_i``
    maps the static attributes only.
    """

    variant: str
    hidden_size: int
    dynamic_dim: int
    static_dim: int
    arrays: dict
    seed: int = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        expected = parameter_shapes(self.variant, self.hidden_size, self.dynamic_dim, self.static_dim)
        if set(self.arrays) != set(expected):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise ConfigurationError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigurationError(f"{name} has shape {arr.shape}, expected {shape}")
            self.arrays[name] = arr

    @property
    def input_dim(self):
        """Width of the per-step input seen by the f/g/o gates."""
        if self.variant == "lstm":
            return self.dynamic_dim + self.static_dim
        return self.dynamic_dim

    @property
    def n_parameters(self):
        return sum(a.size for a in self.arrays.values())

    def copy(self):
        return CellParameters(self.variant, self.hidden_size, self.dynamic_dim, self.static_dim,
                              {k: v.copy() for k, v in self.arrays.items()}, self.seed)

    def same_architecture(self, other):
        return (self.variant, self.hidden_size, self.dynamic_dim, self.static_dim) == (
            other.variant, other.hidden_size, other.dynamic_dim, other.static_dim)

    def __getitem__(self, name):
        return self.arrays[name]


def parameter_shapes(variant, hidden_size, dynamic_dim, static_dim=0):
    h = hidden_size
    if min(hidden_size, dynamic_dim) <= 0 or static_dim < 0:
        raise ConfigurationError("hidden_size and dynamic_dim must be positive, static_dim >= 0")
    shapes = {}
    if variant == "lstm":
        d_in = dynamic_dim + static_dim
        for gate in GATES:
            shapes[f"W_{gate}"] = (h, d_in)
        for gate in GATES:
            shapes[f"U_{gate}"] = (h, h)
    elif variant == "ealstm":
        if static_dim <= 0:
            raise ConfigurationError("static_dim must be positive for the ealstm variant")
        shapes["W_i"] = (h, static_dim)
        for gate in GATES[1:]:
            shapes[f"W_{gate}"] = (h, dynamic_dim)
        for gate in GATES[1:]:
            shapes[f"U_{gate}"] = (h, h)
    else:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    for gate in GATES:
        shapes[f"b_{gate}"] = (h,)
    shapes["head_w"] = (h,)
    shapes["head_b"] = ()
    return shapes


def init_parameters(variant, hidden_size, dynamic_dim, static_dim=0, seed=0):
    """Uniform(+-1/sqrt(hidden)) weights, forget bias +3, other biases zero."""
    shapes = parameter_shapes(variant, hidden_size, dynamic_dim, static_dim)
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden_size)
    arrays = {}
    for name, shape in shapes.items():
        if name.startswith("b_") or name == "head_b":
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    arrays["b_f"][:] = FORGET_BIAS_INIT
    return CellParameters(variant, hidden_size, dynamic_dim, static_dim, arrays, seed)


def zero_parameters(variant, hidden_size, dynamic_dim, static_dim=0):
    shapes = parameter_shapes(variant, hidden_size, dynamic_dim, static_dim)
    return CellParameters(variant, hidden_size, dynamic_dim, static_dim,
                          {k: np.zeros(s) for k, s in shapes.items()})


def _recurrent_gates(params):
    return GATES if params.variant == "lstm" else GATES[1:]


def _stacked(params):
    gates = _recurrent_gates(params)
    W = np.concatenate([params[f"W_{g}"] for g in gates], axis=0)
    U = np.concatenate([params[f"U_{g}"] for g in gates], axis=0)
    b = np.concatenate([params[f"b_{g}"] for g in gates])
    return W, U, b


def _check_inputs(params, dynamic, static):
    dynamic = np.asarray(dynamic, dtype=np.float64)
    if dynamic.ndim != 3:
        raise ConfigurationError(f"dynamic input must be (batch, T, dynamic_dim), got shape {dynamic.shape}")
    B, T, d = dynamic.shape
    if T < 1:
        raise ConfigurationError("sequence length T must be >= 1")
    if d != params.dynamic_dim:
        raise ConfigurationError(f"dynamic_dim mismatch: input has {d}, parameters expect {params.dynamic_dim}")
    if params.static_dim == 0:
        return dynamic, None
    if static is None:
        if params.variant == "ealstm":
            raise VariantError("ealstm forward requires a static attribute vector")
        raise ConfigurationError("parameters expect static attributes but none were given")
    static = np.asarray(static, dtype=np.float64)
    if static.ndim == 1:
        static = np.broadcast_to(static, (B, static.shape[0]))
    if static.shape != (B, params.static_dim):
        raise ConfigurationError(
            f"static_dim mismatch: input has shape {static.shape}, expected ({B}, {params.static_dim})")
    return dynamic, static


@dataclass
class ForwardCache:
    x: np.ndarray          # (T, B, input_dim) per-step input actually fed to W, time-major
    static: np.ndarray     # (B, static_dim) or None
    istat: np.ndarray      # (B, H) fixed input gate or None
    gates: np.ndarray      # (T, B, G*H) activated gates
    c: np.ndarray          # (T+1, B, H)
    h: np.ndarray          # (T+1, B, H)
    h_last: np.ndarray     # (B, H) h[T] after dropout
    mask: np.ndarray       # (B, H) inverted-dropout mask or None


def forward_batch(params, dynamic, static=None, dropout_mask=None):
    """Predict one value per sequence. Returns ``(prediction (B,), cache)``."""
    dynamic, static = _check_inputs(params, dynamic, static)
    B, T, _ = dynamic.shape
    W, U, b = _stacked(params)
    istat = None
    if params.variant == "lstm":
        if static is not None:
            x = np.concatenate([dynamic, np.broadcast_to(static[:, None, :], (B, T, params.static_dim))], axis=2)
        else:
            x = dynamic
    else:
        x = dynamic
        istat = sigmoid(static @ params["W_i"].T + params["b_i"])
    x = np.ascontiguousarray(x.transpose(1, 0, 2))
    zx = (x.reshape(T * B, -1) @ W.T + b).reshape(T, B, -1)
    gates, c, h = kernels.recurrent_forward(zx, U, istat)
    h_last = h[-1] if dropout_mask is None else h[-1] * dropout_mask
    pred = h_last @ params["head_w"] + params["head_b"]
    if not np.all(np.isfinite(pred)):
        bad = int(np.flatnonzero(~np.isfinite(pred))[0])
        raise NumericError(f"non-finite prediction for sequence {bad}")
    return pred, ForwardCache(x, static, istat, gates, c, h, h_last, dropout_mask)


@dataclass
class GradientSet:
    """Gradients mirroring ``CellParameters.arrays`` plus input gradients."""

    params: dict
    static: np.ndarray = None      # (B, static_dim)
    dynamic: np.ndarray = None     # (B, T, dynamic_dim)
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]


def backward_batch(params, cache, dpred):
    """Gradients of ``sum(dpred * prediction)`` w.r.t. parameters and inputs."""
    dpred = np.asarray(dpred, dtype=np.float64)
    H = params.hidden_size
    W, U, _ = _stacked(params)
    grads = {"head_w": dpred @ cache.h_last, "head_b": np.asarray(dpred.sum())}
    dh_last = dpred[:, None] * params["head_w"][None, :]
    if cache.mask is not None:
        dh_last = dh_last * cache.mask
    dz, d_istat = kernels.recurrent_backward(cache.gates, cache.c, cache.h, U, dh_last, cache.istat)
    if not np.all(np.isfinite(dz)):
        steps = np.flatnonzero(~np.all(np.isfinite(dz), axis=(1, 2)))
        raise NumericError(f"non-finite gradient at time step {int(steps[-1]) + 1}")
    T, B, K = dz.shape
    dz2 = dz.reshape(T * B, K)
    dW = dz2.T @ cache.x.reshape(T * B, -1)
    dU = dz2.T @ cache.h[:-1].reshape(T * B, H)
    db = dz2.sum(axis=0)
    dx = (dz2 @ W).reshape(T, B, -1).transpose(1, 0, 2)
    for n, gate in enumerate(_recurrent_gates(params)):
        sl = slice(n * H, (n + 1) * H)
        grads[f"W_{gate}"] = dW[sl]
        grads[f"U_{gate}"] = dU[sl]
        grads[f"b_{gate}"] = db[sl]
    d = params.dynamic_dim
    d_dynamic = dx[:, :, :d]
    d_static = None
    if params.variant == "ealstm":
        dzi = d_istat * cache.istat * (1.0 - cache.istat)
        grads["W_i"] = dzi.T @ cache.static
        grads["b_i"] = dzi.sum(axis=0)
        d_static = dzi @ params["W_i"]
    elif params.static_dim:
        d_static = dx[:, :, d:].sum(axis=1)
    return GradientSet(grads, d_static, d_dynamic)


@dataclass
class Trace:
    """Per-step record of a single-sequence forward pass, rows t = 1..T."""

    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray


def _single(params, dynamic, static):
    dynamic = np.asarray(dynamic, dtype=np.float64)
    if dynamic.ndim != 2:
        raise ConfigurationError(f"dynamic input must be (T, dynamic_dim), got shape {dynamic.shape}")
    st = None if static is None else np.asarray(static, dtype=np.float64)[None, :]
    pred, cache = forward_batch(params, dynamic[None], st)
    H = params.hidden_size
    gates = cache.gates[:, 0, :]
    T = gates.shape[0]
    if params.variant == "lstm":
        i, f, g, o = (gates[:, k * H:(k + 1) * H] for k in range(4))
    else:
        i = np.broadcast_to(cache.istat[0], (T, H)).copy()
        f, g, o = (gates[:, k * H:(k + 1) * H] for k in range(3))
    trace = Trace(i, f, g, o, cache.c[1:, 0, :], cache.h[1:, 0, :])
    return float(pred[0]), trace, cache


def lstm_forward(params, dynamic, static=None):
    """Standard cell. Static attributes, if the parameters expect them, are
    appended to every time step. Returns ``(prediction, trace)``."""
    if params.variant != "lstm":
        raise VariantError("lstm_forward requires standard-LSTM parameters")
    pred, trace, _ = _single(params, dynamic, static)
    return pred, trace


def ealstm_forward(params, dynamic, static):
    """Entity-aware cell. Returns ``(prediction, trace, input_gate)``."""
    if params.variant != "ealstm":
        raise VariantError("ealstm_forward requires EA-LSTM parameters")
    if static is None:
        raise VariantError("ealstm_forward requires a static attribute vector")
    pred, trace, cache = _single(params, dynamic, static)
    return pred, trace, cache.istat[0].copy()


def input_gate(params, static):
    """Fixed input gate of the entity-aware cell for each row of ``static``."""
    if params.variant != "ealstm":
        raise VariantError("the static input gate only exists in the ealstm variant")
    static = np.atleast_2d(np.asarray(static, dtype=np.float64))
    if static.shape[1] != params.static_dim:
        raise ConfigurationError(f"static_dim mismatch: input has {static.shape[1]}, expected {params.static_dim}")
    return sigmoid(static @ params["W_i"].T + params["b_i"])


def save_checkpoint(path, params, meta=None):
    header = {"kind": "checkpoint", "variant": params.variant, "hidden_size": params.hidden_size,
              "dynamic_dim": params.dynamic_dim, "static_dim": params.static_dim, "seed": params.seed}
    header.update(meta or {})
    write_container(path, params.arrays, header)


def load_checkpoint(path):
    """Return ``(params, meta)``."""
    arrays, meta = read_container(path)
    params = CellParameters(meta["variant"], meta["hidden_size"], meta["dynamic_dim"],
                            meta["static_dim"], arrays, meta.get("seed"))
    return params, meta
