"""Stacked LSTM with a linear head: inference, BPTT training and the WMCW weight file.

Cell equations per layer, gate order ``i, f, g, o``::

    z_t = [x_t, h_{t-1}] @ W + b
    i = sigmoid(z_i)   f = sigmoid(z_f)   g = tanh(z_g)   o = sigmoid(z_o)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

The head reads the top layer's last hidden state: ``y = h_T @ W_out + b_out``.
Loss is the mean squared error over batch and output components.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"WMCW"
WEIGHTS_VERSION = 1
_HEADER = struct.Struct("<4sHHHHH")


class LstmError(ValueError):
    pass


class DimensionError(LstmError):
    pass


class EmptyDatasetError(LstmError):
    pass


class TrainingDivergedError(LstmError):
    pass


class WeightsError(LstmError):
    pass


class BadMagicError(WeightsError):
    pass


class UnsupportedVersionError(WeightsError):
    pass


class CorruptWeightsError(WeightsError):
    pass


@dataclass
class LstmParams:
    """Weights of a stacked LSTM plus the input normalisation it was trained with.

    ``layers[l] = (W, b)`` with ``W`` of shape ``(in_l + H, 4H)``.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    head_w: np.ndarray
    head_b: np.ndarray
    input_mean: np.ndarray
    input_std: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden_size(self) -> int:
        return self.head_w.shape[0]

    @property
    def input_size(self) -> int:
        return self.input_mean.shape[0]

    @property
    def output_size(self) -> int:
        return self.head_w.shape[1]

    def check(self) -> None:
        h, i = self.hidden_size, self.input_size
        for n, (w, b) in enumerate(self.layers):
            in_l = i if n == 0 else h
            if w.shape != (in_l + h, 4 * h) or b.shape != (4 * h,):
                raise DimensionError(f"layer {n}: W {w.shape}, b {b.shape} inconsistent with input {in_l}, hidden {h}")
        if self.head_b.shape != (self.output_size,) or self.input_std.shape != (i,):
            raise DimensionError("head or normalisation shapes inconsistent")
        if not all(np.all(np.isfinite(t)) for t in self.tensors()):
            raise LstmError("non-finite parameter")

    def tensors(self) -> list[np.ndarray]:
        """Trainable tensors in file order (normalisation excluded)."""
        out = []
        for w, b in self.layers:
            out += [w, b]
        return out + [self.head_w, self.head_b]

    def copy(self) -> "LstmParams":
        return LstmParams([(w.copy(), b.copy()) for w, b in self.layers], self.head_w.copy(), self.head_b.copy(),
                          self.input_mean.copy(), self.input_std.copy())

    def astype(self, dtype) -> "LstmParams":
        return LstmParams([(w.astype(dtype), b.astype(dtype)) for w, b in self.layers], self.head_w.astype(dtype),
                          self.head_b.astype(dtype), self.input_mean.astype(dtype), self.input_std.astype(dtype))


def init_params(input_size: int, output_size: int, hidden_size: int = 128, num_layers: int = 3,
                seed: int = 0) -> LstmParams:
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(hidden_size)
    layers = []
    for n in range(num_layers):
        in_l = input_size if n == 0 else hidden_size
        w = rng.uniform(-k, k, size=(in_l + hidden_size, 4 * hidden_size))
        b = np.zeros(4 * hidden_size)
        b[hidden_size:2 * hidden_size] = 1.0  # forget gate starts open
        layers.append((w, b))
    head_w = rng.uniform(-k, k, size=(hidden_size, output_size))
    return LstmParams(layers, head_w, np.zeros(output_size), np.zeros(input_size), np.ones(input_size))


def zero_params(input_size: int, output_size: int, hidden_size: int = 128, num_layers: int = 3) -> LstmParams:
    p = init_params(input_size, output_size, hidden_size, num_layers)
    for w, b in p.layers:
        w[:] = 0.0
        b[:] = 0.0
    p.head_w[:] = 0.0
    return p


def normalize_inputs(params: LstmParams, window: np.ndarray) -> np.ndarray:
    return (window - params.input_mean) / params.input_std


def lstm_forward(params: LstmParams, window: np.ndarray, keep_cache: bool = False, normalized: bool = True):
    """Run the network on ``window`` of shape ``(T, F)`` or ``(B, T, F)``.

    ``normalized`` says the window already holds z-scored features; pass
    ``False`` to apply the stored normalisation first. Returns the output
    (``(O,)`` or ``(B, O)``) and, with ``keep_cache``, the per-layer states
    needed by :func:`lstm_backward`.
    """
    x = np.asarray(window, dtype=params.head_w.dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != params.input_size:
        raise DimensionError(f"window shape {np.shape(window)} does not match input size {params.input_size}")
    if not normalized:
        x = normalize_inputs(params, x)
    B, T, _ = x.shape
    H = params.hidden_size
    cache = []
    seq = x
    gate_scale = np.full(4 * H, 0.5, dtype=x.dtype)
    gate_scale[2 * H:3 * H] = 1.0
    gate_shift = np.full(4 * H, 0.5, dtype=x.dtype)
    gate_shift[2 * H:3 * H] = 0.0
    for w, b in params.layers:
        in_l = seq.shape[2]
        # halving the sigmoid rows is exact, so the scaled product matches tanh(z * gate_scale)
        w = w * gate_scale
        wx, wh = w[:in_l], w[in_l:]
        zx = (seq.reshape(B * T, in_l) @ wx).reshape(B, T, 4 * H) + b * gate_scale
        h = np.zeros((B, H), dtype=x.dtype)
        c = np.zeros((B, H), dtype=x.dtype)
        ig = np.empty((B, H), dtype=x.dtype)
        hs = np.empty((B, T, H), dtype=x.dtype)
        if keep_cache:
            gates = np.empty((B, T, 4 * H), dtype=x.dtype)
            cs = np.empty((B, T, H), dtype=x.dtype)
        for t in range(T):
            a = h @ wh
            a += zx[:, t]
            # one tanh for all four gates: sigmoid(x) = (1 + tanh(x/2)) / 2
            np.tanh(a, out=a)
            a *= gate_scale
            a += gate_shift
            i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            c *= f
            np.multiply(i, g, out=ig)
            c += ig
            h = hs[:, t]
            np.tanh(c, out=h)
            h *= o
            if keep_cache:
                gates[:, t] = a
                cs[:, t] = c
        if keep_cache:
            cache.append({"x": seq, "h": hs, "c": cs, "gates": gates})
        seq = hs
    y = seq[:, -1] @ params.head_w + params.head_b
    if single:
        y = y[0]
    return (y, cache) if keep_cache else y


def mse_loss(y: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((np.asarray(y) - np.asarray(target)) ** 2))


def lstm_backward(params: LstmParams, window: np.ndarray, target: np.ndarray):
    """Loss and exact BPTT gradients, ordered like :meth:`LstmParams.tensors`.

    Runs in the dtype of ``params``; use float64 params for gradient checks.
    """
    dtype = params.head_w.dtype
    x = np.asarray(window, dtype=dtype)
    t_arr = np.asarray(target, dtype=dtype)
    if x.ndim == 2:
        x, t_arr = x[None], t_arr[None]
    if t_arr.shape != (x.shape[0], params.output_size):
        raise DimensionError(f"target shape {np.shape(target)} does not match output size {params.output_size}")
    y, cache = lstm_forward(params, x, keep_cache=True)
    B, T = x.shape[:2]
    H = params.hidden_size
    err = y - t_arr
    loss = float(np.mean(err.astype(np.float64) ** 2))
    dy = (2.0 / err.size) * err

    g_head_w = cache[-1]["h"][:, -1].T @ dy
    g_head_b = dy.sum(axis=0)

    grads_layers = []
    # gradient arriving at each time step's hidden output of the current layer
    dh_seq = np.zeros((B, T, H), dtype=dtype)
    dh_seq[:, -1] = dy @ params.head_w.T
    for n in range(params.num_layers - 1, -1, -1):
        w = params.layers[n][0]
        cch = cache[n]
        xin, hs, cs, gates = cch["x"], cch["h"], cch["c"], cch["gates"]
        in_l = xin.shape[2]
        wh_t = np.ascontiguousarray(w[in_l:].T)
        i, f, g, o = gates[..., :H], gates[..., H:2 * H], gates[..., 2 * H:3 * H], gates[..., 3 * H:]
        c_prev = np.concatenate([np.zeros((B, 1, H), dtype=dtype), cs[:, :-1]], axis=1)
        tc = np.tanh(cs)
        # everything but the recursive dc/dh factors, laid out like the gates
        dc_gate = np.empty((B, T, 3, H), dtype=dtype)
        dc_gate[:, :, 0] = g * i * (1.0 - i)
        dc_gate[:, :, 1] = c_prev * f * (1.0 - f)
        dc_gate[:, :, 2] = i * (1.0 - g * g)
        dh_out = tc * o * (1.0 - o)
        dh_cell = o * (1.0 - tc * tc)
        dz = np.empty((B, T, 4 * H), dtype=dtype)
        dh_next = np.zeros((B, H), dtype=dtype)
        dc_next = np.zeros((B, H), dtype=dtype)
        for t in range(T - 1, -1, -1):
            dh = dh_seq[:, t] + dh_next
            dc = dc_next + dh * dh_cell[:, t]
            dz[:, t, :3 * H] = (dc[:, None, :] * dc_gate[:, t]).reshape(B, 3 * H)
            dz[:, t, 3 * H:] = dh * dh_out[:, t]
            dc_next = dc * f[:, t]
            dh_next = dz[:, t] @ wh_t
        h_prev = np.concatenate([np.zeros((B, 1, H), dtype=dtype), hs[:, :-1]], axis=1)
        dz_flat = dz.reshape(B * T, 4 * H)
        g_wx = xin.reshape(B * T, in_l).T @ dz_flat
        g_wh = h_prev.reshape(B * T, H).T @ dz_flat
        grads_layers.append((np.vstack([g_wx, g_wh]), dz_flat.sum(axis=0)))
        if n > 0:
            dh_seq = (dz_flat @ w[:in_l].T).reshape(B, T, in_l)
    grads = []
    for gw, gb in reversed(grads_layers):
        grads += [gw, gb]
    return loss, grads + [g_head_w, g_head_b]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 30
    batch: int = 64
    seed: int = 0
    clip_norm: float = 5.0
    lr_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float32"


@dataclass
class TrainResult:
    params: LstmParams
    loss_curve: list[float] = field(default_factory=list)


def dataset_loss(params: LstmParams, windows: np.ndarray, targets: np.ndarray, chunk: int = 1024) -> float:
    total = 0.0
    for s in range(0, len(windows), chunk):
        y = lstm_forward(params, windows[s:s + chunk])
        total += float(np.sum((y - targets[s:s + chunk]) ** 2))
    return total / targets.size


def train(windows: np.ndarray, targets: np.ndarray, config: TrainConfig = TrainConfig(),
          params: Optional[LstmParams] = None, hidden_size: int = 128, num_layers: int = 3,
          progress: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Adam on minibatches of already-normalised windows, in ``config.dtype``.

    The loss curve holds the full-dataset loss before training and after each
    epoch, so a run with ``lr=0`` yields an exactly flat curve.
    """
    dtype = np.dtype(config.dtype)
    windows = np.asarray(windows, dtype=dtype)
    targets = np.asarray(targets, dtype=dtype)
    if len(windows) == 0:
        raise EmptyDatasetError("no training samples")
    if len(windows) != len(targets):
        raise DimensionError(f"{len(windows)} windows but {len(targets)} targets")
    if params is None:
        params = init_params(windows.shape[2], targets.shape[1], hidden_size, num_layers, seed=config.seed)
    else:
        params = params.copy()
    params = params.astype(dtype)
    params.check()
    rng = np.random.default_rng(config.seed)
    tensors = params.tensors()
    m = [np.zeros_like(t) for t in tensors]
    v = [np.zeros_like(t) for t in tensors]
    step = 0
    curve = [dataset_loss(params, windows, targets)]
    lr = config.lr
    for epoch in range(config.epochs):
        order = rng.permutation(len(windows))
        for s in range(0, len(order), config.batch):
            idx = order[s:s + config.batch]
            loss, grads = lstm_backward(params, windows[idx], targets[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step} (lr={lr:g})")
            gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            scale = min(1.0, config.clip_norm / gnorm) if gnorm > 0 else 1.0
            step += 1
            c1 = 1.0 - config.beta1 ** step
            c2 = 1.0 - config.beta2 ** step
            for t, g, mt, vt in zip(tensors, grads, m, v):
                g = g * scale
                mt *= config.beta1
                mt += (1.0 - config.beta1) * g
                vt *= config.beta2
                vt += (1.0 - config.beta2) * g * g
                t -= lr * (mt / c1) / (np.sqrt(vt / c2) + config.eps)
        lr *= config.lr_decay
        loss = dataset_loss(params, windows, targets)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite dataset loss after epoch {epoch}")
        curve.append(loss)
        if progress is not None:
            progress(epoch, loss)
    return TrainResult(params, curve)


def save_weights(params: LstmParams, path) -> None:
    """Write the WMCW file.

    Layout (little-endian): ``b"WMCW"``, u16 version, u16 num_layers,
    u16 hidden, u16 input, u16 output; then f32 arrays in this order: per
    layer ``W`` (row-major, ``(in+H) x 4H``) and ``b``; head ``W`` (``H x O``)
    and ``b``; input mean and input std (``input`` each).
    """
    params.check()
    dims = (params.num_layers, params.hidden_size, params.input_size, params.output_size)
    if max(dims) > 0xFFFF:
        raise WeightsError(f"dimensions {dims} exceed u16")
    blobs = [_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, *dims)]
    for t in params.tensors() + [params.input_mean, params.input_std]:
        blobs.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(blobs))


def expected_file_size(num_layers: int, hidden: int, inputs: int, outputs: int) -> int:
    n = 0
    for layer in range(num_layers):
        in_l = inputs if layer == 0 else hidden
        n += (in_l + hidden) * 4 * hidden + 4 * hidden
    n += hidden * outputs + outputs + 2 * inputs
    return _HEADER.size + 4 * n


def load_weights(path) -> LstmParams:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptWeightsError(f"{path}: {len(data)} bytes is shorter than the header")
    magic, version, layers, hidden, inputs, outputs = _HEADER.unpack_from(data)
    if magic != WEIGHTS_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, expected {WEIGHTS_VERSION}")
    if min(layers, hidden, inputs, outputs) == 0:
        raise CorruptWeightsError(f"{path}: zero dimension in header")
    size = expected_file_size(layers, hidden, inputs, outputs)
    if len(data) != size:
        raise CorruptWeightsError(f"{path}: {len(data)} bytes, header implies {size}")
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    pos = 0

    def take(*shape):
        nonlocal pos
        n = int(np.prod(shape))
        arr = flat[pos:pos + n].reshape(shape)
        pos += n
        return arr.copy()

    ls = []
    for layer in range(layers):
        in_l = inputs if layer == 0 else hidden
        ls.append((take(in_l + hidden, 4 * hidden), take(4 * hidden)))
    params = LstmParams(ls, take(hidden, outputs), take(outputs), take(inputs), take(inputs))
    try:
        params.check()
    except LstmError as e:
        raise CorruptWeightsError(f"{path}: {e}") from None
    if np.any(params.input_std <= 0):
        raise CorruptWeightsError(f"{path}: non-positive normalisation std")
    return params
