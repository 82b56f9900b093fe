"""Dense -> 2-layer LSTM -> dense Q-network with exact BPTT, Adam and a gradient checker.

Everything is float64 numpy.  Sequences are time-major: ``(T, B, features)``.
Gate blocks inside each LSTM weight matrix are ordered i, f, g, o.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

N_IN = 4
HIDDEN = 128
N_OUT = 5
N_LAYERS = 2
GATES = "ifgo"

PARAM_SHAPES = {
    "fc_in.w": (N_IN, HIDDEN),
    "fc_in.b": (HIDDEN,),
    "lstm1.wx": (HIDDEN, 4 * HIDDEN),
    "lstm1.wh": (HIDDEN, 4 * HIDDEN),
    "lstm1.b": (4 * HIDDEN,),
    "lstm2.wx": (HIDDEN, 4 * HIDDEN),
    "lstm2.wh": (HIDDEN, 4 * HIDDEN),
    "lstm2.b": (4 * HIDDEN,),
    "fc_out.w": (HIDDEN, N_OUT),
    "fc_out.b": (N_OUT,),
}


class ShapeError(ValueError):
    pass


class QNetParams:
    """Named float64 arrays of the Q-network; also used as the gradient container."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        if set(arrays) != set(PARAM_SHAPES):
            raise ShapeError(f"expected parameters {sorted(PARAM_SHAPES)}, got {sorted(arrays)}")
        self.arrays = {}
        for name, shape in PARAM_SHAPES.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.arrays[name] = arr

    @classmethod
    def zeros(cls) -> "QNetParams":
        return cls({k: np.zeros(s) for k, s in PARAM_SHAPES.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays.items())

    def copy(self) -> "QNetParams":
        return QNetParams({k: v.copy() for k, v in self.arrays.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def allclose(self, other: "QNetParams", atol: float = 0.0) -> bool:
        return all(np.allclose(v, other[k], rtol=0, atol=atol) for k, v in self)

    def equal(self, other: "QNetParams") -> bool:
        return all(np.array_equal(v, other[k]) for k, v in self)


class HiddenState(NamedTuple):
    """Per-layer (h, c), each ``(B, HIDDEN)``."""

    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray


def zero_hidden(batch: int = 1) -> HiddenState:
    z = np.zeros((batch, HIDDEN))
    return HiddenState(z, z.copy(), z.copy(), z.copy())


def init_params(seed: int) -> QNetParams:
    """Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); forget bias 1.0."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in PARAM_SHAPES.items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    for layer in (1, 2):
        arrays[f"lstm{layer}.b"][HIDDEN:2 * HIDDEN] = 1.0
    return QNetParams(arrays)


# gate activation as one tanh: sigmoid(z) = 0.5 + 0.5 * tanh(z / 2)
_SCALE = np.concatenate([np.full(HIDDEN, 0.5), np.full(HIDDEN, 0.5), np.ones(HIDDEN), np.full(HIDDEN, 0.5)])
_ADD = np.concatenate([np.full(2 * HIDDEN, 0.5), np.zeros(HIDDEN), np.full(HIDDEN, 0.5)])


@dataclass
class _LayerCache:
    x: np.ndarray          # (T, B, in)
    h_prev: np.ndarray     # (T, B, H)
    c_prev: np.ndarray     # (T, B, H)
    acts: np.ndarray       # (T, B, 4H) activated gates
    tanh_c: np.ndarray     # (T, B, H)


@dataclass
class ForwardCache:
    x: np.ndarray
    pre_in: np.ndarray
    z_in: np.ndarray
    layers: list[_LayerCache] = field(default_factory=list)
    h_top: np.ndarray | None = None


def _lstm_layer(x, wx, wh, b, h, c, keep):
    T, B, _ = x.shape
    zx = (x.reshape(T * B, -1) @ wx).reshape(T, B, -1)
    zx += b
    hs = np.empty((T, B, HIDDEN))
    cache = None
    if keep:
        cache = _LayerCache(x, np.empty((T, B, HIDDEN)), np.empty((T, B, HIDDEN)),
                            np.empty((T, B, 4 * HIDDEN)), np.empty((T, B, HIDDEN)))
    for t in range(T):
        z = zx[t] + h @ wh
        a = np.tanh(z * _SCALE)
        a *= _SCALE
        a += _ADD
        i, f, g, o = a[:, :HIDDEN], a[:, HIDDEN:2 * HIDDEN], a[:, 2 * HIDDEN:3 * HIDDEN], a[:, 3 * HIDDEN:]
        if keep:
            cache.h_prev[t] = h
            cache.c_prev[t] = c
            cache.acts[t] = a
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        if keep:
            cache.tanh_c[t] = tc
    return hs, h, c, cache


def _check_inputs(params: QNetParams, x: np.ndarray, hidden: HiddenState | None):
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3 or x.shape[2] != N_IN:
        raise ShapeError(f"input must be (T, {N_IN}) or (T, B, {N_IN}), got {x.shape}")
    if x.shape[0] == 0:
        raise ShapeError("empty sequence")
    if not np.isfinite(x).all():
        raise ValueError("non-finite input")
    B = x.shape[1]
    if hidden is None:
        hidden = zero_hidden(B)
    elif any(np.shape(a) != (B, HIDDEN) for a in hidden):
        raise ShapeError(f"hidden state must be {N_LAYERS} x (h, c) of shape ({B}, {HIDDEN})")
    return np.asarray(x, dtype=np.float64), hidden


def forward_cached(params: QNetParams, x: np.ndarray, hidden: HiddenState | None = None,
                   keep: bool = True) -> tuple[np.ndarray, HiddenState, ForwardCache | None]:
    """Batched forward; returns (q (T, B, 5), final hidden, cache for :func:`backward_cached`)."""
    x, hidden = _check_inputs(params, x, hidden)
    T, B, _ = x.shape
    p = params.arrays
    pre = (x.reshape(T * B, N_IN) @ p["fc_in.w"]).reshape(T, B, HIDDEN) + p["fc_in.b"]
    z_in = np.maximum(pre, 0.0)
    h1s, h1, c1, l1 = _lstm_layer(z_in, p["lstm1.wx"], p["lstm1.wh"], p["lstm1.b"], hidden.h1, hidden.c1, keep)
    h2s, h2, c2, l2 = _lstm_layer(h1s, p["lstm2.wx"], p["lstm2.wh"], p["lstm2.b"], hidden.h2, hidden.c2, keep)
    q = (h2s.reshape(T * B, HIDDEN) @ p["fc_out.w"]).reshape(T, B, N_OUT) + p["fc_out.b"]
    cache = ForwardCache(x, pre, z_in, [l1, l2], h2s) if keep else None
    return q, HiddenState(h1, c1, h2, c2), cache


def qnet_forward(params: QNetParams, state_seq: np.ndarray,
                 h0: HiddenState | None = None) -> tuple[np.ndarray, HiddenState]:
    """Q-values for every step of ``state_seq`` (``(T, 4)`` or ``(T, B, 4)``)."""
    squeeze = np.ndim(state_seq) == 2
    q, hT, _ = forward_cached(params, state_seq, h0, keep=False)
    return (q[:, 0, :] if squeeze else q), hT


def _lstm_layer_backward(cache: _LayerCache, dh_seq: np.ndarray, wx, wh, grads, prefix):
    T, B, _ = dh_seq.shape
    dz_all = np.empty((T, B, 4 * HIDDEN))
    dh_next = np.zeros((B, HIDDEN))
    dc_next = np.zeros((B, HIDDEN))
    H = HIDDEN
    for t in range(T - 1, -1, -1):
        a = cache.acts[t]
        i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = cache.tanh_c[t]
        dh = dh_seq[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cache.c_prev[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ wh.T
    flat_dz = dz_all.reshape(T * B, 4 * H)
    grads[f"{prefix}.wh"] += cache.h_prev.reshape(T * B, H).T @ flat_dz
    grads[f"{prefix}.wx"] += cache.x.reshape(T * B, -1).T @ flat_dz
    grads[f"{prefix}.b"] += flat_dz.sum(axis=0)
    return (flat_dz @ wx.T).reshape(T, B, -1)


def backward_cached(params: QNetParams, cache: ForwardCache, dq: np.ndarray) -> QNetParams:
    """Exact gradients of ``sum(dq * q)`` through the whole cached sequence."""
    if dq.ndim == 2:
        dq = dq[:, None, :]
    T, B, _ = cache.x.shape
    if dq.shape != (T, B, N_OUT):
        raise ShapeError(f"dq must have shape {(T, B, N_OUT)}, got {dq.shape}")
    p = params.arrays
    g = {k: np.zeros(s) for k, s in PARAM_SHAPES.items()}
    flat_dq = dq.reshape(T * B, N_OUT)
    g["fc_out.w"] = cache.h_top.reshape(T * B, HIDDEN).T @ flat_dq
    g["fc_out.b"] = flat_dq.sum(axis=0)
    dh2 = (flat_dq @ p["fc_out.w"].T).reshape(T, B, HIDDEN)
    dh1 = _lstm_layer_backward(cache.layers[1], dh2, p["lstm2.wx"], p["lstm2.wh"], g, "lstm2")
    dz_in = _lstm_layer_backward(cache.layers[0], dh1, p["lstm1.wx"], p["lstm1.wh"], g, "lstm1")
    dpre = dz_in * (cache.pre_in > 0)
    flat = dpre.reshape(T * B, HIDDEN)
    g["fc_in.w"] = cache.x.reshape(T * B, N_IN).T @ flat
    g["fc_in.b"] = flat.sum(axis=0)
    return QNetParams(g)


def qnet_backward(params: QNetParams, state_seq: np.ndarray, h0: HiddenState | None,
                  dq_seq: np.ndarray) -> QNetParams:
    """Parameter gradients of ``sum(dq_seq * qnet_forward(...)[0])``."""
    x = np.asarray(state_seq, dtype=np.float64)
    dq = np.asarray(dq_seq, dtype=np.float64)
    if x.ndim == 2:
        x, dq = x[:, None, :], (dq[:, None, :] if dq.ndim == 2 else dq)
    if dq.shape != x.shape[:2] + (N_OUT,):
        raise ShapeError(f"dq_seq must have shape {x.shape[:2] + (N_OUT,)}, got {dq.shape}")
    _, _, cache = forward_cached(params, x, h0, keep=True)
    return backward_cached(params, cache, dq)


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()})


def adam_update(params: QNetParams, grads: QNetParams, opt: AdamState) -> QNetParams:
    """One bias-corrected Adam step, applied in place; returns ``params``."""
    for name, g in grads:
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    if not opt.m:
        opt.m = {k: np.zeros_like(v) for k, v in params}
        opt.v = {k: np.zeros_like(v) for k, v in params}
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    corr1 = 1.0 - b1 ** opt.step
    corr2 = 1.0 - b2 ** opt.step
    for name, g in grads:
        m, v = opt.m[name], opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params.arrays[name] -= opt.lr * (m / corr1) / (np.sqrt(v / corr2) + opt.eps)
    return params


# -- gradient check -----------------------------------------------------------

def grad_check(params: QNetParams, loss_fn: Callable[[QNetParams], tuple[float, QNetParams]],
               samples: int = 100, eps: float = 1e-5, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn`` returns ``(loss, grads)``.  Coordinates are drawn evenly
    across the parameter tensors so every tensor is exercised.  Relative
    error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(seed)
    _, analytic = loss_fn(params)
    probe = params.copy()
    names = list(PARAM_SHAPES)
    worst = 0.0
    for k in range(samples):
        name = names[k % len(names)]
        arr = probe.arrays[name]
        idx = tuple(int(rng.integers(n)) for n in arr.shape)
        orig = arr[idx]
        arr[idx] = orig + eps
        up, _ = loss_fn(probe)
        arr[idx] = orig - eps
        down, _ = loss_fn(probe)
        arr[idx] = orig
        numeric = (up - down) / (2 * eps)
        a = analytic[name][idx]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


# -- checkpoint file ------------------------------------------------------------

MAGIC = b"QNETCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def _blocks(params: QNetParams) -> list[tuple[str, np.ndarray]]:
    """Fixed serialization order with each LSTM matrix split into its gate blocks."""
    out = [("fc_in.w", params["fc_in.w"]), ("fc_in.b", params["fc_in.b"])]
    for layer in (1, 2):
        for part, key in (("input", "wx"), ("recurrent", "wh"), ("bias", "b")):
            full = params[f"lstm{layer}.{key}"]
            for k, gate in enumerate(GATES):
                out.append((f"lstm{layer}.{part}.{gate}", full[..., k * HIDDEN:(k + 1) * HIDDEN]))
    out += [("fc_out.w", params["fc_out.w"]), ("fc_out.b", params["fc_out.b"])]
    return out


def _expected_table() -> list[tuple[str, tuple[int, ...]]]:
    return [(name, arr.shape) for name, arr in _blocks(QNetParams.zeros())]


def save_checkpoint(stream, params: QNetParams, echo: dict | None = None) -> None:
    """Write magic, version, shape table, echo JSON, then little-endian float64 data."""
    blocks = _blocks(params)
    stream.write(MAGIC)
    stream.write(struct.pack("<I", FORMAT_VERSION))
    stream.write(struct.pack("<I", len(blocks)))
    for name, arr in blocks:
        raw = name.encode()
        stream.write(struct.pack("<H", len(raw)) + raw)
        stream.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    meta = json.dumps(echo or {}, sort_keys=True).encode()
    stream.write(struct.pack("<I", len(meta)) + meta)
    for _, arr in blocks:
        stream.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(stream, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise CheckpointError(what, f"truncated (wanted {n} bytes, got {len(data)})")
    return data


def load_checkpoint(stream) -> tuple[QNetParams, dict]:
    if _read(stream, len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("magic", "not a Q-network checkpoint")
    (version,) = struct.unpack("<I", _read(stream, 4, "version"))
    if version != FORMAT_VERSION:
        raise CheckpointError("version", f"unsupported format version {version}")
    (count,) = struct.unpack("<I", _read(stream, 4, "shape_table"))
    expected = _expected_table()
    if count != len(expected):
        raise CheckpointError("shape_table", f"expected {len(expected)} entries, got {count}")
    for name, shape in expected:
        (n,) = struct.unpack("<H", _read(stream, 2, "shape_table"))
        got_name = _read(stream, n, "shape_table").decode(errors="replace")
        (ndim,) = struct.unpack("<B", _read(stream, 1, f"shape_table[{got_name}]"))
        dims = struct.unpack(f"<{ndim}I", _read(stream, 4 * ndim, f"shape_table[{got_name}]"))
        if got_name != name or tuple(dims) != shape:
            raise CheckpointError(f"shape_table[{name}]", f"expected {name} {shape}, got {got_name} {tuple(dims)}")
    (meta_len,) = struct.unpack("<I", _read(stream, 4, "echo"))
    echo = json.loads(_read(stream, meta_len, "echo").decode())
    params = QNetParams.zeros()
    for name, view in _blocks(params):
        raw = _read(stream, view.size * 8, f"data[{name}]")
        view[...] = np.frombuffer(raw, dtype="<f8").reshape(view.shape)
    if stream.read(1):
        raise CheckpointError("data", "trailing bytes after parameters")
    return params, echo


def checkpoint_bytes(params: QNetParams, echo: dict | None = None) -> bytes:
    buf = io.BytesIO()
    save_checkpoint(buf, params, echo)
    return buf.getvalue()
