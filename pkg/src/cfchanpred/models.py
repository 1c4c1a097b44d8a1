"""Predictor assembly.

One window of T standardized CSI snapshots [T x L x M] goes in, K predicted
snapshots [K x L x M] come out in a single pass, for every model kind:

* ``proposed``: per-step spatial propagation (SpaceConv) and subcarrier
  convolution (FreqConv), spliced, vectorized and projected to d_model,
  positional term added, two encoder blocks, dense output head;
* ``variant_a``: raw snapshots embedded directly (no SpaceConv/FreqConv);
* ``variant_b``: SpaceConv branch only;
* ``variant_c``: FreqConv branch only;
* ``dnn`` / ``rnn`` / ``lstm``: two-layer baselines on the same window;
* ``transformer``: identical code path to variant_a, with the wider
  feed-forward default of the conventional encoder.

No layer carries a bias term. Weights live in an insertion-ordered dict
keyed by dotted names; initialization draws them in that order from one
seeded stream, so models are reproducible end to end.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .channel import Standardization
from .errors import DataError, ShapeError
from .fileio import atomic_write_bytes
from .layers import (
    BlockWeights,
    HeadWeights,
    encoder_forward,
    positional_encoding,
)

KINDS = ("proposed", "variant_a", "variant_b", "variant_c",
         "dnn", "rnn", "lstm", "transformer")

_ENCODER_KINDS = ("proposed", "variant_a", "variant_b", "variant_c", "transformer")
_NORM_AXES = ("time", "feature")

CFWT_MAGIC = b"CFWT"
CFWT_VERSION = 1

A_NORM_NAME = "space.a_norm"    # serialized with checkpoints, not trainable


@dataclass
class ModelConfig:
    """Architecture knobs. ``None`` fields resolve to kind-appropriate
    defaults in resolved()."""
    kind: str = "proposed"
    window: int = 10                    # T input steps
    horizon: int = 1                    # K predicted steps
    n_subcarriers: int = 16             # L
    n_aps: int = 16                     # M
    d_model: int = 128
    n_heads: int = 2
    d_k: Optional[int] = None           # default d_model // n_heads
    d_v: Optional[int] = None
    kernel_size: int = 3                # D_k, odd
    hidden: Optional[int] = None        # baseline width, default d_model
    d_ff: Optional[int] = None          # default d_model; 4*d_model for kind=transformer
    n_blocks: int = 2
    alpha: float = 1.0                  # positional-encoding coefficient
    eps: float = 1e-9                   # layer-norm constant
    layer_norm_axis: str = "time"

    def resolved(self) -> "ModelConfig":
        cfg = self
        if cfg.kind not in KINDS:
            raise DataError(f"unknown model kind {cfg.kind!r}; options: {KINDS}")
        if cfg.layer_norm_axis not in _NORM_AXES:
            raise DataError(f"unknown layer_norm_axis {cfg.layer_norm_axis!r}")
        for name in ("window", "horizon", "n_subcarriers", "n_aps", "d_model",
                     "n_heads", "kernel_size", "n_blocks"):
            if getattr(cfg, name) < 1:
                raise DataError(f"{name} must be >= 1")
        if cfg.kernel_size % 2 == 0:
            raise DataError(f"kernel_size must be odd, got {cfg.kernel_size}")
        if cfg.kernel_size > cfg.n_subcarriers:
            raise DataError(f"kernel_size {cfg.kernel_size} exceeds n_subcarriers {cfg.n_subcarriers}")
        d_k, d_v = cfg.d_k, cfg.d_v
        if d_k is None or d_v is None:
            if cfg.d_model % cfg.n_heads != 0:
                raise DataError(
                    f"d_model {cfg.d_model} not divisible by n_heads {cfg.n_heads}; "
                    "set d_k/d_v explicitly")
            d_k = d_k if d_k is not None else cfg.d_model // cfg.n_heads
            d_v = d_v if d_v is not None else cfg.d_model // cfg.n_heads
        if d_k < 1 or d_v < 1:
            raise DataError("d_k and d_v must be >= 1")
        hidden = cfg.hidden if cfg.hidden is not None else cfg.d_model
        if hidden < 1:
            raise DataError("hidden must be >= 1")
        d_ff = cfg.d_ff
        if d_ff is None:
            d_ff = 4 * cfg.d_model if cfg.kind == "transformer" else cfg.d_model
        if d_ff < 1:
            raise DataError("d_ff must be >= 1")
        return replace(cfg, d_k=d_k, d_v=d_v, hidden=hidden, d_ff=d_ff)


@dataclass
class PredictorModel:
    config: ModelConfig
    weights: Dict[str, np.ndarray]      # insertion-ordered, trainable only
    a_norm: Optional[np.ndarray] = None # fixed propagation matrix (space kinds)

    def parameter_count(self) -> int:
        return int(sum(w.size for w in self.weights.values()))


def weight_shapes(config: ModelConfig) -> Dict[str, tuple]:
    """Every trainable array and its shape, in initialization order."""
    cfg = config.resolved()
    t, k = cfg.window, cfg.horizon
    l, m = cfg.n_subcarriers, cfg.n_aps
    d, h = cfg.d_model, cfg.n_heads
    shapes: Dict[str, tuple] = {}
    if cfg.kind in _ENCODER_KINDS:
        if cfg.kind in ("proposed", "variant_b"):
            shapes["space.w_s"] = (m, m)
        if cfg.kind in ("proposed", "variant_c"):
            for s in range(t):
                shapes[f"freq.dwc.{s}"] = (cfg.kernel_size, m)
            for s in range(t):
                shapes[f"freq.pwc.{s}"] = (t,)
        embed_in = 2 * l * m if cfg.kind == "proposed" else l * m
        shapes["embed.w"] = (embed_in, d)
        for b in range(cfg.n_blocks):
            for i in range(h):
                shapes[f"enc.{b}.head.{i}.w_q"] = (d, cfg.d_k)
                shapes[f"enc.{b}.head.{i}.w_k"] = (d, cfg.d_k)
                shapes[f"enc.{b}.head.{i}.w_v"] = (d, cfg.d_v)
            shapes[f"enc.{b}.w_o"] = (h * cfg.d_v, d)
            shapes[f"enc.{b}.ff.w1"] = (d, cfg.d_ff)
            shapes[f"enc.{b}.ff.w2"] = (cfg.d_ff, d)
        shapes["out.w"] = (t * d, k * l * m)
    elif cfg.kind == "dnn":
        shapes["dnn.w1"] = (t * l * m, cfg.hidden)
        shapes["dnn.w2"] = (cfg.hidden, k * l * m)
    elif cfg.kind == "rnn":
        for layer, n_in in enumerate((l * m, cfg.hidden)):
            shapes[f"rnn.{layer}.w_x"] = (n_in, cfg.hidden)
            shapes[f"rnn.{layer}.w_h"] = (cfg.hidden, cfg.hidden)
        shapes["out.w"] = (cfg.hidden, k * l * m)
    elif cfg.kind == "lstm":
        for layer, n_in in enumerate((l * m, cfg.hidden)):
            for gate in "ifgo":
                shapes[f"lstm.{layer}.w_x{gate}"] = (n_in, cfg.hidden)
                shapes[f"lstm.{layer}.w_h{gate}"] = (cfg.hidden, cfg.hidden)
        shapes["out.w"] = (cfg.hidden, k * l * m)
    return shapes


def proposed_parameter_closed_form(config: ModelConfig) -> int:
    """Independent parameter total for kind=proposed with two blocks."""
    cfg = config.resolved()
    t, k = cfg.window, cfg.horizon
    l, m = cfg.n_subcarriers, cfg.n_aps
    d, h, d_k, d_v = cfg.d_model, cfg.n_heads, cfg.d_k, cfg.d_v
    per_block = h * (2 * d * d_k + d * d_v) + h * d_v * d + 2 * d * d
    return (m * m
            + t * (cfg.kernel_size * m + t)
            + 2 * m * l * d
            + 2 * per_block
            + t * d * k * l * m)


def build_model(config: ModelConfig, a_norm: Optional[np.ndarray] = None,
                seed: int = 0) -> PredictorModel:
    """Initialize every weight from one seeded stream, in dict order."""
    from .training import glorot_bound   # deferred: training imports this module

    cfg = config.resolved()
    needs_space = cfg.kind in ("proposed", "variant_b")
    if needs_space:
        if a_norm is None:
            a_norm = np.eye(cfg.n_aps)
        a_norm = np.asarray(a_norm, dtype=np.float64)
        if a_norm.shape != (cfg.n_aps, cfg.n_aps):
            raise ShapeError(
                f"a_norm {a_norm.shape} does not match n_aps={cfg.n_aps}")
    else:
        a_norm = None
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    weights: Dict[str, np.ndarray] = {}
    for name, shape in weight_shapes(cfg).items():
        bound = glorot_bound(shape)
        weights[name] = rng.uniform(-bound, bound, shape)
    return PredictorModel(config=cfg, weights=weights, a_norm=a_norm)


# ---------------------------------------------------------------------------
# forward passes


def _check_windows(cfg: ModelConfig, windows: np.ndarray) -> np.ndarray:
    arr = ad.as_finite_array(windows, name="windows")
    expected = (cfg.window, cfg.n_subcarriers, cfg.n_aps)
    if arr.ndim != 4 or arr.shape[1:] != expected:
        raise ShapeError(
            f"windows {arr.shape} do not match [B, T={expected[0]}, "
            f"L={expected[1]}, M={expected[2]}]")
    return arr


def _blocks_from(nodes: Dict[str, Node], cfg: ModelConfig):
    blocks = []
    for b in range(cfg.n_blocks):
        heads = [HeadWeights(w_q=nodes[f"enc.{b}.head.{i}.w_q"],
                             w_k=nodes[f"enc.{b}.head.{i}.w_k"],
                             w_v=nodes[f"enc.{b}.head.{i}.w_v"])
                 for i in range(cfg.n_heads)]
        blocks.append(BlockWeights(heads=heads,
                                   w_o=nodes[f"enc.{b}.w_o"],
                                   w_d1=nodes[f"enc.{b}.ff.w1"],
                                   w_d2=nodes[f"enc.{b}.ff.w2"]))
    return blocks


def _encoder_family(model: PredictorModel, nodes: Dict[str, Node],
                    windows: np.ndarray) -> Node:
    cfg = model.config
    n_batch, t = windows.shape[0], cfg.window
    l, m, d = cfg.n_subcarriers, cfg.n_aps, cfg.d_model
    steps = [ad.constant(np.ascontiguousarray(windows[:, s])) for s in range(t)]

    s_maps = f_maps = None
    if cfg.kind in ("proposed", "variant_b"):
        a_n = ad.constant(model.a_norm)
        w_s = nodes["space.w_s"]
        s_maps = [ad.matmul(ad.matmul(x, a_n), w_s) for x in steps]
    if cfg.kind in ("proposed", "variant_c"):
        dwc = [ad.depthwise_conv1d(steps[s], nodes[f"freq.dwc.{s}"])
               for s in range(t)]
        f_maps = [ad.weighted_sum(dwc, nodes[f"freq.pwc.{s}"]) for s in range(t)]

    w_embed = nodes["embed.w"]
    embedded = []
    for s in range(t):
        if cfg.kind == "proposed":
            feat = ad.reshape(ad.concat([s_maps[s], f_maps[s]], axis=1),
                              (n_batch, 2 * l * m))
        elif cfg.kind == "variant_b":
            feat = ad.reshape(s_maps[s], (n_batch, l * m))
        elif cfg.kind == "variant_c":
            feat = ad.reshape(f_maps[s], (n_batch, l * m))
        else:
            feat = ad.reshape(steps[s], (n_batch, l * m))
        embedded.append(ad.reshape(ad.matmul(feat, w_embed), (n_batch, 1, d)))
    x = ad.concat(embedded, axis=1)

    pos = cfg.alpha * positional_encoding(t, d)
    x = ad.add(x, ad.constant(np.ascontiguousarray(
        np.broadcast_to(pos, (n_batch, t, d)))))
    y = encoder_forward(x, _blocks_from(nodes, cfg), d_k=cfg.d_k,
                        eps=cfg.eps, norm_axis=cfg.layer_norm_axis)
    flat = ad.reshape(y, (n_batch, t * d))
    out = ad.matmul(flat, nodes["out.w"])
    return ad.reshape(out, (n_batch, cfg.horizon, l, m))


def _dnn(model: PredictorModel, nodes: Dict[str, Node], windows: np.ndarray,
         activation=ad.relu) -> Node:
    cfg = model.config
    n_batch = windows.shape[0]
    flat = ad.constant(windows.reshape(n_batch, -1))
    hidden = activation(ad.matmul(flat, nodes["dnn.w1"]))
    out = ad.matmul(hidden, nodes["dnn.w2"])
    return ad.reshape(out, (n_batch, cfg.horizon, cfg.n_subcarriers, cfg.n_aps))


def _rnn(model: PredictorModel, nodes: Dict[str, Node], windows: np.ndarray) -> Node:
    cfg = model.config
    n_batch, t = windows.shape[0], cfg.window
    states = [ad.constant(np.zeros((n_batch, cfg.hidden))) for _ in range(2)]
    for s in range(t):
        x = ad.constant(windows[:, s].reshape(n_batch, -1))
        for layer in range(2):
            pre = ad.add(ad.matmul(x, nodes[f"rnn.{layer}.w_x"]),
                         ad.matmul(states[layer], nodes[f"rnn.{layer}.w_h"]))
            states[layer] = ad.tanh(pre)
            x = states[layer]
    out = ad.matmul(states[1], nodes["out.w"])
    return ad.reshape(out, (n_batch, cfg.horizon, cfg.n_subcarriers, cfg.n_aps))


def _lstm(model: PredictorModel, nodes: Dict[str, Node], windows: np.ndarray) -> Node:
    cfg = model.config
    n_batch, t = windows.shape[0], cfg.window
    zeros = lambda: ad.constant(np.zeros((n_batch, cfg.hidden)))
    h_state = [zeros() for _ in range(2)]
    c_state = [zeros() for _ in range(2)]
    for s in range(t):
        x = ad.constant(windows[:, s].reshape(n_batch, -1))
        for layer in range(2):
            gate = lambda g: ad.add(
                ad.matmul(x, nodes[f"lstm.{layer}.w_x{g}"]),
                ad.matmul(h_state[layer], nodes[f"lstm.{layer}.w_h{g}"]))
            i = ad.sigmoid(gate("i"))
            f = ad.sigmoid(gate("f"))
            g = ad.tanh(gate("g"))
            o = ad.sigmoid(gate("o"))
            c_state[layer] = ad.add(ad.mul(f, c_state[layer]), ad.mul(i, g))
            h_state[layer] = ad.mul(o, ad.tanh(c_state[layer]))
            x = h_state[layer]
    out = ad.matmul(h_state[1], nodes["out.w"])
    return ad.reshape(out, (n_batch, cfg.horizon, cfg.n_subcarriers, cfg.n_aps))


def forward_batch(model: PredictorModel, windows: np.ndarray,
                  params: Optional[Dict[str, Node]] = None) -> Node:
    """Differentiable batched pass [B,T,L,M] -> Node [B,K,L,M].

    ``params`` supplies trainable Nodes during optimization; inference
    wraps the stored arrays as constants.
    """
    cfg = model.config
    arr = _check_windows(cfg, windows)
    nodes = params if params is not None else {
        name: ad.constant(w) for name, w in model.weights.items()}
    if cfg.kind in _ENCODER_KINDS:
        return _encoder_family(model, nodes, arr)
    if cfg.kind == "dnn":
        return _dnn(model, nodes, arr)
    if cfg.kind == "rnn":
        return _rnn(model, nodes, arr)
    return _lstm(model, nodes, arr)


def forward(model: PredictorModel, window: np.ndarray) -> np.ndarray:
    """Single-window inference [T,L,M] -> [K,L,M]."""
    arr = np.asarray(window)
    if arr.ndim != 3:
        raise ShapeError(f"window must be [T, L, M], got {arr.shape}")
    return forward_batch(model, arr[None]).value[0]


def predict_complex(model_re: PredictorModel, model_im: PredictorModel,
                    window: np.ndarray,
                    standardization: Optional[Standardization]) -> np.ndarray:
    """Predict complex CSI from a raw (unstandardized) complex window.

    Each part is standardized with the stored statistics, pushed through
    its model, de-standardized, and recombined. Pass the same model twice
    for the weight-sharing mode.
    """
    if standardization is None:
        raise DataError("dataset carries no standardization metadata; "
                        "train/standardize before predicting")
    arr = np.asarray(window)
    if arr.ndim != 3:
        raise ShapeError(f"window must be [T, L, M], got {arr.shape}")
    pred_re = forward(model_re, standardization.apply_part(np.real(arr), imag=False))
    pred_im = forward(model_im, standardization.apply_part(np.imag(arr), imag=True))
    return (standardization.invert_part(pred_re, imag=False)
            + 1j * standardization.invert_part(pred_im, imag=True))


# ---------------------------------------------------------------------------
# checkpoint format
#
# magic "CFWT" | u32 version | config block | u32 array count | arrays.
# Config block: 14 x u32 (kind index, window, horizon, L, M, d_model,
# n_heads, d_k, d_v, kernel_size, hidden, d_ff, n_blocks, norm-axis index)
# then 2 x f64 (alpha, eps). Array record: u16 name length, name bytes,
# u8 rank, u32 dims, f64 payload. Little-endian throughout.

def save_model(model: PredictorModel, path: str) -> None:
    cfg = model.config.resolved()
    parts = [CFWT_MAGIC, struct.pack("<I", CFWT_VERSION)]
    parts.append(struct.pack(
        "<14I", KINDS.index(cfg.kind), cfg.window, cfg.horizon,
        cfg.n_subcarriers, cfg.n_aps, cfg.d_model, cfg.n_heads, cfg.d_k,
        cfg.d_v, cfg.kernel_size, cfg.hidden, cfg.d_ff, cfg.n_blocks,
        _NORM_AXES.index(cfg.layer_norm_axis)))
    parts.append(struct.pack("<dd", cfg.alpha, cfg.eps))
    arrays = dict(model.weights)
    if model.a_norm is not None:
        arrays[A_NORM_NAME] = model.a_norm
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_model(path: str) -> PredictorModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise DataError(f"cannot read checkpoint {path}: {err}") from err
    if len(blob) < 8 or blob[:4] != CFWT_MAGIC:
        raise DataError(f"{path}: not a CFWT checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CFWT_VERSION:
        raise DataError(f"{path}: unsupported CFWT version {version}")
    off = 8
    try:
        ints = struct.unpack_from("<14I", blob, off)
        off += 56
        alpha, eps = struct.unpack_from("<dd", blob, off)
        off += 16
        (n_arrays,) = struct.unpack_from("<I", blob, off)
        off += 4
    except struct.error as err:
        raise DataError(f"{path}: truncated CFWT header") from err
    kind_idx, axis_idx = ints[0], ints[13]
    if kind_idx >= len(KINDS) or axis_idx >= len(_NORM_AXES):
        raise DataError(f"{path}: corrupt CFWT config block")
    cfg = ModelConfig(
        kind=KINDS[kind_idx], window=ints[1], horizon=ints[2],
        n_subcarriers=ints[3], n_aps=ints[4], d_model=ints[5],
        n_heads=ints[6], d_k=ints[7], d_v=ints[8], kernel_size=ints[9],
        hidden=ints[10], d_ff=ints[11], n_blocks=ints[12],
        alpha=alpha, eps=eps, layer_norm_axis=_NORM_AXES[axis_idx]).resolved()
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        try:
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
        except (struct.error, ValueError) as err:
            raise DataError(f"{path}: truncated CFWT array table") from err
        arrays[name] = arr.reshape(dims).astype(np.float64)
    if off != len(blob):
        raise DataError(f"{path}: {len(blob) - off} trailing bytes")
    a_norm = arrays.pop(A_NORM_NAME, None)
    expected = weight_shapes(cfg)
    if list(arrays) != list(expected):
        raise DataError(f"{path}: weight names do not match config "
                        f"(got {sorted(arrays)[:4]}...)")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise DataError(f"{path}: weight {name} has shape "
                            f"{arrays[name].shape}, expected {shape}")
    needs_space = cfg.kind in ("proposed", "variant_b")
    if needs_space and a_norm is None:
        raise DataError(f"{path}: checkpoint lacks {A_NORM_NAME}")
    return PredictorModel(config=cfg, weights=arrays,
                          a_norm=a_norm if needs_space else None)
