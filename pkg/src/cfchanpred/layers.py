"""Building blocks of the predictor.

Three families of layers, all bias-free:

* graph propagation across the AP axis (spatial mixing through a fixed
  normalized adjacency, then a trainable mixing matrix),
* depthwise-separable 1-D convolution across subcarriers (per-AP depthwise
  kernel followed by a pointwise combination over window positions),
* a Transformer encoder (per-head Q/K/V projections, scaled dot-product
  attention, add & norm, two-layer relu feed-forward).

Every function accepts a single sample ([T x d] / [L x M]) or a batched
stack with one leading axis; shapes are reshaped explicitly, never
broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ShapeError


@dataclass
class SpaceConvWeights:
    """Trainable AP mixing plus the fixed propagation matrix."""
    w_s: Node                # [M, M]
    a_norm: np.ndarray       # [M, M], symmetric, self-loop normalized


@dataclass
class FreqConvWeights:
    """One depthwise kernel and one pointwise vector per window position."""
    w_dwc: List[Node]        # T entries, each [D_k, M]
    w_pwc: List[Node]        # T entries, each [T]


@dataclass
class HeadWeights:
    w_q: Node                # [d_model, d_k]
    w_k: Node                # [d_model, d_k]
    w_v: Node                # [d_model, d_v]


@dataclass
class BlockWeights:
    heads: List[HeadWeights]
    w_o: Node                # [h * d_v, d_model]
    w_d1: Node               # [d_model, d_ff]
    w_d2: Node               # [d_ff, d_model]


def space_conv(h_t, weights: SpaceConvWeights):
    """Propagate one CSI snapshot across APs: (H . a_norm) . W_s.

    ``h_t`` is [L, M] (or [B, L, M]); information flows along the AP axis
    through a_norm, then the trainable W_s mixes the result.
    """
    h_t = h_t if isinstance(h_t, Node) else ad.constant(h_t)
    m = weights.a_norm.shape[0]
    if h_t.shape[-1] != m:
        raise ShapeError(f"space_conv: input {h_t.shape} vs propagation {weights.a_norm.shape}")
    propagated = ad.matmul(h_t, ad.constant(weights.a_norm.astype(h_t.value.dtype, copy=False)))
    return ad.matmul(propagated, weights.w_s)


def freq_conv_dwc(h_t, w_dwc: Node):
    """Depthwise convolution along the subcarrier axis, one kernel column
    per AP. Zero 'same' padding, stride 1, odd kernel length."""
    h_t = h_t if isinstance(h_t, Node) else ad.constant(h_t)
    if h_t.ndim == 2:
        l, m = h_t.shape
        out = ad.depthwise_conv1d(ad.reshape(h_t, (1, l, m)), w_dwc)
        return ad.reshape(out, (l, m))
    if h_t.ndim == 3:
        return ad.depthwise_conv1d(h_t, w_dwc)
    raise ShapeError(f"freq_conv_dwc: expected [L,M] or [B,L,M], got {h_t.shape}")


def freq_conv_pwc(stack, w_pwc: Node):
    """Pointwise combination of the T depthwise outputs for one window
    position: sum_t w[t] * stack[t]."""
    return ad.weighted_sum(list(stack), w_pwc)


def positional_encoding(n_steps: int, d_model: int) -> np.ndarray:
    """Sinusoidal position table P[i, j] = sin(i / 10000^((j - j mod 2) /
    d_model) - (j mod 2) * pi / 2). Returned unscaled; the model applies
    its alpha factor."""
    i = np.arange(n_steps, dtype=np.float64)[:, None]
    j = np.arange(d_model, dtype=np.float64)[None, :]
    parity = np.mod(j, 2.0)
    rate = np.power(10000.0, (j - parity) / float(d_model))
    return np.sin(i / rate - parity * (np.pi / 2.0))


def layer_norm_columns(x, eps: float, axis: str = "time"):
    """Add & norm statistic axis. ``"time"`` normalizes each feature column
    over the window positions (the layout this model trains with);
    ``"feature"`` is the conventional per-row alternative."""
    if axis not in ("time", "feature"):
        raise ShapeError(f"layer_norm_columns: unknown axis {axis!r}")
    return ad.normalize_axis(x, -2 if axis == "time" else -1, eps)


def multi_head_attention(x, block: BlockWeights, d_k: int):
    """Scaled dot-product attention over window positions.

    ``x`` is [T, d_model] or [B, T, d_model]. Each head projects with its
    own Q/K/V, heads are concatenated and mixed by w_o.
    """
    x = x if isinstance(x, Node) else ad.constant(x)
    batched = x.ndim == 3
    inv_scale = 1.0 / np.sqrt(float(d_k))
    heads_out = []
    for head in block.heads:
        q = ad.matmul(x, head.w_q)
        k = ad.matmul(x, head.w_k)
        v = ad.matmul(x, head.w_v)
        kt = ad.swap_last2(k)
        scores = ad.scale(ad.bmm(q, kt) if batched else ad.matmul(q, kt), inv_scale)
        attn = ad.softmax_rows(scores)
        heads_out.append(ad.bmm(attn, v) if batched else ad.matmul(attn, v))
    stacked = heads_out[0] if len(heads_out) == 1 else ad.concat(heads_out, axis=-1)
    return ad.matmul(stacked, block.w_o)


def feed_forward(z, w_d1: Node, w_d2: Node):
    """relu(Z . W1) . W2"""
    return ad.matmul(ad.relu(ad.matmul(z, w_d1)), w_d2)


def encoder_block(x, block: BlockWeights, d_k: int, eps: float, norm_axis: str = "time"):
    attended = multi_head_attention(x, block, d_k)
    z = layer_norm_columns(ad.add(x, attended), eps, norm_axis)
    y = layer_norm_columns(ad.add(z, feed_forward(z, block.w_d1, block.w_d2)), eps, norm_axis)
    return y


def encoder_forward(x, blocks, d_k: int, eps: float, norm_axis: str = "time"):
    """Run the block stack (independent weights per block)."""
    out = x if isinstance(x, Node) else ad.constant(x)
    for block in blocks:
        out = encoder_block(out, block, d_k, eps, norm_axis)
    return out
