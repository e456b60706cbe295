"""Dense rank-3 tensors and the core network operations.

Conventions, fixed once for the whole package:

* A tensor is a C-contiguous ``numpy`` array of shape ``(H, W, C)`` in
  row-major ``(y, x, c)`` order, ``y`` = row, ``x`` = column.
* Convolution is cross-correlation (no kernel flip), stride 1.
* All arithmetic is float64; float32 inputs are accepted as a fast path
  and computed in float32.

The convolution core gathers input windows band by band into a small
im2col scratch block and multiplies with BLAS.  Bands are sized so the
scratch stays cache-resident; zero padding is applied virtually during
the gather, so no padded copy of the input is ever materialized.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Cap on the im2col scratch block per band.  Large enough for good GEMM
# shapes, small enough to stay in last-level cache on one core.
_COL_BLOCK_BYTES = 8 << 20


class Activation(enum.IntEnum):
    """Elementwise nonlinearity applied after a convolution layer.

    Integer values double as the on-disk activation codes.
    """

    TANH = 0
    RELU = 1
    IDENTITY = 2

    @classmethod
    def from_name(cls, name: str) -> "Activation":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown activation {name!r}") from None


@dataclass
class ConvKernel:
    """Weights and bias of one convolution layer.

    ``weights`` has shape ``(out_channels, in_channels, k, k)`` indexed
    ``(o, i, ky, kx)``; ``bias`` has shape ``(out_channels,)``.  The tap
    count ``k`` must be odd: even kernels would need an asymmetric
    same-padding rule and are rejected.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        self.bias = np.ascontiguousarray(np.asarray(self.bias, dtype=np.float64))
        if self.weights.ndim != 4:
            raise ValueError("kernel weights must be 4-D (out, in, ky, kx)")
        out_ch, _, ky, kx = self.weights.shape
        if ky != kx:
            raise ValueError("only square kernels are supported")
        if ky < 1 or ky % 2 == 0:
            raise ValueError(f"kernel size must be odd and >= 1, got {ky}")
        if self.bias.shape != (out_ch,):
            raise ValueError("bias length must equal out_channels")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]


def _require_tensor3(t: np.ndarray, name: str = "input") -> np.ndarray:
    t = np.asarray(t)
    if t.ndim != 3:
        raise ValueError(f"{name} must be 3-D (H, W, C), got shape {t.shape}")
    if min(t.shape) < 1:
        raise ValueError(f"{name} must have positive dimensions, got {t.shape}")
    if t.dtype != np.float32:
        t = np.ascontiguousarray(t, dtype=np.float64)
    else:
        t = np.ascontiguousarray(t)
    return t


# ---------------------------------------------------------------------------
# convolution core


def _fill_col_band(col5, x, b0, b1, y0, y1, k, pad_lo):
    """Gather one band of input windows into the im2col scratch.

    ``col5`` is a ``(b1-b0, y1-y0, Wo, k*k, Ci)`` view of the scratch;
    out-of-image taps are filled with zeros (virtual padding).  Multi-sample
    bands must cover whole samples (``y0 == 0``, ``y1 == Ho``).
    """
    _, H, W, _ = x.shape
    rows = y1 - y0
    Wo = col5.shape[2]
    for ky in range(k):
        dy = ky - pad_lo
        ys = max(y0, -dy)
        ye = min(y1, H - dy)
        for kx in range(k):
            t = ky * k + kx
            dx = kx - pad_lo
            xs = max(0, -dx)
            xe = min(Wo, W - dx)
            dst = col5[:, :, :, t, :]
            if ye <= ys or xe <= xs:
                dst[...] = 0.0
                continue
            r0 = ys - y0
            r1 = ye - y0
            if r0 > 0:
                dst[:, :r0] = 0.0
            if r1 < rows:
                dst[:, r1:] = 0.0
            if xs > 0:
                dst[:, r0:r1, :xs] = 0.0
            if xe < Wo:
                dst[:, r0:r1, xe:] = 0.0
            dst[:, r0:r1, xs:xe] = x[b0:b1, ys + dy:ye + dy, xs + dx:xe + dx, :]


def _conv_out_shape(H, W, k, pad_lo, pad_hi):
    Ho = H + pad_lo + pad_hi - k + 1
    Wo = W + pad_lo + pad_hi - k + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(
            f"input {H}x{W} too small for k={k} with padding ({pad_lo},{pad_hi})"
        )
    return Ho, Wo


def _weights_matrix(weights: np.ndarray, dtype) -> np.ndarray:
    # (o, i, ky, kx) -> (ky, kx, i, o) flattened to (k*k*Ci, Co)
    Co, Ci, k, _ = weights.shape
    w = weights.astype(dtype, copy=False)
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(k * k * Ci, Co))


def _im2col_batch(x: np.ndarray, k: int, pad_lo: int, pad_hi: int) -> np.ndarray:
    """Full im2col of a batch: ``(B*Ho*Wo, k*k*Ci)`` with K order (ky, kx, ci)."""
    B, H, W, Ci = x.shape
    Ho, Wo = _conv_out_shape(H, W, k, pad_lo, pad_hi)
    col = np.empty((B * Ho * Wo, k * k * Ci), dtype=x.dtype)
    col5 = col.reshape(B, Ho, Wo, k * k, Ci)
    if B > 1 and pad_lo == 0 and pad_hi == 0:
        _fill_col_band(col5, x, 0, B, 0, Ho, k, 0)
    elif B > 1:
        _fill_col_band(col5, x, 0, B, 0, Ho, k, pad_lo)
    else:
        _fill_col_band(col5, x, 0, 1, 0, Ho, k, pad_lo)
    return col


def _conv_batch(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray | None,
    pad_lo: int,
    pad_hi: int,
    keep_col: bool = False,
):
    """Batched 2-D cross-correlation: ``(B,H,W,Ci) -> (B,Ho,Wo,Co)``.

    Returns ``(out, col)`` where ``col`` is the full im2col matrix when
    ``keep_col`` is set (reused by the backward pass), else ``None``.
    """
    B, H, W, Ci = x.shape
    Co, Ci_w, k, _ = weights.shape
    if Ci_w != Ci:
        raise ValueError(f"channel mismatch: input has {Ci}, kernel expects {Ci_w}")
    Ho, Wo = _conv_out_shape(H, W, k, pad_lo, pad_hi)
    dt = x.dtype
    wmat = _weights_matrix(weights, dt)
    b = None if bias is None else bias.astype(dt, copy=False)

    if k == 1 and pad_lo == 0 and pad_hi == 0:
        out = x.reshape(-1, Ci) @ wmat
        if b is not None:
            out += b
        col = x.reshape(-1, Ci) if keep_col else None
        return out.reshape(B, Ho, Wo, Co), col

    K = k * k * Ci
    if keep_col:
        col = _im2col_batch(x, k, pad_lo, pad_hi)
        out = col @ wmat
        if b is not None:
            out += b
        return out.reshape(B, Ho, Wo, Co), col

    out = np.empty((B, Ho, Wo, Co), dtype=dt)
    sample_col_bytes = Ho * Wo * K * dt.itemsize
    if sample_col_bytes <= _COL_BLOCK_BYTES:
        # whole samples per band
        nb = max(1, min(B, _COL_BLOCK_BYTES // max(1, sample_col_bytes)))
        scratch = np.empty((nb * Ho * Wo, K), dtype=dt)
        for b0 in range(0, B, nb):
            b1 = min(B, b0 + nb)
            m = (b1 - b0) * Ho * Wo
            col = scratch[:m]
            _fill_col_band(
                col.reshape(b1 - b0, Ho, Wo, k * k, Ci), x, b0, b1, 0, Ho, k, pad_lo
            )
            view = out[b0:b1].reshape(m, Co)
            np.matmul(col, wmat, out=view)
            if b is not None:
                view += b
    else:
        # row bands within each sample
        rows = max(1, _COL_BLOCK_BYTES // max(1, Wo * K * dt.itemsize))
        scratch = np.empty((rows * Wo, K), dtype=dt)
        for bi in range(B):
            for y0 in range(0, Ho, rows):
                y1 = min(Ho, y0 + rows)
                m = (y1 - y0) * Wo
                col = scratch[:m]
                _fill_col_band(
                    col.reshape(1, y1 - y0, Wo, k * k, Ci), x, bi, bi + 1, y0, y1, k, pad_lo
                )
                view = out[bi, y0:y1].reshape(m, Co)
                np.matmul(col, wmat, out=view)
                if b is not None:
                    view += b
    return out, None


def _conv_input_grad(g: np.ndarray, weights: np.ndarray, pad_lo: int, pad_hi: int):
    """Gradient of a conv w.r.t. its input: full correlation with the
    transposed, spatially flipped kernel."""
    k = weights.shape[2]
    wback = np.ascontiguousarray(weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    gx, _ = _conv_batch(g, wback, None, k - 1 - pad_lo, k - 1 - pad_hi)
    return gx


def _weight_grads_from_col(col: np.ndarray, g: np.ndarray, k: int, in_channels: int):
    """Weight/bias gradients given the forward im2col matrix and the
    output cotangent ``g`` of shape ``(B, Ho, Wo, Co)``."""
    Co = g.shape[3]
    g2 = g.reshape(-1, Co)
    gw = col.T @ g2  # (K, Co)
    gw = gw.reshape(k, k, in_channels, Co).transpose(3, 2, 0, 1)
    gb = g2.sum(axis=0)
    return np.ascontiguousarray(gw, dtype=np.float64), gb.astype(np.float64)


def _same_pad(k: int) -> int:
    return (k - 1) // 2


def _resolve_padding(padding: str, k: int, H: int, W: int):
    if padding == "same":
        p = _same_pad(k)
        return p, p
    if padding == "valid":
        if H < k or W < k:
            raise ValueError(f"valid padding needs input >= {k}x{k}, got {H}x{W}")
        return 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d_forward(input: np.ndarray, kernel: ConvKernel, padding: str = "same") -> np.ndarray:
    """Cross-correlate ``input`` (H, W, C) with ``kernel``, stride 1.

    ``same`` zero-pads so the output keeps the input height/width;
    ``valid`` shrinks to ``(H-k+1, W-k+1)``.  Bias is added at every
    spatial position.
    """
    x = _require_tensor3(input)
    pl, ph = _resolve_padding(padding, kernel.k, x.shape[0], x.shape[1])
    out, _ = _conv_batch(x[None], kernel.weights, kernel.bias, pl, ph)
    return out[0]


def conv2d_backward(
    input: np.ndarray,
    kernel: ConvKernel,
    grad_output: np.ndarray,
    padding: str = "same",
):
    """Exact gradients of ``<grad_output, conv2d_forward(input)>``.

    Returns ``(grad_input, grad_weights, grad_bias)``.
    """
    x = _require_tensor3(input)
    g = _require_tensor3(grad_output, "grad_output")
    k = kernel.k
    pl, ph = _resolve_padding(padding, k, x.shape[0], x.shape[1])
    Ho, Wo = _conv_out_shape(x.shape[0], x.shape[1], k, pl, ph)
    if g.shape != (Ho, Wo, kernel.out_channels):
        raise ValueError(
            f"grad_output shape {g.shape} does not match forward output "
            f"({Ho}, {Wo}, {kernel.out_channels})"
        )
    col = _im2col_batch(x[None], k, pl, ph)
    gw, gb = _weight_grads_from_col(col, g[None], k, kernel.in_channels)
    gx = _conv_input_grad(g[None], kernel.weights, pl, ph)[0]
    return gx, gw, gb


# ---------------------------------------------------------------------------
# activations


def apply_activation(input: np.ndarray, act: Activation) -> np.ndarray:
    """Apply the nonlinearity elementwise. IDENTITY is an exact pass-through."""
    t = np.asarray(input)
    if act == Activation.TANH:
        return np.tanh(t)
    if act == Activation.RELU:
        return np.maximum(t, 0.0)
    if act == Activation.IDENTITY:
        return t.copy()
    raise ValueError(f"unknown activation {act!r}")


def activation_derivative(input: np.ndarray, act: Activation) -> np.ndarray:
    """Derivative of the activation evaluated at the pre-activation input.

    The relu step takes the value 0 at the kink.
    """
    t = np.asarray(input)
    if act == Activation.TANH:
        th = np.tanh(t)
        return 1.0 - th * th
    if act == Activation.RELU:
        return (t > 0).astype(t.dtype)
    if act == Activation.IDENTITY:
        return np.ones_like(t)
    raise ValueError(f"unknown activation {act!r}")


# ---------------------------------------------------------------------------
# periodic shuffle


def pixel_shuffle(input: np.ndarray, r: int) -> np.ndarray:
    """Rearrange ``(H, W, C*r^2)`` into ``(r*H, r*W, C)``.

    The value at output column x, row y, channel c comes from input channel
    ``C*r*(y % r) + C*(x % r) + c`` at position ``(y // r, x // r)``.  Pure
    rearrangement: no arithmetic on values.
    """
    t = _require_tensor3(input)
    if r < 1:
        raise ValueError(f"upscale ratio must be >= 1, got {r}")
    H, W, ch = t.shape
    if ch % (r * r) != 0:
        raise ValueError(f"channels ({ch}) not divisible by r^2 ({r * r})")
    if r == 1:
        return t.copy()
    C = ch // (r * r)
    t6 = t.reshape(H, W, r, r, C)
    return np.ascontiguousarray(t6.transpose(0, 2, 1, 3, 4)).reshape(H * r, W * r, C)


def pixel_unshuffle(input: np.ndarray, r: int) -> np.ndarray:
    """Exact inverse of :func:`pixel_shuffle`."""
    t = _require_tensor3(input)
    if r < 1:
        raise ValueError(f"upscale ratio must be >= 1, got {r}")
    H, W, C = t.shape
    if H % r != 0 or W % r != 0:
        raise ValueError(f"dimensions {H}x{W} not divisible by r={r}")
    if r == 1:
        return t.copy()
    t5 = t.reshape(H // r, r, W // r, r, C)
    return np.ascontiguousarray(t5.transpose(0, 2, 1, 3, 4)).reshape(
        H // r, W // r, r * r * C
    )
