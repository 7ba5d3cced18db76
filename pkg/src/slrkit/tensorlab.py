"""Dense-array kernels with hand-written backward passes.

Every operation is a pure function: forward ops map arrays to arrays,
backward ops map (inputs, upstream gradient) to input gradients. There is
no autodiff graph; callers compose backwards explicitly. 2-D ops accept a
single sample ``[C,H,W]`` or a batch ``[N,C,H,W]`` (1-D ops analogously)
and return the matching rank. All kernels preserve the input dtype, so
training runs in float32 while gradient checks run the same code in
float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeError

__all__ = [
    "Conv2DParams",
    "Conv1DParams",
    "GradCheckReport",
    "conv2d",
    "conv2d_backward",
    "conv1d",
    "conv1d_backward",
    "maxpool2d",
    "maxpool2d_backward",
    "global_avgpool",
    "global_avgpool_backward",
    "affine",
    "affine_backward",
    "relu",
    "relu_backward",
    "sigmoid",
    "sigmoid_backward",
    "log_softmax",
    "log_softmax_backward",
    "finite_difference_check",
]


@dataclass
class Conv2DParams:
    """Weights ``[C_out, C_in, kH, kW]``, bias ``[C_out]``, stride/padding pairs."""

    weights: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if self.weights.ndim != 4:
            raise ShapeError(f"conv2d weights must be rank 4, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"conv2d bias shape {self.bias.shape} != ({self.weights.shape[0]},)"
            )
        if min(self.stride) < 1 or min(self.padding) < 0:
            raise ShapeError("stride must be positive and padding non-negative")


@dataclass
class Conv1DParams:
    """Weights ``[C_out, C_in, k]``, bias ``[C_out]``, scalar stride/padding."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if self.weights.ndim != 3:
            raise ShapeError(f"conv1d weights must be rank 3, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"conv1d bias shape {self.bias.shape} != ({self.weights.shape[0]},)"
            )
        if self.stride < 1 or self.padding < 0:
            raise ShapeError("stride must be positive and padding non-negative")


@dataclass
class GradCheckReport:
    """Worst relative error between analytic and central-difference gradients."""

    max_relative_error: float
    worst_coordinate: tuple[int, ...]


def _as_batch(x: np.ndarray, rank: int, what: str) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"{what} expects rank {rank} or {rank + 1} input, got {x.shape}")


def _out_dim(size: int, pad: int, k: int, stride: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# 2-D convolution
# ---------------------------------------------------------------------------


def _conv2d_geometry(x: np.ndarray, p: Conv2DParams) -> tuple[int, int]:
    _, c_in, kh, kw = p.weights.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv2d input has {x.shape[1]} channels, weights expect {c_in}")
    h_out = _out_dim(x.shape[2], p.padding[0], kh, p.stride[0])
    w_out = _out_dim(x.shape[3], p.padding[1], kw, p.stride[1])
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"conv2d output {h_out}x{w_out} is empty for input {x.shape[2]}x{x.shape[3]}, "
            f"kernel {kh}x{kw}, stride {p.stride}, padding {p.padding}"
        )
    return h_out, w_out


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            h_out: int, w_out: int) -> np.ndarray:
    """Copy padded input into ``[N, C*kh*kw, h_out*w_out]`` columns."""
    n, c, _, _ = xp.shape
    sn, sc, srow, scol = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, kh, kw, h_out, w_out),
        strides=(sn, sc, srow, scol, srow * sh, scol * sw),
        writeable=False,
    )
    return win.reshape(n, c * kh * kw, h_out * w_out)


def conv2d(x: np.ndarray, params: Conv2DParams) -> np.ndarray:
    """Cross-correlation of ``x`` (``[C,H,W]`` or ``[N,C,H,W]``) with the kernel."""
    xb, squeeze = _as_batch(x, 3, "conv2d")
    h_out, w_out = _conv2d_geometry(xb, params)
    c_out, c_in, kh, kw = params.weights.shape
    ph, pw = params.padding
    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xb
    cols = _im2col(xp, kh, kw, *params.stride, h_out, w_out)
    out = np.matmul(params.weights.reshape(c_out, -1), cols)
    out += params.bias[None, :, None]
    out = out.reshape(xb.shape[0], c_out, h_out, w_out).astype(x.dtype, copy=False)
    return out[0] if squeeze else out


def conv2d_backward(
    x: np.ndarray, params: Conv2DParams, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d wrt input, weights and bias."""
    xb, squeeze = _as_batch(x, 3, "conv2d")
    gb_, _ = _as_batch(grad_out, 3, "conv2d grad")
    h_out, w_out = _conv2d_geometry(xb, params)
    c_out, c_in, kh, kw = params.weights.shape
    if gb_.shape != (xb.shape[0], c_out, h_out, w_out):
        raise ShapeError(
            f"conv2d grad_out shape {grad_out.shape} != expected "
            f"{(xb.shape[0], c_out, h_out, w_out)}"
        )
    ph, pw = params.padding
    sh, sw = params.stride
    xp = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xb
    cols = _im2col(xp, kh, kw, sh, sw, h_out, w_out)
    g = gb_.reshape(xb.shape[0], c_out, h_out * w_out)

    grad_w = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(
        params.weights.shape
    )
    grad_b = g.sum(axis=(0, 2))
    w2 = params.weights.reshape(c_out, -1)
    gcols = np.matmul(w2.T, g).reshape(
        xb.shape[0], c_in, kh, kw, h_out, w_out
    )
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + sh * h_out : sh, j : j + sw * w_out : sw] += (
                gcols[:, :, i, j]
            )
    gx = gxp[:, :, ph : xp.shape[2] - ph, pw : xp.shape[3] - pw] if ph or pw else gxp
    gx = np.ascontiguousarray(gx, dtype=x.dtype)
    return (gx[0] if squeeze else gx), grad_w.astype(x.dtype), grad_b.astype(x.dtype)


# ---------------------------------------------------------------------------
# 1-D convolution
# ---------------------------------------------------------------------------


def _conv1d_geometry(x: np.ndarray, p: Conv1DParams) -> int:
    _, c_in, k = p.weights.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv1d input has {x.shape[1]} channels, weights expect {c_in}")
    t_out = _out_dim(x.shape[2], p.padding, k, p.stride)
    if t_out < 1:
        raise ShapeError(
            f"conv1d output length {t_out} is empty for input length {x.shape[2]}, "
            f"kernel {k}, stride {p.stride}, padding {p.padding}"
        )
    return t_out


def conv1d(x: np.ndarray, params: Conv1DParams) -> np.ndarray:
    """1-D cross-correlation of ``x`` (``[C,T]`` or ``[N,C,T]``)."""
    xb, squeeze = _as_batch(x, 2, "conv1d")
    t_out = _conv1d_geometry(xb, params)
    c_out, c_in, k = params.weights.shape
    xp = np.pad(xb, ((0, 0), (0, 0), (params.padding, params.padding))) \
        if params.padding else xb
    sn, sc, st = xp.strides
    win = as_strided(
        xp,
        shape=(xb.shape[0], c_in, t_out, k),
        strides=(sn, sc, st * params.stride, st),
        writeable=False,
    )
    cols = win.transpose(0, 2, 1, 3).reshape(-1, c_in * k)
    out = cols @ params.weights.reshape(c_out, -1).T + params.bias
    out = out.reshape(xb.shape[0], t_out, c_out).transpose(0, 2, 1)
    out = np.ascontiguousarray(out, dtype=x.dtype)
    return out[0] if squeeze else out


def conv1d_backward(
    x: np.ndarray, params: Conv1DParams, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv1d wrt input, weights and bias."""
    xb, squeeze = _as_batch(x, 2, "conv1d")
    gb_, _ = _as_batch(grad_out, 2, "conv1d grad")
    t_out = _conv1d_geometry(xb, params)
    c_out, c_in, k = params.weights.shape
    if gb_.shape != (xb.shape[0], c_out, t_out):
        raise ShapeError(
            f"conv1d grad_out shape {grad_out.shape} != expected "
            f"{(xb.shape[0], c_out, t_out)}"
        )
    pad, stride = params.padding, params.stride
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad))) if pad else xb
    sn, sc, st = xp.strides
    win = as_strided(
        xp,
        shape=(xb.shape[0], c_in, t_out, k),
        strides=(sn, sc, st * stride, st),
        writeable=False,
    )
    cols = win.transpose(0, 2, 1, 3).reshape(-1, c_in * k)
    g = gb_.transpose(0, 2, 1).reshape(-1, c_out)

    grad_w = (g.T @ cols).reshape(params.weights.shape)
    grad_b = g.sum(axis=0)
    gcols = (g @ params.weights.reshape(c_out, -1)).reshape(
        xb.shape[0], t_out, c_in, k
    )
    gxp = np.zeros_like(xp)
    for j in range(k):
        gxp[:, :, j : j + stride * t_out : stride] += gcols[:, :, :, j].transpose(0, 2, 1)
    gx = gxp[:, :, pad : xp.shape[2] - pad] if pad else gxp
    gx = np.ascontiguousarray(gx, dtype=x.dtype)
    return (gx[0] if squeeze else gx), grad_w.astype(x.dtype), grad_b.astype(x.dtype)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


def maxpool2d(
    x: np.ndarray, kernel: tuple[int, int] = (2, 2)
) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping window maxima; returns output and window-local argmax.

    Ties go to the first element in a row-major scan of the window. Trailing
    rows/columns that do not fill a window are dropped.
    """
    xb, squeeze = _as_batch(x, 3, "maxpool2d")
    kh, kw = kernel
    n, c, h, w = xb.shape
    if h < kh or w < kw:
        raise ShapeError(f"maxpool2d input {h}x{w} smaller than kernel {kh}x{kw}")
    h2, w2 = h // kh, w // kw
    if (kh, kw) == (2, 2):
        a = xb[:, :, 0 : h2 * 2 : 2, 0 : w2 * 2 : 2]
        b = xb[:, :, 0 : h2 * 2 : 2, 1 : w2 * 2 : 2]
        cc = xb[:, :, 1 : h2 * 2 : 2, 0 : w2 * 2 : 2]
        d = xb[:, :, 1 : h2 * 2 : 2, 1 : w2 * 2 : 2]
        b_wins = b > a
        top = np.where(b_wins, b, a)
        idx_top = b_wins.astype(np.int64)
        d_wins = d > cc
        bot = np.where(d_wins, d, cc)
        idx_bot = np.where(d_wins, 3, 2)
        bot_wins = bot > top
        out = np.where(bot_wins, bot, top).astype(x.dtype, copy=False)
        idx = np.where(bot_wins, idx_bot, idx_top)
    else:
        win = xb[:, :, : h2 * kh, : w2 * kw].reshape(n, c, h2, kh, w2, kw)
        win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, kh * kw)
        idx = win.argmax(axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        out = np.ascontiguousarray(out, dtype=x.dtype)
    if squeeze:
        return out[0], idx[0]
    return out, idx


def maxpool2d_backward(
    x: np.ndarray,
    idx: np.ndarray,
    grad_out: np.ndarray,
    kernel: tuple[int, int] = (2, 2),
) -> np.ndarray:
    """Route pooled gradients back to the argmax positions."""
    xb, squeeze = _as_batch(x, 3, "maxpool2d")
    idxb = idx[None] if idx.ndim == 3 else idx
    gb_ = grad_out[None] if grad_out.ndim == 3 else grad_out
    kh, kw = kernel
    n, c, h, w = xb.shape
    h2, w2 = h // kh, w // kw
    if gb_.shape != (n, c, h2, w2):
        raise ShapeError(
            f"maxpool2d grad_out shape {grad_out.shape} != expected {(n, c, h2, w2)}"
        )
    gx = np.zeros_like(xb)
    if (kh, kw) == (2, 2):
        g = gb_.astype(x.dtype, copy=False)
        zero = np.asarray(0, dtype=x.dtype)
        gx[:, :, 0 : h2 * 2 : 2, 0 : w2 * 2 : 2] = np.where(idxb == 0, g, zero)
        gx[:, :, 0 : h2 * 2 : 2, 1 : w2 * 2 : 2] = np.where(idxb == 1, g, zero)
        gx[:, :, 1 : h2 * 2 : 2, 0 : w2 * 2 : 2] = np.where(idxb == 2, g, zero)
        gx[:, :, 1 : h2 * 2 : 2, 1 : w2 * 2 : 2] = np.where(idxb == 3, g, zero)
    else:
        gwin = np.zeros((n, c, h2, w2, kh * kw), dtype=x.dtype)
        np.put_along_axis(gwin, idxb[..., None], gb_[..., None].astype(x.dtype),
                          axis=-1)
        gwin = gwin.reshape(n, c, h2, w2, kh, kw).transpose(0, 1, 2, 4, 3, 5)
        gx[:, :, : h2 * kh, : w2 * kw] = gwin.reshape(n, c, h2 * kh, w2 * kw)
    return gx[0] if squeeze else gx


def global_avgpool(x: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean: ``[C,H,W] -> [C]`` (or batched)."""
    xb, squeeze = _as_batch(x, 3, "global_avgpool")
    out = xb.mean(axis=(2, 3), dtype=x.dtype)
    return out[0] if squeeze else out


def global_avgpool_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    xb, squeeze = _as_batch(x, 3, "global_avgpool")
    gb_ = grad_out[None] if grad_out.ndim == 1 else grad_out
    if gb_.shape != xb.shape[:2]:
        raise ShapeError(
            f"global_avgpool grad shape {grad_out.shape} != expected {xb.shape[:2]}"
        )
    scale = np.asarray(1.0 / (xb.shape[2] * xb.shape[3]), dtype=x.dtype)
    gx = np.broadcast_to((gb_ * scale)[:, :, None, None], xb.shape).astype(x.dtype)
    return gx[0] if squeeze else gx


# ---------------------------------------------------------------------------
# Affine, activations, log-softmax
# ---------------------------------------------------------------------------


def affine(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``y = W x + b`` with ``W [D_out, D_in]``; ``x`` is ``[D_in]`` or ``[N, D_in]``."""
    if weights.ndim != 2 or bias.shape != (weights.shape[0],):
        raise ShapeError(
            f"affine expects W [D_out,D_in] and b [D_out], got {weights.shape} / {bias.shape}"
        )
    xb, squeeze = (x[None], True) if x.ndim == 1 else (x, False)
    if xb.ndim != 2 or xb.shape[1] != weights.shape[1]:
        raise ShapeError(f"affine input {x.shape} incompatible with W {weights.shape}")
    out = (xb @ weights.T + bias).astype(x.dtype)
    return out[0] if squeeze else out


def affine_backward(
    x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xb, squeeze = (x[None], True) if x.ndim == 1 else (x, False)
    gb_ = grad_out[None] if grad_out.ndim == 1 else grad_out
    if gb_.shape != (xb.shape[0], weights.shape[0]):
        raise ShapeError(
            f"affine grad shape {grad_out.shape} != expected {(xb.shape[0], weights.shape[0])}"
        )
    gx = (gb_ @ weights).astype(x.dtype)
    gw = (gb_.T @ xb).astype(x.dtype)
    gbias = gb_.sum(axis=0).astype(x.dtype)
    return (gx[0] if squeeze else gx), gw, gbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.asarray(0, dtype=x.dtype))


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, np.asarray(0, dtype=grad_out.dtype)).astype(x.dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward from the forward *output* ``y``."""
    return (grad_out * y * (1.0 - y)).astype(y.dtype)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Log-softmax over the last axis with max-subtraction for stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    return (z - np.log(np.exp(z).sum(axis=-1, keepdims=True))).astype(logits.dtype)


def log_softmax_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Backward from the forward *output* ``y`` (the log-probabilities)."""
    return (grad_out - np.exp(y) * grad_out.sum(axis=-1, keepdims=True)).astype(y.dtype)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


def finite_difference_check(
    op,
    inputs: list[np.ndarray],
    step: float = 1e-3,
    eps_abs: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``op(*inputs)`` must return ``(value, grads)`` where ``value`` is a scalar
    and ``grads`` has one array per input. Inputs are promoted to float64 so
    the differences are taken in double precision; relative error per
    coordinate is ``|a - n| / max(|a|, |n|, eps_abs)``.
    """
    xs = [np.asarray(x, dtype=np.float64) for x in inputs]
    _, grads = op(*xs)
    if len(grads) != len(xs):
        raise ShapeError(f"op returned {len(grads)} gradients for {len(xs)} inputs")
    worst = 0.0
    worst_coord: tuple[int, ...] = (0,)
    for i, (x, g) in enumerate(zip(xs, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != x.shape:
            raise ShapeError(f"gradient {i} shape {g.shape} != input shape {x.shape}")
        flat = x.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_plus, _ = op(*xs)
            flat[j] = orig - step
            f_minus, _ = op(*xs)
            flat[j] = orig
            numeric = (float(f_plus) - float(f_minus)) / (2.0 * step)
            analytic = float(g.reshape(-1)[j])
            denom = max(abs(analytic), abs(numeric), eps_abs)
            err = abs(analytic - numeric) / denom
            if err > worst:
                worst = err
                worst_coord = (i, *np.unravel_index(j, x.shape))
    return GradCheckReport(max_relative_error=worst, worst_coordinate=worst_coord)
