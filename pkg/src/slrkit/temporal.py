"""Temporal modeling components.

``Bta`` gates frames with a 1-D-conv attention map, halves the sequence
with a temporal max pool and exposes an auxiliary classifier on the pooled
bottleneck. ``TmcBlock`` runs per-cue temporal convolutions (one weight set
per cue) alongside a fused convolution over the concatenated cue channels.
``BiRnn`` is a minimal bidirectional tanh recurrence; ``Head`` is the
affine + log-softmax classifier used everywhere a gloss distribution is
needed.
"""

from __future__ import annotations

import numpy as np

from . import tensorlab as tl
from .errors import LengthError, ShapeError

__all__ = ["Head", "Bta", "TmcBlock", "BiRnn", "pooled_length"]


def pooled_length(t: int) -> int:
    """Sequence length after one temporal max pool (odd lengths round up)."""
    return (t + 1) // 2


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype,
             gain: float = 1.0) -> np.ndarray:
    """Uniform init with std ``gain / sqrt(fan_in)`` (no normalization layers
    exist anywhere, so per-layer variance must be preserved by the init)."""
    k = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-k, k, size=shape).astype(dtype)


class Head:
    """Per-frame affine + log-softmax classifier."""

    def __init__(self, in_dim: int, num_classes: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.weights = _uniform(rng, (num_classes, in_dim), in_dim, dtype)
        self.bias = _uniform(rng, (num_classes,), in_dim, dtype)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}

    def forward(self, x: np.ndarray):
        logits = tl.affine(x, self.weights, self.bias)
        logprobs = tl.log_softmax(logits)
        return logprobs, (x, logprobs)

    def backward(self, cache, g_logprobs: np.ndarray):
        x, logprobs = cache
        g_logits = tl.log_softmax_backward(logprobs, g_logprobs)
        gx, gw, gb = tl.affine_backward(x, self.weights, g_logits)
        return gx, {"weights": gw, "bias": gb}


class Bta:
    """Bottleneck temporal attention: gate, pool, auxiliary gloss head."""

    def __init__(self, channels: int, att_channels: int, num_classes: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.att1 = tl.Conv1DParams(
            weights=_uniform(rng, (att_channels, channels, 3), channels * 3,
                             dtype, gain=np.sqrt(2.0)),
            bias=np.zeros(att_channels, dtype=dtype),
            stride=1,
            padding=1,
        )
        self.att2 = tl.Conv1DParams(
            weights=_uniform(rng, (1, att_channels, 3), att_channels * 3, dtype),
            bias=np.full((1,), 2.0, dtype=dtype),  # start near a pass-through gate
            stride=1,
            padding=1,
        )
        self.head = Head(channels, num_classes, rng, dtype)

    def param_arrays(self) -> dict[str, np.ndarray]:
        out = {
            "att1.weights": self.att1.weights,
            "att1.bias": self.att1.bias,
            "att2.weights": self.att2.weights,
            "att2.bias": self.att2.bias,
        }
        out.update({f"head.{k}": v for k, v in self.head.param_arrays().items()})
        return out

    def forward(self, x: np.ndarray):
        """``[T, C] -> (pooled [ceil(T/2), C], bottleneck log-probs, cache)``."""
        if x.ndim != 2:
            raise ShapeError(f"bta expects [T, C], got {x.shape}")
        t_len = x.shape[0]
        if t_len < 2:
            raise LengthError(f"bta needs at least 2 frames, got {t_len}")
        u = np.ascontiguousarray(x.T)
        a1 = tl.conv1d(u, self.att1)
        a1r = tl.relu(a1)
        a2 = tl.conv1d(a1r, self.att2)
        att = tl.sigmoid(a2[0])
        gated = x * att[:, None]

        odd = t_len % 2 == 1
        gp = np.concatenate([gated, gated[-1:]], axis=0) if odd else gated
        t2 = gp.shape[0] // 2
        pairs = gp.reshape(t2, 2, x.shape[1])
        which = pairs.argmax(axis=1)
        pooled = np.take_along_axis(pairs, which[:, None, :], axis=1)[:, 0, :]

        head_lp, head_cache = self.head.forward(pooled)
        cache = (x, u, a1, a1r, att, which, odd, head_cache)
        return pooled, head_lp, cache

    def backward(self, cache, g_pooled: np.ndarray, g_head_lp: np.ndarray | None):
        x, u, a1, a1r, att, which, odd, head_cache = cache
        t_len, channels = x.shape
        grads: dict[str, np.ndarray] = {}

        g_total = np.asarray(g_pooled, dtype=x.dtype).copy()
        if g_head_lp is not None:
            g_from_head, head_grads = self.head.backward(head_cache, g_head_lp)
            g_total += g_from_head
            grads.update({f"head.{k}": v for k, v in head_grads.items()})
        else:
            grads.update({
                "head.weights": np.zeros_like(self.head.weights),
                "head.bias": np.zeros_like(self.head.bias),
            })

        t2 = which.shape[0]
        g_pairs = np.zeros((t2, 2, channels), dtype=x.dtype)
        np.put_along_axis(g_pairs, which[:, None, :], g_total[:, None, :], axis=1)
        g_gp = g_pairs.reshape(t2 * 2, channels)
        if odd:
            g_gated = g_gp[:t_len].copy()
            g_gated[-1] += g_gp[t_len]
        else:
            g_gated = g_gp

        g_att = (g_gated * x).sum(axis=1)
        gx = g_gated * att[:, None]

        g_a2 = tl.sigmoid_backward(att, g_att)[None, :]
        g_a1r, gw2, gb2 = tl.conv1d_backward(a1r, self.att2, g_a2)
        g_a1 = tl.relu_backward(a1, g_a1r)
        g_u, gw1, gb1 = tl.conv1d_backward(u, self.att1, g_a1)
        gx += g_u.T

        grads.update({
            "att1.weights": gw1, "att1.bias": gb1,
            "att2.weights": gw2, "att2.bias": gb2,
        })
        return gx, grads


class TmcBlock:
    """Two-path temporal block: per-cue convs plus a fused-channel conv."""

    def __init__(self, num_cues: int, cue_dim: int, width: int, num_classes: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.num_cues = num_cues
        self.cue_dim = cue_dim
        self.intra = [
            tl.Conv1DParams(
                weights=_uniform(rng, (cue_dim, cue_dim, 3), cue_dim * 3, dtype),
                bias=np.zeros(cue_dim, dtype=dtype),
                stride=1,
                padding=1,
            )
            for _ in range(num_cues)
        ]
        cat = num_cues * cue_dim
        self.inter = tl.Conv1DParams(
            weights=_uniform(rng, (width, cat, 3), cat * 3, dtype),
            bias=np.zeros(width, dtype=dtype),
            stride=1,
            padding=1,
        )
        self.head = Head(width, num_classes, rng, dtype)

    def param_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for m, p in enumerate(self.intra):
            out[f"intra{m}.weights"] = p.weights
            out[f"intra{m}.bias"] = p.bias
        out["inter.weights"] = self.inter.weights
        out["inter.bias"] = self.inter.bias
        out.update({f"head.{k}": v for k, v in self.head.param_arrays().items()})
        return out

    def forward(self, cues: np.ndarray):
        """``[T, M, D] -> (intra [T, M, D], inter [T, W], head log-probs, cache)``."""
        if cues.ndim != 3 or cues.shape[1] != self.num_cues:
            raise ShapeError(
                f"tmc expects [T, {self.num_cues}, {self.cue_dim}], got {cues.shape}"
            )
        t_len = cues.shape[0]
        intra_out = np.empty_like(cues)
        for m in range(self.num_cues):
            intra_out[:, m, :] = tl.conv1d(
                np.ascontiguousarray(cues[:, m, :].T), self.intra[m]
            ).T
        cat = np.ascontiguousarray(cues.reshape(t_len, -1).T)
        inter_out = tl.conv1d(cat, self.inter).T
        head_lp, head_cache = self.head.forward(inter_out)
        return intra_out, inter_out, head_lp, (cues, cat, head_cache)

    def backward(self, cache, g_intra: np.ndarray, g_inter: np.ndarray,
                 g_head_lp: np.ndarray | None):
        cues, cat, head_cache = cache
        grads: dict[str, np.ndarray] = {}

        g_inter_total = np.asarray(g_inter, dtype=cues.dtype).copy()
        if g_head_lp is not None:
            g_from_head, head_grads = self.head.backward(head_cache, g_head_lp)
            g_inter_total += g_from_head
            grads.update({f"head.{k}": v for k, v in head_grads.items()})
        else:
            grads.update({
                "head.weights": np.zeros_like(self.head.weights),
                "head.bias": np.zeros_like(self.head.bias),
            })

        g_cat, gw_inter, gb_inter = tl.conv1d_backward(
            cat, self.inter, np.ascontiguousarray(g_inter_total.T)
        )
        g_cues = g_cat.T.reshape(cues.shape).astype(cues.dtype).copy()
        grads["inter.weights"] = gw_inter
        grads["inter.bias"] = gb_inter

        for m in range(self.num_cues):
            g_m, gw, gb = tl.conv1d_backward(
                np.ascontiguousarray(cues[:, m, :].T),
                self.intra[m],
                np.ascontiguousarray(g_intra[:, m, :].T),
            )
            g_cues[:, m, :] += g_m.T
            grads[f"intra{m}.weights"] = gw
            grads[f"intra{m}.bias"] = gb
        return g_cues, grads


class BiRnn:
    """Minimal bidirectional tanh recurrence; outputs both directions stacked."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.hidden = hidden
        fan = in_dim + hidden
        self.wf = _uniform(rng, (hidden, in_dim), fan, dtype)
        self.uf = _uniform(rng, (hidden, hidden), fan, dtype)
        self.bf = _uniform(rng, (hidden,), fan, dtype)
        self.wb = _uniform(rng, (hidden, in_dim), fan, dtype)
        self.ub = _uniform(rng, (hidden, hidden), fan, dtype)
        self.bb = _uniform(rng, (hidden,), fan, dtype)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {
            "wf": self.wf, "uf": self.uf, "bf": self.bf,
            "wb": self.wb, "ub": self.ub, "bb": self.bb,
        }

    def _run(self, x: np.ndarray, w, u, b) -> np.ndarray:
        t_len = x.shape[0]
        h = np.zeros((t_len + 1, self.hidden), dtype=x.dtype)
        pre = x @ w.T + b
        for t in range(t_len):
            h[t + 1] = np.tanh(pre[t] + h[t] @ u.T)
        return h

    def forward(self, x: np.ndarray):
        """``[T, C] -> ([T, 2H], cache)`` with forward and reversed passes."""
        if x.ndim != 2:
            raise ShapeError(f"birnn expects [T, C], got {x.shape}")
        hf = self._run(x, self.wf, self.uf, self.bf)
        hb = self._run(x[::-1], self.wb, self.ub, self.bb)
        out = np.concatenate([hf[1:], hb[1:][::-1]], axis=1)
        return out, (x, hf, hb)

    @staticmethod
    def _bptt(x, h, w, u, g_h):
        t_len = x.shape[0]
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        gu = np.zeros_like(u)
        gb = np.zeros((w.shape[0],), dtype=x.dtype)
        carry = np.zeros((w.shape[0],), dtype=x.dtype)
        for t in range(t_len - 1, -1, -1):
            g = (g_h[t] + carry) * (1.0 - h[t + 1] ** 2)
            gw += np.outer(g, x[t])
            gu += np.outer(g, h[t])
            gb += g
            gx[t] = g @ w
            carry = g @ u
        return gx, gw, gu, gb

    def backward(self, cache, g_out: np.ndarray):
        x, hf, hb = cache
        hidden = self.hidden
        gxf, gwf, guf, gbf = self._bptt(x, hf, self.wf, self.uf, g_out[:, :hidden])
        gxb, gwb, gub, gbb = self._bptt(
            x[::-1], hb, self.wb, self.ub, g_out[:, hidden:][::-1]
        )
        gx = gxf + gxb[::-1]
        grads = {
            "wf": gwf, "uf": guf, "bf": gbf,
            "wb": gwb, "ub": gub, "bb": gbb,
        }
        return gx, grads
