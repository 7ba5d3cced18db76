"""Region-split convolution and the multi-cue embedding layer.

Feature maps are divided at ``h_u = floor(r * h)`` into an upper band (face
region) and a lower band (hand region). The two bands get independent
convolution weights; the lower band is further split into ``n_m``
horizontal groups that share one weight set. Each band is padded
independently so no convolution window straddles a seam - that physical
limit on the receptive field is the whole point of the layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensorlab as tl
from .errors import DivisionError, ShapeError

__all__ = [
    "DivisionSpec",
    "DFConvParams",
    "DFConvGrads",
    "MultiCueEmbedParams",
    "MultiCueVectors",
    "upper_height",
    "split_regions",
    "subdivide_lower",
    "band_heights",
    "dfconv_forward",
    "dfconv_backward",
    "multi_cue_embed",
    "multi_cue_embed_backward",
    "region_layout",
]


@dataclass
class DivisionSpec:
    """Division ratio ``r = h_u / h`` and lower-region group count."""

    r: float
    n_m: int

    def __post_init__(self) -> None:
        if not 0.0 < self.r < 1.0:
            raise DivisionError(f"division ratio must be in (0,1), got {self.r}")
        if self.n_m < 1:
            raise DivisionError(f"group count must be >= 1, got {self.n_m}")


@dataclass
class DFConvParams:
    """Independent upper weights plus one lower weight set shared by all groups."""

    upper: tl.Conv2DParams
    lower: tl.Conv2DParams
    spec: DivisionSpec

    def __post_init__(self) -> None:
        if self.upper.weights is self.lower.weights:
            raise ShapeError("upper and lower regions must use distinct weight storage")
        same = (
            self.upper.weights.shape == self.lower.weights.shape
            and self.upper.stride == self.lower.stride
            and self.upper.padding == self.lower.padding
        )
        if not same:
            raise ShapeError("upper and lower convolutions must share geometry")

    @property
    def kernel_height(self) -> int:
        return self.upper.weights.shape[2]


@dataclass
class DFConvGrads:
    upper_weights: np.ndarray
    upper_bias: np.ndarray
    lower_weights: np.ndarray
    lower_bias: np.ndarray


@dataclass
class MultiCueVectors:
    """Equal-dimension embeddings for the full-frame, face and hand cues."""

    full: np.ndarray
    nonmanual: np.ndarray
    manual: np.ndarray

    def __post_init__(self) -> None:
        if not self.full.shape[-1] == self.nonmanual.shape[-1] == self.manual.shape[-1]:
            raise ShapeError("cue vectors must share their embedding dimension")


def upper_height(h: int, r: float) -> int:
    """Rows assigned to the upper region: ``floor(r * h)``."""
    return math.floor(r * h)


def split_regions(feat: np.ndarray, spec: DivisionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Slice rows ``[0, h_u)`` and ``[h_u, h)``; both views, no copies."""
    h = feat.shape[-2]
    h_u = upper_height(h, spec.r)
    if h_u < 1 or h - h_u < 1:
        raise DivisionError(
            f"split of height {h} at ratio {spec.r} leaves an empty region "
            f"(upper {h_u}, lower {h - h_u})"
        )
    return feat[..., :h_u, :], feat[..., h_u:, :]


def band_heights(h_lower: int, n_m: int) -> list[int]:
    """Group heights differing by at most one; remainder rows go to the top groups."""
    if n_m < 1 or h_lower < n_m:
        raise DivisionError(f"cannot cut {h_lower} rows into {n_m} groups")
    base, rem = divmod(h_lower, n_m)
    return [base + 1 if i < rem else base for i in range(n_m)]


def subdivide_lower(lower: np.ndarray, n_m: int) -> list[np.ndarray]:
    """Contiguous horizontal bands of the lower region (views)."""
    heights = band_heights(lower.shape[-2], n_m)
    bands = []
    row = 0
    for bh in heights:
        bands.append(lower[..., row : row + bh, :])
        row += bh
    return bands


def region_layout(h: int, params: DFConvParams, r_eff: float | None,
                   clamp: bool) -> tuple[int, list[int]]:
    """Upper height and lower band heights, validated or clamped to validity."""
    r = params.spec.r if r_eff is None else r_eff
    kh = params.kernel_height
    n_m = params.spec.n_m
    h_u = upper_height(h, r)
    lo, hi = kh, h - n_m * kh
    if lo > hi:
        raise DivisionError(
            f"height {h} cannot host an upper region and {n_m} groups of kernel {kh}"
        )
    if clamp:
        h_u = min(max(h_u, lo), hi)
    elif not lo <= h_u <= hi:
        raise DivisionError(
            f"ratio {r} on height {h} gives upper {h_u}, lower {h - h_u}; regions "
            f"must each cover kernel height {kh} ({n_m} lower groups)"
        )
    return h_u, band_heights(h - h_u, n_m)


def dfconv_forward(
    x: np.ndarray,
    params: DFConvParams,
    r_eff: float | None = None,
    clamp: bool = False,
) -> np.ndarray:
    """Convolve the upper region and each lower group, re-stacking along height.

    ``r_eff`` overrides the stored division ratio (robustness evaluation);
    with ``clamp`` the boundary is pushed into the valid range instead of
    raising.
    """
    h = x.shape[-2]
    h_u, heights = region_layout(h, params, r_eff, clamp)
    upper = x[..., :h_u, :]
    pieces = [tl.conv2d(upper, params.upper)]
    row = h_u
    for bh in heights:
        pieces.append(tl.conv2d(x[..., row : row + bh, :], params.lower))
        row += bh
    return np.concatenate(pieces, axis=-2)


def dfconv_backward(
    x: np.ndarray,
    params: DFConvParams,
    grad_out: np.ndarray,
    r_eff: float | None = None,
    clamp: bool = False,
) -> tuple[np.ndarray, DFConvGrads]:
    """Input gradient plus per-region weight gradients.

    The shared lower weights accumulate the sum of every group's gradient.
    """
    h = x.shape[-2]
    h_u, heights = region_layout(h, params, r_eff, clamp)
    gx = np.zeros_like(x)

    def out_rows(rows: int) -> int:
        kh = params.kernel_height
        return (rows + 2 * params.upper.padding[0] - kh) // params.upper.stride[0] + 1

    upper_rows = out_rows(h_u)
    g_up = grad_out[..., :upper_rows, :]
    gxu, guw, gub = tl.conv2d_backward(x[..., :h_u, :], params.upper, g_up)
    gx[..., :h_u, :] = gxu

    glw = np.zeros_like(params.lower.weights)
    glb = np.zeros_like(params.lower.bias)
    in_row, out_row = h_u, upper_rows
    for bh in heights:
        rows = out_rows(bh)
        gxb, gw, gb = tl.conv2d_backward(
            x[..., in_row : in_row + bh, :],
            params.lower,
            grad_out[..., out_row : out_row + rows, :],
        )
        gx[..., in_row : in_row + bh, :] = gxb
        glw += gw
        glb += gb
        in_row += bh
        out_row += rows
    if out_row != grad_out.shape[-2]:
        raise ShapeError(
            f"grad_out has {grad_out.shape[-2]} rows, regions produce {out_row}"
        )
    return gx, DFConvGrads(guw, gub, glw, glb)


# ---------------------------------------------------------------------------
# Multi-cue embedding
# ---------------------------------------------------------------------------


@dataclass
class MultiCueEmbedParams:
    """Two stacked convs for the full-frame path, one each for face/hand paths."""

    full1: tl.Conv2DParams
    full2: tl.Conv2DParams
    nonmanual: tl.Conv2DParams
    manual: tl.Conv2DParams


def pool_vectorize(feat: np.ndarray):
    pooled, idx = tl.maxpool2d(feat)
    return tl.global_avgpool(pooled), (feat, idx, pooled)


def pool_vectorize_backward(cache, g_vec: np.ndarray) -> np.ndarray:
    feat, idx, pooled = cache
    g_pooled = tl.global_avgpool_backward(pooled, g_vec)
    return tl.maxpool2d_backward(feat, idx, g_pooled)


def multi_cue_embed(
    full_map: np.ndarray,
    nonmanual_map: np.ndarray,
    manual_map: np.ndarray,
    params: MultiCueEmbedParams,
) -> tuple[MultiCueVectors, dict]:
    """Vectorize the three stage-3 maps.

    Full path: conv -> conv -> 2x2 max pool -> global average pool. The face
    and hand paths use a single conv before the same pooling. All three
    produce vectors of one shared dimension.
    """
    mid = tl.conv2d(full_map, params.full1)
    full_feat = tl.conv2d(mid, params.full2)
    full_vec, full_cache = pool_vectorize(full_feat)

    nm_feat = tl.conv2d(nonmanual_map, params.nonmanual)
    nm_vec, nm_cache = pool_vectorize(nm_feat)

    man_feat = tl.conv2d(manual_map, params.manual)
    man_vec, man_cache = pool_vectorize(man_feat)

    cache = {
        "full_map": full_map,
        "mid": mid,
        "full_cache": full_cache,
        "nonmanual_map": nonmanual_map,
        "nm_cache": nm_cache,
        "manual_map": manual_map,
        "man_cache": man_cache,
    }
    return MultiCueVectors(full_vec, nm_vec, man_vec), cache


def multi_cue_embed_backward(
    cache: dict,
    params: MultiCueEmbedParams,
    g_full: np.ndarray,
    g_nonmanual: np.ndarray,
    g_manual: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Gradients wrt the three input maps and every embedding parameter."""
    g_full_feat = pool_vectorize_backward(cache["full_cache"], g_full)
    g_mid, gw_f2, gb_f2 = tl.conv2d_backward(cache["mid"], params.full2, g_full_feat)
    g_full_map, gw_f1, gb_f1 = tl.conv2d_backward(
        cache["full_map"], params.full1, g_mid
    )

    g_nm_feat = pool_vectorize_backward(cache["nm_cache"], g_nonmanual)
    g_nm_map, gw_nm, gb_nm = tl.conv2d_backward(
        cache["nonmanual_map"], params.nonmanual, g_nm_feat
    )

    g_man_feat = pool_vectorize_backward(cache["man_cache"], g_manual)
    g_man_map, gw_man, gb_man = tl.conv2d_backward(
        cache["manual_map"], params.manual, g_man_feat
    )

    grads = {
        "full1.weights": gw_f1,
        "full1.bias": gb_f1,
        "full2.weights": gw_f2,
        "full2.bias": gb_f2,
        "nonmanual.weights": gw_nm,
        "nonmanual.bias": gb_nm,
        "manual.weights": gw_man,
        "manual.bias": gb_man,
    }
    return g_full_map, g_nm_map, g_man_map, grads
