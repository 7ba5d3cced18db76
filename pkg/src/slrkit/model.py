"""The full recognition pipeline.

Spatial stages (region-split or plain convolution, relu, 2x2 max pool)
run over all frames of a video at once, the embedding layer turns the last
stage's maps into per-frame cue vectors, and the temporal side (optional
attention bottleneck, two two-path temporal blocks, bidirectional
recurrence, classifier) emits per-frame gloss log-probabilities. Backward
is explicit and mirrors forward exactly; parameters live in a flat,
deterministically ordered name -> array mapping used by the optimizer and
the checkpoint format.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dfconv as dc
from . import temporal as tp
from . import tensorlab as tl
from .errors import DataError, DivisionError, ShapeError
from .tnsr import read_tnsr, write_tnsr

__all__ = ["ModelConfig", "PipelineOut", "Pipeline", "forward_pipeline",
           "save_checkpoint", "load_checkpoint", "checkpoint_hash"]


@dataclass
class ModelConfig:
    vocab_size: int
    frame_h: int = 48
    frame_w: int = 48
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (8, 16, 32)
    kernel: int = 3
    r: float = 0.35
    n_m: int = 2
    dfconv: bool = True
    bta: bool = True
    cue_dim: int = 32
    att_channels: int = 24
    tmc_width: int = 64
    rnn_hidden: int = 32

    @property
    def num_classes(self) -> int:
        return self.vocab_size + 1

    @property
    def blank(self) -> int:
        return self.vocab_size

    @property
    def num_cues(self) -> int:
        return 3 if self.dfconv else 1

    def stage_input_heights(self) -> list[int]:
        heights = []
        h = self.frame_h
        for _ in self.stage_channels:
            heights.append(h)
            h //= 2
        return heights

    @property
    def embed_height(self) -> int:
        return self.frame_h // (2 ** len(self.stage_channels))

    @property
    def embed_width(self) -> int:
        return self.frame_w // (2 ** len(self.stage_channels))


def _embed_split_height(h: int, r: float, clamp: bool) -> int:
    """Cue split of the last stage map; both parts need 2 rows for pooling."""
    h_u = dc.upper_height(h, r)
    lo, hi = 2, h - 2
    if lo > hi:
        raise DivisionError(f"embedding map height {h} too small to split")
    if clamp:
        return min(max(h_u, lo), hi)
    if not lo <= h_u <= hi:
        raise DivisionError(
            f"ratio {r} on embedding height {h} gives regions {h_u}/{h - h_u}; "
            f"both need >= 2 rows for 2x2 pooling"
        )
    return h_u


@dataclass
class PipelineOut:
    """Forward outputs: main, per-cue, bottleneck and latent log-probs."""

    inter_logprobs: np.ndarray
    intra_logprobs: list[np.ndarray]
    bta_logprobs: list[np.ndarray]
    latent_logprobs: np.ndarray
    blank: int


@dataclass
class GradSeeds:
    """Upstream gradients for each pipeline output (None means no flow)."""

    inter: np.ndarray
    intra: list[np.ndarray] | None = None
    bta: list[np.ndarray] | None = None
    latent: np.ndarray | None = None


def _conv2d_params(rng, c_out, c_in, k, dtype, gain=1.0) -> tl.Conv2DParams:
    # std = gain / sqrt(fan_in); there is no normalization anywhere, so the
    # init must preserve activation variance through the stack
    fan = c_in * k * k
    bound = gain * np.sqrt(3.0 / fan)
    return tl.Conv2DParams(
        weights=rng.uniform(-bound, bound, (c_out, c_in, k, k)).astype(dtype),
        bias=np.zeros(c_out, dtype=dtype),
        stride=(1, 1),
        padding=(k // 2, k // 2),
    )


class Pipeline:
    """End-to-end model over one video ``[T, C, H, W]``."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        c = config
        k = c.kernel

        self.stages: list = []
        in_ch = c.in_channels
        for h, out_ch in zip(c.stage_input_heights(), c.stage_channels):
            if c.dfconv:
                params = dc.DFConvParams(
                    upper=_conv2d_params(rng, out_ch, in_ch, k, dtype,
                                         gain=np.sqrt(2.0)),
                    lower=_conv2d_params(rng, out_ch, in_ch, k, dtype,
                                         gain=np.sqrt(2.0)),
                    spec=dc.DivisionSpec(r=c.r, n_m=c.n_m),
                )
                dc.region_layout(h, params, None, clamp=False)  # validate now
            else:
                params = _conv2d_params(rng, out_ch, in_ch, k, dtype,
                                        gain=np.sqrt(2.0))
            self.stages.append(params)
            in_ch = out_ch

        if c.embed_height < 2 or c.embed_width < 2:
            raise DivisionError(
                f"stage output {c.embed_height}x{c.embed_width} too small to embed"
            )
        last = c.stage_channels[-1]
        if c.dfconv:
            _embed_split_height(c.embed_height, c.r, clamp=False)  # validate now
            self.embed = dc.MultiCueEmbedParams(
                full1=_conv2d_params(rng, c.cue_dim, last, k, dtype),
                full2=_conv2d_params(rng, c.cue_dim, c.cue_dim, k, dtype),
                nonmanual=_conv2d_params(rng, c.cue_dim, last, k, dtype),
                manual=_conv2d_params(rng, c.cue_dim, last, k, dtype),
            )
        else:
            self.embed = dc.MultiCueEmbedParams(
                full1=_conv2d_params(rng, c.cue_dim, last, k, dtype),
                full2=_conv2d_params(rng, c.cue_dim, c.cue_dim, k, dtype),
                nonmanual=None,  # type: ignore[arg-type]
                manual=None,  # type: ignore[arg-type]
            )

        width = c.num_cues * c.cue_dim
        self.bta = (
            tp.Bta(width, c.att_channels, c.num_classes, rng, dtype) if c.bta else None
        )
        self.tmc1 = tp.TmcBlock(c.num_cues, c.cue_dim, c.tmc_width, c.num_classes,
                                rng, dtype)
        self.tmc2 = tp.TmcBlock(c.num_cues, c.cue_dim, c.tmc_width, c.num_classes,
                                rng, dtype)
        self.latent_head = tp.Head(c.tmc_width, c.num_classes, rng, dtype)
        self.intra_heads = [
            tp.Head(c.cue_dim, c.num_classes, rng, dtype) for _ in range(c.num_cues)
        ]
        self.birnn = tp.BiRnn(c.tmc_width, c.rnn_hidden, rng, dtype)
        self.classifier = tp.Head(2 * c.rnn_hidden, c.num_classes, rng, dtype)

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, st in enumerate(self.stages):
            if isinstance(st, dc.DFConvParams):
                out[f"stage{i}.upper.weights"] = st.upper.weights
                out[f"stage{i}.upper.bias"] = st.upper.bias
                out[f"stage{i}.lower.weights"] = st.lower.weights
                out[f"stage{i}.lower.bias"] = st.lower.bias
            else:
                out[f"stage{i}.conv.weights"] = st.weights
                out[f"stage{i}.conv.bias"] = st.bias
        out["embed.full1.weights"] = self.embed.full1.weights
        out["embed.full1.bias"] = self.embed.full1.bias
        out["embed.full2.weights"] = self.embed.full2.weights
        out["embed.full2.bias"] = self.embed.full2.bias
        if self.config.dfconv:
            out["embed.nonmanual.weights"] = self.embed.nonmanual.weights
            out["embed.nonmanual.bias"] = self.embed.nonmanual.bias
            out["embed.manual.weights"] = self.embed.manual.weights
            out["embed.manual.bias"] = self.embed.manual.bias
        if self.bta is not None:
            out.update({f"bta.{k}": v for k, v in self.bta.param_arrays().items()})
        out.update({f"tmc1.{k}": v for k, v in self.tmc1.param_arrays().items()})
        out.update({f"tmc2.{k}": v for k, v in self.tmc2.param_arrays().items()})
        out.update({f"latent.{k}": v for k, v in self.latent_head.param_arrays().items()})
        for m, head in enumerate(self.intra_heads):
            out.update({f"intra_head{m}.{k}": v for k, v in head.param_arrays().items()})
        out.update({f"birnn.{k}": v for k, v in self.birnn.param_arrays().items()})
        out.update({f"classifier.{k}": v
                    for k, v in self.classifier.param_arrays().items()})
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        current = self.params()
        if set(values) != set(current):
            missing = set(current) - set(values)
            extra = set(values) - set(current)
            raise DataError(f"parameter mismatch: missing {missing}, extra {extra}")
        for name, arr in current.items():
            new = np.asarray(values[name], dtype=self.dtype)
            if new.shape != arr.shape:
                raise DataError(
                    f"parameter {name}: shape {new.shape} != expected {arr.shape}"
                )
            arr[...] = new

    # -- forward ------------------------------------------------------------

    def forward(self, video: np.ndarray, r_eff: float | None = None,
                clamp: bool = False) -> tuple[PipelineOut, dict]:
        c = self.config
        if video.ndim != 4 or video.shape[1] != c.in_channels:
            raise ShapeError(
                f"pipeline expects video [T, {c.in_channels}, H, W], got {video.shape}"
            )
        x = np.asarray(video, dtype=self.dtype)
        stage_caches = []
        for st in self.stages:
            if isinstance(st, dc.DFConvParams):
                y = dc.dfconv_forward(x, st, r_eff, clamp)
            else:
                y = tl.conv2d(x, st)
            act = tl.relu(y)
            pooled, idx = tl.maxpool2d(act)
            stage_caches.append((x, y, act, idx))
            x = pooled

        t_len = x.shape[0]
        if c.dfconv:
            r = c.r if r_eff is None else r_eff
            h_u = _embed_split_height(x.shape[2], r, clamp)
            cues_vec, embed_cache = dc.multi_cue_embed(
                x, x[:, :, :h_u, :], x[:, :, h_u:, :], self.embed
            )
            cues = np.stack(
                [cues_vec.full, cues_vec.nonmanual, cues_vec.manual], axis=1
            )
            embed_cache["h_u"] = h_u
        else:
            mid = tl.conv2d(x, self.embed.full1)
            feat = tl.conv2d(mid, self.embed.full2)
            vec, pool_cache = dc.pool_vectorize(feat)
            cues = vec[:, None, :]
            embed_cache = {"full_map": x, "mid": mid, "full_cache": pool_cache}

        flat = cues.reshape(t_len, -1)
        if self.bta is not None:
            seq, bta_lp, bta_cache = self.bta.forward(flat)
        else:
            seq, bta_lp, bta_cache = flat, None, None

        cues2 = seq.reshape(seq.shape[0], c.num_cues, c.cue_dim)
        intra1, inter1, head1_lp, tmc1_cache = self.tmc1.forward(cues2)
        intra2, inter2, head2_lp, tmc2_cache = self.tmc2.forward(intra1)

        latent_lp, latent_cache = self.latent_head.forward(inter2)
        rnn_out, rnn_cache = self.birnn.forward(inter2)
        inter_lp, cls_cache = self.classifier.forward(rnn_out)

        intra_lps = []
        intra_head_caches = []
        for m, head in enumerate(self.intra_heads):
            lp, hc = head.forward(intra2[:, m, :])
            intra_lps.append(lp)
            intra_head_caches.append(hc)

        bta_lps = [bta_lp, head1_lp, head2_lp] if self.bta is not None else []
        out = PipelineOut(
            inter_logprobs=inter_lp,
            intra_logprobs=intra_lps,
            bta_logprobs=bta_lps,
            latent_logprobs=latent_lp,
            blank=c.blank,
        )
        cache = {
            "stage_caches": stage_caches,
            "embed_cache": embed_cache,
            "flat_shape": flat.shape,
            "bta_cache": bta_cache,
            "tmc1_cache": tmc1_cache,
            "tmc2_cache": tmc2_cache,
            "latent_cache": latent_cache,
            "rnn_cache": rnn_cache,
            "cls_cache": cls_cache,
            "intra_head_caches": intra_head_caches,
            "intra1_shape": intra1.shape,
            "r_eff": r_eff,
            "clamp": clamp,
        }
        return out, cache

    # -- backward -----------------------------------------------------------

    def backward(self, cache: dict, seeds: GradSeeds) -> dict[str, np.ndarray]:
        c = self.config
        grads = {name: np.zeros_like(arr) for name, arr in self.params().items()}

        def add(prefix: str, local: dict[str, np.ndarray]) -> None:
            for key, val in local.items():
                grads[f"{prefix}.{key}"] += val

        g_rnn, cls_grads = self.classifier.backward(
            cache["cls_cache"], np.asarray(seeds.inter, dtype=self.dtype)
        )
        add("classifier", cls_grads)
        g_inter2, rnn_grads = self.birnn.backward(cache["rnn_cache"], g_rnn)
        add("birnn", rnn_grads)

        if seeds.latent is not None:
            g_from_latent, latent_grads = self.latent_head.backward(
                cache["latent_cache"], np.asarray(seeds.latent, dtype=self.dtype)
            )
            g_inter2 = g_inter2 + g_from_latent
            add("latent", latent_grads)

        intra1_shape = cache["intra1_shape"]
        g_intra2 = np.zeros(intra1_shape, dtype=self.dtype)
        if seeds.intra is not None:
            for m, head in enumerate(self.intra_heads):
                g_vec, head_grads = head.backward(
                    cache["intra_head_caches"][m],
                    np.asarray(seeds.intra[m], dtype=self.dtype),
                )
                g_intra2[:, m, :] += g_vec
                add(f"intra_head{m}", head_grads)

        g_bta = seeds.bta if seeds.bta is not None else [None, None, None]
        g_intra1, tmc2_grads = self.tmc2.backward(
            cache["tmc2_cache"], g_intra2, g_inter2, g_bta[2] if self.bta else None
        )
        add("tmc2", tmc2_grads)
        g_cues2, tmc1_grads = self.tmc1.backward(
            cache["tmc1_cache"],
            g_intra1,
            np.zeros((intra1_shape[0], c.tmc_width), dtype=self.dtype),
            g_bta[1] if self.bta else None,
        )
        add("tmc1", tmc1_grads)

        g_seq = g_cues2.reshape(g_cues2.shape[0], -1)
        if self.bta is not None:
            g_flat, bta_grads = self.bta.backward(
                cache["bta_cache"], g_seq, g_bta[0]
            )
            add("bta", bta_grads)
        else:
            g_flat = g_seq
        g_cues = g_flat.reshape(cache["flat_shape"][0], c.num_cues, c.cue_dim)

        embed_cache = cache["embed_cache"]
        if c.dfconv:
            g_full_map, g_nm_map, g_man_map, embed_grads = dc.multi_cue_embed_backward(
                embed_cache, self.embed,
                g_cues[:, 0, :], g_cues[:, 1, :], g_cues[:, 2, :],
            )
            add("embed", embed_grads)
            g_stage_out = g_full_map.copy()
            h_u = embed_cache["h_u"]
            g_stage_out[:, :, :h_u, :] += g_nm_map
            g_stage_out[:, :, h_u:, :] += g_man_map
        else:
            g_feat = dc.pool_vectorize_backward(
                embed_cache["full_cache"], g_cues[:, 0, :]
            )
            g_mid, gw_f2, gb_f2 = tl.conv2d_backward(
                embed_cache["mid"], self.embed.full2, g_feat
            )
            g_stage_out, gw_f1, gb_f1 = tl.conv2d_backward(
                embed_cache["full_map"], self.embed.full1, g_mid
            )
            add("embed", {
                "full1.weights": gw_f1, "full1.bias": gb_f1,
                "full2.weights": gw_f2, "full2.bias": gb_f2,
            })

        g = g_stage_out
        for i in range(len(self.stages) - 1, -1, -1):
            x_in, y, act, idx = cache["stage_caches"][i]
            g_act = tl.maxpool2d_backward(act, idx, g)
            g_y = tl.relu_backward(y, g_act)
            st = self.stages[i]
            if isinstance(st, dc.DFConvParams):
                g, st_grads = dc.dfconv_backward(
                    x_in, st, g_y, cache["r_eff"], cache["clamp"]
                )
                grads[f"stage{i}.upper.weights"] += st_grads.upper_weights
                grads[f"stage{i}.upper.bias"] += st_grads.upper_bias
                grads[f"stage{i}.lower.weights"] += st_grads.lower_weights
                grads[f"stage{i}.lower.bias"] += st_grads.lower_bias
            else:
                g, gw, gb = tl.conv2d_backward(x_in, st, g_y)
                grads[f"stage{i}.conv.weights"] += gw
                grads[f"stage{i}.conv.bias"] += gb
        return grads


def forward_pipeline(video: np.ndarray, model: Pipeline) -> PipelineOut:
    """Convenience wrapper returning only the pipeline outputs."""
    out, _ = model.forward(video)
    return out


# ---------------------------------------------------------------------------
# Checkpoints: a directory of TNSR files plus a key=value manifest
# ---------------------------------------------------------------------------

_MANIFEST = "manifest.txt"


def _config_lines(config: ModelConfig) -> list[str]:
    lines = []
    for f in fields(config):
        val = getattr(config, f.name)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{f.name} = {val}")
    return lines


def config_hash(config: ModelConfig, extra: dict | None = None) -> str:
    text = "\n".join(_config_lines(config))
    if extra:
        text += "\n" + "\n".join(f"{k} = {extra[k]}" for k in sorted(extra))
    return hashlib.sha256(text.encode()).hexdigest()


def save_checkpoint(model: Pipeline, ckpt_dir: str | Path,
                    extra: dict | None = None) -> None:
    ckpt_dir = Path(ckpt_dir)
    (ckpt_dir / "params").mkdir(parents=True, exist_ok=True)
    params = model.params()
    lines = ["format = slrkit-checkpoint-1"]
    lines += _config_lines(model.config)
    lines.append(f"config_hash = {config_hash(model.config, extra)}")
    if extra:
        lines += [f"train.{k} = {extra[k]}" for k in sorted(extra)]
    for name in sorted(params):
        arr = params[name]
        shape = "x".join(str(d) for d in arr.shape)
        lines.append(f"param.{name} = {shape}")
        write_tnsr(ckpt_dir / "params" / f"{name}.tnsr", arr)
    (ckpt_dir / _MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_manifest(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise DataError(f"{path} not found; not a checkpoint directory")
    out = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}: malformed manifest line {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def load_checkpoint(ckpt_dir: str | Path) -> tuple[Pipeline, dict[str, str]]:
    """Rebuild a pipeline from a checkpoint directory; returns it and the manifest."""
    ckpt_dir = Path(ckpt_dir)
    manifest = _parse_manifest(ckpt_dir / _MANIFEST)
    if manifest.get("format") != "slrkit-checkpoint-1":
        raise DataError(f"{ckpt_dir}: unknown checkpoint format")

    def to_bool(s: str) -> bool:
        return s == "True"

    try:
        config = ModelConfig(
            vocab_size=int(manifest["vocab_size"]),
            frame_h=int(manifest["frame_h"]),
            frame_w=int(manifest["frame_w"]),
            in_channels=int(manifest["in_channels"]),
            stage_channels=tuple(
                int(v) for v in manifest["stage_channels"].split(",")
            ),
            kernel=int(manifest["kernel"]),
            r=float(manifest["r"]),
            n_m=int(manifest["n_m"]),
            dfconv=to_bool(manifest["dfconv"]),
            bta=to_bool(manifest["bta"]),
            cue_dim=int(manifest["cue_dim"]),
            att_channels=int(manifest["att_channels"]),
            tmc_width=int(manifest["tmc_width"]),
            rnn_hidden=int(manifest["rnn_hidden"]),
        )
    except KeyError as exc:
        raise DataError(f"{ckpt_dir}: manifest missing {exc}") from exc
    model = Pipeline(config, np.random.default_rng(0))
    values = {}
    for name in model.params():
        path = ckpt_dir / "params" / f"{name}.tnsr"
        if not path.is_file():
            raise DataError(f"{ckpt_dir}: missing parameter file {name}.tnsr")
        values[name] = read_tnsr(path)
    model.set_params(values)
    return model, manifest


def checkpoint_hash(ckpt_dir: str | Path) -> str:
    """SHA-256 over the manifest and every parameter file, in sorted order."""
    ckpt_dir = Path(ckpt_dir)
    digest = hashlib.sha256()
    digest.update((ckpt_dir / _MANIFEST).read_bytes())
    for path in sorted((ckpt_dir / "params").glob("*.tnsr")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()
