"""Training loop, objective assembly and evaluation.

Plain SGD with momentum 0.9 on the weighted four-part objective; the
learning rate halves every 10 epochs. Pseudo-label refinement activates
after the warm-up epochs. Every epoch logs the loss components, dev WER,
the blank fraction of greedy decodes and the refinement case counts.
Checkpoints carry optimizer and RNG state so a resumed run continues
bit-identically.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .corpus import load_annotations, load_manifest, load_video
from .ctc import collapse, ctc_loss, greedy_decode
from .dplr import (DplrCase, LossBundle, classify_case, pseudo_label_targets,
                   refine_loss, total_loss)
from .errors import DataError, InfeasibleTargetError
from .metrics import EditStats, edit_alignment
from .model import (GradSeeds, ModelConfig, Pipeline, save_checkpoint,
                    load_checkpoint)
from .tnsr import read_tnsr, write_tnsr
from .transforms import Transform, apply_transform

__all__ = ["EpochLog", "SampleResult", "train", "train_sample",
           "evaluate_model", "evaluate_to_rows", "model_config_from",
           "read_log", "LOG_COLUMNS"]

MOMENTUM = 0.9
LR_HALVING_EPOCHS = 10
# plain SGD diverges on the recurrent CTC objective for any lr >= 0.02;
# clipping the batch gradient's global norm keeps larger rates stable
GRAD_CLIP_NORM = 5.0

LOG_COLUMNS = ("epoch", "l_inter", "l_intra", "l_refine", "l_bta",
               "dev_wer", "blank_frac", "case1", "case2", "skip")


@dataclass
class EpochLog:
    epoch: int
    l_inter: float
    l_intra: float
    l_refine: float
    l_bta: float
    dev_wer: float
    blank_frac: float
    case1: int
    case2: int
    skip: int

    def tsv(self) -> str:
        return (
            f"{self.epoch}\t{self.l_inter:.6f}\t{self.l_intra:.6f}"
            f"\t{self.l_refine:.6f}\t{self.l_bta:.6f}\t{self.dev_wer:.2f}"
            f"\t{self.blank_frac:.4f}\t{self.case1}\t{self.case2}\t{self.skip}"
        )

    def total(self, tc: TrainConfig) -> float:
        return total_loss(LossBundle(
            self.l_inter, self.l_intra, self.l_refine, self.l_bta,
            tc.lambda1, tc.lambda2, tc.lambda3,
        ))


@dataclass
class SampleResult:
    bundle: LossBundle
    grads: dict[str, np.ndarray]
    case: DplrCase | None
    dpl: np.ndarray | None


def model_config_from(tc: TrainConfig, manifest: dict[str, str]) -> ModelConfig:
    try:
        return ModelConfig(
            vocab_size=int(manifest["vocab_size"]),
            frame_h=int(manifest["frame_height"]),
            frame_w=int(manifest["frame_width"]),
            r=tc.r,
            n_m=tc.n_m,
            dfconv=tc.dfconv,
            bta=tc.bta,
        )
    except KeyError as exc:
        raise DataError(f"corpus manifest missing {exc}") from exc


def train_sample(
    model: Pipeline,
    video: np.ndarray,
    target: list[int],
    tc: TrainConfig,
    dplr_active: bool,
    frozen_dpl: np.ndarray | None = None,
) -> SampleResult:
    """Forward, objective and full backward for one video.

    ``frozen_dpl`` substitutes precomputed pseudo-label targets (used by the
    end-to-end gradient check, where the decode must not move under
    perturbation). Raises :class:`InfeasibleTargetError` when the target
    cannot be aligned; callers skip and count the sample.
    """
    out, cache = model.forward(video)
    l_inter, g_inter = ctc_loss(out.inter_logprobs, target)

    n_cues = len(out.intra_logprobs)
    l_intra = 0.0
    g_intra = []
    for lp in out.intra_logprobs:
        loss, grad = ctc_loss(lp, target)
        l_intra += loss / n_cues
        g_intra.append(grad * (tc.lambda1 / n_cues))

    l_bta = 0.0
    g_bta = None
    if out.bta_logprobs:
        n_heads = len(out.bta_logprobs)
        g_bta = []
        for lp in out.bta_logprobs:
            loss, grad = ctc_loss(lp, target)
            l_bta += loss / n_heads
            g_bta.append(grad * (tc.lambda3 / n_heads))

    case = None
    dpl = None
    l_refine = 0.0
    g_latent = None
    if dplr_active or frozen_dpl is not None:
        if frozen_dpl is not None:
            dpl = frozen_dpl
        else:
            framewise = greedy_decode(out.inter_logprobs)
            case = classify_case(collapse(framewise, out.blank), target)
            dpl = pseudo_label_targets(
                framewise, target, out.blank,
                densify_on=tc.densify, refine_on=tc.refine,
            )
        if dpl is not None:
            l_refine, g_raw = refine_loss(out.latent_logprobs, dpl)
            g_latent = g_raw * tc.lambda2

    seeds = GradSeeds(inter=g_inter, intra=g_intra, bta=g_bta, latent=g_latent)
    grads = model.backward(cache, seeds)
    bundle = LossBundle(l_inter, l_intra, l_refine, l_bta,
                        tc.lambda1, tc.lambda2, tc.lambda3)
    return SampleResult(bundle=bundle, grads=grads, case=case, dpl=dpl)


def _load_split_cached(corpus_dir, split):
    data = []
    for video_id, glosses in load_annotations(corpus_dir, split):
        data.append((video_id, load_video(corpus_dir, split, video_id), glosses))
    if not data:
        raise DataError(f"{corpus_dir}: split {split!r} is empty")
    return data


def _decode(model: Pipeline, frames: np.ndarray, r_eff=None, clamp=False):
    out, _ = model.forward(frames, r_eff=r_eff, clamp=clamp)
    framewise = greedy_decode(out.inter_logprobs)
    return framewise, collapse(framewise, out.blank)


def evaluate_to_rows(
    model: Pipeline,
    corpus_dir: str | Path,
    split: str,
    transform: Transform | None = None,
    r_eff: float | None = None,
    clamp: bool = False,
) -> list[tuple[str, EditStats]]:
    """Per-video edit statistics for a split, optionally under a transform."""
    rows = []
    for video_id, glosses in load_annotations(corpus_dir, split):
        frames = load_video(corpus_dir, split, video_id)
        if transform is not None and not transform.is_identity:
            frames = apply_transform(frames, transform)
        _, hyp = _decode(model, frames, r_eff=r_eff, clamp=clamp)
        rows.append((video_id, edit_alignment(glosses, hyp)))
    return rows


def evaluate_model(model, corpus_dir, split, transform=None,
                   r_eff=None, clamp=False) -> float:
    """Pooled WER over a split."""
    rows = evaluate_to_rows(model, corpus_dir, split, transform, r_eff, clamp)
    errors = sum(st.errors for _, st in rows)
    ref = sum(st.ref_len for _, st in rows)
    return 100.0 * errors / ref


def _dev_wer_and_blanks(model, dev_data) -> tuple[float, float]:
    errors = ref = 0
    blanks = frames_total = 0
    for _, frames, glosses in dev_data:
        framewise, hyp = _decode(model, frames)
        stats = edit_alignment(glosses, hyp)
        errors += stats.errors
        ref += stats.ref_len
        blanks += int((framewise == model.config.blank).sum())
        frames_total += framewise.size
    return 100.0 * errors / ref, blanks / frames_total


def _learning_rate(tc: TrainConfig, epoch: int) -> float:
    return tc.learning_rate * 0.5 ** ((epoch - 1) // LR_HALVING_EPOCHS)


_STATE_FILE = "train_state.json"


def _save_train_state(out_dir: Path, epoch: int, rng: np.random.Generator,
                      velocity: dict[str, np.ndarray],
                      wall_seconds: float = 0.0) -> None:
    mom_dir = out_dir / "momentum"
    mom_dir.mkdir(parents=True, exist_ok=True)
    for name, arr in velocity.items():
        write_tnsr(mom_dir / f"{name}.tnsr", arr)
    state = {
        "epoch": epoch,
        "rng_state": rng.bit_generator.state,
        "wall_seconds": round(wall_seconds, 1),
    }
    (out_dir / _STATE_FILE).write_text(json.dumps(state), encoding="utf-8")


def _load_train_state(out_dir: Path, params: dict[str, np.ndarray]):
    state = json.loads((out_dir / _STATE_FILE).read_text(encoding="utf-8"))
    velocity = {}
    for name, arr in params.items():
        path = out_dir / "momentum" / f"{name}.tnsr"
        if not path.is_file():
            raise DataError(f"{out_dir}: missing momentum buffer for {name}")
        velocity[name] = read_tnsr(path).reshape(arr.shape)
    return state["epoch"], state["rng_state"], velocity


def train(
    tc: TrainConfig,
    corpus_dir: str | Path,
    out_dir: str | Path,
    resume: bool = False,
    quiet: bool = True,
) -> list[EpochLog]:
    """Train on the corpus's train split; returns the per-epoch log.

    Writes the final checkpoint, optimizer state and ``log.tsv`` under
    ``out_dir``. With ``resume``, continues a previous run in the same
    directory bit-identically.
    """
    corpus_dir = Path(corpus_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(corpus_dir)
    mc = model_config_from(tc, manifest)

    logs: list[EpochLog] = []
    if resume and (out_dir / _STATE_FILE).is_file():
        model, ckpt_manifest = load_checkpoint(out_dir)
        if ckpt_manifest.get("train.seed") != str(tc.seed):
            raise DataError("resume config does not match the checkpoint seed")
        start_epoch, rng_state, velocity = _load_train_state(out_dir, model.params())
        rng = np.random.default_rng(tc.seed)
        rng.bit_generator.state = rng_state
        logs = read_log(out_dir)
    else:
        rng = np.random.default_rng(tc.seed)
        model = Pipeline(mc, rng)
        start_epoch = 0
        velocity = {name: np.zeros_like(arr) for name, arr in model.params().items()}

    train_data = _load_split_cached(corpus_dir, "train")
    dev_data = _load_split_cached(corpus_dir, "dev")
    params = model.params()
    n_train = len(train_data)
    started = time.monotonic()

    for epoch in range(start_epoch + 1, tc.epochs + 1):
        lr = _learning_rate(tc, epoch)
        dplr_active = tc.dplr and epoch > tc.e_warm
        order = rng.permutation(n_train)

        sums = {"l_inter": 0.0, "l_intra": 0.0, "l_refine": 0.0, "l_bta": 0.0}
        cases = {DplrCase.CASE1: 0, DplrCase.CASE2: 0, DplrCase.SKIP: 0}
        n_used = 0
        n_infeasible = 0
        dpl_dump: list[str] = []

        for start in range(0, n_train, tc.batch_size):
            batch = order[start : start + tc.batch_size]
            acc: dict[str, np.ndarray] | None = None
            n_batch = 0
            for i in batch:
                video_id, frames, glosses = train_data[int(i)]
                try:
                    result = train_sample(model, frames, glosses, tc, dplr_active)
                except InfeasibleTargetError:
                    n_infeasible += 1
                    continue
                n_batch += 1
                if acc is None:
                    acc = result.grads
                else:
                    for name in acc:
                        acc[name] += result.grads[name]
                sums["l_inter"] += result.bundle.l_inter
                sums["l_intra"] += result.bundle.l_intra
                sums["l_refine"] += result.bundle.l_refine
                sums["l_bta"] += result.bundle.l_bta
                if result.case is not None:
                    cases[result.case] += 1
                if tc.dpl_dump and result.case is not None:
                    labels = "" if result.dpl is None else \
                        " ".join(str(int(v)) for v in result.dpl)
                    dpl_dump.append(f"{video_id}\t{result.case.value}\t{labels}")
            if acc is None:
                continue
            n_used += n_batch
            scale = np.float32(1.0 / n_batch)
            sq_norm = 0.0
            for g in acc.values():
                sq_norm += float(np.vdot(g, g))
            norm = np.sqrt(sq_norm) * scale
            if norm > GRAD_CLIP_NORM:
                scale = np.float32(scale * GRAD_CLIP_NORM / norm)
            for name, p in params.items():
                v = velocity[name]
                v *= MOMENTUM
                v -= lr * (acc[name] * scale)
                p += v

        dev_wer, blank_frac = _dev_wer_and_blanks(model, dev_data)
        log = EpochLog(
            epoch=epoch,
            l_inter=sums["l_inter"] / max(n_used, 1),
            l_intra=sums["l_intra"] / max(n_used, 1),
            l_refine=sums["l_refine"] / max(n_used, 1),
            l_bta=sums["l_bta"] / max(n_used, 1),
            dev_wer=dev_wer,
            blank_frac=blank_frac,
            case1=cases[DplrCase.CASE1],
            case2=cases[DplrCase.CASE2],
            skip=cases[DplrCase.SKIP],
        )
        logs.append(log)
        if not quiet:
            print(log.tsv(), flush=True)
        if tc.dpl_dump and dpl_dump:
            dump_dir = out_dir / "dpl"
            dump_dir.mkdir(exist_ok=True)
            (dump_dir / f"epoch_{epoch:03d}.tsv").write_text(
                "\n".join(dpl_dump) + "\n", encoding="utf-8"
            )
        if n_infeasible and not quiet:
            print(f"# epoch {epoch}: skipped {n_infeasible} infeasible samples",
                  flush=True)

    save_checkpoint(model, out_dir, extra=asdict(tc))
    _save_train_state(out_dir, tc.epochs, rng, velocity,
                      wall_seconds=time.monotonic() - started)
    write_log(out_dir, logs)
    return logs


def write_log(out_dir: str | Path, logs: list[EpochLog]) -> None:
    lines = ["\t".join(LOG_COLUMNS)]
    lines += [log.tsv() for log in logs]
    (Path(out_dir) / "log.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_log(out_dir: str | Path) -> list[EpochLog]:
    path = Path(out_dir) / "log.tsv"
    if not path.is_file():
        return []
    logs = []
    for line in path.read_text(encoding="utf-8").splitlines()[1:]:
        parts = line.split("\t")
        logs.append(EpochLog(
            epoch=int(parts[0]), l_inter=float(parts[1]), l_intra=float(parts[2]),
            l_refine=float(parts[3]), l_bta=float(parts[4]), dev_wer=float(parts[5]),
            blank_frac=float(parts[6]), case1=int(parts[7]), case2=int(parts[8]),
            skip=int(parts[9]),
        ))
    return logs
