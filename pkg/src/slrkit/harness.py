"""Component and design-choice ablations plus the robustness protocol.

The component grid toggles the region-split convolution, the pseudo-label
refinement and the attention bottleneck (five rows); the design-choice
grid fixes the first two stages on and toggles the refinement loss, the
densify step and the ground-truth swap (five rows). The robustness grid
evaluates a trained checkpoint under nine vertical-shift/scale transforms
with the division ratio either fixed or moved along with the shift.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .config import TrainConfig
from .errors import DataError
from .model import load_checkpoint
from .train import evaluate_model, train
from .transforms import TRANSFORM_GRID, Transform, shift_pixels

__all__ = ["AblationRow", "RobustRow", "TABLE_COMPONENT", "TABLE_DESIGN",
           "ablation_configs", "run_ablation", "write_ablation_tsv",
           "effective_ratio", "run_robustness", "write_robustness_tsv"]

# (row label, dfconv, dplr, bta) — the component grid
TABLE_COMPONENT = (
    ("T4-1", False, False, False),
    ("T4-2", True, False, False),
    ("T4-3", True, True, False),
    ("T4-4", True, False, True),
    ("T4-5", True, True, True),
)

# (row label, dplr, densify, refine) — the design-choice grid (dfconv+bta on)
TABLE_DESIGN = (
    ("T5-1", False, False, False),
    ("T5-2", True, False, False),
    ("T5-3", True, False, True),
    ("T5-4", True, True, False),
    ("T5-5", True, True, True),
)


@dataclass
class AblationRow:
    table: str
    row: str
    config: TrainConfig
    dev_wer: float
    test_wer: float


def _toggle_key(tc: TrainConfig) -> tuple:
    # densify/refine only matter while dplr is on
    return (tc.dfconv, tc.dplr, tc.bta,
            tc.densify and tc.dplr, tc.refine and tc.dplr)


def ablation_configs(base: TrainConfig) -> list[tuple[str, str, TrainConfig]]:
    """The ten grid rows as (table, row, config); rows can share a config."""
    rows = []
    for label, dfconv, dplr, bta in TABLE_COMPONENT:
        rows.append(("component", label,
                     replace(base, dfconv=dfconv, dplr=dplr, bta=bta,
                             densify=True, refine=True)))
    for label, dplr, densify, refine in TABLE_DESIGN:
        rows.append(("design", label,
                     replace(base, dfconv=True, bta=True, dplr=dplr,
                             densify=densify, refine=refine)))
    return rows


def run_ablation(base: TrainConfig, corpus_dir: str | Path,
                 work_dir: str | Path, quiet: bool = True) -> list[AblationRow]:
    """Train every distinct grid configuration once and evaluate dev/test."""
    work_dir = Path(work_dir)
    results: dict[tuple, tuple[float, float]] = {}
    rows = []
    for table, label, tc in ablation_configs(base):
        key = _toggle_key(tc)
        if key not in results:
            run_dir = work_dir / label
            train(tc, corpus_dir, run_dir, quiet=quiet)
            model, _ = load_checkpoint(run_dir)
            results[key] = (
                evaluate_model(model, corpus_dir, "dev"),
                evaluate_model(model, corpus_dir, "test"),
            )
        dev_wer, test_wer = results[key]
        rows.append(AblationRow(table, label, tc, dev_wer, test_wer))
    return rows


def write_ablation_tsv(rows: list[AblationRow], out) -> None:
    out.write("table\trow\tdfconv\tdplr\tbta\tdensify\trefine\tdev_wer\ttest_wer\n")
    for r in rows:
        tc = r.config
        out.write(
            f"{r.table}\t{r.row}\t{int(tc.dfconv)}\t{int(tc.dplr)}\t{int(tc.bta)}"
            f"\t{int(tc.densify)}\t{int(tc.refine)}"
            f"\t{r.dev_wer:.2f}\t{r.test_wer:.2f}\n"
        )


# ---------------------------------------------------------------------------
# Robustness
# ---------------------------------------------------------------------------


@dataclass
class RobustRow:
    transform: Transform
    r_mode: str
    wer: float


def effective_ratio(r: float, shift_frac: float, frame_h: int) -> float:
    """Move the division boundary with the content: add the pixel shift fraction."""
    return r + shift_pixels(frame_h, shift_frac) / frame_h


def run_robustness(ckpt_dir: str | Path, corpus_dir: str | Path, split: str,
                   r_mode: str) -> list[RobustRow]:
    """Evaluate the checkpoint under the nine-transform grid."""
    if r_mode not in ("fixed", "shifted"):
        raise DataError(f"r_mode must be 'fixed' or 'shifted', got {r_mode!r}")
    model, _ = load_checkpoint(ckpt_dir)
    rows = []
    for tr in TRANSFORM_GRID:
        r_eff = None
        clamp = False
        if r_mode == "shifted" and tr.shift != 0.0:
            r_eff = effective_ratio(model.config.r, tr.shift, model.config.frame_h)
            clamp = True
        wer = evaluate_model(model, corpus_dir, split, transform=tr,
                             r_eff=r_eff, clamp=clamp)
        rows.append(RobustRow(transform=tr, r_mode=r_mode, wer=wer))
    return rows


def write_robustness_tsv(rows: list[RobustRow], out) -> None:
    out.write("transform\tshift\tscale\tr_mode\twer\n")
    for r in rows:
        out.write(
            f"{r.transform.name}\t{r.transform.shift:+.2f}\t{r.transform.scale:.1f}"
            f"\t{r.r_mode}\t{r.wer:.2f}\n"
        )
