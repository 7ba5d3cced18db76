"""Command-line interface.

Subcommands: ``gen`` (synthetic corpus), ``train``, ``eval``, ``ablate``
and ``robust``. Reports are TSV on stdout or, with ``--out``, written to a
file with a companion PNG figure. Exit codes: 0 success, 1 usage error,
2 data error.
"""

from __future__ import annotations

import argparse
import io
import sys
import tempfile
from pathlib import Path

from .config import TrainConfig, load_corpus_spec, load_train_config
from .corpus import CorpusSpec, generate_corpus
from .errors import ConfigError, SlrkitError
from .harness import (run_ablation, run_robustness, write_ablation_tsv,
                      write_robustness_tsv)
from .metrics import write_wer_report
from .model import load_checkpoint
from .train import evaluate_to_rows, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="slrkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True, help="corpus spec file (key = value)")
    p.add_argument("--out", required=True, help="output corpus directory")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="train config file (key = value)")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="checkpoint/output directory")
    p.add_argument("--resume", action="store_true",
                   help="continue a previous run in the same directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--split", required=True, help="corpus split name")
    p.add_argument("--out", help="write the TSV report (and figure) here")

    p = sub.add_parser("ablate", help="run the ablation grids")
    p.add_argument("--config", required=True, help="base train config file")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--out", help="write the TSV table (and figure) here")
    p.add_argument("--work", help="directory for the per-row checkpoints "
                   "(default: a temporary directory)")

    p = sub.add_parser("robust", help="robustness grid for a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--r-mode", required=True, choices=("fixed", "shifted"),
                   help="keep the division ratio fixed or move it with the shift")
    p.add_argument("--split", default="dev", help="corpus split (default dev)")
    p.add_argument("--out", help="write the TSV table (and figure) here")
    return parser


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _figure_path(out_path: str) -> Path:
    p = Path(out_path)
    return p.with_name(p.stem + ".png")


def _cmd_gen(args) -> None:
    spec: CorpusSpec = load_corpus_spec(args.spec)
    counts = generate_corpus(spec, args.out)
    sys.stdout.write("split\tvideos\n")
    for split, n in counts.items():
        sys.stdout.write(f"{split}\t{n}\n")


def _cmd_train(args) -> None:
    tc: TrainConfig = load_train_config(args.config)
    logs = train(tc, args.corpus, args.out, resume=args.resume, quiet=False)
    from .figures import training_curves

    training_curves(logs, Path(args.out) / "training_curves.png")


def _cmd_eval(args) -> None:
    model, _ = load_checkpoint(args.ckpt)
    rows = evaluate_to_rows(model, args.corpus, args.split)
    buf = io.StringIO()
    write_wer_report(rows, buf)
    _emit(buf.getvalue(), args.out)
    if args.out:
        from .figures import eval_histogram

        eval_histogram(rows, _figure_path(args.out))


def _cmd_ablate(args) -> None:
    tc: TrainConfig = load_train_config(args.config)
    if args.work:
        rows = run_ablation(tc, args.corpus, args.work, quiet=False)
    else:
        with tempfile.TemporaryDirectory(prefix="slrkit-ablate-") as work:
            rows = run_ablation(tc, args.corpus, work, quiet=False)
    buf = io.StringIO()
    write_ablation_tsv(rows, buf)
    _emit(buf.getvalue(), args.out)
    if args.out:
        from .figures import ablation_figure

        ablation_figure(rows, _figure_path(args.out))


def _cmd_robust(args) -> None:
    rows = run_robustness(args.ckpt, args.corpus, args.split, args.r_mode)
    buf = io.StringIO()
    write_robustness_tsv(rows, buf)
    _emit(buf.getvalue(), args.out)
    if args.out:
        from .figures import robustness_figure

        robustness_figure(rows, _figure_path(args.out))


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "robust": _cmd_robust,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        sys.stderr.write(f"slrkit: config error: {exc}\n")
        return 1
    except (SlrkitError, OSError) as exc:
        sys.stderr.write(f"slrkit: error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
