"""Synthetic corpus generation and loading.

Each video renders a gloss sequence as a moving synthetic signer on a
noisy background: the upper frame region shows a small "face" glyph whose
shape encodes one bit of the gloss identity, the lower region shows a
larger "hand" glyph whose shape and sweep trajectory encode the rest.
Glosses ``2k`` and ``2k+1`` share the hand glyph and differ only in the
face glyph, so telling them apart genuinely requires the upper region.
Gloss segments are separated by gaps of pure background noise.

Frames are written as one TNSR tensor ``[T, 3, H, W]`` per video in
``[0, 1]``; annotations are TSV lines ``video_id TAB gloss tokens``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .tnsr import read_tnsr, write_tnsr

__all__ = ["CorpusSpec", "generate_corpus", "render_video", "load_manifest",
           "load_annotations", "load_video", "SPLITS", "hand_key", "face_key"]

SPLITS = ("train", "dev", "test")

# renderer constants (calibrated for the desk-scale trend experiments)
_BG_LO, _BG_HI = 0.05, 0.15
_FACE_AMP = 0.30
_HAND_AMP = 0.60
_FACE_COLORS = ((1.0, 0.45, 0.1), (0.1, 0.45, 1.0))
_HAND_COLOR = (0.85, 0.75, 0.25)
_DISTRACTORS_PER_FRAME = 1
_DISTRACTOR_AMP = (0.15, 0.30)


@dataclass
class CorpusSpec:
    vocab_size: int = 10
    train_videos: int = 200
    dev_videos: int = 50
    test_videos: int = 50
    min_glosses: int = 3
    max_glosses: int = 5
    min_frames_per_gloss: int = 4
    max_frames_per_gloss: int = 8
    frame_height: int = 48
    frame_width: int = 48
    min_gap_frames: int = 1
    max_gap_frames: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")
        if self.frame_height < 16 or self.frame_width < 16:
            raise ConfigError("frame size must be at least 16x16")
        for lo, hi, what in (
            (self.min_glosses, self.max_glosses, "glosses"),
            (self.min_frames_per_gloss, self.max_frames_per_gloss, "frames per gloss"),
            (self.min_gap_frames, self.max_gap_frames, "gap frames"),
        ):
            if lo < 0 or hi < lo:
                raise ConfigError(f"empty range for {what}: [{lo}, {hi}]")
        if self.min_glosses < 1:
            raise ConfigError("every video needs at least one gloss")

    def split_sizes(self) -> dict[str, int]:
        return {
            "train": self.train_videos,
            "dev": self.dev_videos,
            "test": self.test_videos,
        }


def face_key(gloss: int) -> int:
    """Which face glyph a gloss uses (the pair member bit)."""
    return gloss % 2


def hand_key(gloss: int) -> int:
    """Which hand glyph and trajectory a gloss uses (shared within a pair)."""
    return gloss // 2


def _face_glyph(key: int) -> np.ndarray:
    g = np.zeros((5, 5), dtype=np.float32)
    if key == 0:
        g[1:4, 1:4] = 1.0  # filled block
    else:
        for i in range(5):  # diagonal cross
            g[i, i] = 1.0
            g[i, 4 - i] = 1.0
    return g


def _hand_glyph(key: int) -> np.ndarray:
    g = np.zeros((7, 7), dtype=np.float32)
    k = key % 5
    if k == 0:  # disk
        yy, xx = np.mgrid[:7, :7]
        g[(yy - 3) ** 2 + (xx - 3) ** 2 <= 9] = 1.0
    elif k == 1:  # plus
        g[2:5, :] = 1.0
        g[:, 2:5] = 1.0
    elif k == 2:  # X
        for i in range(7):
            g[i, i] = g[i, 6 - i] = 1.0
            g[i, max(i - 1, 0)] = g[i, min(7 - i, 6)] = 1.0
    elif k == 3:  # horizontal bars
        g[1:3, :] = 1.0
        g[4:6, :] = 1.0
    else:  # vertical bars
        g[:, 1:3] = 1.0
        g[:, 4:6] = 1.0
    return g


def _stamp(frame: np.ndarray, glyph: np.ndarray, color, amp: float,
           row: int, col: int) -> None:
    """Add ``amp * color * glyph`` onto *frame* centred at (row, col), clipped."""
    gh, gw = glyph.shape
    h, w = frame.shape[1:]
    r0, c0 = row - gh // 2, col - gw // 2
    rs, cs = max(r0, 0), max(c0, 0)
    re, ce = min(r0 + gh, h), min(c0 + gw, w)
    if rs >= re or cs >= ce:
        return
    patch = glyph[rs - r0 : re - r0, cs - c0 : ce - c0]
    for ch, weight in enumerate(color):
        frame[ch, rs:re, cs:ce] += amp * weight * patch


def _segment_ramp(i: int, n: int) -> float:
    """Fade glyphs in and out over the segment's first/last frame."""
    if n == 1:
        return 1.0
    edge = min(i, n - 1 - i)
    return 0.55 if edge == 0 else 1.0


def render_video(glosses: list[int], spec: CorpusSpec,
                 rng: np.random.Generator) -> np.ndarray:
    """Render one annotated video ``[T, 3, H, W]`` in ``[0, 1]``."""
    h, w = spec.frame_height, spec.frame_width
    segments: list[tuple[int, int]] = []  # (gloss or -1 for gap, frames)
    segments.append((-1, int(rng.integers(spec.min_gap_frames,
                                          spec.max_gap_frames + 1))))
    for g in glosses:
        segments.append((g, int(rng.integers(spec.min_frames_per_gloss,
                                             spec.max_frames_per_gloss + 1))))
        segments.append((-1, int(rng.integers(spec.min_gap_frames,
                                              spec.max_gap_frames + 1))))

    total = sum(n for _, n in segments)
    frames = rng.uniform(_BG_LO, _BG_HI, size=(total, 3, h, w)).astype(np.float32)

    upper_rows = int(0.35 * h)
    face_row = upper_rows // 2
    hand_row_base = upper_rows + (h - upper_rows) // 2
    brightness = float(rng.uniform(0.85, 1.15))  # per-video lighting jitter

    t = 0
    for gloss, n in segments:
        if gloss < 0:
            for _ in range(n):
                _stamp_distractors(frames[t], rng, h, w)
                t += 1
            continue
        fk, hk = face_key(gloss), hand_key(gloss)
        face = _face_glyph(fk)
        hand = _hand_glyph(hk)
        left_to_right = hk % 2 == 0
        c_start, c_end = (int(0.2 * w), int(0.8 * w))
        if not left_to_right:
            c_start, c_end = c_end, c_start
        wobble = 2 + (hk % 3)
        for i in range(n):
            frac = i / max(n - 1, 1)
            ramp = _segment_ramp(i, n) * brightness
            fr = face_row + int(rng.integers(-1, 2))
            fc = w // 2 + int(rng.integers(-2, 3))
            _stamp(frames[t], face, _FACE_COLORS[fk], _FACE_AMP * ramp, fr, fc)
            hr = hand_row_base + int(round(wobble * np.sin(2 * np.pi * frac)))
            hc = int(round(c_start + frac * (c_end - c_start)))
            _stamp(frames[t], hand, _HAND_COLOR, _HAND_AMP * ramp, hr, hc)
            _stamp_distractors(frames[t], rng, h, w)
            t += 1
    np.clip(frames, 0.0, 1.0, out=frames)
    return frames


def _stamp_distractors(frame: np.ndarray, rng: np.random.Generator,
                       h: int, w: int) -> None:
    """Uninformative bright blobs anywhere in the frame; pure nuisance."""
    for _ in range(_DISTRACTORS_PER_FRAME):
        size = int(rng.integers(3, 6))
        blob = np.ones((size, size), dtype=np.float32)
        amp = float(rng.uniform(*_DISTRACTOR_AMP))
        color = rng.uniform(0.2, 1.0, size=3)
        row = int(rng.integers(0, h))
        col = int(rng.integers(0, w))
        _stamp(frame, blob, color, amp, row, col)


def generate_corpus(spec: CorpusSpec, out_dir: str | Path) -> dict[str, int]:
    """Write the corpus under *out_dir*; returns videos written per split."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create corpus directory {out_dir}: {exc}") from exc
    rng = np.random.default_rng(spec.seed)
    counts: dict[str, int] = {}
    for split, n_videos in spec.split_sizes().items():
        split_dir = out_dir / split
        split_dir.mkdir(exist_ok=True)
        lines = []
        for i in range(n_videos):
            video_id = f"{split}{i:04d}"
            n_glosses = int(rng.integers(spec.min_glosses, spec.max_glosses + 1))
            glosses = [int(g) for g in rng.integers(0, spec.vocab_size, n_glosses)]
            frames = render_video(glosses, spec, rng)
            write_tnsr(split_dir / f"{video_id}.tnsr", frames)
            lines.append(f"{video_id}\t{' '.join(str(g) for g in glosses)}")
        (split_dir / "annotations.tsv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )
        counts[split] = n_videos

    manifest = ["format = slrkit-corpus-1"]
    for f in fields(spec):
        manifest.append(f"{f.name} = {getattr(spec, f.name)}")
    for split, n in counts.items():
        manifest.append(f"videos.{split} = {n}")
    (out_dir / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return counts


def load_manifest(corpus_dir: str | Path) -> dict[str, str]:
    path = Path(corpus_dir) / "manifest.txt"
    if not path.is_file():
        raise DataError(f"{corpus_dir}: no manifest.txt; not a corpus directory")
    out = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}: malformed line {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    if out.get("format") != "slrkit-corpus-1":
        raise DataError(f"{corpus_dir}: unknown corpus format")
    return out


def load_annotations(corpus_dir: str | Path, split: str) -> list[tuple[str, list[int]]]:
    path = Path(corpus_dir) / split / "annotations.tsv"
    if not path.is_file():
        raise DataError(f"{corpus_dir}: split {split!r} has no annotations.tsv")
    out = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        try:
            video_id, tokens = raw.split("\t")
            glosses = [int(tok) for tok in tokens.split()]
        except ValueError as exc:
            raise DataError(f"{path}: malformed annotation line {raw!r}") from exc
        out.append((video_id, glosses))
    return out


def load_video(corpus_dir: str | Path, split: str, video_id: str) -> np.ndarray:
    path = Path(corpus_dir) / split / f"{video_id}.tnsr"
    if not path.is_file():
        raise DataError(f"missing video tensor {path}")
    return read_tnsr(path)
