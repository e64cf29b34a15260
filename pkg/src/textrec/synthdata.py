"""Synthetic word-image rendering and dataset manifest IO.

Words are composed from the built-in 5x7 glyphs at a random integer scale
with jittered spacing and placement, bright ink on a darker background,
plus Gaussian pixel noise.  Rendering is a pure function of
(word, spec, rng state); dataset generation derives one rng stream per
sample from (seed, index), so any sample can be reproduced in isolation.

Datasets live on disk as 8-bit grayscale PGM files plus TSV manifests of
`relative-path<TAB>LABEL` lines, split 90/5/5 into train/val/test.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, RenderError
from .font5x7 import GLYPH_H, GLYPH_W, glyph_array
from .vocab import is_valid_word

__all__ = [
    "IMAGE_SHAPE", "RenderSpec", "WordSample", "render_word", "gen_dataset",
    "sample_for_index", "load_manifest", "load_samples", "standardize_images",
    "write_pgm", "read_pgm", "default_lexicon",
]

IMAGE_SHAPE = (1, 32, 100)
MIN_LABEL_LEN = 3
MAX_LABEL_LEN = 23


@dataclass
class RenderSpec:
    """Rendering knobs; defaults keep everything inside [0,1] pre-clamp.

    Glyphs are composed left to right at an integer magnification, drawn
    uniformly from the scales in scale_range at which the word fits the
    canvas, with jittered inter-character gaps, a jittered left anchor,
    and a jittered vertical offset around center.  A word whose tightest
    layout overflows the canvas at the minimum scale is a render error;
    a jittered layout that overflows falls back to minimal gaps."""

    scale_range: tuple = (2, 2)       # allowed integer magnification band
    spacing_jitter: int = 1           # gaps of 1..1+jitter px between glyphs
    margin_jitter: int = 2            # left anchor 1..1+jitter, vertical +-jitter
    contrast_range: tuple = (0.5, 0.9)
    noise_sigma: float = 0.04
    background_range: tuple = (0.05, 0.25)

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (1 <= lo <= hi):
            raise DataError(f"bad scale_range {self.scale_range}")
        if min(self.spacing_jitter, self.margin_jitter, self.noise_sigma) < 0:
            raise DataError("jitter and noise parameters must be non-negative")


@dataclass
class WordSample:
    image: np.ndarray  # [1,32,100] float32 in [0,1]
    label: str


def _validate_word(word: str) -> None:
    if not is_valid_word(word):
        raise DataError(f"label {word!r} is not uppercase alphanumeric")
    if not MIN_LABEL_LEN <= len(word) <= MAX_LABEL_LEN:
        raise DataError(f"label {word!r} length outside {MIN_LABEL_LEN}..{MAX_LABEL_LEN}")


def _tight_width(n: int, scale: int) -> int:
    # glyph row with 1px gaps and a 1px left anchor
    return n * GLYPH_W * scale + (n - 1) + 1


def render_word(word: str, spec: RenderSpec, rng: np.random.Generator) -> WordSample:
    """Render one word onto the 32x100 canvas.

    rng draws, in order: scale, inter-character gaps, left anchor,
    vertical offset, background, contrast, noise.  Raises RenderError
    when even the tightest layout at the minimum scale overflows.
    """
    _validate_word(word)
    _, canvas_h, canvas_w = IMAGE_SHAPE
    lo, hi = spec.scale_range
    n = len(word)

    feasible = [s for s in range(lo, hi + 1)
                if _tight_width(n, s) <= canvas_w and GLYPH_H * s <= canvas_h]
    if not feasible:
        raise RenderError(f"word {word!r} does not fit the canvas at scale {lo}")
    scale = feasible[int(rng.integers(len(feasible)))]

    gaps = 1 + rng.integers(0, spec.spacing_jitter + 1, size=max(n - 1, 0))
    x0 = 1 + int(rng.integers(0, spec.margin_jitter + 1))
    width = n * GLYPH_W * scale + int(gaps.sum())
    if x0 + width > canvas_w:  # jitter overflowed: fall back to minimal gaps
        gaps = np.ones_like(gaps)
        width = n * GLYPH_W * scale + int(gaps.sum())
        x0 = min(x0, canvas_w - width)
    glyph_h = GLYPH_H * scale
    y_mid = (canvas_h - glyph_h) // 2
    y0 = y_mid + int(rng.integers(-spec.margin_jitter, spec.margin_jitter + 1))
    y0 = min(max(y0, 0), canvas_h - glyph_h)

    full = np.zeros((canvas_h, canvas_w), dtype=np.float32)
    magnify = np.ones((scale, scale), dtype=np.float32)
    x = x0
    for i, ch in enumerate(word):
        block = np.kron(glyph_array(ch), magnify)
        full[y0:y0 + glyph_h, x:x + GLYPH_W * scale] = block
        x += GLYPH_W * scale + (int(gaps[i]) if i < n - 1 else 0)

    background = float(rng.uniform(*spec.background_range))
    contrast = float(rng.uniform(*spec.contrast_range))
    canvas = background + contrast * full
    if spec.noise_sigma > 0:
        canvas += rng.normal(0.0, spec.noise_sigma, canvas.shape).astype(np.float32)
    np.clip(canvas, 0.0, 1.0, out=canvas)
    return WordSample(image=canvas[None].astype(np.float32), label=word)


# ---------------------------------------------------------------------------
# PGM IO


def write_pgm(path: str, image: np.ndarray) -> None:
    """Store a [H,W] float image in [0,1] as binary 8-bit PGM."""
    levels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Load a binary 8-bit PGM as [H,W] float32 in [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        fields: list[bytes] = []
        pos = 0
        while len(fields) < 4:
            while pos < len(blob) and blob[pos:pos + 1].isspace():
                pos += 1
            if blob[pos:pos + 1] == b"#":  # comment to end of line
                pos = blob.index(b"\n", pos) + 1
                continue
            start = pos
            while pos < len(blob) and not blob[pos:pos + 1].isspace():
                pos += 1
            fields.append(blob[start:pos])
        pos += 1  # single whitespace after maxval
        magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
        if magic != b"P5" or maxval != 255:
            raise DataError(f"{path}: unsupported PGM header ({magic!r}, maxval {maxval})")
        data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed PGM file") from exc
    if data.size != w * h:
        raise DataError(f"{path}: truncated PGM pixel data")
    return (data.reshape(h, w).astype(np.float32)) / 255.0


def _rescale_nearest(image: np.ndarray, h: int, w: int) -> np.ndarray:
    src_h, src_w = image.shape
    rows = np.minimum((np.arange(h) * src_h) // h, src_h - 1)
    cols = np.minimum((np.arange(w) * src_w) // w, src_w - 1)
    return image[rows][:, cols]


# ---------------------------------------------------------------------------
# dataset generation and loading


def default_lexicon() -> list:
    """The bundled 200-word toy lexicon."""
    path = os.path.join(os.path.dirname(__file__), "data", "lexicon200.txt")
    return load_lexicon_file(path)


def load_lexicon_file(path: str) -> list:
    words = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            word = line.strip().upper()
            if word:
                words.append(word)
    if not words:
        raise DataError(f"lexicon {path} is empty")
    return words


def sample_for_index(lexicon: Sequence[str], spec: RenderSpec, seed: int,
                     index: int) -> WordSample:
    """The i-th sample of the dataset (seed, lexicon, spec) would contain.

    Each index owns an independent rng stream, so any slice of a dataset
    can be rebuilt exactly without rendering the rest.
    """
    rng = np.random.default_rng((seed, index))
    word = lexicon[int(rng.integers(len(lexicon)))]
    return render_word(word, spec, rng)


def gen_dataset(lexicon: Sequence[str], n: int, spec: RenderSpec, seed: int,
                out_dir: str) -> dict:
    """Render n samples with words drawn uniformly from the lexicon and
    write PGM images plus train/val/test manifests (90/5/5 by index).

    Returns {"train": path, "val": path, "test": path, "counts": {...}}.
    """
    if n < 1:
        raise DataError(f"need n >= 1 samples, got {n}")
    words = [w.upper() for w in lexicon]
    for w in words:
        _validate_word(w)
    os.makedirs(os.path.join(out_dir, "img"), exist_ok=True)

    n_train = (n * 90) // 100
    n_val = (n * 5) // 100
    bounds = {"train": range(0, n_train),
              "val": range(n_train, n_train + n_val),
              "test": range(n_train + n_val, n)}

    lines = []
    for i in range(n):
        sample = sample_for_index(words, spec, seed, i)
        rel = os.path.join("img", f"{i:06d}.pgm")
        write_pgm(os.path.join(out_dir, rel), sample.image[0])
        lines.append(f"{rel}\t{sample.label}\n")

    result = {"counts": {}}
    for split, span in bounds.items():
        path = os.path.join(out_dir, f"{split}.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(lines[i] for i in span)
        result[split] = path
        result["counts"][split] = len(span)
    return result


def load_manifest(path: str) -> Iterator[WordSample]:
    """Yield samples in manifest order; malformed lines raise DataError
    naming the line number.  Images are rescaled to 32x100 if needed."""
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    _, target_h, target_w = IMAGE_SHAPE
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected 'path<TAB>LABEL', got {line!r}")
            rel, label = parts
            label = label.upper()
            if not is_valid_word(label):
                raise DataError(f"{path}:{lineno}: label {label!r} is not alphanumeric")
            if len(label) > MAX_LABEL_LEN:
                raise DataError(f"{path}:{lineno}: label longer than {MAX_LABEL_LEN}")
            image = read_pgm(os.path.join(base, rel))
            if image.shape != (target_h, target_w):
                image = _rescale_nearest(image, target_h, target_w)
            yield WordSample(image=image[None].astype(np.float32), label=label)


def load_samples(path: str) -> tuple:
    """Materialize a manifest into (images [N,1,32,100] float32, labels)."""
    images, labels = [], []
    for sample in load_manifest(path):
        images.append(sample.image)
        labels.append(sample.label)
    if not images:
        raise DataError(f"manifest {path} contains no samples")
    return np.stack(images), labels


def standardize_images(images: np.ndarray) -> np.ndarray:
    """Per-image zero mean, unit variance (the encoder's expected input).
    Moments accumulate in float64 so flat images come out (near) zero
    instead of amplified rounding noise."""
    flat = images.reshape(images.shape[0], -1) if images.ndim == 4 else images.reshape(1, -1)
    flat = flat.astype(np.float64)
    mean = flat.mean(axis=1, keepdims=True)
    std = np.maximum(flat.std(axis=1, keepdims=True), 1e-6)
    out = (flat - mean) / std
    return out.reshape(images.shape).astype(np.float32)
