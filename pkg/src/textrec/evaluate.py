"""Word-accuracy evaluation protocol and report assembly.

The protocol scores only labels that are purely alphanumeric and at
least three characters long; accuracy is the percentage of predictions
matching the ground truth exactly after uppercasing both sides.
Constrained mode maps each raw prediction to its nearest lexicon word
before comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autograd import Tensor
from .errors import DataError
from .lexicon import Lexicon, constrained_select
from .model import ModelConfig, predict_words
from .synthdata import MIN_LABEL_LEN, standardize_images
from .vocab import is_valid_word

__all__ = ["EvalReport", "protocol_filter", "evaluate", "format_report"]


@dataclass
class EvalReport:
    dataset: str
    variant: str
    mode: str                      # "unconstrained" or "constrained-<tag>"
    accuracy: float                # percent, 0..100
    count: int                     # samples scored after the protocol filter
    per_length: dict = field(default_factory=dict)   # len -> (correct, total)
    rows: list = field(default_factory=list)         # (path, gt, prediction)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise DataError(f"accuracy {self.accuracy} outside [0, 100]")


def protocol_filter(labels: Sequence[str]) -> list:
    """Indices of labels admissible for scoring: alphanumeric, length >= 3."""
    return [i for i, label in enumerate(labels)
            if is_valid_word(label.upper()) and len(label) >= MIN_LABEL_LEN]


def evaluate(params: dict, config: ModelConfig, images: np.ndarray,
             labels: Sequence[str], lexicon: Optional[Lexicon] = None,
             dataset: str = "", paths: Optional[Sequence[str]] = None,
             batch_size: int = 64) -> EvalReport:
    """Score greedy predictions against ground truth under the protocol.

    `images` are raw [N,1,32,100] floats in [0,1]; standardization happens
    here.  With a lexicon, predictions pass through constrained_select.
    """
    keep = protocol_filter(labels)
    if not keep:
        raise DataError("no samples admissible under the evaluation protocol "
                        "(alphanumeric labels of length >= 3)")
    mode = "unconstrained" if lexicon is None else f"constrained-{lexicon.tag}"

    correct = 0
    per_length: dict = {}
    rows = []
    for start in range(0, len(keep), batch_size):
        idx = keep[start:start + batch_size]
        batch = standardize_images(images[idx])
        preds = predict_words(params, config, Tensor(batch))
        for i, raw in zip(idx, preds):
            pred = raw.upper()
            if lexicon is not None:
                pred = constrained_select(pred, lexicon)
            truth = labels[i].upper()
            hit = pred == truth
            correct += hit
            got, total = per_length.get(len(truth), (0, 0))
            per_length[len(truth)] = (got + hit, total + 1)
            rows.append((paths[i] if paths is not None else f"#{i}", truth, pred))

    return EvalReport(dataset=dataset, variant=config.readout, mode=mode,
                      accuracy=100.0 * correct / len(keep), count=len(keep),
                      per_length=dict(sorted(per_length.items())), rows=rows)


def format_report(report: EvalReport) -> str:
    lines = [
        f"dataset:  {report.dataset or '-'}",
        f"variant:  {report.variant}",
        f"mode:     {report.mode}",
        f"samples:  {report.count}",
        f"accuracy: {report.accuracy:.2f}%",
    ]
    if report.per_length:
        lines.append("by length:")
        for length, (good, total) in report.per_length.items():
            lines.append(f"  {length:2d}: {100.0 * good / total:6.2f}%  ({good}/{total})")
    return "\n".join(lines)
