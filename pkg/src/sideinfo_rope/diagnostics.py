"""Shot-to-reference attention aggregation and confusion reporting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .layout import SequenceLayout

SCHEMA_VERSION = 1
NORMALIZATION = "post_softmax_mean"


@dataclass(frozen=True)
class ShotRefMatrix:
    values: np.ndarray  # (S, R)
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    normalization: str = NORMALIZATION

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "normalization": self.normalization,
            "aggregation": "mean over shot query tokens and reference key tokens",
            "rows": list(self.row_labels),
            "cols": list(self.col_labels),
            "values": [[float(x) for x in row] for row in self.values],
        }

    @classmethod
    def from_dict(cls, data: dict) -> ShotRefMatrix:
        return cls(
            np.array(data["values"], dtype=np.float64),
            tuple(data["rows"]),
            tuple(data["cols"]),
            data.get("normalization", NORMALIZATION),
        )


def shot_to_ref_scores(probs, layout: SequenceLayout) -> ShotRefMatrix:
    """Entry (i, j): mean post-softmax probability from shot i's tokens to reference j's tokens."""
    p = np.asarray(probs, dtype=np.float64)
    N = layout.num_visual
    if p.shape != (N, N):
        raise ValueError(f"probs shape {p.shape} does not match layout size {N}")
    vals = np.empty((layout.num_shots, layout.num_refs))
    for i, (q0, q1) in enumerate(layout.shot_ranges):
        for j, (k0, k1) in enumerate(layout.ref_ranges):
            vals[i, j] = p[q0:q1, k0:k1].mean()
    return ShotRefMatrix(
        vals,
        tuple(f"shot_{i}" for i in range(1, layout.num_shots + 1)),
        tuple(f"ref_{j}" for j in range(1, layout.num_refs + 1)),
    )


@dataclass(frozen=True)
class ConfusionResult:
    predictions: tuple[int, ...]  # 1-based reference per shot
    accuracy: float
    confused: tuple[int, ...]  # 1-based shot numbers with a wrong prediction


def confusion_argmax(m: ShotRefMatrix | np.ndarray, bound: Sequence[int]) -> ConfusionResult:
    """Per-shot argmax reference; ties go to the lowest reference index."""
    vals = m.values if isinstance(m, ShotRefMatrix) else np.asarray(m)
    if len(bound) != vals.shape[0]:
        raise ValueError(f"{len(bound)} labels for {vals.shape[0]} shots")
    # np.argmax returns the first maximal index, which is the tie-break we want
    preds = tuple(int(np.argmax(row)) + 1 for row in vals)
    confused = tuple(i for i, (p, b) in enumerate(zip(preds, bound), start=1) if p != b)
    acc = 1.0 - len(confused) / len(preds) if preds else 0.0
    return ConfusionResult(preds, acc, confused)


def is_bound_dominant(m: ShotRefMatrix | np.ndarray, bound: Sequence[int]) -> bool:
    """True when every shot puts strictly more attention on its bound reference than on any other."""
    vals = m.values if isinstance(m, ShotRefMatrix) else np.asarray(m)
    for row, b in zip(vals, bound):
        others = np.delete(row, b - 1)
        if others.size and not np.all(row[b - 1] > others):
            return False
    return True


def export(m: ShotRefMatrix, fmt: str, path: str | Path) -> None:
    fmt = fmt.lower()
    path = Path(path)
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["shot", *m.col_labels])
                for label, row in zip(m.row_labels, m.values):
                    w.writerow([label, *(format(float(x), ".17g") for x in row)])
        elif fmt == "json":
            path.write_text(json.dumps(m.to_dict(), indent=2) + "\n")
        else:
            raise ValueError(f"unknown export format {fmt!r}")
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc.strerror or exc}") from exc


def load(path: str | Path) -> ShotRefMatrix:
    path = Path(path)
    if path.suffix.lower() == ".json":
        return ShotRefMatrix.from_dict(json.loads(path.read_text()))
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return ShotRefMatrix(
        np.array([[float(x) for x in r[1:]] for r in body], dtype=np.float64),
        tuple(r[0] for r in body),
        tuple(header[1:]),
    )
