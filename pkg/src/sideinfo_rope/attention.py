"""Single-head attention with side-info rotary embeddings, plus hierarchical cross-attention.

Matrices are plain 2-D ``numpy`` arrays (row-major, float64 unless an f32
path is requested). Every dot product is accumulated over the inner
dimension in a fixed index order, so splitting the rows or columns of an
operation across workers gives bit-identical results.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LayoutError
from .layout import SequenceLayout, TokenCoord
from .rope_core import PlaneSchedule, RotaryConfig, build_plane_schedule, rotate_pairs


def _as_matrix(x, name: str, dtype=np.float64) -> np.ndarray:
    a = np.asarray(x, dtype=dtype)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def fixed_order_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` accumulated strictly in order of the inner index."""
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.result_type(a, b))
    for j in range(a.shape[1]):
        out += a[:, j, None] * b[None, j, :]
    return out


def coord_matrix(coords: Sequence[TokenCoord], num_refs: int) -> np.ndarray:
    """(N, 3 + K) array of t, h, w and side bits."""
    rows = []
    for n, c in enumerate(coords):
        if len(c.side) != num_refs:
            raise ValueError(f"token {n}: side vector has length {len(c.side)}, expected {num_refs}")
        rows.append((c.t, c.h, c.w, *c.side.bits))
    return np.array(rows, dtype=np.float64).reshape(len(rows), 3 + num_refs)


def token_angles(coords: Sequence[TokenCoord], schedule: PlaneSchedule, rotate_side: bool = True) -> np.ndarray:
    """(N, D/2) absolute rotation angles, one row per token.

    Side bits act as absolute side coordinates: plane ``j`` of the side axis
    turns by ``phi_j * s_j``. With ``rotate_side=False`` the side planes are
    left unrotated.
    """
    cm = coord_matrix(coords, schedule.num_refs)
    angles = cm[:, schedule.axis_codes] * schedule.coefficients
    if not rotate_side:
        angles[:, schedule.axis_codes >= 3] = 0.0
    return angles


def apply_positional(mat, coords: Sequence[TokenCoord], cfg: RotaryConfig | None = None, *,
                     schedule: PlaneSchedule | None = None, rotate_side: bool = True,
                     dtype=np.float64) -> np.ndarray:
    if schedule is None:
        if cfg is None:
            raise ValueError("need a RotaryConfig or a PlaneSchedule")
        schedule = build_plane_schedule(cfg)
    x = _as_matrix(mat, "mat", dtype)
    if x.shape[0] != len(coords):
        raise ValueError(f"{x.shape[0]} rows but {len(coords)} coordinates")
    if x.shape[1] != 2 * len(schedule):
        raise ValueError(f"row width {x.shape[1]} does not match head_dim {2 * len(schedule)}")
    angles = token_angles(coords, schedule, rotate_side).astype(dtype)
    return rotate_pairs(x, angles)


def attention_scores(q_rot, k_rot, scale: float | None = None) -> np.ndarray:
    q = _as_matrix(q_rot, "Qr")
    k = _as_matrix(k_rot, "Kr")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"Q and K widths differ: {q.shape[1]} vs {k.shape[1]}")
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[1])
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return scale * fixed_order_matmul(q, k.T)


def softmax_rows(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def masked_softmax(scores: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Row softmax where ``mask == 0`` entries get exactly zero probability."""
    if mask is None:
        return softmax_rows(scores)
    keep = np.asarray(mask).astype(bool)
    if keep.shape != scores.shape:
        raise ValueError(f"mask shape {keep.shape} does not match scores {scores.shape}")
    empty = np.flatnonzero(~keep.any(axis=1))
    if empty.size:
        raise ValueError(f"row(s) {empty.tolist()} have every key masked out")
    floored = np.where(keep, scores, -np.inf)
    e = np.exp(floored - floored.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def self_attention(x_q, x_k, x_v, coords: Sequence[TokenCoord], cfg: RotaryConfig, mask=None,
                   scale: float | None = None, schedule: PlaneSchedule | None = None):
    """Returns ``(output, probs)``; queries and keys are rotated, values are not."""
    if schedule is None:
        schedule = build_plane_schedule(cfg)
    q = apply_positional(x_q, coords, schedule=schedule)
    k = apply_positional(x_k, coords, schedule=schedule)
    v = _as_matrix(x_v, "X_v")
    if v.shape[0] != k.shape[0]:
        raise ValueError(f"{v.shape[0]} value rows for {k.shape[0]} keys")
    probs = masked_softmax(attention_scores(q, k, scale), mask)
    return fixed_order_matmul(probs, v), probs


@dataclass(frozen=True)
class AttentionMask:
    bits: np.ndarray  # (L_v, L_t) uint8

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def rows_as_strings(self) -> list[str]:
        return ["".join(str(int(b)) for b in row) for row in self.bits]


def hierarchical_mask(layout: SequenceLayout) -> AttentionMask:
    """Reference rows see every text token; shot ``s`` rows see only text chunk ``s``."""
    L_v, L_t = layout.num_visual, layout.num_text
    m = np.zeros((L_v, L_t), dtype=np.uint8)
    m[: layout.num_ref_tokens, :] = 1
    if len(layout.text_segments) != layout.num_shots:
        raise LayoutError("text segment count differs from shot count")
    for (v0, v1), (t0, t1) in zip(layout.shot_ranges, layout.text_segments):
        m[v0:v1, t0:t1] = 1
    m.setflags(write=False)
    return AttentionMask(m)


def masked_cross_attention(q_vis, k_txt, v_txt, mask: AttentionMask | np.ndarray,
                           scale: float | None = None, return_probs: bool = False):
    """Cross-attention of visual queries over text keys; no rotary embedding on either side."""
    q = _as_matrix(q_vis, "Q_vis")
    k = _as_matrix(k_txt, "K_txt")
    v = _as_matrix(v_txt, "V_txt")
    bits = mask.bits if isinstance(mask, AttentionMask) else np.asarray(mask)
    if bits.shape != (q.shape[0], k.shape[0]):
        raise ValueError(f"mask shape {bits.shape} does not match ({q.shape[0]}, {k.shape[0]})")
    if v.shape[0] != k.shape[0]:
        raise ValueError(f"{v.shape[0]} value rows for {k.shape[0]} text keys")
    probs = masked_softmax(attention_scores(q, k, scale), bits)
    out = fixed_order_matmul(probs, v)
    return (out, probs) if return_probs else out


def _range_header(layout: SequenceLayout | None) -> dict:
    return layout.to_dict() if layout is not None else {}


def export_probs_csv(probs, path: str | Path, layout: SequenceLayout | None = None) -> None:
    """Row-major CSV; the first line is a ``#`` comment carrying the layout ranges as JSON."""
    p = np.asarray(probs, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        fh.write("# layout=" + json.dumps(_range_header(layout), separators=(",", ":")) + "\n")
        w = csv.writer(fh)
        w.writerow(["row"] + [f"k{j}" for j in range(p.shape[1])])
        for i, row in enumerate(p):
            w.writerow([i] + [format(float(x), ".17g") for x in row])


def export_probs_json(probs, path: str | Path, layout: SequenceLayout | None = None) -> None:
    p = np.asarray(probs, dtype=np.float64)
    doc = {"shape": list(p.shape), "layout": _range_header(layout), "probs": p.tolist()}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
