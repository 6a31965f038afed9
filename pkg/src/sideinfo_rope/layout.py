"""Multi-shot sequence layouts, token coordinates and shot-prompt parsing.

Visual tokens are packed as ``[ref_1 | ... | ref_K | shot_1 | ... | shot_S]``.
Text tokens are ``S`` fixed-length chunks, one per shot.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import LayoutError, PromptParseError
from .sideinfo import SideInfoVec

Range = tuple[int, int]  # half-open [start, stop)

_MENTION = re.compile(r"(?<![\w@])@(?i:character)_(\d+)\b")


def parse_shot_prompt(caption: str, num_refs: int) -> SideInfoVec:
    """Side vector of a shot caption: bit ``i-1`` is set iff ``@character_i`` occurs.

    >>> parse_shot_prompt("@character_2 turns; @character_2 smiles", 2).to_string()
    '01'
    """
    if num_refs < 1:
        raise ValueError(f"num_refs must be >= 1, got {num_refs}")
    bits = [0] * num_refs
    bad = []
    for m in _MENTION.finditer(caption):
        i = int(m.group(1))
        if 1 <= i <= num_refs:
            bits[i - 1] = 1
        elif m.group(0) not in bad:
            bad.append(m.group(0))
    if bad:
        raise PromptParseError(bad, num_refs)
    return SideInfoVec(tuple(bits))


@dataclass(frozen=True)
class ShotSpec:
    shot_id: int
    frames: int
    height: int
    width: int
    caption: str = ""
    side: SideInfoVec | None = None

    def __post_init__(self):
        if self.shot_id < 1:
            raise ValueError(f"shot_id must be >= 1, got {self.shot_id}")
        for name in ("frames", "height", "width"):
            if getattr(self, name) < 1:
                raise ValueError(f"shot {self.shot_id}: {name} must be >= 1")

    @property
    def num_tokens(self) -> int:
        return self.frames * self.height * self.width

    def with_side(self, num_refs: int) -> ShotSpec:
        """Copy with ``side`` parsed from the caption."""
        side = parse_shot_prompt(self.caption, num_refs)
        return ShotSpec(self.shot_id, self.frames, self.height, self.width, self.caption, side)


@dataclass(frozen=True)
class TokenCoord:
    t: int
    h: int
    w: int
    side: SideInfoVec

    def __post_init__(self):
        if self.h < 0 or self.w < 0:
            raise ValueError(f"spatial coordinates must be non-negative, got h={self.h}, w={self.w}")


@dataclass(frozen=True)
class SequenceLayout:
    num_refs: int
    ref_ranges: tuple[Range, ...]
    shot_ranges: tuple[Range, ...]
    text_segments: tuple[Range, ...]
    shot_sides: tuple[SideInfoVec, ...]
    text_chunk_len: int

    def __post_init__(self):
        validate_layout(self)

    @property
    def num_shots(self) -> int:
        return len(self.shot_ranges)

    @property
    def num_ref_tokens(self) -> int:
        return self.ref_ranges[-1][1] if self.ref_ranges else 0

    @property
    def num_visual(self) -> int:
        return self.shot_ranges[-1][1]

    @property
    def num_text(self) -> int:
        return self.num_shots * self.text_chunk_len

    def ref_sides(self) -> tuple[SideInfoVec, ...]:
        return tuple(SideInfoVec.one_hot(r, self.num_refs) for r in range(1, self.num_refs + 1))

    def to_dict(self) -> dict:
        return {
            "K": self.num_refs,
            "T": self.text_chunk_len,
            "L_v": self.num_visual,
            "L_t": self.num_text,
            "ref_ranges": [list(r) for r in self.ref_ranges],
            "shot_ranges": [list(r) for r in self.shot_ranges],
            "text_segments": [list(r) for r in self.text_segments],
            "shot_sides": [s.to_string() for s in self.shot_sides],
        }

    @classmethod
    def from_dict(cls, data: dict) -> SequenceLayout:
        layout = cls(
            num_refs=int(data["K"]),
            ref_ranges=tuple(tuple(r) for r in data["ref_ranges"]),
            shot_ranges=tuple(tuple(r) for r in data["shot_ranges"]),
            text_segments=tuple(tuple(r) for r in data["text_segments"]),
            shot_sides=tuple(SideInfoVec.from_string(s) for s in data["shot_sides"]),
            text_chunk_len=int(data["T"]),
        )
        if "L_v" in data and data["L_v"] != layout.num_visual:
            raise LayoutError(f"L_v={data['L_v']} disagrees with ranges ({layout.num_visual})")
        if "L_t" in data and data["L_t"] != layout.num_text:
            raise LayoutError(f"L_t={data['L_t']} disagrees with segments ({layout.num_text})")
        return layout


def validate_layout(layout: SequenceLayout) -> None:
    K = layout.num_refs
    if K < 1:
        raise LayoutError("a layout needs at least one reference")
    if len(layout.ref_ranges) != K:
        raise LayoutError(f"expected {K} reference ranges, got {len(layout.ref_ranges)}")
    if not layout.shot_ranges:
        raise LayoutError("a layout needs at least one shot")
    if layout.text_chunk_len < 1:
        raise LayoutError("text chunk length must be >= 1")
    pos = 0
    for kind, ranges in (("reference", layout.ref_ranges), ("shot", layout.shot_ranges)):
        for idx, (start, stop) in enumerate(ranges, start=1):
            if start != pos:
                raise LayoutError(f"{kind} {idx} range [{start},{stop}) does not start at {pos}")
            if stop <= start:
                raise LayoutError(f"{kind} {idx} range [{start},{stop}) is empty or reversed")
            pos = stop
    T = layout.text_chunk_len
    expected = tuple((s * T, (s + 1) * T) for s in range(layout.num_shots))
    if tuple(tuple(r) for r in layout.text_segments) != expected:
        raise LayoutError(f"text segments {layout.text_segments} are not consecutive chunks of length {T}")
    if len(layout.shot_sides) != layout.num_shots:
        raise LayoutError("one side vector per shot is required")
    for s, side in enumerate(layout.shot_sides, start=1):
        if len(side) != K:
            raise LayoutError(f"shot {s} side vector has length {len(side)}, expected {K}")


def build_layout(ref_token_counts: Sequence[int], shots: Sequence[ShotSpec], text_chunk_len: int) -> SequenceLayout:
    K = len(ref_token_counts)
    if K < 1 or not shots or text_chunk_len < 1:
        raise ValueError("need K >= 1 references, at least one shot and text_chunk_len >= 1")
    pos = 0
    refs = []
    for r, n in enumerate(ref_token_counts, start=1):
        if n < 1:
            raise ValueError(f"reference {r} has no tokens")
        refs.append((pos, pos + n))
        pos += n
    shot_ranges, sides = [], []
    for shot in shots:
        n = shot.num_tokens
        if n < 1:
            raise ValueError(f"shot {shot.shot_id} has no tokens")
        shot_ranges.append((pos, pos + n))
        pos += n
        side = shot.side if shot.side is not None else parse_shot_prompt(shot.caption, K)
        if len(side) != K:
            raise ValueError(f"shot {shot.shot_id} side vector has length {len(side)}, expected {K}")
        sides.append(side)
    segments = tuple((s * text_chunk_len, (s + 1) * text_chunk_len) for s in range(len(shots)))
    return SequenceLayout(K, tuple(refs), tuple(shot_ranges), segments, tuple(sides), text_chunk_len)


def assign_coords(
    layout: SequenceLayout,
    shots: Sequence[ShotSpec],
    ref_grid: Sequence[tuple[int, int]],
) -> list[TokenCoord]:
    """(t, h, w, side) for every visual token.

    Reference ``r`` sits at the virtual time ``t = -r`` with its own (h, w)
    grid and a one-hot side vector. Shot frames are numbered continuously
    across shots; tokens inside a frame are row-major over (h, w).
    """
    K = layout.num_refs
    if len(ref_grid) != K:
        raise ValueError(f"expected {K} reference grids, got {len(ref_grid)}")
    if len(shots) != layout.num_shots:
        raise ValueError(f"layout has {layout.num_shots} shots, got {len(shots)} specs")
    coords: list[TokenCoord] = []
    for r, ((start, stop), (gh, gw)) in enumerate(zip(layout.ref_ranges, ref_grid), start=1):
        if gh * gw != stop - start:
            raise ValueError(f"reference {r}: grid {gh}x{gw} does not match {stop - start} tokens")
        side = SideInfoVec.one_hot(r, K)
        coords.extend(TokenCoord(-r, h, w, side) for h in range(gh) for w in range(gw))
    t0 = 0
    for shot, (start, stop), side in zip(shots, layout.shot_ranges, layout.shot_sides):
        if shot.num_tokens != stop - start:
            raise ValueError(f"shot {shot.shot_id}: {shot.num_tokens} grid tokens vs range of {stop - start}")
        coords.extend(
            TokenCoord(t0 + f, h, w, side)
            for f in range(shot.frames) for h in range(shot.height) for w in range(shot.width)
        )
        t0 += shot.frames
    return coords


@dataclass(frozen=True)
class RefSpec:
    height: int
    width: int

    @property
    def num_tokens(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class Manifest:
    """Input description of one multi-shot sample (what the CLI reads)."""

    num_refs: int
    text_chunk_len: int
    refs: tuple[RefSpec, ...]
    shots: tuple[ShotSpec, ...] = field(default_factory=tuple)

    def build(self) -> tuple[SequenceLayout, list[TokenCoord]]:
        shots = [s if s.side is not None else s.with_side(self.num_refs) for s in self.shots]
        layout = build_layout([r.num_tokens for r in self.refs], shots, self.text_chunk_len)
        coords = assign_coords(layout, shots, [(r.height, r.width) for r in self.refs])
        return layout, coords

    def to_dict(self) -> dict:
        return {
            "K": self.num_refs,
            "T": self.text_chunk_len,
            "refs": [{"tokens": r.num_tokens, "grid": [r.height, r.width]} for r in self.refs],
            "shots": [
                {
                    "id": s.shot_id, "frames": s.frames, "h": s.height, "w": s.width,
                    "caption": s.caption,
                    "side": (s.side or parse_shot_prompt(s.caption, self.num_refs)).to_string(),
                }
                for s in self.shots
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> Manifest:
        K = int(data["K"])
        refs = []
        for i, r in enumerate(data["refs"], start=1):
            h, w = r["grid"]
            if "tokens" in r and r["tokens"] != h * w:
                raise LayoutError(f"reference {i}: tokens={r['tokens']} but grid is {h}x{w}")
            refs.append(RefSpec(int(h), int(w)))
        if len(refs) != K:
            raise LayoutError(f"manifest declares K={K} but lists {len(refs)} references")
        shots = []
        for s in data["shots"]:
            side = parse_shot_prompt(s.get("caption", ""), K)
            if "side" in s and s["side"] != side.to_string():
                raise LayoutError(f"shot {s['id']}: side bits {s['side']!r} disagree with caption ({side})")
            shots.append(ShotSpec(int(s["id"]), int(s["frames"]), int(s["h"]), int(s["w"]),
                                  s.get("caption", ""), side))
        return cls(K, int(data["T"]), tuple(refs), tuple(shots))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def load(cls, path: str | Path) -> Manifest:
        return cls.from_dict(json.loads(Path(path).read_text()))
