"""Rotation schedules and blockwise 2D rotations for 1D, 3D and side-info RoPE.

The head dimension is split into consecutive coordinate pairs ("planes").
Plane ``i`` (1-based) acts on coordinates ``(2i-2, 2i-1)`` (0-based) and is
rotated by ``coefficient * coordinate`` for the axis it belongs to. Planes are
ordered T, S, H, W.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError
from .sideinfo import ref_phase


class Realloc(str, enum.Enum):
    """Which end of the original temporal subspace was donated to the side axis."""

    NONE = "none"
    TLOW = "tlow"
    THIGH = "thigh"


class Axis(str, enum.Enum):
    T = "T"
    S = "S"
    H = "H"
    W = "W"


@dataclass(frozen=True)
class RotaryConfig:
    head_dim: int = 32
    theta: float = 10000.0
    d_t: int = 8
    d_h: int = 10
    d_w: int = 10
    d_s: int = 4
    num_refs: int = 2
    realloc: Realloc = Realloc.TLOW

    def __post_init__(self):
        object.__setattr__(self, "realloc", Realloc(self.realloc))
        self.validate()

    def validate(self) -> None:
        D = self.head_dim
        if not isinstance(D, int) or D <= 0 or D % 2:
            raise ConfigError(f"head_dim must be a positive even integer, got {D!r}")
        if not (isinstance(self.theta, (int, float)) and math.isfinite(self.theta) and self.theta > 1):
            raise ConfigError(f"theta must be a finite real > 1, got {self.theta!r}")
        for name in ("d_t", "d_h", "d_w", "d_s"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0 or v % 2:
                raise ConfigError(f"{name} must be an even non-negative integer, got {v!r}")
        if self.d_t + self.d_h + self.d_w + self.d_s != D:
            raise ConfigError(
                f"axis channels {self.d_t}+{self.d_h}+{self.d_w}+{self.d_s} do not sum to head_dim={D}"
            )
        if not isinstance(self.num_refs, int) or self.num_refs < 1:
            raise ConfigError(f"num_refs must be a positive integer, got {self.num_refs!r}")
        if self.realloc is Realloc.NONE:
            if self.d_s != 0:
                raise ConfigError("d_s must be 0 when realloc is 'none'")
        elif self.d_s != 2 * self.num_refs:
            raise ConfigError(
                f"d_s must equal 2*num_refs={2 * self.num_refs} when realloc is "
                f"'{self.realloc.value}', got {self.d_s}"
            )

    @property
    def num_planes(self) -> int:
        return self.head_dim // 2

    @property
    def uses_sideinfo(self) -> bool:
        return self.d_s > 0

    @classmethod
    def from_pre_realloc(
        cls,
        head_dim: int,
        d_t: int,
        d_h: int,
        d_w: int,
        num_refs: int,
        realloc: Realloc | str = Realloc.TLOW,
        theta: float = 10000.0,
    ) -> RotaryConfig:
        """Carve ``2*num_refs`` side channels out of an existing 3D-RoPE split."""
        realloc = Realloc(realloc)
        d_s = 0 if realloc is Realloc.NONE else 2 * num_refs
        if d_s > d_t:
            raise ConfigError(f"temporal subspace ({d_t}) too small to donate {d_s} channels")
        return cls(head_dim, theta, d_t - d_s, d_h, d_w, d_s, num_refs, realloc)

    def without_sideinfo(self) -> RotaryConfig:
        """The original 3D-RoPE config the side channels were taken from."""
        return RotaryConfig(
            self.head_dim, self.theta, self.d_t + self.d_s, self.d_h, self.d_w, 0,
            self.num_refs, Realloc.NONE,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["realloc"] = self.realloc.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> RotaryConfig:
        fields = ("head_dim", "theta", "d_t", "d_h", "d_w", "d_s", "num_refs", "realloc")
        unknown = set(data) - set(fields)
        if unknown:
            raise ConfigError(f"unknown rotary config field(s): {sorted(unknown)}")
        kwargs = {k: data[k] for k in fields if k in data}
        if "realloc" in kwargs:
            try:
                kwargs["realloc"] = Realloc(str(kwargs["realloc"]).lower())
            except ValueError as exc:
                raise ConfigError(f"realloc must be one of none/tlow/thigh, got {data['realloc']!r}") from exc
        if "theta" in kwargs and isinstance(kwargs["theta"], int):
            kwargs["theta"] = float(kwargs["theta"])
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> RotaryConfig:
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> RotaryConfig:
        return cls.from_json(Path(path).read_text())


class PlaneDescriptor(NamedTuple):
    axis: Axis
    index: int  # global plane index, 1-based
    coefficient: float
    side_slot: int = 0  # reference number for S planes, 0 otherwise


@dataclass(frozen=True)
class PlaneSchedule:
    planes: tuple[PlaneDescriptor, ...]
    num_refs: int
    # cached arrays used by the rotation kernels
    coefficients: np.ndarray = field(repr=False, compare=False)
    axis_codes: np.ndarray = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.planes)

    def __iter__(self):
        return iter(self.planes)

    def axis_planes(self, axis: Axis) -> list[PlaneDescriptor]:
        return [p for p in self.planes if p.axis is axis]

    @property
    def side_coefficients(self) -> tuple[float, ...]:
        return tuple(p.coefficient for p in self.planes if p.axis is Axis.S)


# column order of per-token axis coordinates fed to the kernels: t, h, w, then K side slots
_AXIS_CODE = {Axis.T: 0, Axis.H: 1, Axis.W: 2}


def _make_schedule(planes: list[PlaneDescriptor], num_refs: int) -> PlaneSchedule:
    coeffs = np.array([p.coefficient for p in planes], dtype=np.float64)
    codes = np.array(
        [3 + p.side_slot - 1 if p.axis is Axis.S else _AXIS_CODE[p.axis] for p in planes],
        dtype=np.intp,
    )
    coeffs.setflags(write=False)
    codes.setflags(write=False)
    return PlaneSchedule(tuple(planes), num_refs, coeffs, codes)


def plane_frequency(i: int, head_dim: int, theta: float) -> float:
    """Rotation frequency ``theta ** (-2i / D)`` of global plane ``i``."""
    if head_dim <= 0 or head_dim % 2:
        raise ValueError(f"head_dim must be a positive even integer, got {head_dim}")
    if not 1 <= i <= head_dim // 2:
        raise ValueError(f"plane index {i} outside 1..{head_dim // 2}")
    if not theta > 1:
        raise ValueError(f"theta must exceed 1, got {theta}")
    return theta ** (-2.0 * i / head_dim)


def rotation_block(angle: float) -> np.ndarray:
    if not math.isfinite(angle):
        raise ValueError(f"rotation angle must be finite, got {angle!r}")
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def build_plane_schedule(cfg: RotaryConfig) -> PlaneSchedule:
    """Plane descriptors in T, S, H, W order.

    T/H/W planes use the frequency of their global index; side plane ``j``
    uses the phase code of reference ``j``.
    """
    D = cfg.head_dim
    n_t, n_s, n_h = cfg.d_t // 2, cfg.d_s // 2, cfg.d_h // 2
    planes = []
    for i in range(1, cfg.num_planes + 1):
        if i <= n_t:
            planes.append(PlaneDescriptor(Axis.T, i, plane_frequency(i, D, cfg.theta)))
        elif i <= n_t + n_s:
            j = i - n_t
            planes.append(PlaneDescriptor(Axis.S, i, ref_phase(j, cfg.num_refs), j))
        elif i <= n_t + n_s + n_h:
            planes.append(PlaneDescriptor(Axis.H, i, plane_frequency(i, D, cfg.theta)))
        else:
            planes.append(PlaneDescriptor(Axis.W, i, plane_frequency(i, D, cfg.theta)))
    return _make_schedule(planes, cfg.num_refs)


def build_3d_schedule(head_dim: int, d_t: int, d_h: int, d_w: int, theta: float = 10000.0,
                      num_refs: int = 1) -> PlaneSchedule:
    """Plain 3D-RoPE schedule (no side axis), built independently of ``RotaryConfig``."""
    if d_t + d_h + d_w != head_dim or any(d % 2 for d in (d_t, d_h, d_w)):
        raise ValueError("3D-RoPE channels must be even and sum to head_dim")
    bounds = [(Axis.T, d_t // 2), (Axis.H, (d_t + d_h) // 2), (Axis.W, head_dim // 2)]
    planes = []
    for i in range(1, head_dim // 2 + 1):
        axis = next(a for a, hi in bounds if i <= hi)
        planes.append(PlaneDescriptor(axis, i, plane_frequency(i, head_dim, theta)))
    return _make_schedule(planes, num_refs)


def channel_provenance(cfg: RotaryConfig) -> list[dict]:
    """Map every emitted plane to the plane of the pre-reallocation model it occupies.

    The original model had ``d_t + d_s`` temporal channels. TLow hands the
    ``d_s/2`` highest-index (lowest-frequency) temporal planes to the side
    axis, THigh the lowest-index (highest-frequency) ones.
    """
    n_t, n_s = cfg.d_t // 2, cfg.d_s // 2
    n_orig_t = n_t + n_s
    if cfg.realloc is Realloc.THIGH:
        side_src = list(range(1, n_s + 1))
        t_src = list(range(n_s + 1, n_orig_t + 1))
    else:
        t_src = list(range(1, n_t + 1))
        side_src = list(range(n_t + 1, n_orig_t + 1))
    out = []
    for p in build_plane_schedule(cfg):
        if p.axis is Axis.T:
            src_axis, src = "T", t_src[p.index - 1]
        elif p.axis is Axis.S:
            src_axis, src = "T", side_src[p.side_slot - 1]
        else:
            src_axis, src = p.axis.value, p.index
        out.append({
            "plane": p.index,
            "axis": p.axis.value,
            "source_axis": src_axis,
            "source_plane": src,
            "source_channels": [2 * src - 2, 2 * src - 1],
        })
    return out


def apply_rotation(vec: Sequence[float], angles: Sequence[float]) -> np.ndarray:
    """Rotate each coordinate pair of ``vec`` by the matching entry of ``angles``."""
    v = np.asarray(vec, dtype=np.float64)
    a = np.asarray(angles, dtype=np.float64)
    if v.ndim != 1 or a.ndim != 1 or v.shape[0] != 2 * a.shape[0]:
        raise ValueError(f"vector of length {v.shape} needs {v.shape[0] // 2} angles, got {a.shape}")
    return rotate_pairs(v[None, :], a[None, :])[0]


def rotate_pairs(x: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Row-wise pair rotation: ``x`` is (N, D), ``angles`` is (N, D/2)."""
    cos, sin = np.cos(angles), np.sin(angles)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x, dtype=np.result_type(x, angles))
    out[..., 0::2] = x0 * cos - x1 * sin
    out[..., 1::2] = x0 * sin + x1 * cos
    return out


@dataclass(frozen=True)
class RelativeOffset:
    """Per-axis offsets between a key and a query (key minus query).

    ``ds`` entries are in {-1, 0, 1}; the unsigned form ``|ds|`` is the
    side distance.
    """

    dt: float = 0.0
    dh: float = 0.0
    dw: float = 0.0
    ds: tuple[int, ...] = ()


def plane_angles(schedule: PlaneSchedule, t: float, h: float, w: float, side: Sequence[float]) -> np.ndarray:
    """Per-plane angles for one set of axis coordinates."""
    if len(side) != schedule.num_refs:
        raise ValueError(f"side coordinate has length {len(side)}, expected {schedule.num_refs}")
    coords = np.array([t, h, w, *side], dtype=np.float64)
    return schedule.coefficients * coords[schedule.axis_codes]


def relative_rotation_matrix(schedule: PlaneSchedule, delta: RelativeOffset) -> np.ndarray:
    side = delta.ds if delta.ds else (0,) * schedule.num_refs
    angles = plane_angles(schedule, delta.dt, delta.dh, delta.dw, side)
    D = 2 * len(schedule)
    R = np.zeros((D, D))
    for i, a in enumerate(angles):
        R[2 * i:2 * i + 2, 2 * i:2 * i + 2] = rotation_block(float(a))
    return R


def relative_score_oracle(q: Sequence[float], k: Sequence[float], delta: RelativeOffset,
                          cfg: RotaryConfig | PlaneSchedule) -> float:
    """``q^T R k`` with the full block-diagonal rotation materialised.

    Brute-force reference for the absolute-rotation path: rotating the query
    by its coordinates and the key by its own gives the same score as
    rotating only the key by ``delta`` (key minus query).
    """
    schedule = cfg if isinstance(cfg, PlaneSchedule) else build_plane_schedule(cfg)
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    D = 2 * len(schedule)
    if q.shape != (D,) or k.shape != (D,):
        raise ValueError(f"q and k must have length {D}, got {q.shape} and {k.shape}")
    if delta.ds and len(delta.ds) != schedule.num_refs:
        raise ValueError(f"side offset has length {len(delta.ds)}, expected {schedule.num_refs}")
    if any(d not in (-1, 0, 1) for d in delta.ds):
        raise ValueError(f"side offsets must be in {{-1, 0, 1}}, got {delta.ds}")
    R = relative_rotation_matrix(schedule, delta)
    return float(q @ R @ k)
