"""Randomised invariant checks shared by the ``check`` command and the acceptance tests.

Each check returns a :class:`CheckResult` with the worst observed error so
callers can report it next to the tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import (apply_positional, attention_scores, hierarchical_mask, masked_cross_attention,
                        self_attention)
from .layout import ShotSpec, TokenCoord, build_layout
from .rope_core import (Axis, Realloc, RelativeOffset, RotaryConfig, apply_rotation, build_3d_schedule,
                        build_plane_schedule, relative_score_oracle, rotation_block)
from .sideinfo import SideInfoVec


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    cases: int
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<40} worst={self.worst:.3e} tol={self.tolerance:.0e} cases={self.cases}"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "worst": float(self.worst),
                "tolerance": float(self.tolerance), "cases": int(self.cases), "detail": self.detail}


def random_config(rng: np.random.Generator, max_dim: int = 64, max_refs: int = 4,
                  realloc: Realloc | None = None) -> RotaryConfig:
    """A valid config with D <= max_dim and K <= max_refs."""
    K = int(rng.integers(1, max_refs + 1))
    realloc = realloc if realloc is not None else Realloc(rng.choice(["none", "tlow", "thigh"]))
    d_s = 0 if realloc is Realloc.NONE else 2 * K
    planes_left = int(rng.integers(3, max_dim // 2 - d_s // 2 + 1))
    # split the remaining planes across T, H, W with at least one each
    cuts = np.sort(rng.choice(np.arange(1, planes_left), size=2, replace=False))
    n_t, n_h, n_w = cuts[0], cuts[1] - cuts[0], planes_left - cuts[1]
    D = int(2 * (n_t + n_h + n_w) + d_s)
    theta = float(rng.choice([100.0, 10000.0, 500000.0]))
    return RotaryConfig(D, theta, 2 * int(n_t), 2 * int(n_h), 2 * int(n_w), d_s, K, realloc)


def random_coord(rng: np.random.Generator, K: int) -> TokenCoord:
    return TokenCoord(int(rng.integers(-4, 40)), int(rng.integers(0, 32)), int(rng.integers(0, 32)),
                      SideInfoVec(tuple(int(b) for b in rng.integers(0, 2, size=K))))


def offset_between(query: TokenCoord, key: TokenCoord) -> RelativeOffset:
    return RelativeOffset(key.t - query.t, key.h - query.h, key.w - query.w,
                          tuple(b - a for a, b in zip(query.side.bits, key.side.bits)))


def check_oracle_equivalence(n: int = 10_000, seed: int = 0, tol: float = 1e-9,
                             realloc: Realloc | None = None) -> CheckResult:
    """Absolute-rotation scores vs the brute-force relative rotation, over random configs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    per_cfg = 50
    done = 0
    while done < n:
        cfg = random_config(rng, realloc=realloc)
        schedule = build_plane_schedule(cfg)
        m = min(per_cfg, n - done)
        coords = [random_coord(rng, cfg.num_refs) for _ in range(2 * m)]
        x = rng.standard_normal((2 * m, cfg.head_dim))
        rot = apply_positional(x, coords, schedule=schedule)
        for i in range(m):
            a, b = 2 * i, 2 * i + 1
            fast = float(rot[a] @ rot[b])
            ref = relative_score_oracle(x[a], x[b], offset_between(coords[a], coords[b]), schedule)
            worst = max(worst, abs(fast - ref))
        done += m
    label = f" ({realloc.value})" if realloc is not None else ""
    return CheckResult("rope oracle equivalence" + label, worst <= tol, worst, tol, n)


def check_norm_preservation(n: int = 10_000, seed: int = 1, tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        half = int(rng.integers(1, 33))
        v = rng.standard_normal(2 * half)
        a = rng.uniform(-1e3, 1e3, size=half)
        worst = max(worst, abs(np.linalg.norm(apply_rotation(v, a)) - np.linalg.norm(v)))
    return CheckResult("norm preservation", worst <= tol, worst, tol, n)


def check_rotation_blocks(n: int = 10_000, seed: int = 2, tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    eye = np.eye(2)
    for a in rng.uniform(-1e3, 1e3, size=n):
        R = rotation_block(float(a))
        worst = max(worst, np.abs(R.T @ R - eye).max(), abs(np.linalg.det(R) - 1.0))
    return CheckResult("rotation block orthogonality/det", worst <= tol, worst, tol, n)


def check_composition(n: int = 10_000, seed: int = 3, tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        half = int(rng.integers(1, 33))
        v = rng.standard_normal(2 * half)
        a = rng.uniform(-math.pi, math.pi, size=half)
        b = rng.uniform(-math.pi, math.pi, size=half)
        diff = apply_rotation(apply_rotation(v, a), b) - apply_rotation(v, a + b)
        worst = max(worst, np.abs(diff).max())
    return CheckResult("rotation composition", worst <= tol, worst, tol, n)


def check_no_side_is_3d(n: int = 200, seed: int = 4) -> CheckResult:
    """d_s = 0 attention equals attention under an independently built 3D-RoPE schedule, bit for bit."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(n):
        cfg = random_config(rng, realloc=Realloc.NONE)
        s3d = build_3d_schedule(cfg.head_dim, cfg.d_t, cfg.d_h, cfg.d_w, cfg.theta, cfg.num_refs)
        N = int(rng.integers(1, 12))
        coords = [random_coord(rng, cfg.num_refs) for _ in range(N)]
        x = rng.standard_normal((3, N, cfg.head_dim))
        out_a, p_a = self_attention(x[0], x[1], x[2], coords, cfg)
        out_b, p_b = self_attention(x[0], x[1], x[2], coords, cfg, schedule=s3d)
        if not (np.array_equal(out_a, out_b) and np.array_equal(p_a, p_b)):
            mismatches += 1
    return CheckResult("d_s=0 bit-identical to 3D-RoPE", mismatches == 0, float(mismatches), 0.0, n)


def check_matched_side_neutral(n: int = 1000, seed: int = 5, tol: float = 1e-12,
                               realloc: Realloc | None = None) -> CheckResult:
    """With equal side bits on every token, rotating side planes changes no score."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        cfg = random_config(rng, realloc=realloc or Realloc(rng.choice(["tlow", "thigh"])))
        schedule = build_plane_schedule(cfg)
        side = SideInfoVec(tuple(int(b) for b in rng.integers(0, 2, size=cfg.num_refs)))
        N = int(rng.integers(2, 8))
        coords = [TokenCoord(int(rng.integers(-3, 20)), int(rng.integers(0, 16)), int(rng.integers(0, 16)), side)
                  for _ in range(N)]
        q, k = rng.standard_normal((2, N, cfg.head_dim))
        with_side = attention_scores(apply_positional(q, coords, schedule=schedule),
                                     apply_positional(k, coords, schedule=schedule), 1.0)
        skipped = attention_scores(apply_positional(q, coords, schedule=schedule, rotate_side=False),
                                   apply_positional(k, coords, schedule=schedule, rotate_side=False), 1.0)
        worst = max(worst, np.abs(with_side - skipped).max())
    label = f" ({realloc.value})" if realloc else ""
    return CheckResult("matched side info is neutral" + label, worst <= tol, worst, tol, n)


def check_single_mismatch_attenuation(n: int = 1000, seed: int = 6, tol: float = 1e-12,
                                      realloc: Realloc = Realloc.TLOW) -> CheckResult:
    """K=2, q = k at the same (t, h, w): one side mismatch removes exactly that plane's energy."""
    rng = np.random.default_rng(seed)
    cfg = RotaryConfig.from_pre_realloc(32, 12, 10, 10, num_refs=2, realloc=realloc)
    schedule = build_plane_schedule(cfg)
    side_planes = [p for p in schedule if p.axis is Axis.S]
    worst = 0.0
    for _ in range(n):
        q = rng.standard_normal(cfg.head_dim)
        t, h, w = int(rng.integers(-2, 30)), int(rng.integers(0, 16)), int(rng.integers(0, 16))
        a_bits = tuple(int(b) for b in rng.integers(0, 2, size=2))
        flip = int(rng.integers(0, 2))
        b_bits = tuple(1 - v if i == flip else v for i, v in enumerate(a_bits))
        ca = TokenCoord(t, h, w, SideInfoVec(a_bits))
        cb = TokenCoord(t, h, w, SideInfoVec(b_bits))
        rot = apply_positional(np.stack([q, q]), [ca, cb], schedule=schedule)
        matched = float(rot[0] @ rot[0])
        mismatched = float(rot[0] @ rot[1])
        p = side_planes[flip].index
        energy = q[2 * p - 2] ** 2 + q[2 * p - 1] ** 2
        worst = max(worst, abs((matched - mismatched) - energy))
    return CheckResult(f"side mismatch removes energy ({realloc.value})", worst <= tol, worst, tol, n)


def random_shots(rng: np.random.Generator, K: int, S: int) -> list[ShotSpec]:
    shots = []
    for s in range(1, S + 1):
        side = SideInfoVec(tuple(int(b) for b in rng.integers(0, 2, size=K)))
        shots.append(ShotSpec(s, int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                              side=side))
    return shots


def _expected_mask_entry(i: int, j: int, ref_counts, shot_counts, T: int) -> int:
    """Re-derive one mask entry from raw token counts, without the layout's ranges."""
    n_ref = sum(ref_counts)
    if i < n_ref:
        return 1
    acc = n_ref
    for s, c in enumerate(shot_counts):
        if acc <= i < acc + c:
            return int(s * T <= j < (s + 1) * T)
        acc += c
    raise IndexError(i)


def check_mask_fuzz(n: int = 500, seed: int = 7) -> CheckResult:
    """Hierarchical mask clauses against an independent re-derivation, plus cross-shot independence."""
    rng = np.random.default_rng(seed)
    failures = []
    for trial in range(n):
        K = int(rng.integers(1, 5))
        S = int(rng.integers(1, 6))
        T = int(rng.integers(1, 5))
        ref_counts = [int(c) for c in rng.integers(1, 5, size=K)]
        shots = random_shots(rng, K, S)
        layout = build_layout(ref_counts, shots, T)
        mask = hierarchical_mask(layout).bits
        shot_counts = [s.num_tokens for s in shots]
        L_v, L_t = sum(ref_counts) + sum(shot_counts), S * T
        if mask.shape != (L_v, L_t):
            failures.append(trial)
            continue
        expected = np.array([[_expected_mask_entry(i, j, ref_counts, shot_counts, T) for j in range(L_t)]
                             for i in range(L_v)])
        if not np.array_equal(mask, expected):
            failures.append(trial)
            continue
        # video rows: exactly T ones forming one contiguous run
        for i in range(sum(ref_counts), L_v):
            ones = np.flatnonzero(mask[i])
            if len(ones) != T or ones[-1] - ones[0] != T - 1:
                failures.append(trial)
                break
        else:
            if S > 1 and not _cross_shot_independent(rng, layout, mask):
                failures.append(trial)
    detail = f"failing trials: {failures[:10]}" if failures else ""
    return CheckResult("hierarchical mask fuzz", not failures, float(len(failures)), 0.0, n, detail)


def _cross_shot_independent(rng: np.random.Generator, layout, mask: np.ndarray) -> bool:
    D = 8
    L_v, L_t = mask.shape
    q = rng.standard_normal((L_v, D))
    k = rng.standard_normal((L_t, D))
    v = rng.standard_normal((L_t, D))
    base = masked_cross_attention(q, k, v, mask)
    s_pert = int(rng.integers(0, layout.num_shots))
    t0, t1 = layout.text_segments[s_pert]
    k2, v2 = k.copy(), v.copy()
    k2[t0:t1] += rng.standard_normal((t1 - t0, D))
    v2[t0:t1] += rng.standard_normal((t1 - t0, D))
    pert = masked_cross_attention(q, k2, v2, mask)
    for s, (a, b) in enumerate(layout.shot_ranges):
        if s != s_pert and not np.array_equal(base[a:b], pert[a:b]):
            return False
    return True


def run_all(fast: bool = False) -> list[CheckResult]:
    """The full invariant suite; ``fast`` cuts case counts tenfold."""
    scale = 10 if fast else 1
    return [
        check_oracle_equivalence(10_000 // scale),
        check_norm_preservation(10_000 // scale),
        check_rotation_blocks(10_000 // scale),
        check_composition(10_000 // scale),
        check_no_side_is_3d(200 // scale),
        check_matched_side_neutral(1000 // scale),
        check_single_mismatch_attenuation(1000 // scale, realloc=Realloc.TLOW),
        check_single_mismatch_attenuation(1000 // scale, realloc=Realloc.THIGH),
        check_mask_fuzz(500 // scale),
    ]
