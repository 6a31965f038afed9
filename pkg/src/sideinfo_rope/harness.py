"""Synthetic reference-confusion benchmark.

``K`` references have unit features with identical pairwise cosine ``rho``.
Each shot is bound to one reference: its caption mentions that reference
and its tokens are noisy copies of that reference's feature. A shot is
"retrieved" correctly when its aggregated attention to the bound reference
beats every other reference.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .attention import self_attention
from .diagnostics import ShotRefMatrix, confusion_argmax, shot_to_ref_scores
from .layout import SequenceLayout, ShotSpec, TokenCoord, assign_coords, build_layout
from .rope_core import RotaryConfig, build_plane_schedule

RNG_ALGORITHM = "numpy.random.PCG64 seeded by SeedSequence([seed, crc32(stream_name)])"

DEFAULT_FEATURE_DIM = 64
DEFAULT_NOISE = 0.05
DEFAULT_TOKENS_PER_SHOT = 8
DEFAULT_REF_GRID = (2, 2)
DEFAULT_HEADS = 16


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named component of a trial."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & (2**64 - 1), zlib.crc32(name.encode())])))


def random_orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """``rows x cols`` matrix with orthonormal columns (``cols <= rows``)."""
    g = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    # fix column signs so the draw is a deterministic function of g
    return q * np.sign(np.diag(r))


@dataclass(frozen=True)
class SynthTask:
    num_refs: int
    feature_dim: int
    rho: float
    noise: float
    seed: int
    ref_features: np.ndarray  # (K, F)
    bound_refs: tuple[int, ...]  # 1-based, one per shot
    features: np.ndarray  # (L_v, F) tokens in layout order
    layout: SequenceLayout
    coords: tuple[TokenCoord, ...]
    shots: tuple[ShotSpec, ...] = field(repr=False)

    def config_echo(self) -> dict:
        return {
            "K": self.num_refs, "F": self.feature_dim, "rho": self.rho, "noise": self.noise,
            "shots": len(self.bound_refs), "tokens_per_shot": self.shots[0].num_tokens,
            "seed": self.seed, "rng": RNG_ALGORITHM,
        }


def _shot_grid(tokens_per_shot: int, ref_grid: tuple[int, int]) -> tuple[int, int, int]:
    h, w = ref_grid
    if tokens_per_shot % (h * w) == 0:
        return tokens_per_shot // (h * w), h, w
    return tokens_per_shot, 1, 1


def gen_confusion_task(
    num_refs: int = 2,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    rho: float = 0.95,
    shots_per_ref: int = 2,
    tokens_per_shot: int = DEFAULT_TOKENS_PER_SHOT,
    seed: int = 0,
    noise: float = DEFAULT_NOISE,
    ref_grid: tuple[int, int] = DEFAULT_REF_GRID,
    text_chunk_len: int = 4,
) -> SynthTask:
    """Build a task; every random draw comes from a named substream of ``seed``.

    Reference ``j`` has feature ``sqrt(rho) u + sqrt(1 - rho) e_j`` with
    ``u, e_1..e_K`` orthonormal, so all pairwise cosines equal ``rho``.
    Shot tokens add iid ``N(0, noise^2)`` per coordinate.
    """
    K, F = num_refs, feature_dim
    if K < 2:
        raise ValueError("the confusion task needs at least two references")
    if F < K + 1:
        raise ValueError(f"feature_dim={F} cannot host {K + 1} orthonormal directions")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if shots_per_ref < 1 or tokens_per_shot < 1:
        raise ValueError("shots_per_ref and tokens_per_shot must be positive")

    basis = random_orthonormal(substream(seed, "refs"), F, K + 1)
    u, e = basis[:, 0], basis[:, 1:]
    ref_features = (math.sqrt(rho) * u[None, :] + math.sqrt(1.0 - rho) * e.T)

    labels = np.repeat(np.arange(1, K + 1), shots_per_ref)
    bound = tuple(int(b) for b in substream(seed, "shots").permutation(labels))

    frames, gh, gw = _shot_grid(tokens_per_shot, ref_grid)
    shots = [
        ShotSpec(s, frames, gh, gw, f"shot {s}: @character_{b} walks through the scene")
        .with_side(K)
        for s, b in enumerate(bound, start=1)
    ]
    ref_tokens = ref_grid[0] * ref_grid[1]
    layout = build_layout([ref_tokens] * K, shots, text_chunk_len)
    coords = assign_coords(layout, shots, [ref_grid] * K)

    noise_rng = substream(seed, "noise")
    rows = [np.repeat(ref_features[r][None, :], ref_tokens, axis=0) for r in range(K)]
    for b in bound:
        clean = np.repeat(ref_features[b - 1][None, :], tokens_per_shot, axis=0)
        rows.append(clean + noise * noise_rng.standard_normal(clean.shape))
    features = np.concatenate(rows, axis=0)
    for arr in (ref_features, features):
        arr.setflags(write=False)
    return SynthTask(K, F, float(rho), float(noise), int(seed), ref_features, bound, features,
                     layout, tuple(coords), tuple(shots))


def retrieval_projections(task: SynthTask, head_dim: int, num_heads: int) -> list[np.ndarray]:
    """Fixed random F x D projections with orthonormal columns, one per head (Q = K = V)."""
    if head_dim > task.feature_dim:
        raise ValueError(f"head_dim {head_dim} exceeds feature_dim {task.feature_dim}")
    rng = substream(task.seed, "projections")
    return [random_orthonormal(rng, task.feature_dim, head_dim) for _ in range(num_heads)]


@dataclass(frozen=True)
class RetrievalResult:
    accuracy: float
    attn: ShotRefMatrix
    predictions: tuple[int, ...]


def run_retrieval(task: SynthTask, cfg: RotaryConfig, use_sideinfo: bool = True,
                  num_heads: int = DEFAULT_HEADS) -> RetrievalResult:
    """Training-free retrieval: head-averaged attention probabilities, aggregated per shot and reference.

    Every head shares one rotation schedule and has its own fixed random
    projection. ``use_sideinfo=False`` swaps in the 3D-RoPE config the side
    channels were carved from.
    """
    if cfg.num_refs != task.num_refs:
        raise ValueError(f"config has K={cfg.num_refs} but task has K={task.num_refs}")
    if num_heads < 1:
        raise ValueError("num_heads must be >= 1")
    eff = cfg if use_sideinfo else cfg.without_sideinfo()
    schedule = build_plane_schedule(eff)
    probs = np.zeros((task.layout.num_visual,) * 2)
    for proj in retrieval_projections(task, cfg.head_dim, num_heads):
        x = task.features @ proj
        probs += self_attention(x, x, x, task.coords, eff, schedule=schedule)[1]
    probs /= num_heads
    m = shot_to_ref_scores(probs, task.layout)
    res = confusion_argmax(m, task.bound_refs)
    return RetrievalResult(res.accuracy, m, res.predictions)
