"""A trainable single-head attention layer and its analytic gradients.

The objective asks each shot to attend to its bound reference: the
shot-to-reference attention matrix (post-softmax, mean-pooled) is
renormalised over references and scored with cross-entropy. Token
coordinates are data, so rotations are constants in the backward pass.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .attention import fixed_order_matmul, softmax_rows, token_angles
from .diagnostics import ShotRefMatrix, confusion_argmax, shot_to_ref_scores
from .errors import NumericError, StaleCacheError, TrainingDivergedError
from .harness import RNG_ALGORITHM, SynthTask, random_orthonormal, substream
from .rope_core import RotaryConfig, build_plane_schedule, rotate_pairs


@dataclass(frozen=True)
class ToyAttnLayer:
    W_q: np.ndarray  # (F, D)
    W_k: np.ndarray
    W_v: np.ndarray

    def __post_init__(self):
        for name in ("W_q", "W_k", "W_v"):
            w = np.array(getattr(self, name), dtype=np.float64)
            if w.ndim != 2 or not np.all(np.isfinite(w)):
                raise ValueError(f"{name} must be a finite 2-D matrix")
            w.setflags(write=False)
            object.__setattr__(self, name, w)
        if not (self.W_q.shape == self.W_k.shape == self.W_v.shape):
            raise ValueError("W_q, W_k and W_v must share a shape")

    @classmethod
    def init(cls, feature_dim: int, head_dim: int, seed: int) -> ToyAttnLayer:
        """All three projections start from one random orthonormal F x D matrix."""
        p = random_orthonormal(substream(seed, "layer_init"), feature_dim, head_dim)
        return cls(p, p, p)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for w in (self.W_q, self.W_k, self.W_v):
            h.update(w.tobytes())
        return h.hexdigest()

    def step(self, grads: dict, lr: float) -> ToyAttnLayer:
        return ToyAttnLayer(self.W_q - lr * grads["W_q"], self.W_k - lr * grads["W_k"],
                            self.W_v - lr * grads["W_v"])


@dataclass(frozen=True)
class ForwardCache:
    fingerprint: str
    x: np.ndarray
    angles: np.ndarray
    q_rot: np.ndarray
    k_rot: np.ndarray
    scale: float
    probs: np.ndarray
    shot_ref: np.ndarray
    labels: tuple[int, ...]
    shot_ranges: tuple
    ref_ranges: tuple


def _check(name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(name)


def binding_loss(shot_ref: np.ndarray, labels) -> float:
    """Mean cross-entropy of the reference-renormalised shot attention against ``labels`` (1-based)."""
    a = np.asarray(shot_ref, dtype=np.float64)
    idx = np.asarray(labels) - 1
    p = a[np.arange(len(idx)), idx] / a.sum(axis=1)
    return float(-np.mean(np.log(p)))


def _effective(cfg: RotaryConfig, use_sideinfo: bool) -> RotaryConfig:
    return cfg if use_sideinfo else cfg.without_sideinfo()


def layer_forward(layer: ToyAttnLayer, task: SynthTask, cfg: RotaryConfig, scale: float | None = None):
    """Returns ``(loss, cache)``."""
    if layer.W_q.shape != (task.feature_dim, cfg.head_dim):
        raise ValueError(f"layer shape {layer.W_q.shape} does not fit F={task.feature_dim}, D={cfg.head_dim}")
    if cfg.num_refs != task.num_refs:
        raise ValueError(f"config has K={cfg.num_refs} but task has K={task.num_refs}")
    x = task.features
    schedule = build_plane_schedule(cfg)
    angles = token_angles(task.coords, schedule)
    q = x @ layer.W_q
    k = x @ layer.W_k
    _check("query projection", q)
    _check("key projection", k)
    q_rot, k_rot = rotate_pairs(q, angles), rotate_pairs(k, angles)
    scale = 1.0 / math.sqrt(cfg.head_dim) if scale is None else scale
    with np.errstate(over="ignore", invalid="ignore"):
        scores = scale * fixed_order_matmul(q_rot, k_rot.T)
    _check("attention scores", scores)
    probs = softmax_rows(scores)
    _check("attention probabilities", probs)
    shot_ref = shot_to_ref_scores(probs, task.layout).values
    with np.errstate(divide="ignore"):
        loss = binding_loss(shot_ref, task.bound_refs)
    if not math.isfinite(loss):
        raise NumericError("binding loss")
    cache = ForwardCache(layer.fingerprint(), x, angles, q_rot, k_rot, scale, probs, shot_ref,
                         task.bound_refs, task.layout.shot_ranges, task.layout.ref_ranges)
    return loss, cache


def layer_backward(layer: ToyAttnLayer, cache: ForwardCache) -> dict[str, np.ndarray]:
    """Gradients of the binding loss for ``W_q``, ``W_k``, ``W_v`` and the token features ``X``.

    Values never reach the loss, so the ``W_v`` gradient is identically zero.
    """
    if cache.fingerprint != layer.fingerprint():
        raise StaleCacheError("layer parameters changed since the forward pass")
    A, labels = cache.shot_ref, np.asarray(cache.labels) - 1
    S = A.shape[0]
    dA = np.zeros_like(A)
    dA += (1.0 / S) / A.sum(axis=1, keepdims=True)
    dA[np.arange(S), labels] -= (1.0 / S) / A[np.arange(S), labels]

    P = cache.probs
    dP = np.zeros_like(P)
    for i, (q0, q1) in enumerate(cache.shot_ranges):
        for j, (k0, k1) in enumerate(cache.ref_ranges):
            dP[q0:q1, k0:k1] = dA[i, j] / ((q1 - q0) * (k1 - k0))
    dS = P * (dP - (dP * P).sum(axis=1, keepdims=True))

    dq_rot = cache.scale * dS @ cache.k_rot
    dk_rot = cache.scale * dS.T @ cache.q_rot
    dq = rotate_pairs(dq_rot, -cache.angles)
    dk = rotate_pairs(dk_rot, -cache.angles)
    x = cache.x
    return {
        "W_q": x.T @ dq,
        "W_k": x.T @ dk,
        "W_v": np.zeros_like(layer.W_v),
        "X": dq @ layer.W_q.T + dk @ layer.W_k.T,
    }


def numeric_gradients(layer: ToyAttnLayer, task: SynthTask, cfg: RotaryConfig, eps: float = 1e-5,
                      entries: dict[str, list[tuple[int, int]]] | None = None) -> dict[str, np.ndarray]:
    """Central finite differences of the loss; ``entries`` limits which coordinates are probed (NaN elsewhere)."""
    out = {}
    for name in ("W_q", "W_k", "W_v"):
        base = getattr(layer, name)
        g = np.full(base.shape, np.nan)
        coords = entries[name] if entries is not None else list(np.ndindex(base.shape))
        for idx in coords:
            plus, minus = base.copy(), base.copy()
            plus[idx] += eps
            minus[idx] -= eps
            lp, _ = layer_forward(_replace(layer, name, plus), task, cfg)
            lm, _ = layer_forward(_replace(layer, name, minus), task, cfg)
            g[idx] = (lp - lm) / (2 * eps)
        out[name] = g
    return out


def _replace(layer: ToyAttnLayer, name: str, w: np.ndarray) -> ToyAttnLayer:
    ws = {"W_q": layer.W_q, "W_k": layer.W_k, "W_v": layer.W_v}
    ws[name] = w
    return ToyAttnLayer(**ws)


def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(1.0, np.abs(a) + np.abs(n))


@dataclass
class TrainReport:
    losses: list[float]
    accuracies: list[float]
    final_attn: ShotRefMatrix
    config: dict
    seed: int
    use_sideinfo: bool
    layer: ToyAttnLayer | None = field(default=None, repr=False)

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "use_sideinfo": self.use_sideinfo,
            "config": self.config,
            "losses": self.losses,
            "accuracies": self.accuracies,
            "final_accuracy": self.final_accuracy,
            "final_attn": self.final_attn.to_dict(),
        }


def train_binding(task: SynthTask, cfg: RotaryConfig, use_sideinfo: bool = True, steps: int = 100,
                  lr: float = 1.0, seed: int = 0) -> TrainReport:
    """Plain gradient descent on the binding loss.

    ``losses[s]`` and ``accuracies[s]`` are measured before update ``s``;
    the last entry is measured after the final update.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not lr >= 0:
        raise ValueError("lr must be non-negative")
    eff = _effective(cfg, use_sideinfo)
    layer = ToyAttnLayer.init(task.feature_dim, cfg.head_dim, seed)
    losses, accs = [], []
    for step in range(steps + 1):
        try:
            loss, cache = layer_forward(layer, task, eff)
        except NumericError as exc:
            raise TrainingDivergedError(step, float("nan")) from exc
        losses.append(loss)
        accs.append(confusion_argmax(cache.shot_ref, task.bound_refs).accuracy)
        if step == steps:
            break
        grads = layer_backward(layer, cache)
        if lr > 0:
            layer = layer.step(grads, lr)
    final = ShotRefMatrix(cache.shot_ref.copy(),
                          tuple(f"shot_{i}" for i in range(1, len(task.bound_refs) + 1)),
                          tuple(f"ref_{j}" for j in range(1, task.num_refs + 1)))
    config = {"rotary": eff.to_dict(), "task": task.config_echo(), "steps": steps, "lr": lr,
              "rng": RNG_ALGORITHM}
    return TrainReport(losses, accs, final, config, seed, use_sideinfo, layer)
