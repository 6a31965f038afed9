"""Run configuration and the drivers behind the CLI commands.

Reports are plain dicts serialised with sorted keys; anything that varies
between identical runs (timestamps, thread counts) goes to a ``.meta.json``
sidecar so the main artifacts stay byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .diagnostics import SCHEMA_VERSION, ShotRefMatrix, is_bound_dominant
from .errors import ConfigError
from .harness import (DEFAULT_FEATURE_DIM, DEFAULT_HEADS, DEFAULT_NOISE, DEFAULT_TOKENS_PER_SHOT, RNG_ALGORITHM,
                      gen_confusion_task, run_retrieval, substream)
from .rope_core import RotaryConfig
from .toylayer import ToyAttnLayer, layer_backward, layer_forward, numeric_gradients, relative_error, train_binding

TOOL = "sideinfo-rope"


@dataclass(frozen=True)
class TaskParams:
    num_refs: int = 2
    feature_dim: int = DEFAULT_FEATURE_DIM
    rho: float = 0.95
    shots_per_ref: int = 2
    tokens_per_shot: int = DEFAULT_TOKENS_PER_SHOT
    noise: float = DEFAULT_NOISE
    num_heads: int = DEFAULT_HEADS


@dataclass(frozen=True)
class TrainParams:
    enabled: bool = True
    rho: float = 0.98
    shots_per_ref: int = 8
    steps: int = 50
    lr: float = 1.0


@dataclass(frozen=True)
class GradCheckParams:
    draws: int = 200
    eps: float = 1e-5
    tol: float = 1e-6
    min_pass_fraction: float = 0.99
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    rotary: RotaryConfig = field(default_factory=RotaryConfig)
    task: TaskParams = field(default_factory=TaskParams)
    train: TrainParams = field(default_factory=TrainParams)
    grad_check: GradCheckParams = field(default_factory=GradCheckParams)
    seeds: tuple[int, ...] = tuple(range(20))
    rhos: tuple[float, ...] | None = None
    out: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        t = self.task
        if t.num_refs != self.rotary.num_refs:
            raise ConfigError(f"task.num_refs={t.num_refs} differs from rotary.num_refs={self.rotary.num_refs}")
        if t.num_refs < 2:
            raise ConfigError("the confusion benchmark needs num_refs >= 2")
        if t.feature_dim < max(t.num_refs + 1, self.rotary.head_dim):
            raise ConfigError(f"feature_dim={t.feature_dim} must be >= max(K+1, head_dim)")
        for name, rho in [("task.rho", t.rho), ("train.rho", self.train.rho), *(("rhos", r) for r in self.rhos or ())]:
            if not 0.0 <= rho <= 1.0:
                raise ConfigError(f"{name}={rho} outside [0, 1]")
        if min(t.shots_per_ref, t.tokens_per_shot, t.num_heads, self.train.shots_per_ref) < 1:
            raise ConfigError("shot, token and head counts must be positive")
        if t.noise < 0:
            raise ConfigError("noise must be non-negative")
        if self.train.steps < 1 or self.train.lr < 0:
            raise ConfigError("train.steps must be >= 1 and train.lr >= 0")
        g = self.grad_check
        if g.draws < 1 or not g.eps > 0 or not g.tol > 0:
            raise ConfigError("grad_check needs draws >= 1, eps > 0, tol > 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")

    def to_dict(self) -> dict:
        return {
            "rotary": self.rotary.to_dict(),
            "task": asdict(self.task),
            "train": asdict(self.train),
            "grad_check": asdict(self.grad_check),
            "seeds": list(self.seeds),
            "rhos": list(self.rhos) if self.rhos is not None else None,
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        known = {"rotary", "task", "train", "grad_check", "seeds", "rhos", "out"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        kwargs = {}
        if "rotary" in data:
            kwargs["rotary"] = RotaryConfig.from_dict(data["rotary"])
        for key, typ in (("task", TaskParams), ("train", TrainParams), ("grad_check", GradCheckParams)):
            if key in data:
                kwargs[key] = _sub(typ, data[key], key)
        if "seeds" in data:
            kwargs["seeds"] = tuple(data["seeds"])
        if data.get("rhos") is not None:
            kwargs["rhos"] = tuple(float(r) for r in data["rhos"])
        if "out" in data:
            kwargs["out"] = str(data["out"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)


def _sub(typ, data: dict, section: str):
    names = {f.name for f in fields(typ)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown field(s) in {section}: {sorted(unknown)}")
    try:
        return typ(**data)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def thread_count() -> int:
    """Worker cap from ``POCO_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("POCO_THREADS", "0")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"POCO_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ConfigError("POCO_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def map_seeds(fn: Callable[[int], dict], seeds: Iterable[int], threads: int | None = None) -> list[dict]:
    """Run ``fn`` per seed and return results sorted by seed, however they were scheduled."""
    seeds = sorted(set(seeds))
    threads = threads or thread_count()
    if threads <= 1 or len(seeds) <= 1:
        results = [fn(s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fn, seeds))
    return sorted(results, key=lambda r: r["seed"])


def envelope(cfg: RunConfig, command: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": TOOL,
        "tool_version": __version__,
        "command": command,
        "config": cfg.to_dict(),
        "seeds": sorted(set(cfg.seeds)),
        "rng": RNG_ALGORITHM,
    }


def retrieval_trial(cfg: RunConfig, rho: float, seed: int) -> dict:
    t = cfg.task
    task = gen_confusion_task(t.num_refs, t.feature_dim, rho, t.shots_per_ref, t.tokens_per_shot, seed, t.noise)
    with_ = run_retrieval(task, cfg.rotary, True, t.num_heads)
    without = run_retrieval(task, cfg.rotary, False, t.num_heads)
    return {
        "seed": seed,
        "rho": rho,
        "bound_refs": list(task.bound_refs),
        "accuracy_with": with_.accuracy,
        "accuracy_without": without.accuracy,
        "bound_dominant_with": is_bound_dominant(with_.attn, task.bound_refs),
        "attn_with": with_.attn.values.tolist(),
        "attn_without": without.attn.values.tolist(),
    }


def training_trial(cfg: RunConfig, seed: int) -> dict:
    t, tr = cfg.task, cfg.train
    task = gen_confusion_task(t.num_refs, t.feature_dim, tr.rho, tr.shots_per_ref, t.tokens_per_shot, seed, t.noise)
    a = train_binding(task, cfg.rotary, True, tr.steps, tr.lr, seed)
    b = train_binding(task, cfg.rotary, False, tr.steps, tr.lr, seed)
    return {
        "seed": seed,
        "accuracy_with": a.final_accuracy,
        "accuracy_without": b.final_accuracy,
        "initial_accuracy_with": a.accuracies[0],
        "initial_accuracy_without": b.accuracies[0],
        "loss_with": [a.losses[0], a.losses[-1]],
        "loss_without": [b.losses[0], b.losses[-1]],
        "attn_with": a.final_attn.values.tolist(),
        "attn_without": b.final_attn.values.tolist(),
    }


def _mean(xs: Sequence[float]) -> float:
    return float(math.fsum(xs) / len(xs)) if xs else float("nan")


def confusion_bench(cfg: RunConfig, threads: int | None = None) -> dict:
    rhos = cfg.rhos if cfg.rhos is not None else (cfg.task.rho,)
    report = envelope(cfg, "confusion-bench")
    per_seed, summary = [], []
    for rho in rhos:
        rows = map_seeds(lambda s: retrieval_trial(cfg, rho, s), cfg.seeds, threads)
        per_seed.extend(rows)
        summary.append({
            "rho": rho,
            "mean_accuracy_with": _mean([r["accuracy_with"] for r in rows]),
            "mean_accuracy_without": _mean([r["accuracy_without"] for r in rows]),
            "all_bound_dominant_with": all(r["bound_dominant_with"] for r in rows),
        })
    report["per_seed"] = per_seed
    report["summary"] = {"retrieval": summary}
    if cfg.train.enabled:
        rows = map_seeds(lambda s: training_trial(cfg, s), cfg.seeds, threads)
        report["training"] = rows
        report["summary"]["training"] = {
            "rho": cfg.train.rho,
            "mean_accuracy_with": _mean([r["accuracy_with"] for r in rows]),
            "mean_accuracy_without": _mean([r["accuracy_without"] for r in rows]),
            "min_accuracy_with": min(r["accuracy_with"] for r in rows),
            "fraction_with_strictly_better": _mean([float(r["accuracy_with"] > r["accuracy_without"]) for r in rows]),
        }
    return report


def bench_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "rho", "seed", "accuracy_with", "accuracy_without"])
    for r in report["per_seed"]:
        w.writerow(["retrieval", repr(r["rho"]), r["seed"], repr(r["accuracy_with"]), repr(r["accuracy_without"])])
    for r in report.get("training", []):
        w.writerow(["training", repr(report["config"]["train"]["rho"]), r["seed"],
                    repr(r["accuracy_with"]), repr(r["accuracy_without"])])
    return buf.getvalue()


GRAD_CHECK_ROTARY = RotaryConfig(head_dim=12, d_t=4, d_h=2, d_w=2, d_s=4, num_refs=2)


def grad_check_draw(seed: int, eps: float = 1e-5) -> dict:
    """One random (parameters, sample) draw compared against central differences on every entry."""
    rng = substream(seed, "grad_check")
    use_side = bool(rng.integers(0, 2))
    cfg = GRAD_CHECK_ROTARY if use_side else GRAD_CHECK_ROTARY.without_sideinfo()
    task = gen_confusion_task(2, 6, float(rng.uniform(0, 1)), 1, 4, seed, 0.1, ref_grid=(1, 2))
    scale = float(rng.uniform(0.3, 1.5))
    layer = ToyAttnLayer(*(scale * rng.standard_normal((3, task.feature_dim, cfg.head_dim))))
    _, cache = layer_forward(layer, task, cfg)
    analytic = layer_backward(layer, cache)
    numeric = numeric_gradients(layer, task, cfg, eps)
    errs = {k: float(relative_error(analytic[k], numeric[k]).max()) for k in numeric}
    return {"seed": seed, "use_sideinfo": use_side, "max_rel_error": max(errs.values()), "per_param": errs}


def grad_check(params: GradCheckParams, threads: int | None = None) -> dict:
    seeds = range(params.seed, params.seed + params.draws)
    draws = map_seeds(lambda s: grad_check_draw(s, params.eps), seeds, threads)
    failing = [d["seed"] for d in draws if not d["max_rel_error"] < params.tol]
    frac = 1.0 - len(failing) / len(draws)
    return {
        "draws": len(draws),
        "eps": params.eps,
        "tol": params.tol,
        "worst_rel_error": max(d["max_rel_error"] for d in draws),
        "pass_fraction": frac,
        "failing_seeds": failing,
        "passed": frac >= params.min_pass_fraction,
        "per_draw": draws,
    }


def heatmap_pair(cfg: RunConfig) -> tuple[ShotRefMatrix, ShotRefMatrix, tuple[int, ...]]:
    t = cfg.task
    seed = sorted(cfg.seeds)[0]
    task = gen_confusion_task(t.num_refs, t.feature_dim, t.rho, t.shots_per_ref, t.tokens_per_shot, seed, t.noise)
    a = run_retrieval(task, cfg.rotary, True, t.num_heads)
    b = run_retrieval(task, cfg.rotary, False, t.num_heads)
    return a.attn, b.attn, task.bound_refs


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_meta(path: Path, extra: dict | None = None) -> None:
    meta = {"created_unix": time.time(), "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "threads": thread_count(), **(extra or {})}
    path.write_text(json.dumps(meta, indent=2) + "\n")


def with_overrides(cfg: RunConfig, seeds: Sequence[int] | None = None, out: str | None = None) -> RunConfig:
    """Command-line flags take precedence over file fields."""
    changes = {}
    if seeds:
        changes["seeds"] = tuple(seeds)
    if out is not None:
        changes["out"] = out
    return replace(cfg, **changes) if changes else cfg


