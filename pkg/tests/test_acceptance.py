"""Acceptance criteria 1-10, each at its stated tolerance.

Thresholds that depend on the synthetic benchmark are frozen from
calibration/calibration_report.json, which was produced on seeds 1000-1099
(disjoint from the seeds used here) by scripts/calibrate.py.
"""

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from sideinfo_rope import bench, checks
from sideinfo_rope.attention import apply_positional, token_angles
from sideinfo_rope.cli import main
from sideinfo_rope.rope_core import Realloc, RotaryConfig, apply_rotation, build_plane_schedule, channel_provenance

ROOT = Path(__file__).resolve().parent.parent
CALIBRATION = json.loads((ROOT / "calibration" / "calibration_report.json").read_text())
SNAPSHOTS = Path(__file__).parent / "snapshots"

T_BASE = 0.84
TRAIN_THRESHOLD = 1.0
ACCEPTANCE_SEEDS = tuple(range(100))
TRAIN_SEEDS = tuple(range(20))
C9_PARTS: dict[str, tuple[bool, str]] = {}


def record(n: int, ok: bool, text: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {text}"
    ACCEPTANCE_LINES[n] = line
    print(line)


def test_frozen_thresholds_match_calibration_report():
    assert CALIBRATION["T_base"] == T_BASE
    assert CALIBRATION["training"]["with_sideinfo_threshold"] == TRAIN_THRESHOLD
    lo, hi = CALIBRATION["config"]["seeds"]
    assert not set(range(lo, hi + 1)) & set(ACCEPTANCE_SEEDS)
    lo, hi = CALIBRATION["training"]["seeds"]
    assert not set(range(lo, hi + 1)) & set(TRAIN_SEEDS)


def test_c1_oracle_equivalence():
    t0 = time.perf_counter()
    r = checks.check_oracle_equivalence(10_000, tol=1e-9)
    dt = time.perf_counter() - t0
    ok = r.passed and r.cases == 10_000 and dt < 10.0
    record(1, ok, f"oracle equivalence worst={r.worst:.2e} (tol 1e-9) over {r.cases} draws in {dt:.1f}s (limit 10s)")
    assert ok


def test_c2_rotation_invariants():
    results = [checks.check_norm_preservation(10_000), checks.check_rotation_blocks(10_000),
               checks.check_composition(10_000)]
    ok = all(r.passed and r.cases == 10_000 and r.tolerance == 1e-12 for r in results)
    record(2, ok, "; ".join(f"{r.name} worst={r.worst:.2e}" for r in results) + " (tol 1e-12, 1e4 cases each)")
    assert ok


def test_c3_sideinfo_reductions():
    a = checks.check_no_side_is_3d(200)
    b = checks.check_matched_side_neutral(1000, tol=1e-12)
    c = [checks.check_single_mismatch_attenuation(1000, tol=1e-12, realloc=r) for r in (Realloc.TLOW, Realloc.THIGH)]
    ok = a.passed and a.worst == 0.0 and b.passed and all(x.passed for x in c)
    record(3, ok, f"(a) d_s=0 mismatches={int(a.worst)}/{a.cases}; (b) worst={b.worst:.2e}; "
                  f"(c) worst={max(x.worst for x in c):.2e} (tol 1e-12, 1e3 vectors)")
    assert ok


def test_c4_hierarchical_mask_fuzz():
    r = checks.check_mask_fuzz(500)
    ok = r.passed and r.cases == 500
    record(4, ok, f"{r.cases} fuzzed layouts, failures={int(r.worst)} {r.detail}".rstrip())
    assert ok


def _retrieval(rho: float):
    cfg = bench.RunConfig(seeds=ACCEPTANCE_SEEDS, rhos=(rho,), train=bench.TrainParams(enabled=False))
    t0 = time.perf_counter()
    report = bench.confusion_bench(cfg)
    return report, time.perf_counter() - t0


def test_c5_reference_confusion_benchmark():
    report, dt = _retrieval(0.95)
    rows = report["per_seed"]
    acc_with = float(np.mean([r["accuracy_with"] for r in rows]))
    acc_without = float(np.mean([r["accuracy_without"] for r in rows]))
    not_dominant = [r["seed"] for r in rows if not r["bound_dominant_with"]]
    ok = len(rows) == 100 and acc_with == 1.0 and acc_without <= T_BASE and not not_dominant and dt < 60.0
    record(5, ok, f"rho=0.95 K=2 100 seeds: with={acc_with:.2f} without={acc_without:.4f} (T_base {T_BASE}); "
                  f"non-dominant seeds={not_dominant}; {dt:.1f}s (limit 60s)")
    assert ok


def test_c6_identical_reference_separation():
    report, _ = _retrieval(1.0)
    failing = [r["seed"] for r in report["per_seed"] if r["accuracy_with"] != 1.0]
    ok = len(report["per_seed"]) == 100 and not failing
    record(6, ok, f"rho=1.0 with side info: {100 - len(failing)}/100 seeds at accuracy 1.00; failing={failing}")
    assert ok


def test_c7_gradient_correctness():
    params = bench.GradCheckParams(draws=200, eps=1e-5, tol=1e-6)
    result = bench.grad_check(params)
    # every failure (and a sample of passes) must reproduce from its seed alone
    probe = result["failing_seeds"] + [0, 199]
    reproducible = all(
        bench.grad_check_draw(s, params.eps)["max_rel_error"]
        == next(d for d in result["per_draw"] if d["seed"] == s)["max_rel_error"]
        for s in probe
    )
    ok = result["draws"] == 200 and result["pass_fraction"] >= 0.99 and reproducible
    record(7, ok, f"pass fraction {result['pass_fraction']:.3f} (need 0.99) over 200 draws, "
                  f"worst rel error {result['worst_rel_error']:.2e} (tol 1e-6); failing seeds={result['failing_seeds']}")
    assert ok


def test_c8_training_ablation_direction():
    cfg = bench.RunConfig(seeds=TRAIN_SEEDS)
    t0 = time.perf_counter()
    rows = bench.map_seeds(lambda s: bench.training_trial(cfg, s), cfg.seeds)
    dt = time.perf_counter() - t0
    min_with = min(r["accuracy_with"] for r in rows)
    better = sum(r["accuracy_with"] > r["accuracy_without"] for r in rows) / len(rows)
    ok = len(rows) == 20 and min_with >= TRAIN_THRESHOLD and better >= 0.90 and dt < 300.0
    record(8, ok, f"rho=0.98, 20 paired seeds: min with-side accuracy {min_with:.2f} (threshold {TRAIN_THRESHOLD}); "
                  f"strictly better on {better:.2f} (need 0.90); {dt:.1f}s (limit 300s)")
    assert ok


def _positional_invariants(cfg: RotaryConfig, n: int = 10_000) -> float:
    """Norm preservation and additivity of the full per-token rotation for one config."""
    rng = np.random.default_rng(11)
    sched = build_plane_schedule(cfg)
    c1 = [checks.random_coord(rng, cfg.num_refs) for _ in range(n)]
    c2 = [checks.random_coord(rng, cfg.num_refs) for _ in range(n)]
    x = rng.standard_normal((n, cfg.head_dim))
    r1 = apply_positional(x, c1, schedule=sched)
    worst = np.abs(np.linalg.norm(r1, axis=1) - np.linalg.norm(x, axis=1)).max()
    a1, a2 = token_angles(c1, sched), token_angles(c2, sched)
    for i in range(0, n, 500):
        twice = apply_rotation(apply_rotation(x[i], a1[i]), a2[i])
        worst = max(worst, np.abs(twice - apply_rotation(x[i], a1[i] + a2[i])).max())
    return float(worst)


@pytest.mark.parametrize("realloc", [Realloc.TLOW, Realloc.THIGH])
def test_c9_realloc_variants(realloc):
    cfg = RotaryConfig.from_pre_realloc(32, 12, 10, 10, num_refs=2, realloc=realloc)
    sched = build_plane_schedule(cfg)
    valid = [p.index for p in sched] == list(range(1, 17)) and len(sched.side_coefficients) == 2
    c1 = checks.check_oracle_equivalence(10_000, tol=1e-9, realloc=realloc)
    c2 = _positional_invariants(cfg)
    c3b = checks.check_matched_side_neutral(1000, tol=1e-12, realloc=realloc)
    c3c = checks.check_single_mismatch_attenuation(1000, tol=1e-12, realloc=realloc)
    c3a = checks.check_no_side_is_3d(200)  # the d_s=0 reduction every variant collapses to
    snap = json.loads((SNAPSHOTS / f"provenance_{realloc.value}.json").read_text())
    matches = channel_provenance(cfg) == snap
    ok = valid and c1.passed and c2 <= 1e-12 and c3a.passed and c3b.passed and c3c.passed and matches
    text = (f"{realloc.value}: schedule valid={valid}, oracle worst={c1.worst:.2e}, invariants worst={c2:.2e}, "
            f"side identities worst={max(c3b.worst, c3c.worst):.2e}, provenance snapshot match={matches}")
    C9_PARTS[realloc.value] = (ok, text)
    record(9, all(p[0] for p in C9_PARTS.values()), " | ".join(p[1] for p in C9_PARTS.values()))
    assert ok


def test_c10_determinism(tmp_path, capsys):
    out = tmp_path / "bench"
    outputs = []
    for _ in range(2):
        assert main(["confusion-bench", "--out", str(out)]) == 0
        outputs.append({n: (out / n).read_bytes() for n in ("confusion_bench.json", "confusion_bench.csv")})
    capsys.readouterr()
    ok = outputs[0] == outputs[1]
    record(10, ok, f"two confusion-bench runs (default config, 20 seeds, training on): "
                   f"reports byte-identical={ok} ({len(outputs[0]['confusion_bench.json'])} bytes)")
    assert ok
