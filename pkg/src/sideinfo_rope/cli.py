"""Command-line entry point.

Precedence: built-in defaults < ``--config`` file < command-line flags.
Exit codes: 0 success, 1 check/benchmark failure, 2 config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import bench, checks
from .attention import hierarchical_mask
from .diagnostics import ShotRefMatrix
from .errors import ConfigError, LayoutError, PromptParseError
from .layout import Manifest

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _load_config(args) -> bench.RunConfig:
    cfg = bench.RunConfig.load(args.config) if args.config else bench.RunConfig()
    return bench.with_overrides(cfg, args.seed, args.out)


def _out_dir(cfg: bench.RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta_comment(cfg: bench.RunConfig, command: str) -> str:
    return "# " + json.dumps(bench.envelope(cfg, command), sort_keys=True, separators=(",", ":")) + "\n"


def _matrix_csv(m: ShotRefMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["shot", *m.col_labels])
    for label, row in zip(m.row_labels, m.values):
        w.writerow([label, *(format(float(x), ".17g") for x in row)])
    return buf.getvalue()


def cmd_check(args) -> int:
    # validates the config even though the suite itself is config-independent
    _load_config(args)
    results = checks.run_all(fast=args.fast)
    ok = all(r.passed for r in results)
    if args.json:
        print(json.dumps({"passed": ok, "checks": [r.to_dict() for r in results]}, indent=2))
    else:
        for r in results:
            print(r.line())
        print("ALL PASS" if ok else "FAILURES")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_confusion_bench(args) -> int:
    cfg = _load_config(args)
    if args.no_train:
        cfg = replace(cfg, train=replace(cfg.train, enabled=False))
    report = bench.confusion_bench(cfg)
    out = _out_dir(cfg)
    (out / "confusion_bench.json").write_text(bench.dumps(report))
    (out / "confusion_bench.csv").write_text(_meta_comment(cfg, "confusion-bench") + bench.bench_csv(report))
    bench.write_meta(out / "confusion_bench.meta.json")
    if args.json:
        print(json.dumps(report["summary"], indent=2, sort_keys=True))
    else:
        for row in report["summary"]["retrieval"]:
            print(f"rho={row['rho']:<5} retrieval accuracy with={row['mean_accuracy_with']:.4f} "
                  f"without={row['mean_accuracy_without']:.4f}")
        tr = report["summary"].get("training")
        if tr:
            print(f"training rho={tr['rho']} accuracy with={tr['mean_accuracy_with']:.4f} "
                  f"without={tr['mean_accuracy_without']:.4f} "
                  f"strictly-better={tr['fraction_with_strictly_better']:.2f}")
        print(f"wrote {out / 'confusion_bench.json'}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = _load_config(args)
    result = bench.grad_check(cfg.grad_check)
    out = _out_dir(cfg)
    doc = {**bench.envelope(cfg, "grad-check"), "result": result}
    (out / "grad_check.json").write_text(bench.dumps(doc))
    bench.write_meta(out / "grad_check.meta.json")
    summary = {k: result[k] for k in ("draws", "worst_rel_error", "pass_fraction", "failing_seeds", "passed")}
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(f"worst relative error {result['worst_rel_error']:.3e} over {result['draws']} draws "
              f"(tol {result['tol']:.0e}); pass fraction {result['pass_fraction']:.3f}")
        if result["failing_seeds"]:
            print(f"failing seeds: {result['failing_seeds']}")
    return EXIT_OK if result["passed"] else EXIT_FAIL


def cmd_mask_dump(args) -> int:
    cfg = _load_config(args)
    try:
        manifest = Manifest.load(args.manifest)
    except OSError as exc:
        print(f"error: cannot read manifest {args.manifest}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed manifest {args.manifest}: {exc}") from exc
    layout, coords = manifest.build()
    mask = hierarchical_mask(layout)
    out = _out_dir(cfg)
    header = "# " + json.dumps({"schema_version": bench.SCHEMA_VERSION, "tool": bench.TOOL,
                                "tool_version": __version__, "manifest": manifest.to_dict()},
                               sort_keys=True, separators=(",", ":")) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", *(f"text_{j}" for j in range(layout.num_text))])
    for i, row in enumerate(mask.bits):
        w.writerow([i, *(int(b) for b in row)])
    (out / "mask.csv").write_text(header + buf.getvalue())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["token", "t", "h", "w", "side"])
    for i, c in enumerate(coords):
        w.writerow([i, c.t, c.h, c.w, c.side.to_string()])
    (out / "coords.csv").write_text(header + buf.getvalue())
    (out / "layout.json").write_text(bench.dumps({"schema_version": bench.SCHEMA_VERSION, "tool": bench.TOOL,
                                                  "tool_version": __version__, "layout": layout.to_dict()}))
    if not args.json:
        print(f"L_v={layout.num_visual} L_t={layout.num_text}; wrote mask.csv, coords.csv, layout.json to {out}")
    else:
        print(json.dumps(layout.to_dict(), indent=2))
    return EXIT_OK


def cmd_heatmap(args) -> int:
    cfg = _load_config(args)
    with_, without, bound = bench.heatmap_pair(cfg)
    out = _out_dir(cfg)
    for name, m in (("with", with_), ("without", without)):
        (out / f"heatmap_{name}_sideinfo.csv").write_text(_meta_comment(cfg, "heatmap") + _matrix_csv(m))
    doc = {**bench.envelope(cfg, "heatmap"), "bound_refs": list(bound),
           "with_sideinfo": with_.to_dict(), "without_sideinfo": without.to_dict()}
    (out / "heatmap.json").write_text(bench.dumps(doc))
    if args.json:
        print(json.dumps({"with": with_.values.tolist(), "without": without.values.tolist()}))
    else:
        print(f"bound refs: {list(bound)}")
        for name, m in (("with side info", with_), ("without side info", without)):
            print(name)
            print(_matrix_csv(m), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config")
    common.add_argument("--seed", type=int, action="append", metavar="N", help="seed (repeatable); replaces config seeds")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--json", action="store_true", help="machine-readable stdout")

    p = argparse.ArgumentParser(prog="sideinfo-rope", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="run the invariant suite")
    c.add_argument("--fast", action="store_true", help="one tenth of the cases")
    c.set_defaults(func=cmd_check)

    c = sub.add_parser("confusion-bench", parents=[common], help="paired with/without side-info benchmark")
    c.add_argument("--no-train", action="store_true", help="skip the training comparison")
    c.set_defaults(func=cmd_confusion_bench)

    c = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient check")
    c.set_defaults(func=cmd_grad_check)

    c = sub.add_parser("mask-dump", parents=[common], help="hierarchical mask and coordinates for a manifest")
    c.add_argument("manifest", help="layout manifest (JSON)")
    c.set_defaults(func=cmd_mask_dump)

    c = sub.add_parser("heatmap", parents=[common], help="shot-to-reference attention with and without side info")
    c.set_defaults(func=cmd_heatmap)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LayoutError, PromptParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
