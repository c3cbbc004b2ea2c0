"""Command-line front end.

    iqcrobust analyze --config cfg.json --out-dir out
    iqcrobust fig4 --out-dir out
    iqcrobust fig5 --out-dir out
    iqcrobust selftest [--quick]
    iqcrobust export-sdpa [--config cfg.json] --out-dir out

Exit codes: 0 success, 1 self-test failure, 2 invalid config or usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, experiments as ex
from .config import ConfigError, config_hash, load, run_point, sweep_values

log = logging.getLogger("iqcrobust")


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _certificates_doc(certs: list, provenance: dict) -> str:
    return json.dumps({"provenance": provenance, "certificates": certs}, indent=1, sort_keys=True) + "\n"


def _provenance(args, cfg_hash: str | None = None) -> dict:
    out = {"package": "iqcrobust", "version": __version__, "schema": 1, "solver": args.solver, "seed": args.seed}
    if cfg_hash is not None:
        out["config_hash"] = cfg_hash
    return out


def cmd_analyze(args) -> int:
    try:
        cfg = load(args.config)
    except ConfigError as exc:
        for msg in exc.messages:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    solver = args.solver or cfg.get("options", {}).get("solver", "reference")
    workers = args.workers or cfg.get("options", {}).get("workers", 1)
    alphas = sweep_values(cfg)
    points = ex.parallel_map(_AnalyzePoint(cfg, solver), alphas, workers)
    rows = []
    for pt in points:
        row = pt.row()
        if args.no_timing:
            row["solve_ms"] = None
        rows.append(row)
    out = Path(args.out_dir)
    _write(out / "results.csv", ex.results_csv(rows))
    certs = [pt.certificate for pt in points if pt.certificate is not None]
    _write(out / "certificates.json", _certificates_doc(certs, _provenance(args, config_hash(cfg)) | {"solver": solver}))
    for pt in points:
        log.info("alpha=%g verdict=%s bound=%s", pt.alpha, pt.verdict, pt.bound)
    return 0


class _AnalyzePoint:
    """Picklable per-point task for the process pool."""

    def __init__(self, cfg, solver):
        self.cfg, self.solver = cfg, solver

    def __call__(self, alpha):
        return run_point(self.cfg, alpha, self.solver)


def _figure(args, name: str) -> int:
    solver = args.solver or "reference"
    workers = args.workers or 1
    if name == "fig4":
        alphas = ex.FIG4_ALPHAS[::3] if args.quick else ex.FIG4_ALPHAS
        table = ex.fig4(solver, workers, alphas)
    else:
        alphas = ex.FIG5_ALPHAS[::2] if args.quick else ex.FIG5_ALPHAS
        table = ex.fig5(solver, workers, alphas)
    out = Path(args.out_dir)
    _write(out / f"{name}.csv", table.to_csv())
    if table.margins:
        _write(out / f"{name}_margins.csv", ex.margins_csv(table.margins))
    _write(out / f"{name}_certificates.json", _certificates_doc(table.certificates, _provenance(args)))
    return 0


def cmd_fig4(args) -> int:
    return _figure(args, "fig4")


def cmd_fig5(args) -> int:
    return _figure(args, "fig5")


def _suite(name: str, ok: bool, detail: str) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def cmd_selftest(args) -> int:
    """KYP batch, terminal-cost IQC Monte-Carlo, bound dominance and certificate replay."""
    quick = args.quick
    seed = args.seed
    solver = args.solver or "reference"
    results = []

    kyp = ex.kyp_batch(seed, 20 if quick else 100, solver)
    bad = [r for r in kyp.decided if not r.agree]
    results.append(_suite("kyp", kyp.passed, f"{len(kyp.decided)} decided, {len(bad)} disagreements, {kyp.seconds:.1f}s"))

    iqc = ex.iqc_monte_carlo(seed, deltas=10 if quick else 50, inputs=5 if quick else 20,
                             control_deltas=5 if quick else 10, solver=solver)
    results.append(_suite("iqc", iqc.passed, f"worst slack/energy {iqc.worst_relative_slack:.3e}, "
                          f"{iqc.violations} violations, negative control {iqc.control_violations} violations"))

    points = {"ex1": (10.0,), "ers": (0.94,)} if quick else None
    dom = ex.bound_dominance(seed, runs=20 if quick else 200, points=points, solver=solver,
                             workers=args.workers or 1)
    worst = max(dom, key=lambda d: d.ratio)
    results.append(_suite("dominance", all(d.passed for d in dom),
                          f"{len(dom)} points, worst peak/bound {worst.ratio:.4f} ({worst.example} alpha={worst.alpha:g})"))

    certs = []
    for example, alphas in (("ex1", (10.0,)), ("ers", (0.94,))):
        for decls in ex.EXAMPLE_COLUMNS[example].values():
            res = run_point(ex.column_config(example, decls), alphas[0], solver)
            if res.certificate is not None:
                certs.append(res.certificate)
    if args.certificates:
        with open(args.certificates) as fh:
            certs += json.load(fh)["certificates"]
    replays = ex.replay_certificates(certs)
    ok = all(r.blocks_ok and r.containment_ok is not False for r in replays)
    results.append(_suite("replay", ok, f"{sum(r.blocks_ok for r in replays)}/{len(replays)} certificates pass"))
    return 0 if all(results) else 1


def cmd_export_sdpa(args) -> int:
    if args.config:
        try:
            cfg = load(args.config)
        except ConfigError as exc:
            for msg in exc.messages:
                print(f"config error: {msg}", file=sys.stderr)
            return 2
        if "performance" not in cfg:
            print("config error: export-sdpa needs a performance spec", file=sys.stderr)
            return 2
        name = cfg.get("name", "instance")
        instances = [(f"{name}_{a:g}", cfg, a) for a in sweep_values(cfg)]
    else:
        instances = ex.sweep_instances()
    written = ex.export_sdpa(instances, args.out_dir, args.solver or "reference")
    index = {"provenance": _provenance(args), "instances": [
        {"label": e.label, "file": Path(e.path).name, "reference_objective": e.reference_objective, "recipe": e.recipe}
        for e in written
    ]}
    _write(Path(args.out_dir) / "index.json", json.dumps(index, indent=1, sort_keys=True) + "\n")
    print(f"exported {len(written)} instances to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="out", help="directory for CSV/JSON artifacts")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--solver", choices=["reference", "external"], default=None)
    common.add_argument("--workers", type=int, default=None, help="worker processes for sweep points")
    common.add_argument("--quick", action="store_true", help="reduced sample counts")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="iqcrobust", description="IQC robustness analysis with dissipation LMIs")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="run a JSON-configured sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--no-timing", action="store_true", help="leave solve_ms empty for byte-reproducible CSV")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fig4", parents=[common], help="bounds and margins for the saturated second-order loop")
    p.set_defaults(func=cmd_fig4)

    p = sub.add_parser("fig5", parents=[common], help="bounds for the loop with a dynamic uncertainty")
    p.set_defaults(func=cmd_fig5)

    p = sub.add_parser("selftest", parents=[common], help="KYP, IQC, dominance and replay suites")
    p.add_argument("--certificates", help="extra certificates.json to replay")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("export-sdpa", parents=[common], help="write performance SDPs in SDPA sparse format")
    p.add_argument("--config")
    p.set_defaults(func=cmd_export_sdpa)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    t0 = time.perf_counter()
    code = args.func(args)
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
