"""Command line: ``riskyhjm validate|simulate|verify SCENARIO``.

Exit codes: 0 pass, 2 invalid scenario, 3 verification failed, 1 internal or
I/O error. ``SCENARIO`` is a file path or the name of a bundled scenario.
"""

from __future__ import annotations

import argparse
import csv
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ModelError, PathFailure
from .scenario import BUNDLED, bundled_path, content_hash, parse_scenario, with_steps
from .simulator import WORKERS_ENV, run_scenario, validate_scenario
from .verifier import verify_scenario

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID, EXIT_FAILED = 0, 1, 2, 3
log = logging.getLogger("riskyhjm")


def _resolve(name: str) -> Path:
    p = Path(name)
    if not p.exists() and name in BUNDLED:
        return bundled_path(name)
    return p


def _load(args):
    """``(spec, path, raw bytes)`` with command-line overrides applied."""
    path = _resolve(args.scenario)
    raw = path.read_bytes()
    spec = parse_scenario(raw.decode("utf-8"), str(path))
    if getattr(args, "steps", None):
        spec = with_steps(spec, args.steps)
    if getattr(args, "paths", None):
        spec = replace(spec, n_paths=args.paths)
    if getattr(args, "seed", None) is not None:
        spec = replace(spec, master_seed=args.seed)
    if getattr(args, "tolerance_z", None) is not None:
        spec = replace(spec, tolerance_z=args.tolerance_z)
    return spec, path, raw


def _fmt(x) -> str:
    return "%.17g" % x


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_yaml(path: Path, doc):
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def _manifest(spec, path, raw, timings, ensemble, extra=None):
    doc = {
        "scenario": spec.name,
        "scenario_file": str(path),
        "scenario_hash": content_hash(raw),
        "master_seed": int(spec.master_seed),
        "n_paths": int(spec.n_paths),
        "n_paths_ok": int(ensemble.n_paths),
        "failed_paths": len(ensemble.failures),
        "n_steps": int(spec.grid.n_steps),
        "horizon": float(spec.grid.horizon),
        "timings_seconds": {k: round(v, 3) for k, v in timings.items()},
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    doc.update(extra or {})
    return doc


def _prepare_out(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    spec, path, _ = _load(args)
    rep = validate_scenario(spec)
    if rep.ok:
        print(f"{path}: ok ({spec.name}, {spec.grid.n_steps} steps, {spec.n_paths} paths)")
        return EXIT_OK
    print(f"{path}: {len(rep.violations)} problem(s)")
    for v in rep.violations:
        print(f"  - {v}")
    return EXIT_INVALID


def _checked(spec, path) -> int | None:
    rep = validate_scenario(spec)
    if rep.ok:
        return None
    print(f"{path}: scenario is not admissible", file=sys.stderr)
    for v in rep.violations:
        print(f"  - {v}", file=sys.stderr)
    return EXIT_INVALID


def cmd_simulate(args) -> int:
    spec, path, raw = _load(args)
    bad = _checked(spec, path)
    if bad is not None:
        return bad
    out = _prepare_out(args.out)
    t0 = time.perf_counter()
    ens = run_scenario(spec, workers=args.workers)
    t1 = time.perf_counter()
    _write_csv(out / "surface.csv", ["t", "T", "mean_price", "se_price", "mean_discounted", "se_discounted"],
               ens.mesh_table())
    _write_yaml(out / "manifest.yaml", _manifest(spec, path, raw, {"simulate": t1 - t0}, ens))
    print(f"{spec.name}: {ens.n_paths} paths in {t1 - t0:.1f}s -> {out / 'surface.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    spec, path, raw = _load(args)
    bad = _checked(spec, path)
    if bad is not None:
        return bad
    out = _prepare_out(args.out)
    t0 = time.perf_counter()
    ver, ens = verify_scenario(spec, args.break_condition, args.magnitude, workers=args.workers)
    t1 = time.perf_counter()
    _write_csv(out / "surface.csv", ["t", "T", "mean_price", "se_price", "mean_discounted", "se_discounted"],
               ens.mesh_table())
    _write_csv(out / "martingale.csv", ["t", "T", "mean_discounted", "se", "target", "z"], ver.martingale.rows())
    _write_yaml(out / "report.yaml", ver.summary())
    _write_yaml(out / "manifest.yaml", _manifest(spec, path, raw, {"verify": t1 - t0}, ens,
                                                 {"break_condition": args.break_condition,
                                                  "magnitude": float(args.magnitude)}))
    m = ver.martingale
    print(f"{spec.name}: verdict {ver.verdict}; max |z| {m.max_abs_z:.2f} (threshold {m.threshold:.2f}, "
          f"{m.z.size} mesh points, {m.n_paths} paths)")
    if ver.failing:
        print("failing: " + ", ".join(ver.failing))
    return EXIT_FAILED if ver.verdict == "fail" else EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riskyhjm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"riskyhjm {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, run=True):
        p.add_argument("scenario", help="scenario file or bundled name (" + ", ".join(BUNDLED) + ")")
        p.add_argument("--steps", type=int, help="override the number of grid steps")
        if run:
            p.add_argument("--paths", type=int, help="override n_paths")
            p.add_argument("--seed", type=int, help="override master_seed")
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--workers", type=int, default=None,
                           help=f"worker processes (default: ${WORKERS_ENV} or 1)")

    common(sub.add_parser("validate", help="parse and check a scenario"), run=False)
    common(sub.add_parser("simulate", help="simulate and write mean/SE surfaces"))
    p = sub.add_parser("verify", help="run the martingale, jump and condition checks")
    common(p)
    p.add_argument("--break-condition", choices=("i", "ii", "iv"), default=None,
                   help="inject a violation of this condition before simulating")
    p.add_argument("--magnitude", type=float, default=0.0, help="size of the injected violation")
    p.add_argument("--tolerance-z", type=float, default=None, help="z threshold before widening")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cmd = {"validate": cmd_validate, "simulate": cmd_simulate, "verify": cmd_verify}[args.command]
    try:
        return cmd(args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except PathFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        model = all(isinstance(e, ModelError) for e in exc.failures.values())
        return EXIT_INVALID if model else EXIT_INTERNAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal-error code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
