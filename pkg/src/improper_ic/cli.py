"""Command-line front end.

    improper-ic run SPEC [--seed N] [--jobs N] [--out DIR]
    improper-ic verify [--quick]

``run`` writes ``<out>/<name>.csv`` and ``<out>/<name>.meta.json``.  Exit
status is 0 on success, 1 if any scheme failed on any point (the CSV is still
written, failed rows have ``failed=1``) and 2 for unreadable or invalid specs.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import subprocess
import sys
import time
from pathlib import Path

from . import __version__
from .config import load_spec
from .errors import ConfigurationError

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2
SNR_NOTE = {
    "cellular": "snr_db is the mean direct-link SNR (transmit power minus path loss minus noise power); "
    "grid_value is the transmit power in dBm",
    "other": "snr_db is P/sigma^2 per user in dB",
}


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        )
        desc = out.stdout.strip()
        if desc:
            return f"{__version__}+{desc}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def cmd_run(args) -> int:
    from .montecarlo import sweep, write_csv

    try:
        spec = load_spec(args.spec)
    except OSError as exc:
        print(f"error: cannot read {args.spec}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None:
        if args.seed < 0:
            print("error: --seed must be non-negative", file=sys.stderr)
            return EXIT_INVALID
        spec.seed = args.seed
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / spec.output_name()
    meta_path = csv_path.with_suffix(".meta.json")

    t0 = time.perf_counter()
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    rows = sweep(spec, jobs=args.jobs)
    elapsed = time.perf_counter() - t0
    write_csv(csv_path, rows)
    n_failed = sum(int(r.get("failed", 0)) for r in rows)
    meta = {
        "spec_file": str(args.spec),
        "name": spec.name,
        "seed": spec.seed,
        "config_hash": spec.config_hash(),
        "version": version_string(),
        "python": platform.python_version(),
        "jobs": args.jobs,
        "started": started,
        "timings": {"sweep_seconds": round(elapsed, 3)},
        "rows": len(rows),
        "failed_rows": n_failed,
        "snr_convention": SNR_NOTE["cellular" if spec.is_cellular else "other"],
        "spec": spec.to_dict(),
    }
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {csv_path} ({len(rows)} rows) and {meta_path.name} in {elapsed:.1f} s")
    if n_failed:
        print(f"error: {n_failed} row(s) had failed scheme runs; see failed/n_failed columns", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import format_table, run_checks

    results = run_checks(quick=args.quick, goldens_path=args.goldens)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="improper-ic", description="Improper-signalling precoder experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the sweep described by a spec file")
    run.add_argument("spec", help="YAML experiment spec")
    run.add_argument("--seed", type=int, default=None, help="override the spec's seed")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--out", default="results", help="output directory (default ./results)")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the oracle self-check suite")
    ver.add_argument("--quick", action="store_true", help="reduced instance counts")
    ver.add_argument("--goldens", default=None, help="alternative golden file")
    ver.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
