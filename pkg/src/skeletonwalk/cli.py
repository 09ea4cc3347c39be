"""Command-line entry point.

Usage::

    skeletonwalk SUBCOMMAND --config FILE [--key value ...]

Every config key has a flag of the same name (``--n_paths 1000``, also
``--n-paths``); flags override the file.  ``SKELETONWALK_OUTPUT_DIR`` sets
the output directory and is itself overridden by ``--output_dir``.

Exit status: 0 when every theorem-backed check passes, 1 when one fails,
2 when the configuration is invalid.

Output files
------------
skeleton_k{k}_p{p}.csv
    n, time, sign, value.  Row 0 is the start (empty sign); row n is the
    n-th retained stopping time T_n with sign sigma_n and walk value A_{T_n}.
projected_k{k}_p{p}.csv
    the skeleton columns plus node_value d[n], jump d[n] - d[n-1] and the
    discrete derivative jump / (A_{T_n} - A_{T_{n-1}}).
exit_law.csv, simulate_levels.csv, martingale_bins.csv, counterexample.csv,
covariation.csv, derivative_rates.csv, jump_bound.csv
    one row per level, bin or coupled path; columns listed in the manifest.
summary.json
    verdicts, fitted slopes, intervals, seed and config hash.
manifest.json
    config echo, version, wall-clock, verdicts and sha256 of every file.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import PARSERS, SUBCOMMANDS, ConfigError, parse_config
from .functionals import FunctionalConfigError
from .runner import OUTPUT_DIR_ENV, run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skeletonwalk", description=__doc__.split("\n")[0])
    ap.add_argument("subcommand", choices=list(SUBCOMMANDS) + ["all"])
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    for key in PARSERS:
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        ap.add_argument(*flags, dest=key, default=None, metavar="VALUE")
    ap.add_argument("--quiet", action="store_true", help="print only the status line")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text() if args.config else ""
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    overrides = {k: getattr(args, k) for k in PARSERS if getattr(args, k) is not None}
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir and "output_dir" not in overrides:
        overrides["output_dir"] = env_dir
    try:
        cfg = parse_config(text, overrides)
        result = run(args.subcommand, cfg)
    except (ConfigError, FunctionalConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        for name, check in result.checks.items():
            tag = "PASS" if check.passed else "FAIL"
            kind = "theorem" if check.theorem_backed else "report"
            print(f"{tag} [{kind}] {name}: {check.detail}")
    print(f"status {result.status}; outputs in {result.output_dir}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
