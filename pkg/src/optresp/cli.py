"""Batch command-line entry point.

Exit status: 0 success, 1 audit failure, 2 configuration error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import parse_config
from .errors import AuditFailure, ConfigurationError, NumericError
from .experiment import (
    ExperimentContext,
    _write_columns,
    local_maxima,
    ou_oracle_suite,
    run_experiment,
    verify,
)
from .optimal import export_optimal
from .transfer import CACHE_VERSION, norms, write_kernel_csv

log = logging.getLogger("optresp")

CACHE_ENV = "OPTRESP_CACHE_DIR"
EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("build-kernel", "invariant", "optimize", "verify", "reproduce-figures", "ou-check")


def _parser():
    p = argparse.ArgumentParser(prog="optresp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"optresp {__version__} (kernel cache format {CACHE_VERSION})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML/JSON file with flat keys (defaults: symmetric experiment)")
    common.add_argument("-s", "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("-o", "--output", help="output directory (overrides output_dir)")
    common.add_argument("-j", "--threads", type=int, help="worker threads (default: available cores)")
    common.add_argument("--cache-dir", help=f"kernel cache directory (default: ${CACHE_ENV} or <output>/kernel-cache)")
    common.add_argument("--no-cache", action="store_true", help="always rebuild the kernel")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "reproduce-figures":
            sp.add_argument("--asymmetric", action="store_true",
                            help="also run the asymmetric observable (obs_mu=-0.5) into fig4* files")
    return p


def _load(args):
    overrides = list(args.overrides)
    if args.output:
        overrides.append(f"output_dir={args.output}")
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if not any(o.split("=", 1)[0].strip() == "threads" for o in overrides):
        overrides.append(f"threads={threads}")
    config = parse_config(args.config, overrides)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.no_cache:
        cache = None
    else:
        cache = args.cache_dir or os.environ.get(CACHE_ENV) or str(out / "kernel-cache")
    return config, overrides, out, cache


def _dump(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o))


def _status(audits):
    failed = [a for a in audits if a["status"] == "fail"]
    for a in failed:
        log.error("audit failed: %s value=%s threshold=%s %s", a["name"], a["value"], a["threshold"],
                  a.get("detail", ""))
    return EXIT_AUDIT if failed else EXIT_OK


def cmd_build_kernel(config, overrides, out, cache):
    ctx = ExperimentContext(config, cache)
    K = ctx.kernel
    if ctx.cache_status == "hit":
        log.info("cache hit")
    elif ctx.cache_status == "rebuilt":
        log.warning("cache file was corrupt; kernel rebuilt")
    y = config.grid.nodes
    write_kernel_csv(out / "fig1a_kernel.csv", K.values, y, y)
    audits = K.meta["audits"]
    _dump(out / "kernel.json", {"config": config.to_dict(), "overrides": overrides, "cache": ctx.cache_status,
                                "cache_path": K.meta.get("cache"), "audits": audits,
                                "row_mass_range": [float(K.row_masses.min()), float(K.row_masses.max())]})
    return _status(audits)


def cmd_invariant(config, overrides, out, cache):
    ctx = ExperimentContext(config, cache)
    f0 = ctx.f0
    y = config.grid.nodes
    _write_columns(out / "fig1b_f0.csv", {"y": y, "f0": f0.values})
    nr = norms(f0.values, config.grid, 2.0, ctx.restriction)
    _dump(out / "invariant.json", {
        "config": config.to_dict(), "overrides": overrides,
        "eigenvalue": f0.eigenvalue, "residual": f0.residual, "iterations": f0.iterations,
        "lambda2": ctx.gap, "maxima": local_maxima(f0.values, y), "norms": nr.__dict__,
    })
    return _status(ctx.kernel.meta["audits"])


def cmd_optimize(config, overrides, out, cache):
    ctx = ExperimentContext(config, cache)
    table = ctx.table
    table.to_csv(out / "coefficients.csv")
    export_optimal(out / "optimal_pert.csv", out / "optimal_pert.json", ctx.optimal, table, ctx.basis,
                   seed=config.seed, extra={"config": config.to_dict(), "overrides": overrides})
    return EXIT_OK


def cmd_verify(config, overrides, out, cache):
    result = verify(config, cache)
    _dump(out / "verify.json", {"config": config.to_dict(), "overrides": overrides, **result})
    lr = result["linear_response"]
    _write_columns(out / "linear_response_convergence.csv", {
        "delta": [r["delta"] for r in lr["rows"]],
        "l1_error": [r["l1_error"] for r in lr["rows"]],
        "rate_error": [r["rate_error"] for r in lr["rows"]],
    })
    for a in result["audits"]:
        log.info("%-36s %s", a["name"], a["status"])
    return _status(result["audits"])


def cmd_reproduce(config, overrides, out, cache, asymmetric=False):
    report = run_experiment(config, out, cache)
    audits = list(report.audits)
    if asymmetric:
        rep2 = run_experiment(config.replace(obs_mu=-0.5), out, cache)
        report.files = list(dict.fromkeys(report.files + rep2.files))
        audits += rep2.audits
        rep2.write_json(out / "report_asymmetric.json")
    report.metadata["overrides"] = overrides
    report.write_json(out / "report.json")
    log.info("wrote %s", ", ".join(report.files))
    return _status(audits)


def cmd_ou_check(config, overrides, out, cache):
    result = ou_oracle_suite()
    _dump(out / "ou_check.json", result)
    audits = [
        {"name": "ou_error", "status": "pass" if result["rows"][1]["l1_error"] <= 5e-2 else "fail",
         "value": result["rows"][1]["l1_error"], "threshold": 5e-2},
        {"name": "ou_order", "status": "pass" if min(result["ratios"]) >= 1.5 else "fail",
         "value": min(result["ratios"]), "threshold": 1.5},
    ]
    for row in result["rows"]:
        log.info("dx=%g dt=%g L1=%.3e", row["dx"], row["dt"], row["l1_error"])
    return _status(audits)


def dispatch(args) -> int:
    try:
        config, overrides, out, cache = _load(args)
        if args.command == "build-kernel":
            return cmd_build_kernel(config, overrides, out, cache)
        if args.command == "invariant":
            return cmd_invariant(config, overrides, out, cache)
        if args.command == "optimize":
            return cmd_optimize(config, overrides, out, cache)
        if args.command == "verify":
            return cmd_verify(config, overrides, out, cache)
        if args.command == "reproduce-figures":
            return cmd_reproduce(config, overrides, out, cache, args.asymmetric)
        return cmd_ou_check(config, overrides, out, cache)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except AuditFailure as exc:
        log.error("audit failure: %s", exc)
        return EXIT_AUDIT
    except NumericError as exc:
        log.error("numeric error: %s %s", exc, exc.diagnostics or "")
        return EXIT_NUMERIC


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
