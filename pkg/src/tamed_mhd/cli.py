"""Command line driver: ``tamed-mhd <command> [options]``.

Exit codes: 0 success, 1 a checked property failed (or a run did not
complete), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (
    a_priori_report,
    feller_modulus,
    make_observable,
    perturbation_direction,
    running_time_average,
    verify_functional_estimates,
)
from .integrator import EXIT_COMPLETED, estimate_strong_order, simulate, twin_simulate
from .io import ConfigError, config_from_document, emit_diagnostics_csv, parse_document, serialize_document, write_snapshot
from .noise import RNG_ALGORITHM, RngStream, validate_assumptions
from .operators import TamingSpec
from .spectral import StatePair, sobolev_norm_sq

log = logging.getLogger("tamed_mhd")

COMMANDS = ("verify", "run", "twin", "ergodic", "order", "apriori", "feller")


class UsageError(Exception):
    pass


def build_id() -> str:
    return f"tamed_mhd {__version__}; numpy {np.__version__}; scipy {scipy.__version__}; python {sys.version.split()[0]}"


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_triple(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}") from exc
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}")
    return vals


def _u64(text: str) -> int:
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config file (defaults when omitted)")
    common.add_argument("--seed", type=_u64, help="master seed, overrides integrator.seed")
    common.add_argument("--out", type=Path, help="output directory, overrides output.dir")
    common.add_argument("--paths", type=int, help="Monte Carlo paths, overrides experiment.paths")
    common.add_argument("--quiet", action="store_true", help="only errors on stderr")

    parser = argparse.ArgumentParser(prog="tamed-mhd", description="Stochastic tamed MHD on the 3-torus")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="functional estimates and coefficient assumptions")
    sub.add_parser("run", parents=[common], help="single trajectory with CSV and snapshots")
    twin = sub.add_parser("twin", parents=[common], help="two trajectories on shared noise")
    twin.add_argument("--delta", type=float, default=1e-3, help="size of the IC perturbation")
    twin.add_argument("--mode", type=_int_triple, default=(1, 0, 0), help="perturbed Fourier mode, e.g. 1,0,0")
    sub.add_parser("ergodic", parents=[common], help="long run with running time averages")
    sub.add_parser("order", parents=[common], help="empirical strong order")
    apr = sub.add_parser("apriori", parents=[common], help="moment bounds across taming levels")
    apr.add_argument("--taming-levels", type=_float_list, help="comma-separated N values")
    sub.add_parser("feller", parents=[common], help="coupled semigroup differences")
    return parser


def _load(args):
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        text = args.config.read_text()
    else:
        text = ""
    doc = parse_document(text)
    if args.seed is not None:
        doc["integrator"]["seed"] = args.seed
    if args.paths is not None:
        if args.paths < 1:
            raise UsageError("--paths must be positive")
        doc["experiment"]["paths"] = args.paths
    if args.out is not None:
        doc["output"]["dir"] = str(args.out)
    cfg = config_from_document(doc)
    return doc, cfg


def _write_metadata(out: Path, doc: dict, cfg, command: str, extra: dict | None = None):
    meta = {
        "command": command,
        "config": doc,
        "config_toml": serialize_document(doc),
        "seed": cfg.seed,
        "stream_id": cfg.stream_id,
        "rng": RNG_ALGORITHM,
        "build": build_id(),
        "stability_proxy": cfg.stability_proxy,
    }
    if extra:
        meta.update(extra)
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj)}")


def _write_rows(path: Path, header, rows):
    lines = [",".join(header)] + [",".join("%.17g" % v if isinstance(v, float) else str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def _write_trajectory(out: Path, traj, N: float, snapshots: bool, csv: bool):
    if csv:
        emit_diagnostics_csv(traj.diagnostics, out / "diagnostics.csv")
    if snapshots:
        for i, (t, y) in enumerate(traj.snapshots):
            write_snapshot(out / f"snap_{i:06d}.stmh", y, t, N)


def cmd_verify(doc, cfg, args, out):
    e = doc["experiment"]
    rep = verify_functional_estimates(cfg.grid, e["verify_samples"], RngStream(cfg.seed, 0), spec=cfg.taming, family=cfg.family)
    val = validate_assumptions(cfg.family, cfg.grid, 1000, RngStream(cfg.seed, 1))
    result = {"functional": {"worst": rep.worst, "failures": rep.failures},
              "assumptions": {"ratios": val.ratios, "violations": val.violations}}
    (out / "verify.json").write_text(json.dumps(result, indent=2, sort_keys=True, default=_jsonable) + "\n")
    for k, v in rep.worst.items():
        log.info("%-12s worst ratio %.6g", k, v)
    for k, v in val.ratios.items():
        log.info("%-16s worst ratio %.6g", k, v)
    return 0 if rep.passed and val.passed else 1, {}


def cmd_run(doc, cfg, args, out):
    traj = simulate(cfg)
    _write_trajectory(out, traj, cfg.taming.N, doc["output"]["snapshots"], doc["output"]["csv"])
    log.info("exit status %s after %d steps", traj.exit_status, traj.metadata["exit_step"])
    return (0 if traj.exit_status == EXIT_COMPLETED else 1), {"exit_status": traj.exit_status, "run": traj.metadata}


def cmd_twin(doc, cfg, args, out):
    if not args.delta > 0:
        raise UsageError("--delta must be positive (delta = 0 gives a degenerate twin)")
    if max(abs(c) for c in args.mode) > cfg.grid.cutoff or not any(args.mode):
        raise UsageError(f"--mode {args.mode} is not a nonzero retained mode")
    y0 = cfg.ic.build(cfg.grid)
    y2 = StatePair(y0.coeffs + args.delta * perturbation_direction(cfg.grid, args.mode), cfg.grid)
    res = twin_simulate(cfg, y2)
    for name, traj in (("a", res.first), ("b", res.second)):
        sub = out / name
        sub.mkdir(exist_ok=True)
        _write_trajectory(sub, traj, cfg.taming.N, doc["output"]["snapshots"], doc["output"]["csv"])
    _write_rows(out / "twin.csv", ("t", "diff_h0_sq", "diff_h1_sq"),
                [(float(t), float(a), float(b)) for t, a, b in zip(res.times, res.diff_h0_sq, res.diff_h1_sq)])
    ok = res.first.exit_status == EXIT_COMPLETED and res.second.exit_status == EXIT_COMPLETED
    return (0 if ok else 1), {"delta": args.delta, "mode": list(args.mode)}


def cmd_ergodic(doc, cfg, args, out):
    traj = simulate(cfg)
    emit_diagnostics_csv(traj.diagnostics, out / "diagnostics.csv")
    obs = doc["experiment"]["ergodic_observable"]
    try:
        rep = running_time_average(traj, obs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _write_rows(out / "running_average.csv", ("T", obs), [(float(t), float(a)) for t, a in zip(rep.times, rep.running_average)])
    _write_rows(out / "histogram.csv", ("lo", "hi", "count"),
                [(float(a), float(b), int(c)) for a, b, c in zip(rep.bin_edges[:-1], rep.bin_edges[1:], rep.histogram)])
    summary = {"observable": obs, "tail_fluctuation": rep.tail_fluctuation, "doubling_ratio": rep.doubling_ratio,
               "final_average": float(rep.running_average[-1]), "exit_status": traj.exit_status,
               "histogram_range": [float(rep.bin_edges[0]), float(rep.bin_edges[-1])]}
    (out / "ergodic.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("tail fluctuation %.4g, doubling ratio %.4g", rep.tail_fluctuation, rep.doubling_ratio)
    return (0 if traj.exit_status == EXIT_COMPLETED else 1), summary


def cmd_order(doc, cfg, args, out):
    e = doc["experiment"]
    ref_cfg = cfg.replace(dt=e["dt_ref"])
    res = estimate_strong_order(ref_cfg, e["dt_levels"], e["paths"])
    _write_rows(out / "order.csv", ("dt", "rms_error"), [(d, err) for d, err in zip(res.dt_levels, res.errors)])
    log.info("fitted strong order %.4g", res.order)
    return 0, {"order": res.order, "errors": res.errors}


def cmd_apriori(doc, cfg, args, out):
    levels = args.taming_levels or doc["experiment"]["taming_levels"]
    if not levels or any(not n > 0 for n in levels):
        raise UsageError("taming levels must be positive")
    cfgs = [cfg.replace(taming=TamingSpec(n, cfg.taming.C_taming, cfg.taming.C1)) for n in levels]
    rep = a_priori_report(cfgs, doc["experiment"]["paths"], record_every=cfg.record_every)
    rows = list(zip(rep.N_levels, rep.sup_h1, rep.int_h2, rep.int_h2_step, rep.int_grad_ysq, rep.int_l4, rep.blowups))
    _write_rows(out / "apriori.csv", ("N", "E_sup_h1_sq", "E_int_h2_sq", "E_int_h2_sq_step", "E_int_grad_ysq_sq", "E_int_l4_fourth", "blowups"),
                [tuple(float(v) for v in r[:-1]) + (int(r[-1]),) for r in rows])
    log.info("N-scaling slope %.4g, blow-ups %s", rep.slope, rep.blowups)
    ok = sum(rep.blowups) == 0 and sum(rep.errors) == 0 and rep.finite
    return (0 if ok else 1), {"slope": rep.slope, "blowups": rep.blowups}


def cmd_feller(doc, cfg, args, out):
    e = doc["experiment"]
    h1 = max(np.sqrt(sobolev_norm_sq(cfg.ic.build(cfg.grid), 1)), 1.0)
    phis = [make_observable("tanh_h1", cfg.grid, h1), make_observable("sin_proj", cfg.grid, 1.0),
            make_observable("inv_energy", cfg.grid, h1)]
    tab = feller_modulus(cfg, phis, e["feller_deltas"], e["feller_t"], max(e["paths"], 16))
    rows = []
    for a, name in enumerate(tab.names):
        for j, d in enumerate(tab.deltas):
            rows.append((name, d, float(tab.diffs[a, j]), float(tab.stderr[a, j])))
    _write_rows(out / "feller.csv", ("phi", "delta", "abs_diff", "stderr"), rows)
    mono = tab.monotone()
    return (0 if all(mono) else 1), {"monotone": dict(zip(tab.names, mono))}


HANDLERS = {
    "verify": cmd_verify, "run": cmd_run, "twin": cmd_twin, "ergodic": cmd_ergodic,
    "order": cmd_order, "apriori": cmd_apriori, "feller": cmd_feller,
}


def run_command(argv) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s", force=True)
    try:
        doc, cfg = _load(args)
        out = Path(doc["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        code, extra = HANDLERS[args.command](doc, cfg, args, out)
    except (UsageError, ConfigError) as exc:
        log.error("error: %s", exc)
        return 2
    _write_metadata(out, doc, cfg, args.command, extra)
    return code


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
