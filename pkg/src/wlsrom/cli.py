"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 physical-state failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import io as wio
from .basis import collect_snapshots, pod_basis, pod_singular_values, qsample
from .errors import ConfigError, WlsError
from .harness import (METHODS, RunCache, RunConfig, build_model, exit_code_for,
                      read_report_csv, reports_to_csv, run_benchmark_sweep, run_method)


def _add_run_flags(p):
    p.add_argument("--config", help="key=value config file with a [run] section")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper(),
                       help=f"(default: {f.default})")


def _run_config(args, **forced):
    values = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig)
              if getattr(args, f.name, None) is not None}
    values.update(forced)
    if args.config:
        return RunConfig.from_file(args.config, values)
    return RunConfig.from_mapping(values)


def _list(text, cast=float):
    if text is None:
        return None
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad list {text!r}") from exc


def cmd_simulate_fom(args):
    cfg = _run_config(args, method="fom")
    traj, rep = run_method(cfg)
    if rep.failure:
        print(rep.failure, file=sys.stderr)
        return 4 if rep.failure_kind == "physical" else 3
    if cfg.output:
        wio.save_trajectory(cfg.output, traj, model=cfg.model, scheme=cfg.scheme, dt=cfg.dt)
    print(f"steps={len(traj) - 1} wallclock_s={rep.wallclock_s:.3f}")
    return 0


def cmd_build_basis(args):
    traj = wio.load_trajectory(args.snapshots)
    x_ref = traj.states[0] if args.x_ref == "initial" else None
    S = collect_snapshots(traj, args.n_skip, x_ref)
    K = args.K
    if K is None:
        s = pod_singular_values(S)
        e = np.cumsum(s ** 2) / np.sum(s ** 2)
        K = int(np.searchsorted(e, args.energy) + 1)
    basis = pod_basis(S, K, x_ref)
    wio.save_basis(args.output, basis)
    print(f"K={basis.K} energy={basis.energy!r}")
    return 0


def cmd_build_sampling(args):
    traj = wio.load_trajectory(args.snapshots)
    cfg = _run_config(args)
    model, _ = build_model(cfg)
    F = np.array([model.f(x, t) for x, t in zip(traj.states, traj.times)]).T
    w = qsample(F, args.n_s, dofs_per_cell=args.dofs_per_cell)
    wio.save_weighting(args.output, w)
    print(f"rows={w.n_rows}")
    return 0


def cmd_run_rom(args):
    cfg = _run_config(args)
    traj, rep = run_method(cfg)
    if cfg.output and traj is not None:
        wio.save_trajectory(cfg.output, traj, method=cfg.method, dt=cfg.dt)
    sys.stdout.write(reports_to_csv([rep]))
    if rep.failure:
        print(rep.failure, file=sys.stderr)
        return 4 if rep.failure_kind == "physical" else 3
    return 0


def cmd_sweep(args):
    cfg = _run_config(args)
    methods = _list(args.methods, str)
    for m in methods or ():
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    reports = run_benchmark_sweep(cfg, methods, _list(args.windows), _list(args.dts), RunCache())
    text = reports_to_csv(reports)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def _monotone(values, increasing):
    d = np.diff(values)
    return bool(np.all(d >= 0) if increasing else np.all(d <= 0))


def cmd_report(args):
    with open(args.csv) as fh:
        rows = read_report_csv(fh.read())
    by_method = {}
    for r in rows:
        by_method.setdefault(r["method"], []).append(r)
    for method, rs in by_method.items():
        print(f"{method}:")
        for r in rs:
            flag = "" if r["converged"] == "1" else "  FAILED"
            print(f"  window={r['window'] or '-':>8} dt={r['dt']:>8} error={float(r['error']):.6e} "
                  f"objective={float(r['objective']):.6e} wallclock_s={r['wallclock_s']}{flag}")
        ok = [r for r in rs if r["converged"] == "1"]
        if len(ok) > 1:
            obj = [float(r["objective"]) for r in ok]
            err = [float(r["error"]) for r in ok]
            best = ok[int(np.argmin(err))]
            print(f"  objective non-increasing: {_monotone(obj, False)}; "
                  f"min error at window={best['window'] or '-'} dt={best['dt']}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="wlsrom", description="Windowed least-squares model reduction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-fom", help="integrate the full-order model")
    _add_run_flags(p)
    p.set_defaults(func=cmd_simulate_fom)

    p = sub.add_parser("build-basis", help="POD basis from a saved trajectory")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--K", type=int)
    p.add_argument("--energy", type=float, default=0.99999)
    p.add_argument("--n-skip", type=int, default=1)
    p.add_argument("--x-ref", choices=("zero", "initial"), default="zero")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_build_basis)

    p = sub.add_parser("build-sampling", help="q-sampling weighting from velocity snapshots")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--n-s", type=int, required=True)
    p.add_argument("--dofs-per-cell", type=int, default=3)
    _add_run_flags(p)
    p.set_defaults(func=cmd_build_sampling)

    p = sub.add_parser("run-rom", help="run one reduced model and print its metrics")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run_rom)

    p = sub.add_parser("sweep", help="benchmark sweep over methods, windows and dt")
    _add_run_flags(p)
    p.add_argument("--methods")
    p.add_argument("--windows")
    p.add_argument("--dts")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a sweep CSV")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WlsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
