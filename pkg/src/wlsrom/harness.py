"""Run configuration, single runs with metrics, and benchmark sweeps."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io as _io
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import WeightingMatrix, build_st_basis, collect_snapshots, pod_basis, qsample
from .core_ode import WindowPartition, get_scheme, integrate_fom, uniform_grid
from .errors import ConfigError, NonConvergenceError, NumericalFailure, PhysicalStateError, \
    WlsError
from .gauss_newton import GaussNewtonConfig
from .metrics import continuous_objective, space_time_error, trajectory_objective
from .models import SodConfig, make_linear_model, make_sod_model, random_stable_matrix, \
    sod_initial_state
from .rom_classic import ReducedOperators, run_galerkin, run_lspg
from .wls_s import FbsmConfig, run_wls_direct, run_wls_indirect
from .wls_st import StConfig, run_wls_st

METHODS = ("fom", "galerkin", "lspg", "wls-direct", "wls-indirect",
           "wls-st-direct", "wls-st-indirect")
CSV_HEADER = ("method", "window", "dt", "K", "error", "objective", "wallclock_s", "converged")


@dataclass
class RunConfig:
    """One run.  ``window`` and ``boundaries`` are in time units; ``window``
    defaults to ``dt`` for the WLS methods."""

    model: str = "sod"
    n_cells: int = 100
    linear_dim: int = 10
    seed: int = 0
    scheme: str = "CrankNicolson"
    dt: float = 0.002
    T: float = 0.2
    method: str = "wls-direct"
    window: Optional[float] = None
    boundaries: Optional[list] = None
    basis: Optional[str] = None
    K: int = 10
    K_ST: int = 10
    basis_dt: Optional[float] = None
    snapshot_skip: int = 1
    weighting: str = "identity"
    gn_tol: float = 1e-4
    gn_max_iters: int = 50
    fbsm_eps: float = 1e-6
    fbsm_max_sweeps: int = 500
    objective: str = "discrete"
    reference: Optional[str] = None
    reference_dt: Optional[float] = None
    output: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in ("sod", "linear"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.objective not in ("discrete", "continuous"):
            raise ConfigError("objective must be 'discrete' or 'continuous'")
        try:
            get_scheme(self.scheme)
        except Exception as exc:
            raise ConfigError(str(exc)) from exc
        if not self.dt > 0 or not self.T > 0:
            raise ConfigError("dt and T must be positive")
        _check_multiple(self.T, self.dt, "T")
        if self.window is not None:
            _check_multiple(self.window, self.dt, "window")
        for b in self.boundaries or ():
            if not 0 <= b <= self.T:
                raise ConfigError(f"window boundary {b} lies outside [0, T]")
            _check_multiple(b, self.dt, "window boundary", allow_zero=True)
        for name in ("basis_dt", "reference_dt"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if min(self.K, self.K_ST, self.snapshot_skip, self.n_cells, self.linear_dim) < 1:
            raise ConfigError("K, K_ST, snapshot_skip and sizes must be positive")
        parse_weighting(self.weighting)

    @classmethod
    def from_mapping(cls, values):
        """Build from string or typed values, converting by field type."""
        kwargs = {}
        names = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _convert(names[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides=None):
        parser = configparser.ConfigParser()
        parser.optionxform = str      # keys such as T and K_ST are case sensitive
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
        if not parser.has_section("run"):
            raise ConfigError(f"{path}: missing [run] section")
        values = dict(parser.items("run"))
        values.update(overrides or {})
        return cls.from_mapping(values)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _check_multiple(value, dt, what, allow_zero=False):
    steps = round(value / dt)
    if (steps < 1 and not allow_zero) or abs(steps * dt - value) > 1e-9 * max(1.0, abs(value)):
        raise ConfigError(f"{what} {value} is not an integer multiple of dt {dt}")


def _convert(f, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    kind = str(f.type)
    if text.lower() in ("", "none") and "Optional" in kind:
        return None
    try:
        if "list" in kind:
            return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {f.name}: {raw!r}") from exc
    return text


def parse_weighting(spec):
    """``identity`` or ``qsample:<n_s>``; returns ``(kind, n_s)``."""
    if spec == "identity":
        return "identity", None
    kind, _, n = spec.partition(":")
    if kind == "qsample":
        try:
            n_s = int(n)
        except ValueError:
            n_s = 0
        if n_s >= 1:
            return kind, n_s
    raise ConfigError(f"weighting must be 'identity' or 'qsample:<n_s>', got {spec!r}")


@dataclass
class MetricsReport:
    method: str
    window: Optional[float]
    dt: float
    K: Optional[int]
    error: float
    objective: float
    wallclock_s: float
    converged: bool
    iterations: list = field(default_factory=list)
    failure: Optional[str] = None
    failure_kind: Optional[str] = None    # "physical" or "nonconvergence"

    def csv_row(self):
        return [self.method, "" if self.window is None else repr(self.window), repr(self.dt),
                "" if self.K is None else self.K, repr(self.error), repr(self.objective),
                f"{self.wallclock_s:.6f}", int(self.converged)]


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def build_model(config):
    """Model and initial state."""
    if config.model == "sod":
        sod = SodConfig(n_cells=config.n_cells)
        return make_sod_model(sod), sod_initial_state(sod)
    rng = np.random.default_rng(config.seed)
    A = random_stable_matrix(config.linear_dim, rng)
    return make_linear_model(A), rng.standard_normal(config.linear_dim)


class RunCache:
    """Memoizes FOM trajectories, bases and weightings shared across a sweep."""

    def __init__(self):
        self.fom = {}
        self.bases = {}
        self.weightings = {}

    def fom_trajectory(self, config, model, x0, dt):
        key = (config.model, config.n_cells, config.linear_dim, config.seed, config.scheme, dt, config.T)
        if key not in self.fom:
            grid = uniform_grid(config.T, dt)
            self.fom[key] = integrate_fom(model, get_scheme(config.scheme), grid, x0)
        return self.fom[key]

    def spatial_basis(self, config, model, x0):
        if config.basis:
            from .io import load_basis
            return load_basis(config.basis)
        dt = config.basis_dt or config.dt
        key = (config.model, config.n_cells, config.linear_dim, config.seed, config.scheme,
               dt, config.T, config.K, config.snapshot_skip)
        if key not in self.bases:
            train = self.fom_trajectory(config, model, x0, dt)
            self.bases[key] = pod_basis(collect_snapshots(train, config.snapshot_skip), config.K)
        return self.bases[key]

    def weighting(self, config, model, x0):
        kind, n_s = parse_weighting(config.weighting)
        N = x0.size
        if kind == "identity":
            return WeightingMatrix.identity(N)
        dt = config.basis_dt or config.dt
        key = (config.model, config.n_cells, config.linear_dim, config.seed, dt, config.T, n_s)
        if key not in self.weightings:
            train = self.fom_trajectory(config, model, x0, dt)
            F = np.array([model.f(x, t) for x, t in zip(train.states, train.times)]).T
            cells = 3 if config.model == "sod" else 1
            self.weightings[key] = qsample(F, n_s, dofs_per_cell=cells)
        return self.weightings[key]

    def reference(self, config, model, x0):
        if config.reference:
            from .io import load_trajectory
            return load_trajectory(config.reference)
        return self.fom_trajectory(config, model, x0, config.reference_dt or config.dt)


def build_partition(config):
    grid = uniform_grid(config.T, config.dt)
    if config.boundaries:
        return WindowPartition.from_grid(grid, boundaries=config.boundaries)
    window = config.window if config.window is not None else config.dt
    return WindowPartition.from_grid(grid, window_steps=int(round(window / config.dt)))


def _failure_kind(exc):
    if exc is None:
        return None
    if isinstance(exc, PhysicalStateError):
        return "physical"
    return "nonconvergence"


def _solve(config, model, x0, cache):
    """Run the configured method; returns ``(RomRun or Trajectory, K, failure)``."""
    scheme = get_scheme(config.scheme)
    grid = uniform_grid(config.T, config.dt)
    gn = GaussNewtonConfig(tol=config.gn_tol, max_iters=config.gn_max_iters)
    weighting = cache.weighting(config, model, x0)
    m = config.method
    if m.startswith("wls-st"):
        partition = build_partition(config)
        train = cache.fom_trajectory(config, model, x0, config.dt)
        st = build_st_basis(train, partition, config.K_ST)
        cfg = StConfig(method=m.split("-")[-1], scheme=scheme, weighting=weighting, gn_config=gn)
        return run_wls_st(model, partition, st, x0, cfg), config.K_ST
    ops = ReducedOperators(cache.spatial_basis(config, model, x0), weighting)
    if m == "galerkin":
        return run_galerkin(ops, model, scheme, grid, x0), ops.K
    if m == "lspg":
        return run_lspg(ops, model, scheme, grid, x0, gn), ops.K
    partition = build_partition(config)
    if m == "wls-direct":
        return run_wls_direct(model, partition, ops, scheme, x0, gn), ops.K
    fb = FbsmConfig(eps=config.fbsm_eps, max_sweeps=config.fbsm_max_sweeps)
    return run_wls_indirect(model, partition, ops, scheme, x0, fb), ops.K


def run_method(config, cache=None):
    """Run one configuration; returns ``(full-state trajectory, MetricsReport)``.

    Failures inside the solver produce a partial trajectory and a report with
    ``converged=False``; error and objective are then NaN.
    """
    cache = cache or RunCache()
    model, x0 = build_model(config)
    window = None
    if config.method.startswith("wls"):
        window = config.window if config.window is not None else config.dt
    iterations, failure = [], None
    start = time.perf_counter()
    if config.method == "fom":
        try:
            traj = integrate_fom(model, get_scheme(config.scheme), uniform_grid(config.T, config.dt), x0)
        except NumericalFailure as exc:
            traj, failure = None, exc
        K = None
        wall = time.perf_counter() - start
    else:
        run, K = _solve(config, model, x0, cache)
        wall = time.perf_counter() - start
        traj = run.full_trajectory()
        failure = run.failure
        iterations = [d.get("iterations") for d in run.diagnostics]
    converged = failure is None
    if failure is None and traj is not None:
        ref = cache.reference(config, model, x0)
        error = space_time_error(traj, ref)
        weighting = cache.weighting(config, model, x0)
        if config.objective == "continuous":
            objective = continuous_objective(model, traj, ref.times, weighting)
        else:
            objective = trajectory_objective(model, get_scheme(config.scheme), traj, weighting)
    else:
        error = objective = float("nan")
    report = MetricsReport(config.method, window, config.dt, K, float(error), float(objective),
                           wall, converged, iterations,
                           None if failure is None else str(failure), _failure_kind(failure))
    return traj, report


def run_benchmark_sweep(config, methods=None, windows=None, dts=None, cache=None):
    """One report per (method, dt, window), in that nesting order.

    Windows only apply to WLS methods; other methods get one row per dt.
    """
    cache = cache or RunCache()
    methods = methods or [config.method]
    dts = dts or [config.dt]
    reports = []
    for m in methods:
        for dt in dts:
            wins = (windows or [config.window]) if m.startswith("wls") else [None]
            for w in wins:
                try:
                    cfg = config.replace(method=m, dt=dt, window=w, boundaries=None)
                    _, rep = run_method(cfg, cache)
                except WlsError as exc:
                    rep = MetricsReport(m, w, dt, None, float("nan"), float("nan"), 0.0, False,
                                        failure=str(exc), failure_kind=_failure_kind(exc)
                                        if isinstance(exc, NumericalFailure) else "config")
                reports.append(rep)
    return reports


def reports_to_csv(reports):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def read_report_csv(text):
    rows = list(csv.DictReader(_io.StringIO(text)))
    if rows and tuple(rows[0].keys()) != CSV_HEADER:
        raise ConfigError("unexpected report header")
    return rows


def exit_code_for(exc):
    """CLI exit code: 2 config, 3 non-convergence, 4 physical-state failure."""
    if isinstance(exc, PhysicalStateError):
        return 4
    if isinstance(exc, (NonConvergenceError, NumericalFailure)):
        return 3
    return 2
