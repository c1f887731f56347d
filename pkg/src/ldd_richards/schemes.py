"""Time stepping, inner iterations and their diagnostics.

The LDD driver alternates independent subdomain solves with the Robin
datum swap; the monolithic drivers (LFV, modified Picard, Newton) solve
one system on the whole domain per iteration. Every inner iteration
produces an :class:`IterationReport`; a step stops when the L2 norm of the
pressure increment drops below the tolerance or one of the divergence
flags is raised.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import (
    InterfaceState,
    SchemeParams,
    _gravity_potential,
    _per_cell,
    assemble_ldd,
    assemble_monolithic,
    init_interface,
    interface_trace,
    subdomain_traces,
    update_g,
)
from .grid import l2_cell_norm, l2_interface_norm
from .linalg import GmresBreakdown, GmresOptions, dump_coordinate, gmres, to_csr

__all__ = [
    "SCHEMES",
    "IterationReport",
    "RunConfig",
    "FlowState",
    "StepReport",
    "TransientReport",
    "Simulation",
    "initial_state",
    "ldd_time_step",
    "monolithic_time_step",
    "run_transient",
    "contraction_rate",
    "error_metrics",
    "max_relative_error",
    "midline_profile",
    "write_iteration_log",
    "write_step_summary",
    "write_profile",
    "ITERATION_COLUMNS",
    "STEP_COLUMNS",
    "PROFILE_COLUMNS",
]

SCHEMES = ("ldd", "lfv", "picard", "newton")

ITERATION_COLUMNS = ("step", "time", "iter", "l2_inc", "linf_inc", "p_jump", "flux_jump", "g_inc", "gmres_iters")
STEP_COLUMNS = ("step", "time", "inner_iters", "converged")
PROFILE_COLUMNS = ("x", "p_num", "p_exact", "rel_err")

# step outcomes; everything except CONVERGED counts as divergent
CONVERGED = "converged"
GROWTH = "diverged"
NONFINITE = "nonfinite"
MAX_ITER = "max_iterations"
SOLVER_FAILURE = "solver_failure"

REL_ERR_GUARD = 1e-12


@dataclass
class IterationReport:
    iteration: int
    l2_increment: float
    linf_increment: float
    pressure_jump: float
    flux_jump: float
    g_increment: float
    gmres_iterations: tuple = ()

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.l2_increment, self.linf_increment,
                                              self.pressure_jump, self.flux_jump, self.g_increment))


@dataclass
class RunConfig:
    """Scheme choice and iteration control for a transient run.

    ``initial_guess`` is ``"previous"`` or a number used as a constant guess
    in every cell. ``g_policy`` is ``"reinit"`` (rebuild the Robin data
    from the previous time level every step) or ``"carry"`` (keep the
    converged data of the previous step). ``gmres`` left as ``None`` picks
    the defaults with Jacobi scaling on for monolithic systems only.
    """

    scheme: str = "ldd"
    params: SchemeParams = field(default_factory=SchemeParams)
    tol: float = 1e-6
    max_iter: int = 500
    divergence_factor: float = 1e6
    t_start: float = 0.0
    t_end: float = 1.0
    initial_guess: str | float = "previous"
    g_policy: str = "reinit"
    gmres: GmresOptions | None = None
    picard_modified: bool = True
    threads: int = 1
    dump_dir: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.divergence_factor > 1:
            raise ValueError("divergence factor must exceed 1")
        if self.t_end < self.t_start:
            raise ValueError("t_end precedes t_start")
        if self.g_policy not in ("reinit", "carry"):
            raise ValueError(f"unknown g policy {self.g_policy!r}")
        if self.initial_guess != "previous":
            try:
                self.initial_guess = float(self.initial_guess)
            except (TypeError, ValueError):
                raise ValueError(f"initial guess must be 'previous' or a number, got {self.initial_guess!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.scheme == "ldd" and not (self.params.L1 > 0 and self.params.L2 > 0):
            raise ValueError("the LDD scheme needs L1, L2 > 0")
        if self.scheme == "lfv" and not (self.params.L1 > 0 and self.params.L2 > 0):
            raise ValueError("the LFV scheme needs L1, L2 > 0")

    @property
    def n_steps(self) -> int:
        span = self.t_end - self.t_start
        if span <= 0:
            return 0
        return int(math.ceil(span / self.params.tau - 1e-9))

    def gmres_options(self) -> GmresOptions:
        if self.gmres is not None:
            return self.gmres
        return GmresOptions(precondition=self.scheme != "ldd")


@dataclass
class FlowState:
    t: float
    p1: np.ndarray
    p2: np.ndarray
    interface: InterfaceState | None = None
    step: int = 0

    @property
    def pair(self):
        return (self.p1, self.p2)


@dataclass
class StepReport:
    step: int
    time: float
    status: str
    iterations: list = field(default_factory=list)
    gmres_total: int = 0
    max_rel_error: float | None = None
    message: str = ""

    @property
    def inner_iters(self) -> int:
        return len(self.iterations)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def diverged(self) -> bool:
        return self.status != CONVERGED

    def series(self, name: str = "l2_increment") -> np.ndarray:
        return np.array([getattr(r, name) for r in self.iterations])


@dataclass
class TransientReport:
    steps: list = field(default_factory=list)
    final_state: FlowState | None = None

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.steps)

    @property
    def failed_step(self) -> StepReport | None:
        for s in self.steps:
            if not s.converged:
                return s
        return None

    @property
    def gmres_total(self) -> int:
        return sum(s.gmres_total for s in self.steps)

    @property
    def average_inner_iterations(self) -> float:
        return float(np.mean([s.inner_iters for s in self.steps])) if self.steps else 0.0

    @property
    def max_rel_error(self) -> float | None:
        vals = [s.max_rel_error for s in self.steps if s.max_rel_error is not None]
        return max(vals) if vals else None


class Simulation:
    """Case-bound helpers: topologies, source, boundary data and gravity."""

    def __init__(self, case):
        self.case = case
        self.grid = case.grid
        self.topo = {1: self.grid.topology(1), 2: self.grid.topology(2)}
        self.full = self.grid.topology("full")
        self.models = tuple(case.models)
        self.gravity = float(case.gravity)
        self.source = case.source

    def boundary(self, t):
        return self.case.boundary(t)


def initial_state(case, t: float = 0.0) -> FlowState:
    p1, p2 = case.cell_values(lambda l, x, y: case.initial(l, x, y))
    if t != 0.0 and getattr(case, "has_exact", False):
        p1, p2 = case.cell_values(case.exact, t)
    return FlowState(t, p1, p2)


def _guess(config: RunConfig, p_prev):
    if config.initial_guess == "previous":
        return p_prev.copy()
    return np.full_like(p_prev, float(config.initial_guess))


def _solve(system, x0, opts):
    A = to_csr(system.matrix)
    try:
        x, st = gmres(A, system.rhs, x0=x0, opts=opts)
    except GmresBreakdown as exc:
        return None, None, str(exc), A
    return x, st, "", A


def _robin_trace_pair(sim: Simulation, p_full, mob_full):
    """One-sided face pressures on both sides of the interface from a full-domain field."""
    full = sim.full
    g = full.f_is_gamma
    L, R = full.f_left[g], full.f_right[g]
    dl, dr = full.f_dleft[g], full.f_dright[g]
    z = _gravity_potential(full.xc, sim.gravity)
    x_face = full.xc[L] + dl
    zf = _gravity_potential(x_face, sim.gravity)
    kl, kr = mob_full[L] / dl, mob_full[R] / dr
    s = kl + kr
    psi_face = np.where(s > 0, (kl * (p_full[L] + z[L]) + kr * (p_full[R] + z[R])) / np.where(s > 0, s, 1.0),
                        0.5 * (p_full[L] + z[L] + p_full[R] + z[R]))
    flux = kl * (p_full[L] + z[L] - psi_face)
    # side 1 and side 2 reconstructions of the face pressure
    t1 = np.where(kl > 0, p_full[L] + z[L] - flux / np.where(kl > 0, kl, 1.0), psi_face) - zf
    t2 = np.where(kr > 0, p_full[R] + z[R] + flux / np.where(kr > 0, kr, 1.0), psi_face) - zf
    f2 = kr * (p_full[R] + z[R] - psi_face)
    return t1, t2, flux, f2


def error_metrics(p_current, p_previous, grid, iteration: int = 0, traces=None, fluxes=None,
                  g_new=None, g_old=None, gmres_iterations=()) -> IterationReport:
    """Increment norms over both subdomains and L2 jumps on the interface.

    ``traces`` and ``fluxes`` are pairs of per-face arrays (face pressure
    and ``F.n_l`` of each side); ``g_new``/``g_old`` pairs of Robin data.
    Missing interface data gives zero jumps.
    """
    cur = np.concatenate([np.asarray(v, dtype=float) for v in p_current])
    prev = np.concatenate([np.asarray(v, dtype=float) for v in p_previous])
    d = cur - prev
    l2 = l2_cell_norm(d, cell_area=grid.cell_area)
    linf = float(np.max(np.abs(d))) if d.size else 0.0
    pj = l2_interface_norm(traces[0] - traces[1], dy=grid.dy) if traces is not None else 0.0
    fj = l2_interface_norm(fluxes[0] + fluxes[1], dy=grid.dy) if fluxes is not None else 0.0
    if g_new is not None and g_old is not None:
        gi = math.hypot(l2_interface_norm(g_new[0] - g_old[0], dy=grid.dy),
                        l2_interface_norm(g_new[1] - g_old[1], dy=grid.dy))
    else:
        gi = 0.0
    return IterationReport(iteration, l2, linf, pj, fj, gi, tuple(gmres_iterations))


def max_relative_error(case, p_pair, t: float) -> float:
    """``max |p_exact - p| / |p_exact|`` over cells whose exact value is not ~0."""
    worst = 0.0
    for l, p in zip((1, 2), p_pair):
        x, y = case.grid.cell_centers(l)
        ex = np.asarray(case.exact(l, x, y, t)) * np.ones(x.size)
        keep = np.abs(ex) >= REL_ERR_GUARD
        if np.any(keep):
            worst = max(worst, float(np.max(np.abs(ex[keep] - p[keep]) / np.abs(ex[keep]))))
    return worst


def midline_profile(case, p_pair, t: float, y0: float = 0.5):
    """``(x, p_num, p_exact, rel_err)`` along ``y = y0``, interpolating between cell rows."""
    grid = case.grid
    xs, nums, exs = [], [], []
    jf = (y0 - grid.y_min) / grid.dy - 0.5
    j0 = int(np.clip(np.floor(jf), 0, grid.ny - 1))
    j1 = min(j0 + 1, grid.ny - 1)
    w = float(np.clip(jf - j0, 0.0, 1.0)) if j1 != j0 else 0.0
    for l, p in zip((1, 2), p_pair):
        nx = grid.nx(l)
        P = np.asarray(p).reshape(grid.ny, nx)
        x = grid.x0(l) + (np.arange(nx) + 0.5) * grid.dx
        xs.append(x)
        nums.append((1 - w) * P[j0] + w * P[j1])
        if getattr(case, "has_exact", False):
            exs.append(np.asarray(case.exact(l, x, np.full(nx, y0), t)) * np.ones(nx))
        else:
            exs.append(np.full(nx, np.nan))
    x, num, ex = np.concatenate(xs), np.concatenate(nums), np.concatenate(exs)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(np.abs(ex) >= REL_ERR_GUARD, np.abs(ex - num) / np.abs(ex), np.nan)
    return x, num, ex, rel


def _check(report: IterationReport, first: float | None, config: RunConfig, stats_ok: bool):
    if not report.finite:
        return NONFINITE
    if not stats_ok:
        return SOLVER_FAILURE
    if first is not None and first > 0 and report.l2_increment > config.divergence_factor * first:
        return GROWTH
    if report.l2_increment < config.tol:
        return CONVERGED
    return None


def _dump(config: RunConfig, step: int, it: int, label: str, A):
    if config.dump_dir is None:
        return
    os.makedirs(config.dump_dir, exist_ok=True)
    dump_coordinate(A, os.path.join(config.dump_dir, f"step{step:05d}_iter{it:04d}_{label}.txt"))


def ldd_time_step(state: FlowState, config: RunConfig, sim: Simulation, pool=None):
    """One backward-Euler step with the LDD iteration.

    Returns ``(new_state, StepReport)``. On divergence the state holds the
    last iterate and the report carries the flag and all iterations so far.
    """
    if not isinstance(sim, Simulation):
        sim = Simulation(sim)
    params = config.params
    a, _, _ = params.robin
    tau = params.tau
    t_new = state.t + tau
    step = state.step + 1
    bc = sim.boundary(t_new)
    p_old = (state.p1, state.p2)
    opts = config.gmres_options()

    if config.g_policy == "carry" and state.interface is not None:
        iface = state.interface.copy()
    else:
        iface = init_interface(sim.full, p_old, sim.models, params, sim.gravity)

    p_iter = [_guess(config, p_old[0]), _guess(config, p_old[1])]
    traces = []
    for l in (1, 2):
        topo = sim.topo[l]
        mob = sim.models[l - 1].mobility(p_iter[l - 1])
        tr, _ = subdomain_traces(topo, mob, p_iter[l - 1], iface.g(l), params, sim.gravity)
        traces.append(tr)
    iface = InterfaceState(iface.g1, iface.g2, traces[0], traces[1])

    report = StepReport(step, t_new, MAX_ITER)
    first = None
    for it in range(1, config.max_iter + 1):
        g_prev = (iface.g1, iface.g2)
        iface = update_g(iface, params)

        def work(l):
            system = assemble_ldd(sim.topo[l], sim.models[l - 1], p_iter[l - 1], p_old[l - 1],
                                  iface.g(l), params, sim.source, bc, t_new, sim.gravity)
            x, st, msg, A = _solve(system, p_iter[l - 1], opts)
            return system, x, st, msg, A

        if pool is not None:
            results = list(pool.map(work, (1, 2)))
        else:
            results = [work(1), work(2)]

        msgs = [r[3] for r in results if r[3]]
        if msgs:
            report.status = SOLVER_FAILURE
            report.message = "; ".join(msgs)
            break
        new_p, new_tr, new_fl, its = [], [], [], []
        stats_ok = True
        for l, (system, x, st, _, A) in zip((1, 2), results):
            _dump(config, step, it, f"omega{l}", A)
            tr, fl = subdomain_traces(sim.topo[l], system.meta["mobility"], x, iface.g(l), params, sim.gravity)
            new_p.append(x)
            new_tr.append(tr)
            new_fl.append(fl)
            its.append(st.iterations)
            stats_ok &= st.converged
            report.gmres_total += st.iterations
        rep = error_metrics(new_p, p_iter, sim.grid, it, traces=new_tr, fluxes=new_fl,
                            g_new=(a * iface.g1, a * iface.g2), g_old=(a * g_prev[0], a * g_prev[1]),
                            gmres_iterations=its)
        report.iterations.append(rep)
        p_iter = new_p
        iface = InterfaceState(iface.g1, iface.g2, new_tr[0], new_tr[1])
        if first is None:
            first = rep.l2_increment
        status = _check(rep, first, config, stats_ok)
        if status == SOLVER_FAILURE:
            report.message = "GMRES did not reach its tolerance"
        if status is not None:
            report.status = status
            break

    new_state = FlowState(t_new, p_iter[0], p_iter[1], iface, step)
    if getattr(sim.case, "has_exact", False) and report.converged:
        report.max_rel_error = max_relative_error(sim.case, new_state.pair, t_new)
    return new_state, report


def monolithic_time_step(kind: str, state: FlowState, config: RunConfig, sim: Simulation):
    """One backward-Euler step with the LFV, modified Picard or Newton iteration."""
    if not isinstance(sim, Simulation):
        sim = Simulation(sim)
    params = config.params
    t_new = state.t + params.tau
    step = state.step + 1
    bc = sim.boundary(t_new)
    p_old = np.concatenate(state.pair)
    n1 = sim.grid.n_cells(1)
    p_iter = _guess(config, p_old)
    opts = config.gmres_options()
    report = StepReport(step, t_new, MAX_ITER)
    first = None
    for it in range(1, config.max_iter + 1):
        system = assemble_monolithic(kind, sim.full, sim.models, p_iter, p_old, params, sim.source, bc,
                                     t_new, sim.gravity, picard_modified=config.picard_modified)
        x0 = np.zeros(sim.full.n) if system.unknown == "increment" else p_iter
        x, st, msg, A = _solve(system, x0, opts)
        if x is None:
            report.status = SOLVER_FAILURE
            report.message = msg
            break
        _dump(config, step, it, "full", A)
        p_new = p_iter + x if system.unknown == "increment" else x
        report.gmres_total += st.iterations
        with np.errstate(all="ignore"):
            mob = _per_cell(sim.models, sim.full, "mobility", p_new)
            t1, t2, f1, f2 = _robin_trace_pair(sim, p_new, mob)
        rep = error_metrics((p_new[:n1], p_new[n1:]), (p_iter[:n1], p_iter[n1:]), sim.grid, it,
                            traces=(t1, t2), fluxes=(f1, f2), gmres_iterations=(st.iterations,))
        report.iterations.append(rep)
        p_iter = p_new
        if first is None:
            first = rep.l2_increment
        status = _check(rep, first, config, st.converged)
        if status == SOLVER_FAILURE:
            report.message = "GMRES did not reach its tolerance"
        if status is not None:
            report.status = status
            break
    new_state = FlowState(t_new, p_iter[:n1].copy(), p_iter[n1:].copy(), None, step)
    if getattr(sim.case, "has_exact", False) and report.converged:
        report.max_rel_error = max_relative_error(sim.case, new_state.pair, t_new)
    return new_state, report


def step(state: FlowState, config: RunConfig, sim: Simulation, pool=None):
    if config.scheme == "ldd":
        return ldd_time_step(state, config, sim, pool)
    return monolithic_time_step(config.scheme, state, config, sim)


def run_transient(case, config: RunConfig, out_dir: str | None = None,
                  state: FlowState | None = None, stop_on_failure: bool = True) -> TransientReport:
    """Backward-Euler steps from ``config.t_start`` until ``config.t_end`` is reached.

    Writes ``iterations.csv``, ``steps.csv`` and ``profile.csv`` into
    ``out_dir`` when given. The run stops at the first failed step unless
    ``stop_on_failure`` is false.
    """
    sim = case if isinstance(case, Simulation) else Simulation(case)
    if state is None:
        state = initial_state(sim.case, config.t_start)
        state = replace(state, t=config.t_start)
    report = TransientReport(final_state=state)
    pool = ThreadPoolExecutor(max_workers=2) if (config.threads > 1 and config.scheme == "ldd") else None
    try:
        for _ in range(config.n_steps):
            state, rep = step(state, config, sim, pool)
            report.steps.append(rep)
            report.final_state = state
            if not rep.converged and stop_on_failure:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_iteration_log(report, os.path.join(out_dir, "iterations.csv"))
        write_step_summary(report, os.path.join(out_dir, "steps.csv"))
        write_profile(sim.case, report.final_state, os.path.join(out_dir, "profile.csv"))
    return report


def contraction_rate(errors) -> tuple[float, float]:
    """Arithmetic mean of successive ratios and their geometric mean over the first 20.

    Ratios stop at the first zero entry; with no usable ratio ``(0, 0)`` is
    returned.
    """
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        raise ValueError("need at least two errors")
    zeros = np.flatnonzero(e == 0)
    if zeros.size:
        e = e[: zeros[0]]
    if e.size < 2:
        return 0.0, 0.0
    ratios = e[1:] / e[:-1]
    head = ratios[:20]
    return float(np.mean(ratios)), float(np.exp(np.mean(np.log(head))))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_iteration_log(report: TransientReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ITERATION_COLUMNS)
        for s in report.steps:
            for r in s.iterations:
                w.writerow([_fmt(s.step), _fmt(s.time), _fmt(r.iteration), _fmt(r.l2_increment),
                            _fmt(r.linf_increment), _fmt(r.pressure_jump), _fmt(r.flux_jump),
                            _fmt(r.g_increment), _fmt(sum(r.gmres_iterations))])


def write_step_summary(report: TransientReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_COLUMNS)
        for s in report.steps:
            w.writerow([_fmt(s.step), _fmt(s.time), _fmt(s.inner_iters), _fmt(s.converged)])


def write_profile(case, state: FlowState, path, y0: float = 0.5) -> None:
    x, num, ex, rel = midline_profile(case, state.pair, state.t, y0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_COLUMNS)
        for row in zip(x, num, ex, rel):
            w.writerow([_fmt(v) for v in row])
