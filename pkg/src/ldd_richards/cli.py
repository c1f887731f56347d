"""Command-line front end.

    ldd-richards run       --config CASE.ini [--out DIR] [--dump-matrices] [--threads N]
    ldd-richards sweep     --config CASE.ini [--out DIR] [--threads N]
    ldd-richards compare   --config CASE.ini [--out DIR]
    ldd-richards tau-bound --config CASE.ini

Configuration is an INI file; see ``README.md`` for every key. Exit codes:
0 success, 2 configuration error, 3 divergence, 4 linear solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .assembly import SchemeParams
from .cases import DimensionalVG, ManufacturedCase, RealisticCase, SANDSTONE, SILT_LOAM, Scales
from .constitutive import ConstraintViolation, MaterialBounds, tau_max
from .linalg import GmresOptions
from .schemes import (
    SCHEMES,
    SOLVER_FAILURE,
    RunConfig,
    Simulation,
    contraction_rate,
    initial_state,
    run_transient,
    step,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_SOLVER = 4

SWEEP_COLUMNS = ("dx", "tau", "L", "lambda", "rate_mean", "rate_geometric", "converged", "status",
                 "inner_iters", "lambda_opt")
COMPARE_COLUMNS = ("scheme", "status", "inner_iters", "avg_inner_iters", "gmres_total", "rate_mean",
                   "rate_geometric", "wall_per_iter")
COMPARE_CURVE_COLUMNS = ("scheme", "iter", "l2_inc", "linf_inc", "p_jump", "flux_jump")


class ConfigError(ValueError):
    pass


@dataclass
class Settings:
    """Everything a command needs, parsed and validated from the INI file."""

    case_name: str = "manufactured"
    epsilon: float = 1e-2
    boundary: str = "dirichlet"
    dx: float = 0.02
    dy: float | None = None
    materials: tuple = (SILT_LOAM, SANDSTONE)
    scales: Scales = field(default_factory=Scales)
    run: RunConfig = field(default_factory=RunConfig)
    out_dir: str = "out"
    window_time: float = 0.2
    window_step: int | None = None
    sweep_axes: dict = field(default_factory=dict)
    compare_schemes: tuple = ()
    compare_overrides: dict = field(default_factory=dict)
    bounds: MaterialBounds | None = None
    bounds_L: float | None = None
    echo: dict = field(default_factory=dict)

    def make_case(self, dx: float | None = None):
        dx = self.dx if dx is None else dx
        if self.case_name == "manufactured":
            return ManufacturedCase(dx=dx, dy=self.dy, boundary_mix=self.boundary)
        return RealisticCase(dx=dx, dy=self.dy, epsilon=self.epsilon, materials=self.materials,
                             scales=self.scales)


def _floats(text: str) -> list[float]:
    items = [s.strip() for s in text.replace(";", ",").split(",") if s.strip()]
    return [float(s) for s in items]


def _get(cp, section, key, conv, default, echo):
    if cp.has_option(section, key) and cp.get(section, key).strip() != "":
        raw = cp.get(section, key).strip()
        try:
            value = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
    else:
        value = default
    if value is not None:
        echo.setdefault(section, {})[key] = value
    return value


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _guess(raw: str):
    if raw.lower() in ("previous", "previous-time"):
        return "previous"
    return float(raw)


def _material(cp, section, default: DimensionalVG, echo) -> DimensionalVG:
    if not cp.has_section(section):
        return default
    g = lambda k, d: _get(cp, section, k, float, d, echo)
    from_table = cp.has_option(section, "ks_cm_per_day") or cp.has_option(section, "alpha_per_cm")
    if from_table:
        return DimensionalVG.from_soil_table(
            g("theta_r", default.theta_r), g("theta_s", default.theta_s),
            g("alpha_per_cm", default.alpha * 9.81e3 / 100.0), g("n_hat", default.n_hat),
            g("ks_cm_per_day", default.kappa * 9.81e3 / 1e-3 * 100 * 86400), name=section)
    return DimensionalVG(g("theta_r", default.theta_r), g("theta_s", default.theta_s),
                         g("alpha", default.alpha), g("n_hat", default.n_hat), g("kappa", default.kappa),
                         g("mu", default.mu), name=section)


def parse_config(path: str) -> Settings:
    """Read and validate ``path``; raises :class:`ConfigError` on any problem."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    try:
        return settings_from_parser(cp)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def settings_from_parser(cp: configparser.ConfigParser) -> Settings:
    echo: dict = {}
    s = Settings()
    s.case_name = _get(cp, "case", "name", str, "manufactured", echo)
    if s.case_name not in ("manufactured", "realistic"):
        raise ConfigError(f"unknown case {s.case_name!r}")
    s.epsilon = _get(cp, "case", "epsilon", float, 1e-2, echo)
    s.boundary = _get(cp, "case", "boundary", str, "dirichlet", echo)
    s.dx = _get(cp, "grid", "dx", float, 0.02, echo)
    s.dy = _get(cp, "grid", "dy", float, None, echo)

    s.materials = (_material(cp, "material1", SILT_LOAM, echo), _material(cp, "material2", SANDSTONE, echo))
    sc = Scales()
    s.scales = Scales(
        pressure=_get(cp, "scales", "pressure", float, sc.pressure, echo),
        length=_get(cp, "scales", "length", float, sc.length, echo),
        time=_get(cp, "scales", "time", float, sc.time, echo),
        rho=_get(cp, "scales", "rho", float, sc.rho, echo),
        g=_get(cp, "scales", "g", float, sc.g, echo),
    ) if cp.has_section("scales") else sc

    kind = _get(cp, "scheme", "kind", str, "ldd", echo)
    if kind not in SCHEMES:
        raise ConfigError(f"unknown scheme {kind!r}; choose from {', '.join(SCHEMES)}")
    L = _get(cp, "scheme", "L", float, 0.25, echo)
    L1 = _get(cp, "scheme", "L1", float, L, echo)
    L2 = _get(cp, "scheme", "L2", float, L, echo)
    lam = _get(cp, "scheme", "lambda", float, 4.0, echo)
    formulation = _get(cp, "scheme", "formulation", str, "lambda", echo)
    eta = _get(cp, "scheme", "eta", float, None, echo)
    m_scale = _get(cp, "scheme", "m_scale", float, None, echo)
    picard_modified = _get(cp, "scheme", "picard_modified", _bool, True, echo)
    tau = _get(cp, "time", "tau", float, 0.01, echo)
    t_start = _get(cp, "time", "t_start", float, 0.0, echo)
    t_end = _get(cp, "time", "t_end", float, 1.0, echo)

    gm = None
    if cp.has_section("gmres"):
        gm = GmresOptions(
            restart=_get(cp, "gmres", "restart", int, 30, echo),
            tol=_get(cp, "gmres", "tol", float, 1e-10, echo),
            max_iter=_get(cp, "gmres", "max_iter", int, None, echo),
            precondition=_get(cp, "gmres", "precondition", _bool, kind != "ldd", echo),
        )
    try:
        if s.dx <= 0 or (s.dy is not None and s.dy <= 0):
            raise ValueError("cell sizes must be positive")
        params = SchemeParams(L1=L1, L2=L2, lam=lam, tau=tau, formulation=formulation, eta=eta,
                              m_scale=m_scale)
        s.run = RunConfig(
            scheme=kind, params=params,
            tol=_get(cp, "iteration", "tol", float, 1e-6, echo),
            max_iter=_get(cp, "iteration", "max_iter", int, 500, echo),
            divergence_factor=_get(cp, "iteration", "divergence_factor", float, 1e6, echo),
            t_start=t_start, t_end=t_end,
            initial_guess=_get(cp, "iteration", "initial_guess", _guess, "previous", echo),
            g_policy=_get(cp, "iteration", "g_policy", str, "reinit", echo),
            gmres=gm, picard_modified=picard_modified,
        )
        s.make_case()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None

    s.out_dir = _get(cp, "output", "dir", str, "out", echo)
    s.window_time = _get(cp, "sweep", "window_time", float, 0.2, echo)
    s.window_step = _get(cp, "sweep", "window_step", int, None, echo)
    for key, axis in (("dx", "dx"), ("tau", "tau"), ("L", "L"), ("lambda", "lambda")):
        vals = _get(cp, "sweep", key, _floats, None, echo)
        if vals:
            s.sweep_axes[axis] = vals
    schemes = _get(cp, "compare", "schemes", lambda r: tuple(x.strip() for x in r.split(",") if x.strip()),
                   (), echo)
    for sch in schemes:
        if sch not in SCHEMES:
            raise ConfigError(f"unknown scheme {sch!r} in [compare]")
    s.compare_schemes = schemes
    for sch in SCHEMES:
        sec = f"compare.{sch}"
        if cp.has_section(sec):
            ov = {}
            for key in ("L", "lambda"):
                v = _get(cp, sec, key, float, None, echo)
                if v is not None:
                    ov[key] = v
            s.compare_overrides[sch] = ov

    if cp.has_section("bounds"):
        try:
            s.bounds = MaterialBounds(
                L_S=_get(cp, "bounds", "L_S", float, None, echo),
                L_k=_get(cp, "bounds", "L_k", float, None, echo),
                m_lower=_get(cp, "bounds", "m_lower", float, None, echo),
                M_grad=_get(cp, "bounds", "M_grad", float, None, echo),
            )
        except TypeError:
            raise ConfigError("[bounds] needs L_S, L_k, m_lower and M_grad") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        s.bounds_L = _get(cp, "bounds", "L", float, None, echo)
    s.echo = echo
    return s


def write_summary(path: str, settings: Settings, results: dict) -> None:
    """Echo of every parsed parameter followed by a ``[result]`` section."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for section, items in settings.echo.items():
        cp[section] = {k: _echo_value(v) for k, v in items.items()}
    cp["result"] = {k: _echo_value(v) for k, v in results.items()}
    with open(path, "w") as fh:
        cp.write(fh)


def _echo_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_echo_value(x) for x in v)
    return str(v)


def _window_index(settings: Settings, tau: float) -> int:
    """1-based index of the evaluated time step."""
    if settings.window_step is not None:
        return settings.window_step
    t0 = settings.run.t_start
    return max(1, int(math.ceil((settings.window_time - t0) / tau - 1e-9)))


def _spin_up(sim, config: RunConfig, n_before: int):
    cfg = replace(config, t_end=config.t_start + n_before * config.params.tau)
    if n_before == 0:
        return initial_state(sim.case, config.t_start), True
    rep = run_transient(sim, cfg)
    return rep.final_state, rep.converged


def _rates(rep):
    e = rep.series()
    if e.size >= 2 and all(math.isfinite(v) for v in e):
        return contraction_rate(e)
    return (math.nan, math.nan)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def cmd_run(settings: Settings, out_dir: str, threads: int = 1, dump: bool = False) -> int:
    cfg = replace(settings.run, threads=threads,
                  dump_dir=os.path.join(out_dir, "matrices") if dump else None)
    case = settings.make_case()
    t0 = time.perf_counter()
    report = run_transient(case, cfg, out_dir=out_dir)
    wall = time.perf_counter() - t0
    results = {
        "steps": len(report.steps),
        "converged": report.converged,
        "average_inner_iterations": report.average_inner_iterations,
        "gmres_total": report.gmres_total,
    }
    k = _window_index(settings, cfg.params.tau)
    if 1 <= k <= len(report.steps):
        mean, geo = _rates(report.steps[k - 1])
        results["window_step"] = k
        results["rate_mean"] = mean
        results["rate_geometric"] = geo
    if report.max_rel_error is not None:
        results["final_max_rel_error"] = report.steps[-1].max_rel_error
    failed = report.failed_step
    if failed is not None:
        results["failed_step"] = failed.step
        results["failure"] = failed.status
    results["wall_seconds"] = round(wall, 3)
    write_summary(os.path.join(out_dir, "summary.ini"), settings, results)
    if failed is None:
        print(f"run converged: {len(report.steps)} steps, "
              f"{report.average_inner_iterations:.2f} inner iterations per step")
        return EXIT_OK
    print(f"step {failed.step} (t={failed.time:.6g}) failed: {failed.status} {failed.message}".rstrip(),
          file=sys.stderr)
    return EXIT_SOLVER if failed.status == SOLVER_FAILURE else EXIT_DIVERGED


def sweep_points(settings: Settings) -> list[tuple[float, float, float, float]]:
    p = settings.run.params
    axes = settings.sweep_axes
    dxs = axes.get("dx", [settings.dx])
    taus = axes.get("tau", [p.tau])
    Ls = axes.get("L", [p.L1])
    lams = axes.get("lambda", [p.lam])
    return list(itertools.product(dxs, taus, Ls, lams))


def run_sweep(settings: Settings, threads: int = 1) -> list[dict]:
    """One row per Cartesian point of ``(dx, tau, L, lambda)``, in that nesting order.

    The state before the evaluated step is computed once per ``(dx, tau)``
    with the base scheme settings; each point then runs that single step.
    """
    if not settings.sweep_axes:
        raise ConfigError("[sweep] lists no axis")
    base = settings.run
    points = sweep_points(settings)
    spin = {}
    for dx, tau, _, _ in points:
        if (dx, tau) in spin:
            continue
        sim = Simulation(settings.make_case(dx))
        cfg = replace(base, params=replace(base.params, tau=tau))
        k = _window_index(settings, tau)
        state, ok = _spin_up(sim, cfg, k - 1)
        spin[(dx, tau)] = (sim, state, ok)

    def evaluate(point):
        dx, tau, L, lam = point
        sim, state, ok = spin[(dx, tau)]
        row = {"dx": dx, "tau": tau, "L": L, "lambda": lam}
        if not ok:
            row.update(rate_mean=math.nan, rate_geometric=math.nan, converged=False,
                       status="spinup_failed", inner_iters=0)
            return row
        try:
            params = replace(base.params, tau=tau, L1=L, L2=L, lam=lam)
            cfg = replace(base, params=params, t_end=state.t + tau)
        except ValueError as exc:
            row.update(rate_mean=math.nan, rate_geometric=math.nan, converged=False,
                       status=f"invalid: {exc}", inner_iters=0)
            return row
        _, rep = step(state, cfg, sim)
        mean, geo = _rates(rep)
        row.update(rate_mean=mean, rate_geometric=geo, converged=rep.converged, status=rep.status,
                   inner_iters=rep.inner_iters)
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(evaluate, points))
    else:
        rows = [evaluate(p) for p in points]

    groups: dict = {}
    for r in rows:
        groups.setdefault((r["dx"], r["tau"], r["L"]), []).append(r)
    for members in groups.values():
        ok = [r for r in members if r["converged"] and math.isfinite(r["rate_geometric"])]
        best = min(ok, key=lambda r: r["rate_geometric"])["lambda"] if ok else math.nan
        for r in members:
            r["lambda_opt"] = best
    return rows


def cmd_sweep(settings: Settings, out_dir: str, threads: int = 1) -> int:
    rows = run_sweep(settings, threads)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    write_summary(os.path.join(out_dir, "summary.ini"), settings, {"points": len(rows)})
    for r in rows:
        flag = "" if r["converged"] else f"  [{r['status']}]"
        print(f"dx={r['dx']:g} tau={r['tau']:g} L={r['L']:g} lambda={r['lambda']:g} "
              f"rate={r['rate_geometric']:.4f}{flag}")
    return EXIT_OK


def run_compare(settings: Settings) -> list[dict]:
    """Run the evaluated step with every listed scheme from one shared previous state."""
    if len(settings.compare_schemes) < 2:
        raise ConfigError("[compare] schemes must list at least two schemes")
    base = settings.run
    sim = Simulation(settings.make_case())
    tau = base.params.tau
    k = _window_index(settings, tau)
    state, ok = _spin_up(sim, base, k - 1)
    if not ok:
        raise ConfigError(f"the {base.scheme} scheme failed before the compared step")
    out = []
    for sch in settings.compare_schemes:
        ov = settings.compare_overrides.get(sch, {})
        params = base.params
        if "L" in ov:
            params = replace(params, L1=ov["L"], L2=ov["L"])
        if "lambda" in ov:
            params = replace(params, lam=ov["lambda"])
        try:
            cfg = replace(base, scheme=sch, params=params, gmres=base.gmres, t_end=state.t + tau)
        except ValueError as exc:
            raise ConfigError(f"{sch}: {exc}") from None
        t0 = time.perf_counter()
        _, rep = step(state, cfg, sim)
        wall = time.perf_counter() - t0
        mean, geo = _rates(rep)
        out.append({"scheme": sch, "status": rep.status, "inner_iters": rep.inner_iters,
                    "avg_inner_iters": float(rep.inner_iters), "gmres_total": rep.gmres_total,
                    "rate_mean": mean, "rate_geometric": geo,
                    "wall_per_iter": wall / max(1, rep.inner_iters), "report": rep})
    return out


def cmd_compare(settings: Settings, out_dir: str) -> int:
    rows = run_compare(settings)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "compare.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in COMPARE_COLUMNS])
    with open(os.path.join(out_dir, "compare_curves.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_CURVE_COLUMNS)
        for r in rows:
            for it in r["report"].iterations:
                w.writerow([r["scheme"], it.iteration, _fmt(it.l2_increment), _fmt(it.linf_increment),
                            _fmt(it.pressure_jump), _fmt(it.flux_jump)])
    write_summary(os.path.join(out_dir, "summary.ini"), settings,
                  {f"{r['scheme']}_status": r["status"] for r in rows})
    for r in rows:
        print(f"{r['scheme']:>7}: {r['status']:<15} {r['inner_iters']:4d} iterations, "
              f"rate {r['rate_geometric']:.4f}")
    return EXIT_OK


def cmd_tau_bound(settings: Settings) -> int:
    if settings.bounds is None:
        raise ConfigError("tau-bound needs a [bounds] section")
    L = settings.bounds_L if settings.bounds_L is not None else min(settings.run.params.L1,
                                                                     settings.run.params.L2)
    try:
        tmax = tau_max(settings.bounds, L)
    except ConstraintViolation as exc:
        raise ConfigError(str(exc)) from None
    tau = settings.run.params.tau
    if tau <= tmax:
        print(f"tau_max={tmax:.12g}, satisfied (tau={tau:g})")
    else:
        print(f"tau_max={tmax:.12g}, not satisfied (tau={tau:g}); the bound is sufficient, "
              f"not necessary, runs proceed regardless")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldd-richards", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "compare", "tau-bound"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--dump-matrices", action="store_true",
                       help="write every assembled matrix in coordinate format")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        settings = parse_config(args.config)
        out = args.out or settings.out_dir
        if args.command == "run":
            return cmd_run(settings, out, args.threads, args.dump_matrices)
        if args.command == "sweep":
            return cmd_sweep(settings, out, args.threads)
        if args.command == "compare":
            return cmd_compare(settings, out)
        return cmd_tau_bound(settings)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
