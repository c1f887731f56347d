"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary. The optional full-resolution
accuracy run is enabled with ``LDD_RICHARDS_LONG=1``.
"""

import os

import numpy as np
import pytest

from ldd_richards.assembly import (
    InterfaceState,
    SchemeParams,
    assemble_ldd,
    assemble_monolithic,
    flux_field,
    init_interface,
    update_g,
)
from ldd_richards.cases import ManufacturedCase, RealisticCase, source_term
from ldd_richards.constitutive import (
    ConstraintViolation,
    LinearModel,
    MaterialBounds,
    PowerLawModel,
    VanGenuchtenModel,
    tau_max,
)
from ldd_richards.grid import BoundarySpec, build_grid
from ldd_richards.linalg import GmresOptions, TripletMatrix, condition_number_dense, gmres, to_csr
from ldd_richards.schemes import (
    CONVERGED,
    RunConfig,
    Simulation,
    contraction_rate,
    initial_state,
    ldd_time_step,
    run_transient,
    step,
)

from test_assembly import ldd_iterates
from test_cases import TestSource

L25 = dict(L1=0.25, L2=0.25)


def first_below(series, level):
    hit = np.nonzero(np.asarray(series) < level)[0]
    return int(hit[0]) + 1 if hit.size else None


def spin_up(sim, tau, t_end, tol=1e-10):
    rep = run_transient(sim, RunConfig(scheme="newton", params=SchemeParams(tau=tau), t_end=t_end, tol=tol))
    assert rep.converged
    return rep.final_state


@pytest.fixture(scope="module")
def fine():
    # dx = 0.02, tau = 0.01, state at t = 0.19 so the next step ends at t = 0.2
    sim = Simulation(ManufacturedCase(dx=0.02))
    return sim, spin_up(sim, 0.01, 0.19)


# 1. manufactured-solution accuracy

def test_c1_manufactured_accuracy(verdict):
    case = ManufacturedCase(dx=0.05)
    cfg = RunConfig(scheme="ldd", params=SchemeParams(lam=4.0, tau=1e-3, **L25), t_end=0.5)
    rep = run_transient(case, cfg)
    err = rep.steps[-1].max_rel_error
    verdict("C1 accuracy dx=0.05 tau=1e-3 t=0.5", rep.converged and err < 1e-2,
            f"max relative error {100 * err:.3f}% (< 1%), all steps converged: {rep.converged}")


@pytest.mark.skipif(os.environ.get("LDD_RICHARDS_LONG") != "1", reason="long run; set LDD_RICHARDS_LONG=1")
def test_c1_full_resolution(verdict):
    case = ManufacturedCase(dx=0.01)
    cfg = RunConfig(scheme="ldd", params=SchemeParams(lam=4.0, tau=2e-4, **L25), t_end=1.0)
    rep = run_transient(case, cfg)
    err = rep.steps[-1].max_rel_error
    verdict("C1 accuracy dx=0.01 tau=2e-4 t=1", rep.converged and err < 5e-4,
            f"max relative error {100 * err:.4f}% (< 0.05%)")


# 2. interface consistency

@pytest.mark.xfail(strict=True, reason="flux jump needs 64 iterations at the corner faces; see decisions ledger")
def test_c2_interface_jumps(fine, verdict):
    sim, state = fine
    cfg = RunConfig(scheme="ldd", params=SchemeParams(lam=4.0, tau=0.01, **L25), t_start=state.t,
                    t_end=state.t + 0.01, tol=1e-14, max_iter=80)
    _, rep = ldd_time_step(state, cfg, sim)
    kp = first_below(rep.series("pressure_jump"), 1e-6)
    kf = first_below(rep.series("flux_jump"), 1e-6)
    ok = kp is not None and kf is not None and max(kp, kf) < 60
    verdict("C2 interface jumps < 1e-6 before iteration 60", ok,
            f"pressure jump at iteration {kp}, flux jump at iteration {kf}")


# 3. lambda-optimality shape

def test_c3_lambda_u_shape(fine, verdict):
    sim, state = fine
    lams = [0.5, 2.0, 4.0, 10.0, 40.0]
    rates = []
    for lam in lams:
        cfg = RunConfig(scheme="ldd", params=SchemeParams(lam=lam, tau=0.01, **L25), t_start=state.t,
                        t_end=state.t + 0.01, tol=1e-6, max_iter=300)
        _, rep = ldd_time_step(state, cfg, sim)
        assert rep.converged
        rates.append(contraction_rate(rep.series())[1])
    k = int(np.argmin(rates))
    u_shape = all(np.diff(rates[:k + 1]) < 0) and all(np.diff(rates[k:]) > 0)
    near = abs(k - lams.index(4.0)) <= 1
    verdict("C3 lambda U-shape with argmin at 4 +- one neighbour", u_shape and near,
            "rates " + ", ".join(f"{l:g}:{r:.3f}" for l, r in zip(lams, rates)) + f"; argmin {lams[k]:g}")


# 4. robustness ordering

@pytest.mark.xfail(strict=True, reason="Newton and Picard converge at tau=0.1; see decisions ledger")
def test_c4_large_time_step(verdict):
    sim = Simulation(ManufacturedCase(dx=0.02))
    runs = {"newton": (0.25, 2.0), "picard": (0.25, 2.0), "ldd": (0.25, 2.0), "lfv": (0.5, 2.0)}
    status = {}
    for sch, (L, lam) in runs.items():
        cfg = RunConfig(scheme=sch, params=SchemeParams(L1=L, L2=L, lam=lam, tau=0.1), t_end=0.5, max_iter=300)
        rep = run_transient(sim, cfg)
        status[sch] = rep.converged
    ok = not status["newton"] and not status["picard"] and status["ldd"] and status["lfv"]
    verdict("C4 tau=0.1 Newton/Picard divergent, LDD/LFV convergent", ok,
            ", ".join(f"{s} {'converged' if c else 'failed'}" for s, c in status.items()))


def test_c4_constant_initial_guess(verdict):
    sim = Simulation(ManufacturedCase(dx=0.02))
    runs = {"newton": (0.25, 4.0), "picard": (0.25, 4.0), "ldd": (0.25, 4.0), "lfv": (0.25, 4.0)}
    status = {}
    for sch, (L, lam) in runs.items():
        # Picard stalls at a constant increment, so a cap of 100 already decides
        cfg = RunConfig(scheme=sch, params=SchemeParams(L1=L, L2=L, lam=lam, tau=1e-3), t_end=1e-3,
                        initial_guess=-5.0, max_iter=100 if sch == "picard" else 500)
        rep = run_transient(sim, cfg)
        status[sch] = rep.steps[0].status
    ok = (status["newton"] != CONVERGED and status["picard"] != CONVERGED
          and status["ldd"] == CONVERGED and status["lfv"] == CONVERGED)
    verdict("C4 guess -5 Newton/Picard divergent, LDD/LFV convergent", ok,
            ", ".join(f"{s} {st}" for s, st in status.items()))


# 5. convergence-order properties

def test_c5_convergence_orders(verdict):
    sim = Simulation(ManufacturedCase(dx=0.1))
    state = spin_up(sim, 1e-3, 0.199, tol=1e-12)
    reps = {}
    for sch in ("newton", "picard", "lfv", "ldd"):
        cfg = RunConfig(scheme=sch, params=SchemeParams(lam=4.0, tau=1e-3, **L25), t_start=state.t,
                        t_end=state.t + 1e-3, tol=1e-10, max_iter=200)
        _, reps[sch] = step(state, cfg, sim)
        assert reps[sch].converged

    def ratios(e):
        # ratios above the double-precision rounding floor
        e = e[e > 1e-15]
        return e[1:] / e[:-1]

    rn = ratios(reps["newton"].series())
    newton_ok = (reps["newton"].inner_iters <= 5 and reps["newton"].series()[-1] < 1e-10
                 and rn.size >= 2 and all(np.diff(rn) < 0))
    rp = ratios(reps["picard"].series())
    picard_ok = rp.size >= 2 and rp.max() / rp.min() < 3.0
    linear_ok = True
    for sch in ("lfv", "ldd"):
        r = ratios(reps[sch].series())[2:20]
        linear_ok &= r.max() / r.min() < 1.5
    g_ldd = contraction_rate(reps["ldd"].series())[1]
    g_lfv = contraction_rate(reps["lfv"].series())[1]
    agree = abs(g_ldd - g_lfv) / g_lfv < 0.2
    verdict("C5 convergence orders", newton_ok and picard_ok and linear_ok and agree,
            f"Newton ratios {np.array2string(rn, precision=2, floatmode='maxprec', suppress_small=False)} in {reps['newton'].inner_iters} iterations; "
            f"Picard ratios {np.array2string(rp, precision=3)}; LDD {g_ldd:.3f} vs LFV {g_lfv:.3f}")


# 6. property suite

def test_c6_patch_test(verdict):
    worst = 0.0
    for gravity in (0.0, 0.7):
        for dx, dy in ((0.25, 0.25), (0.2, 0.5)):
            topo = build_grid(dx=dx, dy=dy).topology("full")
            models = (LinearModel(0.0, 2.5), LinearModel(0.0, 2.5))

            def p_exact(x, y, t=0.0, g=gravity):
                return 0.3 * x - 1.2 * y + 0.4 + g * x

            sys_ = assemble_monolithic("picard", topo, models, np.zeros(topo.n), np.zeros(topo.n),
                                       SchemeParams(tau=1.0), None, BoundarySpec.dirichlet(p_exact), 0.0,
                                       gravity, picard_modified=False)
            p = np.linalg.solve(sys_.matrix.to_dense(), sys_.rhs)
            worst = max(worst, np.max(np.abs(p - p_exact(topo.xc, topo.yc))))
    verdict("C6 TPFA linear patch test", worst < 1e-12, f"max error {worst:.1e} (< 1e-12)")


def test_c6_mass_balance(verdict):
    case = ManufacturedCase(dx=0.1, boundary_mix="mixed")
    sim = Simulation(case)
    topo = case.grid.topology("full")
    tau, t0 = 0.01, 0.2
    state = initial_state(case, t0)
    worst = 0.0
    for sch in ("newton", "picard", "lfv"):
        cfg = RunConfig(scheme=sch, params=SchemeParams(tau=tau, **L25), t_start=t0, t_end=t0 + tau,
                        tol=1e-12, max_iter=500)
        new, rep = step(state, cfg, sim)
        assert rep.converged
        t = new.t
        p, p_old = np.concatenate(new.pair), np.concatenate(state.pair)
        mat1 = topo.material == 1
        theta = np.where(mat1, case.models[0].saturation(p), case.models[1].saturation(p))
        theta_old = np.where(mat1, case.models[0].saturation(p_old), case.models[1].saturation(p_old))
        bc = case.boundary()
        fl = flux_field(topo, p, case.models, bc=bc, t=t)
        f = np.where(mat1, case.source(1, topo.xc, topo.yc, t), case.source(2, topo.xc, topo.yc, t))
        V = topo.volume
        balance = np.sum(theta - theta_old) * V + tau * np.sum(fl.boundary * topo.b_area) - tau * np.sum(f) * V
        worst = max(worst, abs(balance))
    verdict("C6 discrete mass balance of converged monolithic steps", worst < 1e-10,
            f"worst imbalance {worst:.1e} (< 1e-10)")


def test_c6_formulation_equivalence(verdict):
    case = ManufacturedCase(dx=0.1)
    kw = dict(L1=0.25, L2=0.25, tau=0.01)
    a = ldd_iterates(case, SchemeParams(lam=4.0, **kw), 10)
    b = ldd_iterates(case, SchemeParams.generalized_from_lambda(4.0, **kw), 10)
    worst = max(max(np.max(np.abs(p1 - q1)), np.max(np.abs(p2 - q2))) for (p1, p2, _), (q1, q2, _) in zip(a, b))
    verdict("C6 lambda vs generalized iterates", worst < 1e-10, f"max difference {worst:.1e} (< 1e-10)")


def test_c6_g_update_identity(verdict):
    case = ManufacturedCase(dx=0.1)
    sim = Simulation(case)
    state = initial_state(case, 0.19)
    lam = 4.0
    worst = 0.0
    for k in (1, 3, 6):
        cfg = dict(params=SchemeParams(lam=lam, tau=0.01, **L25), t_start=0.19, t_end=0.2, tol=1e-30)
        a, _ = ldd_time_step(state, RunConfig(max_iter=k, **cfg), sim)
        b, _ = ldd_time_step(state, RunConfig(max_iter=k + 1, **cfg), sim)
        lhs = b.interface.g1 + b.interface.g2
        rhs = -2 * lam * (a.interface.trace1 + a.interface.trace2) - (a.interface.g1 + a.interface.g2)
        worst = max(worst, np.max(np.abs(lhs - rhs)))
    rng = np.random.default_rng(7)
    for _ in range(100):
        g1, g2, t1, t2 = rng.uniform(-1, 1, (4, 5))
        out = update_g(InterfaceState(g1, g2, t1, t2), SchemeParams(lam=lam))
        worst = max(worst, np.max(np.abs(out.g1 + out.g2 + 2 * lam * (t1 + t2) + g1 + g2)))
    verdict("C6 g-update identity", worst < 1e-12, f"max defect {worst:.1e} (< 1e-12)")


def test_c6_gmres_oracle(verdict):
    rng = np.random.default_rng(11)
    worst = 0.0
    for n in (5, 20, 50, 80):
        for precondition in (False, True):
            a = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.2)
            a += np.diag(np.abs(a).sum(axis=1) + 1.0)
            b = rng.standard_normal(n)
            rows, cols = np.nonzero(a)
            A = to_csr(TripletMatrix(n, n, rows, cols, a[rows, cols]))
            x, stats = gmres(A, b, opts=GmresOptions(precondition=precondition))
            ref = np.linalg.solve(a, b)
            worst = max(worst, np.max(np.abs(x - ref)) / np.max(np.abs(ref)))
    verdict("C6 GMRES vs dense LU, n <= 80", worst < 1e-8, f"max relative difference {worst:.1e} (< 1e-8)")


def test_c6_source_oracle(verdict):
    rng = np.random.default_rng(3)
    ok, worst_ratio = True, 0.0
    for l in (1, 2):
        for _ in range(20):
            x = rng.uniform(-0.9, -0.1) if l == 1 else rng.uniform(0.1, 0.9)
            y, t = rng.uniform(0.1, 0.9), rng.uniform(0.05, 1.0)
            f = source_term(l, x, y, t)
            e1 = abs(f - TestSource.fd_residual(l, x, y, t, 1e-3))
            e2 = abs(f - TestSource.fd_residual(l, x, y, t, 5e-4))
            # second order: halving h divides the defect by about four
            ok &= e1 < 1e-5 and e2 < 0.35 * e1 + 1e-8
            if e1 > 1e-10:
                worst_ratio = max(worst_ratio, e2 / e1)
    verdict("C6 source terms vs finite-difference PDE residual", ok,
            f"worst h/2 to h defect ratio {worst_ratio:.3f} (second order ~0.25)")


def test_c6_constitutive_derivatives(verdict):
    models = [PowerLawModel(1), PowerLawModel(2),
              VanGenuchtenModel(S_r=0.33, S_s=1.0, alpha=0.638, n_hat=2.06, mobility_scale=0.0164, phi=0.396),
              VanGenuchtenModel(S_r=0.612, S_s=1.0, alpha=1.19, n_hat=10.4, mobility_scale=0.357, phi=0.25)]
    ps = np.linspace(-3.0, -0.05, 40)
    h = 1e-6
    worst = 0.0
    for m in models:
        for f, df in ((m.saturation, m.saturation_derivative), (m.mobility, m.mobility_derivative)):
            fd = (f(ps + h) - f(ps - h)) / (2 * h)
            an = df(ps)
            # 1e-9 is the rounding floor eps * |S| / h of the difference quotient
            worst = max(worst, float(np.max(np.abs(fd - an) / (1e-5 * np.abs(an) + 1e-9))))
    verdict("C6 constitutive derivatives vs central differences", worst <= 1.0,
            f"worst defect {worst:.2f} of the allowance 1e-5 relative + 1e-9")


# 7. tau bound

def test_c7_tau_bound(verdict):
    cases = [((1, 1, 0.5, 1), 1.0, 0.5), ((2, 1, 1, 2), 2.0, 0.125), ((0.5, 2, 0.3, 0.5), 1.5, 1.0)]
    errs = [abs(tau_max(MaterialBounds(*b), L) - v) / v for b, L, v in cases]
    rejected = 0
    for L in (0.5, 0.25, 0.0):
        try:
            tau_max(MaterialBounds(1, 1, 0.5, 1), L)
        except ConstraintViolation:
            rejected += 1
    verdict("C7 tau_max hand values and L <= L_S/2 rejection", max(errs) < 1e-12 and rejected == 3,
            f"max relative error {max(errs):.1e}, rejected {rejected}/3")


# 8. realistic case

@pytest.fixture(scope="module")
def realistic():
    sim = Simulation(RealisticCase(dx=0.02))
    cfg = RunConfig(scheme="ldd", params=SchemeParams(L1=0.5, L2=0.5, lam=10.0, tau=0.01), t_end=0.2,
                    max_iter=300)
    return sim, run_transient(sim, cfg)


def test_c8_ldd_converges_with_decreasing_increments(realistic, verdict):
    _, rep = realistic
    mono = all(np.all(np.diff(s.series(name)) <= 0) for s in rep.steps
               for name in ("l2_increment", "linf_increment"))
    verdict("C8 realistic LDD converges every step with decreasing increments", rep.converged and mono,
            f"{len(rep.steps)} steps, {rep.average_inner_iterations:.1f} iterations per step")


@pytest.mark.xfail(strict=True, reason="jump series are not monotone in early iterations; see decisions ledger")
def test_c8_ldd_jumps_decrease(realistic, verdict):
    _, rep = realistic
    rises = sum(int(np.sum(np.diff(s.series(name)) > 0)) for s in rep.steps
                for name in ("pressure_jump", "flux_jump"))
    verdict("C8 realistic LDD jump series decrease monotonically", rises == 0,
            f"{rises} increases across all steps")


@pytest.mark.xfail(strict=True, reason="modified Picard converges on this case; see decisions ledger")
def test_c8_picard_diverges(realistic, verdict):
    sim, _ = realistic
    cfg = RunConfig(scheme="picard", params=SchemeParams(L1=0.5, L2=0.5, lam=10.0, tau=0.01), t_end=0.2,
                    max_iter=300)
    rep = run_transient(sim, cfg)
    failed = rep.failed_step
    verdict("C8 realistic Picard diverges before t=0.2", failed is not None,
            "failed at step %s" % failed.step if failed else f"converged {len(rep.steps)} steps")


# 9. conditioning ordering

def test_c9_conditioning(verdict):
    case = ManufacturedCase(dx=0.05)
    sim = Simulation(case)
    params = SchemeParams(lam=10.0, tau=1e-3, **L25)
    state = spin_up(sim, 1e-3, 0.199, tol=1e-12)
    t = state.t + 1e-3
    bc = case.boundary(t)
    iface = init_interface(sim.full, state.pair, sim.models, params)
    conds = []
    for l in (1, 2):
        sys_ = assemble_ldd(sim.topo[l], sim.models[l - 1], state.pair[l - 1], state.pair[l - 1], iface.g(l),
                            params, case.source, bc, t)
        assert sys_.matrix.n_rows == 400
        conds.append(condition_number_dense(sys_.matrix))
    p = np.concatenate(state.pair)
    mono = assemble_monolithic("lfv", sim.full, sim.models, p, p, params, case.source, bc, t)
    c_lfv = condition_number_dense(mono.matrix)
    verdict("C9 LDD subdomain matrices better conditioned than LFV", max(conds) < c_lfv,
            f"subdomains {conds[0]:.2f}, {conds[1]:.2f}; LFV {c_lfv:.2f}")
