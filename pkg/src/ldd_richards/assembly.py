"""Two-point flux finite volumes for the Richards equation.

Fluxes act on the total potential ``psi = p + z`` with ``z = -G x`` for a
gravity number ``G`` pointing along ``+x``. Face transmissibilities are
harmonic combinations of the two half-cell transmissibilities built from
cell-centred mobilities frozen at the previous iterate.

On the interface the subdomain systems use the Robin closure

    F . n_l = a G_l + b p_Gamma,l

where ``G_l`` is the stored interface datum and ``(a, b)`` come from the
chosen decoupling formulation (``a = 1, b = lambda`` for the lambda form).
The face pressure is eliminated per face, so every system has exactly one
unknown per cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import SIDES, DecomposedGrid, Topology
from .linalg import TripletMatrix

__all__ = [
    "SchemeParams",
    "InterfaceState",
    "SubdomainSystem",
    "FaceFluxes",
    "harmonic_transmissibility",
    "face_transmissibility",
    "flux_field",
    "interface_trace",
    "init_interface",
    "update_g",
    "assemble_ldd",
    "assemble_monolithic",
    "apply_bc",
    "boundary_outflow",
    "newton_residual",
    "subdomain_traces",
    "MONOLITHIC_KINDS",
]

MONOLITHIC_KINDS = ("lfv", "picard", "newton")


@dataclass(frozen=True)
class SchemeParams:
    """Stabilisation, Robin weight, decoupling formulation and time step.

    ``formulation`` is ``"lambda"`` (uses ``lam``), ``"convex"`` (uses
    ``eta``) or ``"generalized"`` (uses ``eta`` and ``m_scale``).
    """

    L1: float = 0.25
    L2: float = 0.25
    lam: float = 4.0
    tau: float = 0.01
    formulation: str = "lambda"
    eta: float | None = None
    m_scale: float | None = None

    def __post_init__(self):
        if self.formulation not in ("lambda", "convex", "generalized"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.L1 < 0 or self.L2 < 0:
            raise ValueError("L must be non-negative")
        if self.formulation == "lambda":
            if not self.lam > 0:
                raise ValueError("lambda must be positive")
        else:
            if self.eta is None or not 0 < self.eta < 1:
                raise ValueError("eta must lie in (0, 1)")
            if self.formulation == "generalized" and (self.m_scale is None or not self.m_scale > 0):
                raise ValueError("m_scale must be positive")

    def L(self, l: int) -> float:
        return self.L1 if l == 1 else self.L2

    @property
    def robin(self) -> tuple[float, float, float]:
        """``(a, b, c)`` with ``F.n = a G + b p`` and ``G_l <- -2 c p_{3-l} - G_{3-l}``."""
        if self.formulation == "lambda":
            return 1.0, self.lam, self.lam
        if self.formulation == "convex":
            return 1.0, self.eta, self.eta
        return self.m_scale, self.m_scale * self.eta, self.eta

    @classmethod
    def generalized_from_lambda(cls, lam: float, **kw) -> "SchemeParams":
        """Generalised formulation reproducing the lambda form with weight ``lam``."""
        eta = lam / (1.0 + lam)
        return cls(formulation="generalized", eta=eta, m_scale=1.0 / (1.0 - eta), lam=lam, **kw)


@dataclass
class InterfaceState:
    """Per-face Robin data and pressure traces of both sides.

    ``g1``/``g2`` hold the stored datum of the active formulation; for the
    generalised and convex forms this is ``(1 - eta) g``.
    """

    g1: np.ndarray
    g2: np.ndarray
    trace1: np.ndarray
    trace2: np.ndarray

    def g(self, l: int) -> np.ndarray:
        return self.g1 if l == 1 else self.g2

    def trace(self, l: int) -> np.ndarray:
        return self.trace1 if l == 1 else self.trace2

    def copy(self) -> "InterfaceState":
        return InterfaceState(self.g1.copy(), self.g2.copy(), self.trace1.copy(), self.trace2.copy())


@dataclass
class SubdomainSystem:
    matrix: TripletMatrix
    rhs: np.ndarray
    ordering: str
    unknown: str = "pressure"
    meta: dict = field(default_factory=dict)


def harmonic_transmissibility(mob_left, mob_right, area, d_left, d_right):
    """``T_L T_R / (T_L + T_R)`` with ``T_side = mobility * area / distance``; 0 when both vanish."""
    tl = np.asarray(mob_left, dtype=float) * area / d_left
    tr = np.asarray(mob_right, dtype=float) * area / d_right
    s = tl + tr
    safe = np.where(s > 0, s, 1.0)
    return np.where(s > 0, tl * tr / safe, 0.0)


def face_transmissibility(grid: DecomposedGrid, mobility_left: float, mobility_right: float,
                          direction: str = "x") -> float:
    if direction == "x":
        area, half = grid.dy, grid.dx / 2
    elif direction == "y":
        area, half = grid.dx, grid.dy / 2
    else:
        raise ValueError(f"direction must be 'x' or 'y', got {direction!r}")
    return float(harmonic_transmissibility(mobility_left, mobility_right, area, half, half))


def _harmonic_derivatives(ml, mr, area, dl, dr):
    """Partial derivatives of the harmonic transmissibility w.r.t. the two mobilities."""
    den = dr * ml + dl * mr
    safe = np.where(den > 0, den, 1.0)
    dml = np.where(den > 0, area * dl * mr * mr / safe**2, 0.0)
    dmr = np.where(den > 0, area * dr * ml * ml / safe**2, 0.0)
    return dml, dmr


def _per_cell(models, topo: Topology, method: str, p: np.ndarray) -> np.ndarray:
    if not isinstance(models, (tuple, list)):
        return np.asarray(getattr(models, method)(p), dtype=float)
    out = np.empty_like(p)
    for l in (1, 2):
        mask = topo.material == l
        if np.any(mask):
            out[mask] = getattr(models[l - 1], method)(p[mask])
    return out


def _source_values(source, topo: Topology, t: float) -> np.ndarray:
    if source is None:
        return np.zeros(topo.n)
    if callable(source):
        if isinstance(topo.part, int):
            return np.asarray(source(topo.part, topo.xc, topo.yc, t), dtype=float) * np.ones(topo.n)
        out = np.empty(topo.n)
        for l in (1, 2):
            mask = topo.material == l
            out[mask] = source(l, topo.xc[mask], topo.yc[mask], t)
        return out
    return np.asarray(source, dtype=float)


def _gravity_potential(x, gravity: float):
    return -gravity * np.asarray(x, dtype=float)


class _Builder:
    """Accumulates triplets and a right-hand side."""

    def __init__(self, n: int):
        self.n = n
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs = np.zeros(n)

    def add(self, r, c, v):
        r = np.asarray(r, dtype=np.int64)
        self.rows.append(r)
        self.cols.append(np.asarray(c, dtype=np.int64))
        self.vals.append(np.broadcast_to(np.asarray(v, dtype=float), r.shape))

    def add_diag(self, v):
        idx = np.arange(self.n)
        self.add(idx, idx, v)

    def matrix(self) -> TripletMatrix:
        cat = np.concatenate
        return TripletMatrix(self.n, self.n, cat(self.rows), cat(self.cols), cat(self.vals))


def _add_interior(builder: _Builder, topo: Topology, mob, z, tau):
    L, R = topo.f_left, topo.f_right
    T = harmonic_transmissibility(mob[L], mob[R], topo.f_area, topo.f_dleft, topo.f_dright)
    tT = tau * T
    builder.add(np.concatenate([L, L, R, R]), np.concatenate([L, R, R, L]),
                np.concatenate([tT, -tT, tT, -tT]))
    dz = z[L] - z[R]
    np.add.at(builder.rhs, L, -tT * dz)
    np.add.at(builder.rhs, R, tT * dz)
    return T


def _boundary_values(topo: Topology, bc, t: float):
    """Per exterior face: Dirichlet mask and the boundary value (pressure or inflow)."""
    values = np.zeros(topo.b_cell.size)
    is_dir = np.zeros(topo.b_cell.size, dtype=bool)
    for side in SIDES:
        mask = topo.side_masks[side]
        if not np.any(mask):
            continue
        if side not in bc:
            raise ValueError(f"boundary side {side!r} is not covered")
        cond = bc[side]
        values[mask] = cond(topo.b_x[mask], topo.b_y[mask], t)
        is_dir[mask] = cond.kind == "dirichlet"
    return is_dir, values


def apply_bc(system_or_builder, topo: Topology, mob, z, bc, t: float, tau: float, gravity: float = 0.0):
    """Add boundary contributions for time ``t``.

    Dirichlet faces use the half-cell transmissibility to the prescribed
    face value; Neumann faces add ``tau * inflow * face length`` to the
    right-hand side (zero inflow is no-flow).
    """
    if isinstance(system_or_builder, SubdomainSystem):
        b = _Builder(topo.n)
        b.rhs = system_or_builder.rhs
        _apply_bc(b, topo, mob, z, bc, t, tau, gravity)
        m = system_or_builder.matrix
        extra = b.matrix() if b.rows else None
        if extra is not None:
            system_or_builder.matrix = TripletMatrix(
                m.n_rows, m.n_cols, np.concatenate([m.rows, extra.rows]),
                np.concatenate([m.cols, extra.cols]), np.concatenate([m.vals, extra.vals]))
        return system_or_builder
    return _apply_bc(system_or_builder, topo, mob, z, bc, t, tau, gravity)


def _apply_bc(builder: _Builder, topo: Topology, mob, z, bc, t, tau, gravity):
    is_dir, values = _boundary_values(topo, bc, t)
    c = topo.b_cell
    Tb = mob[c] * topo.b_area / topo.b_dist
    zb = _gravity_potential(topo.b_x, gravity)
    d = np.where(is_dir, tau * Tb, 0.0)
    builder.add(c, c, d)
    contrib = np.where(is_dir, tau * Tb * (values + zb - z[c]), tau * values * topo.b_area)
    np.add.at(builder.rhs, c, contrib)
    return is_dir, values, Tb, zb


def boundary_outflow(topo: Topology, mob, p, z, bc, t: float, gravity: float = 0.0) -> np.ndarray:
    """Total outward flux through each exterior face."""
    is_dir, values = _boundary_values(topo, bc, t)
    c = topo.b_cell
    Tb = mob[c] * topo.b_area / topo.b_dist
    zb = _gravity_potential(topo.b_x, gravity)
    return np.where(is_dir, Tb * (p[c] + z[c] - values - zb), -values * topo.b_area)


def interface_trace(p_cell, g, lam, mobility, half_dist, dz=0.0, scale=1.0):
    """Face pressure closing the Robin condition on one side.

    Solves ``(mobility/half_dist) * (p_cell + z_cell - p_face - z_face) = scale*g + lam*p_face``
    with ``dz = z_face - z_cell``.
    """
    k = np.asarray(mobility, dtype=float) / half_dist
    return (k * p_cell - k * dz - scale * np.asarray(g, dtype=float)) / (k + lam)


def subdomain_traces(topo: Topology, mob, p, G, params: SchemeParams, gravity: float = 0.0):
    """Eliminated face pressures and the Robin fluxes ``F.n_l`` after a subdomain solve."""
    a, b, _ = params.robin
    c = topo.i_cell
    dz = _gravity_potential(topo.i_x, gravity) - _gravity_potential(topo.xc[c], gravity)
    trace = interface_trace(p[c], G, b, mob[c], topo.i_dist, dz, a)
    return trace, a * G + b * trace


def _add_robin(builder: _Builder, topo: Topology, mob, z, G, params: SchemeParams, tau, gravity):
    a, b, _ = params.robin
    c = topo.i_cell
    k = mob[c] / topo.i_dist
    w = k / (k + b)
    dz = _gravity_potential(topo.i_x, gravity) - z[c]
    builder.add(c, c, tau * topo.i_area * b * w)
    np.add.at(builder.rhs, c, -tau * topo.i_area * w * (a * G - b * dz))


def assemble_ldd(topo: Topology, model, p_iter_prev, p_time_prev, g_l, params: SchemeParams,
                 source, bc, t: float, gravity: float = 0.0) -> SubdomainSystem:
    """Linear system of one LDD iteration on subdomain ``topo.part``.

    Accumulation ``L V p``, frozen-mobility TPFA diffusion scaled by ``tau``,
    the eliminated Robin closure on the interface and boundary data; the
    right-hand side carries ``L V p_prev - V (theta(p_prev) - theta(p_old)) + tau V f``.
    """
    l = topo.part
    if l not in (1, 2):
        raise ValueError("LDD systems live on a single subdomain")
    L = params.L(l)
    if not L > 0:
        raise ValueError(f"L_{l} must be positive for the LDD scheme, got {L}")
    if params.robin[1] <= 0:
        raise ValueError("Robin weight must be positive")
    tau = params.tau
    V = topo.volume
    p_prev = np.asarray(p_iter_prev, dtype=float)
    mob = np.asarray(model.mobility(p_prev), dtype=float)
    z = _gravity_potential(topo.xc, gravity)
    b = _Builder(topo.n)
    b.add_diag(L * V)
    f = _source_values(source, topo, t)
    b.rhs += L * V * p_prev - V * (model.water_content(p_prev) - model.water_content(p_time_prev)) + tau * V * f
    _add_interior(b, topo, mob, z, tau)
    _apply_bc(b, topo, mob, z, bc, t, tau, gravity)
    _add_robin(b, topo, mob, z, np.asarray(g_l, dtype=float), params, tau, gravity)
    return SubdomainSystem(b.matrix(), b.rhs, ordering=f"subdomain {l}, row-major",
                           meta={"mobility": mob})


def newton_residual(topo: Topology, models, p, p_time_prev, source, bc, t, tau, gravity=0.0):
    """Nonlinear residual ``V (theta(p) - theta_old) + tau * outflow(p) - tau V f`` per cell."""
    V = topo.volume
    mob = _per_cell(models, topo, "mobility", p)
    z = _gravity_potential(topo.xc, gravity)
    theta = _per_cell(models, topo, "water_content", p)
    theta_old = _per_cell(models, topo, "water_content", np.asarray(p_time_prev, dtype=float))
    f = _source_values(source, topo, t)
    res = V * (theta - theta_old) - tau * V * f
    L, R = topo.f_left, topo.f_right
    T = harmonic_transmissibility(mob[L], mob[R], topo.f_area, topo.f_dleft, topo.f_dright)
    q = T * (p[L] + z[L] - p[R] - z[R])
    np.add.at(res, L, tau * q)
    np.add.at(res, R, -tau * q)
    np.add.at(res, topo.b_cell, tau * boundary_outflow(topo, mob, p, z, bc, t, gravity))
    return res


def assemble_monolithic(kind: str, topo: Topology, models, p_iter_prev, p_time_prev,
                        params: SchemeParams, source, bc, t: float, gravity: float = 0.0,
                        picard_modified: bool = True) -> SubdomainSystem:
    """Full-domain system for the ``lfv``, ``picard`` or ``newton`` scheme.

    ``lfv`` and ``picard`` are posed in the new pressure; ``newton`` in the
    increment ``p_new - p_iter_prev``. Interface faces are ordinary TPFA
    faces between the two materials.
    """
    if kind not in MONOLITHIC_KINDS:
        raise ValueError(f"unknown monolithic scheme {kind!r}")
    if topo.part != "full":
        raise ValueError("monolithic systems need the full-domain topology")
    tau = params.tau
    V = topo.volume
    p_prev = np.asarray(p_iter_prev, dtype=float)
    mob = _per_cell(models, topo, "mobility", p_prev)
    z = _gravity_potential(topo.xc, gravity)
    b = _Builder(topo.n)

    if kind == "newton":
        dmob = _per_cell(models, topo, "mobility_derivative", p_prev)
        cap = _per_cell(models, topo, "water_capacity", p_prev)
        b.add_diag(V * cap)
        L, R = topo.f_left, topo.f_right
        ml, mr = mob[L], mob[R]
        T = harmonic_transmissibility(ml, mr, topo.f_area, topo.f_dleft, topo.f_dright)
        dTl, dTr = _harmonic_derivatives(ml, mr, topo.f_area, topo.f_dleft, topo.f_dright)
        dpsi = p_prev[L] + z[L] - p_prev[R] - z[R]
        dq_dl = T + dTl * dmob[L] * dpsi
        dq_dr = -T + dTr * dmob[R] * dpsi
        b.add(np.concatenate([L, L, R, R]), np.concatenate([L, R, L, R]),
              tau * np.concatenate([dq_dl, dq_dr, -dq_dl, -dq_dr]))
        is_dir, values = _boundary_values(topo, bc, t)
        c = topo.b_cell
        zb = _gravity_potential(topo.b_x, gravity)
        dpsi_b = p_prev[c] + z[c] - values - zb
        dTb = np.where(is_dir, topo.b_area / topo.b_dist * (mob[c] + dmob[c] * dpsi_b), 0.0)
        b.add(c, c, tau * dTb)
        b.rhs = -newton_residual(topo, models, p_prev, p_time_prev, source, bc, t, tau, gravity)
        return SubdomainSystem(b.matrix(), b.rhs, ordering="full, subdomain 1 first, row-major",
                               unknown="increment", meta={"mobility": mob})

    theta_prev = _per_cell(models, topo, "water_content", p_prev)
    theta_old = _per_cell(models, topo, "water_content", np.asarray(p_time_prev, dtype=float))
    if kind == "lfv":
        Lc = np.where(topo.material == 1, params.L1, params.L2)
        if np.any(Lc <= 0):
            raise ValueError("L must be positive for the LFV scheme")
    elif picard_modified:
        Lc = _per_cell(models, topo, "water_capacity", p_prev)
    else:
        Lc = np.zeros(topo.n)
    f = _source_values(source, topo, t)
    b.add_diag(V * Lc)
    b.rhs += V * Lc * p_prev - V * (theta_prev - theta_old) + tau * V * f
    _add_interior(b, topo, mob, z, tau)
    _apply_bc(b, topo, mob, z, bc, t, tau, gravity)
    return SubdomainSystem(b.matrix(), b.rhs, ordering="full, subdomain 1 first, row-major",
                           meta={"mobility": mob})


@dataclass
class FaceFluxes:
    """Flux densities ``F.n`` per face of the full-domain topology.

    ``interior`` is oriented along ``+x``/``+y``; ``boundary`` along the
    outward normal; ``gamma`` is ``F.n_1`` on the interface, ordered by ``y``.
    """

    interior: np.ndarray
    boundary: np.ndarray
    gamma: np.ndarray
    gamma_trace: np.ndarray


def flux_field(topo: Topology, p, models, gravity: float = 0.0, bc=None, t: float = 0.0) -> FaceFluxes:
    """TPFA fluxes of the pressure field ``p`` on the full domain.

    ``p`` is a full-domain vector or a pair of subdomain vectors. Boundary
    fluxes need ``bc``; without it they are returned as NaN.
    """
    if isinstance(p, (tuple, list)):
        p = np.concatenate([np.asarray(v, dtype=float) for v in p])
    p = np.asarray(p, dtype=float)
    mob = _per_cell(models, topo, "mobility", p)
    z = _gravity_potential(topo.xc, gravity)
    L, R = topo.f_left, topo.f_right
    T = harmonic_transmissibility(mob[L], mob[R], topo.f_area, topo.f_dleft, topo.f_dright)
    interior = T * (p[L] + z[L] - p[R] - z[R]) / topo.f_area
    if bc is not None:
        boundary = boundary_outflow(topo, mob, p, z, bc, t, gravity) / topo.b_area
    else:
        boundary = np.full(topo.b_cell.size, np.nan)
    g = topo.f_is_gamma
    kl = mob[L[g]] / topo.f_dleft[g]
    kr = mob[R[g]] / topo.f_dright[g]
    psi_l = p[L[g]] + z[L[g]]
    psi_r = p[R[g]] + z[R[g]]
    s = kl + kr
    psi_face = np.where(s > 0, (kl * psi_l + kr * psi_r) / np.where(s > 0, s, 1.0), 0.5 * (psi_l + psi_r))
    z_face = _gravity_potential(np.zeros(psi_face.size) + _interface_x(topo), gravity)
    return FaceFluxes(interior, boundary, interior[g], psi_face - z_face)


def _interface_x(topo: Topology) -> float:
    g = topo.f_is_gamma
    if not np.any(g):
        return 0.0
    c = topo.f_left[g][0]
    return float(topo.xc[c] + topo.f_dleft[g][0])


def init_interface(full_topo: Topology, p_prev, models, params: SchemeParams,
                   gravity: float = 0.0) -> InterfaceState:
    """Robin data from the previous time level: ``G_l = (F.n_l - b p_Gamma) / a``.

    The flux is the two-sided TPFA flux across the interface and
    ``p_Gamma`` the face pressure consistent with it; both traces start
    from that face pressure.
    """
    a, b, _ = params.robin
    fl = flux_field(full_topo, p_prev, models, gravity)
    trace = fl.gamma_trace
    g1 = (fl.gamma - b * trace) / a
    g2 = (-fl.gamma - b * trace) / a
    return InterfaceState(g1, g2, trace.copy(), trace.copy())


def update_g(state: InterfaceState, params: SchemeParams, traces=None) -> InterfaceState:
    """Swap step ``G_l <- -2 c p_{3-l} - G_{3-l}`` applied to both sides at once.

    ``traces`` defaults to the traces stored in ``state``.
    """
    _, _, c = params.robin
    t1, t2 = traces if traces is not None else (state.trace1, state.trace2)
    g1 = -2.0 * c * t2 - state.g2
    g2 = -2.0 * c * t1 - state.g1
    return replace(state, g1=g1, g2=g2)
