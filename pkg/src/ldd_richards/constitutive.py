"""Saturation and relative-permeability laws.

Every model exposes the same vectorised surface:

    saturation(p)               S(p)
    saturation_derivative(p)    dS/dp
    rel_perm(p)                 k_r(S(p))
    rel_perm_dS(p)              dk_r/dS along the curve
    mobility(p)                 scaled mobility, what the flux law multiplies grad(p + z) by
    mobility_derivative(p)      d mobility / dp
    water_content(p)            porosity * S(p), the stored quantity in the mass balance

Pressures are nondimensional; ``p >= 0`` is the saturated branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PowerLawModel",
    "VanGenuchtenModel",
    "LinearModel",
    "MaterialBounds",
    "AssumptionReport",
    "ConstraintViolation",
    "saturation",
    "rel_perm",
    "saturation_derivative",
    "mobility",
    "tau_max",
    "verify_assumptions",
]


class ConstraintViolation(ValueError):
    """A parameter lies outside the admissible set of a bound."""


def _as_array(p):
    return np.asarray(p, dtype=float)


def _scalar_or_array(p, out):
    if np.ndim(p) == 0:
        return float(out)
    return out


class _Model:
    porosity: float = 1.0
    mobility_scale: float = 1.0

    def water_content(self, p):
        return self.porosity * self.saturation(p)

    def water_capacity(self, p):
        return self.porosity * self.saturation_derivative(p)

    def mobility(self, p):
        return self.mobility_scale * self.rel_perm(p)

    def mobility_derivative(self, p):
        dk = self.rel_perm_dS(p) * self.saturation_derivative(p)
        return self.mobility_scale * dk


@dataclass(frozen=True)
class PowerLawModel(_Model):
    """Manufactured-solution material of subdomain ``subdomain_index``.

    ``S(p) = (1 - p)**(-1/(l+1))`` for ``p < 0`` and 1 otherwise, with
    ``k(S) = S**(l+1)`` (so ``S**2`` on the first subdomain, ``S**3`` on the
    second). Mobility equals the relative permeability.
    """

    subdomain_index: int

    def __post_init__(self):
        if self.subdomain_index not in (1, 2):
            raise ValueError(f"subdomain_index must be 1 or 2, got {self.subdomain_index}")

    @property
    def exponent(self) -> float:
        return 1.0 / (self.subdomain_index + 1)

    def saturation(self, p):
        q = _as_array(p)
        out = np.ones_like(q)
        neg = q < 0
        out[neg] = (1.0 - q[neg]) ** (-self.exponent)
        return _scalar_or_array(p, out)

    def saturation_derivative(self, p):
        # at p == 0 the left limit 1/(l+1) is returned
        q = _as_array(p)
        out = np.zeros_like(q)
        unsat = q <= 0
        a = self.exponent
        out[unsat] = a * (1.0 - q[unsat]) ** (-a - 1.0)
        return _scalar_or_array(p, out)

    def rel_perm(self, p):
        s = _as_array(self.saturation(p))
        return _scalar_or_array(p, s ** (self.subdomain_index + 1))

    def rel_perm_dS(self, p):
        s = _as_array(self.saturation(p))
        e = self.subdomain_index + 1
        return _scalar_or_array(p, e * s ** (e - 1))


@dataclass(frozen=True)
class VanGenuchtenModel(_Model):
    """Van Genuchten retention curve with Mualem relative permeability.

    ``Phi(p) = (1 + (-alpha p)**n_hat)**(-m)`` with ``m = 1 - 1/n_hat`` for
    ``p < 0`` and ``Phi = 1`` for ``p >= 0``;
    ``S = S_r + (S_s - S_r) Phi`` and
    ``k = sqrt(Phi) * (1 - (1 - Phi**(1/m))**m)**2``.

    ``kappa``, ``mu`` and ``rho`` are carried as metadata of the dimensional
    material; ``mobility_scale`` multiplies ``k`` in the flux law and is
    normally produced by :func:`ldd_richards.cases.nondimensionalize`.
    ``porosity`` multiplies ``S`` in the stored water content.
    """

    S_r: float
    S_s: float
    alpha: float
    n_hat: float
    kappa: float = 1.0
    phi: float = 1.0
    mu: float = 1.0
    rho: float = 1.0
    mobility_scale: float = 1.0
    m: float = field(init=False)

    def __post_init__(self):
        if not (0.0 <= self.S_r < self.S_s <= 1.0):
            raise ValueError("need 0 <= S_r < S_s <= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.n_hat <= 1:
            raise ValueError("n_hat must exceed 1")
        if self.phi <= 0 or self.mobility_scale <= 0:
            raise ValueError("phi and mobility_scale must be positive")
        object.__setattr__(self, "m", 1.0 - 1.0 / self.n_hat)

    @property
    def porosity(self) -> float:
        return self.phi

    def _u(self, q):
        # u = (-alpha p)**n_hat on the unsaturated branch, 0 elsewhere
        u = np.zeros_like(q)
        neg = q < 0
        u[neg] = (-self.alpha * q[neg]) ** self.n_hat
        return u

    def effective_saturation(self, p):
        q = _as_array(p)
        return _scalar_or_array(p, (1.0 + self._u(q)) ** (-self.m))

    def saturation(self, p):
        phi = _as_array(self.effective_saturation(p))
        return _scalar_or_array(p, self.S_r + (self.S_s - self.S_r) * phi)

    def saturation_derivative(self, p):
        q = _as_array(p)
        out = np.zeros_like(q)
        neg = q < 0
        a, n, m = self.alpha, self.n_hat, self.m
        v = -a * q[neg]
        u = v**n
        out[neg] = (self.S_s - self.S_r) * a * m * n * v ** (n - 1.0) * (1.0 + u) ** (-m - 1.0)
        return _scalar_or_array(p, out)

    def rel_perm(self, p):
        q = _as_array(p)
        u = self._u(q)
        m = self.m
        phi = (1.0 + u) ** (-m)
        a = _one_minus_w1_pow_m(u, m)
        return _scalar_or_array(p, np.sqrt(phi) * a * a)

    def rel_perm_dS(self, p):
        q = _as_array(p)
        out = np.zeros_like(q)
        neg = q < 0
        u = self._u(q)[neg]
        m = self.m
        phi = (1.0 + u) ** (-m)
        w1 = u / (1.0 + u)
        a = _one_minus_w1_pow_m(u, m)
        dk_dphi = 0.5 * phi ** -0.5 * a * a + 2.0 * np.sqrt(phi) * a * w1 ** (m - 1.0) * phi ** (1.0 / m - 1.0)
        out[neg] = dk_dphi / (self.S_s - self.S_r)
        return _scalar_or_array(p, out)

    def mobility_derivative(self, p):
        # direct chain rule through Phi keeps the limit p -> 0- finite where it exists
        q = _as_array(p)
        out = np.zeros_like(q)
        neg = q < 0
        a, n, m = self.alpha, self.n_hat, self.m
        v = -a * q[neg]
        u = v**n
        phi = (1.0 + u) ** (-m)
        amp = _one_minus_w1_pow_m(u, m)
        dphi_dp = a * m * n * v ** (n - 1.0) * (1.0 + u) ** (-m - 1.0)
        # w1**(m-1) * v**(n-1) = v**(n m - 1) * (1+u)**(1-m) after simplification
        tail = 2.0 * np.sqrt(phi) * amp * phi ** (1.0 / m - 1.0) * a * m * n * v ** (n * m - 1.0) * (1.0 + u) ** (-2.0 * m)
        out[neg] = self.mobility_scale * (0.5 * phi ** -0.5 * amp * amp * dphi_dp + tail)
        return _scalar_or_array(p, out)


def _one_minus_w1_pow_m(u, m):
    # 1 - (u/(1+u))**m without cancellation when u is large
    with np.errstate(divide="ignore"):
        return -np.expm1(-m * np.log1p(1.0 / u))


@dataclass(frozen=True)
class LinearModel(_Model):
    """``S(p) = storage * p`` with constant mobility; a test material."""

    storage: float = 1.0
    conductivity: float = 1.0

    @property
    def mobility_scale(self) -> float:
        return self.conductivity

    def saturation(self, p):
        return _scalar_or_array(p, self.storage * _as_array(p))

    def saturation_derivative(self, p):
        return _scalar_or_array(p, np.full_like(_as_array(p), self.storage))

    def rel_perm(self, p):
        return _scalar_or_array(p, np.ones_like(_as_array(p)))

    def rel_perm_dS(self, p):
        return _scalar_or_array(p, np.zeros_like(_as_array(p)))


def saturation(model, p):
    return model.saturation(p)


def rel_perm(model, p):
    return model.rel_perm(p)


def saturation_derivative(model, p):
    return model.saturation_derivative(p)


def mobility(model, p):
    return model.mobility(p)


@dataclass(frozen=True)
class MaterialBounds:
    """Lipschitz constants of S and k, the mobility floor and the gradient bound."""

    L_S: float
    L_k: float
    m_lower: float
    M_grad: float

    def __post_init__(self):
        for name in ("L_S", "L_k", "m_lower", "M_grad"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


def tau_max(bounds: MaterialBounds, L_param: float) -> float:
    """Largest time step for which the LDD iteration is guaranteed to contract.

    Requires ``L_param > L_S / 2``; raises :class:`ConstraintViolation`
    otherwise.
    """
    margin = 1.0 / bounds.L_S - 1.0 / (2.0 * L_param) if L_param > 0 else -1.0
    if L_param <= bounds.L_S / 2.0 or margin <= 0:
        raise ConstraintViolation(
            f"stabilisation L={L_param} must exceed L_S/2={bounds.L_S / 2.0}")
    return 2.0 * bounds.m_lower / (bounds.L_k**2 * bounds.M_grad**2) * margin


@dataclass
class AssumptionReport:
    p_min: float
    p_max: float
    n_samples: int
    saturation_monotone: bool
    rel_perm_monotone: bool
    lipschitz_S: float
    lipschitz_k: float
    mobility_min: float
    mobility_bounded_below: bool

    @property
    def ok(self) -> bool:
        return self.saturation_monotone and self.rel_perm_monotone and self.mobility_bounded_below


def verify_assumptions(model, p_min: float, p_max: float, n_samples: int = 1000) -> AssumptionReport:
    """Sampled check of monotonicity, Lipschitz continuity and the mobility floor.

    Lipschitz estimates are maximal secant slopes between consecutive samples;
    the k estimate is taken with respect to S, which is how the bound enters
    the contraction argument.
    """
    if not p_min < p_max:
        raise ValueError(f"empty pressure range [{p_min}, {p_max}]")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    p = np.linspace(p_min, p_max, n_samples)
    s = np.asarray(model.saturation(p))
    k = np.asarray(model.rel_perm(p))
    mob = np.asarray(model.mobility(p))
    ds = np.diff(s)
    dk = np.diff(k)
    lip_s = float(np.max(np.abs(ds) / np.diff(p)))
    moving = ds > 0
    lip_k = float(np.max(np.abs(dk[moving]) / ds[moving])) if np.any(moving) else 0.0
    mob_min = float(mob.min())
    return AssumptionReport(
        p_min=p_min,
        p_max=p_max,
        n_samples=n_samples,
        saturation_monotone=bool(np.all(ds >= 0)),
        rel_perm_monotone=bool(np.all(dk >= 0)),
        lipschitz_S=lip_s,
        lipschitz_k=lip_k,
        mobility_min=mob_min,
        mobility_bounded_below=mob_min > 0,
    )
