"""Benchmark problems on (-1, 1) x (0, 1) split at x = 0.

``ManufacturedCase`` has a closed-form solution, power-law materials and
no gravity. ``RealisticCase`` is a nondimensional van Genuchten problem
with a silt loam on the left, a sandstone on the right and gravity along
``+x``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .constitutive import PowerLawModel, VanGenuchtenModel
from .grid import BoundaryCondition, BoundarySpec, DecomposedGrid, build_grid

__all__ = [
    "ManufacturedCase",
    "RealisticCase",
    "Scales",
    "DimensionalVG",
    "SILT_LOAM",
    "SANDSTONE",
    "exact_pressure",
    "source_term",
    "manufactured_bc",
    "realistic_bc",
    "gravity_number",
    "nondimensionalize",
    "redimensionalize",
    "write_exact_profile",
]


def exact_pressure(l: int, x, y, t):
    """``1 - (1 + t^2)(1 + x^2 + y^2)`` on the left, ``1 - (1 + t^2)(1 + y^2)`` on the right."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if l == 1:
        out = 1.0 - (1.0 + t * t) * (1.0 + x * x + y * y)
    elif l == 2:
        out = 1.0 - (1.0 + t * t) * (1.0 + y * y) + 0.0 * x
    else:
        raise ValueError(f"subdomain must be 1 or 2, got {l}")
    return float(out) if out.ndim == 0 else out


def source_term(l: int, x, y, t):
    """Right-hand side that makes :func:`exact_pressure` solve the equation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if l == 1:
        r = 1.0 + x * x + y * y
        out = 4.0 / r**2 - t / np.sqrt((1.0 + t * t) ** 3 * r)
    elif l == 2:
        q = 1.0 + y * y
        out = 2.0 * (1.0 - y * y) / q**2 - 2.0 * t / (3.0 * np.cbrt((1.0 + t * t) ** 4 * q)) + 0.0 * x
    else:
        raise ValueError(f"subdomain must be 1 or 2, got {l}")
    return float(out) if out.ndim == 0 else out


def manufactured_bc(side: str, x, y, t):
    """Exact-solution trace; the subdomain follows from ``x`` (``x <= 0`` is the left one)."""
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 0.0, exact_pressure(1, x, y, t), exact_pressure(2, x, y, t))
    return float(out) if out.ndim == 0 else out


def realistic_bc(y, t, epsilon: float = 1e-2):
    """Pressure on ``x = -1``: ``-1 + t y`` while ``t y < 1 - epsilon``, else ``-epsilon``.

    At ``t = 0`` this is ``-1`` everywhere, matching the initial state.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    y = np.asarray(y, dtype=float)
    ty = t * y
    out = np.where(ty < 1.0 - epsilon, -1.0 + ty, -epsilon)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Scales:
    """Characteristic pressure (Pa, negative for suction), length (m) and time (s)."""

    pressure: float = -14.8e3
    length: float = 1.48
    time: float = 41440.0
    rho: float = 1.0e3
    g: float = 9.81

    def __post_init__(self):
        for name in ("pressure", "length", "time", "rho", "g"):
            if getattr(self, name) == 0:
                raise ValueError(f"scale {name} must be nonzero")


@dataclass(frozen=True)
class DimensionalVG:
    """Dimensional van Genuchten-Mualem material.

    ``alpha`` in 1/Pa, ``kappa`` intrinsic permeability in m^2, ``mu`` in Pa s.
    """

    theta_r: float
    theta_s: float
    alpha: float
    n_hat: float
    kappa: float
    mu: float = 1.0e-3
    name: str = ""

    @classmethod
    def from_soil_table(cls, theta_r, theta_s, alpha_per_cm, n_hat, ks_cm_per_day,
                        rho=1.0e3, g=9.81, mu=1.0e-3, name=""):
        """Build from head-based tables: ``alpha`` in 1/cm of head, saturated conductivity in cm/day."""
        alpha = alpha_per_cm * 100.0 / (rho * g)
        ks = ks_cm_per_day / 100.0 / 86400.0
        return cls(theta_r, theta_s, alpha, n_hat, ks * mu / (rho * g), mu, name)


# literature soil parameters, not taken from any benchmark table
SILT_LOAM = DimensionalVG.from_soil_table(0.131, 0.396, 0.00423, 2.06, 4.96, name="silt loam G.E. 3")
SANDSTONE = DimensionalVG.from_soil_table(0.153, 0.250, 0.0079, 10.4, 108.0, name="Hygiene sandstone")


def gravity_number(scales: Scales) -> float:
    """``rho g x* / |p*|``."""
    return scales.rho * scales.g * scales.length / abs(scales.pressure)


def nondimensionalize(material: DimensionalVG, scales: Scales) -> VanGenuchtenModel:
    """Scaled material: ``alpha |p*|`` and mobility scale ``kappa |p*| t* / (mu x*^2)``.

    The porosity is ``theta_s`` and the saturation runs from
    ``theta_r / theta_s`` to 1.
    """
    P, X, T = abs(scales.pressure), scales.length, scales.time
    if P == 0 or X == 0 or T == 0:
        raise ValueError("scales must be nonzero")
    return VanGenuchtenModel(
        S_r=material.theta_r / material.theta_s,
        S_s=1.0,
        alpha=material.alpha * P,
        n_hat=material.n_hat,
        kappa=material.kappa,
        phi=material.theta_s,
        mu=material.mu,
        rho=scales.rho,
        mobility_scale=material.kappa * P * T / (material.mu * X * X),
    )


def redimensionalize(model: VanGenuchtenModel, scales: Scales, name: str = "") -> DimensionalVG:
    P, X, T = abs(scales.pressure), scales.length, scales.time
    theta_s = model.phi * model.S_s
    return DimensionalVG(
        theta_r=model.S_r * model.phi,
        theta_s=theta_s,
        alpha=model.alpha / P,
        n_hat=model.n_hat,
        kappa=model.mobility_scale * model.mu * X * X / (P * T),
        mu=model.mu,
        name=name,
    )


class _Case:
    grid: DecomposedGrid
    models: tuple
    gravity: float = 0.0
    name: str = ""

    @property
    def has_exact(self) -> bool:
        return False

    def exact(self, l, x, y, t):
        raise NotImplementedError(f"{self.name} case has no closed-form solution")

    def source(self, l, x, y, t):
        return 0.0

    def cell_values(self, fn, t=None):
        """Evaluate ``fn(l, x, y[, t])`` on the cell centres of both subdomains."""
        out = []
        for l in (1, 2):
            x, y = self.grid.cell_centers(l)
            v = fn(l, x, y) if t is None else fn(l, x, y, t)
            out.append(np.asarray(v, dtype=float) * np.ones(x.size))
        return tuple(out)


@dataclass
class ManufacturedCase(_Case):
    """Smooth closed-form solution with zero flux across the interface."""

    dx: float = 0.02
    dy: float | None = None
    boundary_mix: str = "dirichlet"
    name: str = "manufactured"
    grid: DecomposedGrid = field(init=False)
    models: tuple = field(init=False)
    gravity: float = 0.0

    def __post_init__(self):
        if self.boundary_mix not in ("dirichlet", "mixed"):
            raise ValueError(f"unknown boundary mix {self.boundary_mix!r}")
        self.grid = build_grid(dx=self.dx, dy=self.dy)
        self.models = (PowerLawModel(1), PowerLawModel(2))

    @property
    def has_exact(self) -> bool:
        return True

    def exact(self, l, x, y, t):
        return exact_pressure(l, x, y, t)

    def source(self, l, x, y, t):
        return source_term(l, x, y, t)

    def initial(self, l, x, y):
        return exact_pressure(l, x, y, 0.0)

    def boundary(self, t: float | None = None) -> BoundarySpec:
        """Exact pressure on every side; ``"mixed"`` replaces the bottom by its exact zero flux."""
        spec = {s: BoundaryCondition("dirichlet", _side_fn(s)) for s in ("left", "right", "bottom", "top")}
        if self.boundary_mix == "mixed":
            spec["bottom"] = BoundaryCondition("neumann", _no_flow)
        return BoundarySpec(spec)


def _no_flow(x, y, t):
    return 0.0


def _side_fn(side):
    def fn(x, y, t):
        return manufactured_bc(side, x, y, t)
    return fn


@dataclass
class RealisticCase(_Case):
    """Infiltration from the left edge into an initially dry two-layer column."""

    dx: float = 0.02
    dy: float | None = None
    epsilon: float = 1e-2
    materials: tuple = (SILT_LOAM, SANDSTONE)
    scales: Scales = field(default_factory=Scales)
    name: str = "realistic"
    grid: DecomposedGrid = field(init=False)
    models: tuple = field(init=False)
    gravity: float = field(init=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.grid = build_grid(dx=self.dx, dy=self.dy)
        self.models = tuple(nondimensionalize(m, self.scales) for m in self.materials)
        self.gravity = gravity_number(self.scales)

    def initial(self, l, x, y):
        return -np.ones_like(np.asarray(x, dtype=float))

    def boundary(self, t: float | None = None) -> BoundarySpec:
        eps = self.epsilon

        def left(x, y, t):
            return realistic_bc(y, t, eps)

        def zero(x, y, t):
            return 0.0

        def right(x, y, t):
            return -1.0

        return BoundarySpec({
            "left": BoundaryCondition("dirichlet", left),
            "right": BoundaryCondition("dirichlet", right),
            "bottom": BoundaryCondition("neumann", zero),
            "top": BoundaryCondition("neumann", zero),
        })


def write_exact_profile(path, t: float, y: float = 0.5, n: int = 201) -> None:
    """Sample the closed-form solution along ``y`` for plotting; columns ``x, p_exact``."""
    xs = np.linspace(-1.0, 1.0, n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "p_exact"])
        for x in xs:
            l = 1 if x <= 0 else 2
            w.writerow([f"{x:.17g}", f"{exact_pressure(l, x, y, t):.17g}"])
