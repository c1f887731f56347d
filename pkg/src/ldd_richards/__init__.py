"""Linear domain decomposition and monolithic solvers for the two-domain Richards equation."""

from .assembly import InterfaceState, SchemeParams
from .cases import ManufacturedCase, RealisticCase
from .constitutive import LinearModel, MaterialBounds, PowerLawModel, VanGenuchtenModel, tau_max
from .grid import build_grid
from .linalg import GmresOptions, gmres
from .schemes import RunConfig, contraction_rate, run_transient

__version__ = "0.1.0"

__all__ = [
    "InterfaceState",
    "SchemeParams",
    "ManufacturedCase",
    "RealisticCase",
    "LinearModel",
    "MaterialBounds",
    "PowerLawModel",
    "VanGenuchtenModel",
    "tau_max",
    "build_grid",
    "GmresOptions",
    "gmres",
    "RunConfig",
    "contraction_rate",
    "run_transient",
]
