"""Radial aggregation-diffusion: height functions, interpolation curves, energies,
steady states, evolution and tail-modified potentials."""

from .energy import certify_convexity, energy_on_curve, entropy, free_energy, interaction
from .evolution import Evolver, evolve, extract_steady, track_flatness
from .forge import ForgeError, flatness_threshold, forge_iterate
from .interpolation import InterpolationCurve, solve_srt, transport_field
from .potentials import (
    Potential,
    constant,
    convolve,
    forge_tail,
    parse_potential,
    quadratic,
    riesz,
    smooth_tabulated,
    step,
    step_decompose,
    tabulated,
)
from .radial_core import (
    HeightFunction,
    HeightTransform,
    RadialDensity,
    RadialGrid,
    density_from_height,
    height_from_density,
    lp_norm,
    quadratic_cap_density,
    tent_density,
)
from .steady_state import SteadyState, SteadyStateSolver, solve_steady, uniqueness_scan, verify_steady

__version__ = "0.1.0"

__all__ = [
    "Evolver",
    "ForgeError",
    "HeightFunction",
    "HeightTransform",
    "InterpolationCurve",
    "Potential",
    "RadialDensity",
    "RadialGrid",
    "SteadyState",
    "SteadyStateSolver",
    "certify_convexity",
    "constant",
    "convolve",
    "density_from_height",
    "energy_on_curve",
    "entropy",
    "evolve",
    "extract_steady",
    "flatness_threshold",
    "forge_iterate",
    "forge_tail",
    "free_energy",
    "height_from_density",
    "interaction",
    "lp_norm",
    "parse_potential",
    "quadratic",
    "quadratic_cap_density",
    "riesz",
    "smooth_tabulated",
    "solve_srt",
    "solve_steady",
    "step",
    "step_decompose",
    "tabulated",
    "tent_density",
    "track_flatness",
    "transport_field",
    "uniqueness_scan",
    "verify_steady",
]
