"""Anisotropic elasticity reconstruction from internal displacement fields."""

import json

from ._core import (
    ConfigError,
    ConvergenceError,
    SingularMatrixError,
    cross21,
    det6,
    eigenvalues_sym6,
    mehrabadi,
    nullspace_normal,
    random_stable_stiffness,
    read_field,
    stability_check,
    ti_tensor,
    voigt_index,
    write_field,
)
from . import _core

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "SingularMatrixError",
    "cross21",
    "det6",
    "eigenvalues_sym6",
    "mehrabadi",
    "nullspace_normal",
    "random_stable_stiffness",
    "read_field",
    "reconstruct",
    "run_scenario",
    "stability_check",
    "ti_tensor",
    "voigt_index",
    "write_field",
]


def run_scenario(scenario):
    """Generate a scenario's dataset and reconstruct it.

    Returns the report as a dict plus the output fields as arrays.
    """
    out = dict(_core.run_scenario(json.dumps(scenario)))
    out["report"] = json.loads(out["report"])
    return out


def reconstruct(strains, spacing, scenario=None):
    """Reconstruct from strains of shape (n_fields, nz, ny, nx, 6)."""
    text = json.dumps(scenario) if scenario is not None else ""
    out = dict(_core.reconstruct(strains, spacing, text))
    out["report"] = json.loads(out["report"])
    return out
