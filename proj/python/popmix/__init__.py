"""Driven chains of J=1/2 -> J=3/2 atoms with dipole-dipole interactions."""

from ._popmix import (
    __version__,
    axial_field_series,
    axial_field_sum,
    coupling_matrices,
    disorder_average,
    exact_master_equation,
    far_field_map,
    green_tensor,
    identical_atom_sweep,
    level_scheme,
    linear_chain,
    mf_steady_state,
    qmcw_ensemble,
    run_config,
)

__all__ = [
    "__version__",
    "axial_field_series",
    "axial_field_sum",
    "coupling_matrices",
    "disorder_average",
    "exact_master_equation",
    "far_field_map",
    "green_tensor",
    "identical_atom_sweep",
    "level_scheme",
    "linear_chain",
    "mf_steady_state",
    "qmcw_ensemble",
    "run_config",
]
