"""Simulation laboratory for coherent beam combination of a fibre array."""

from .array import (
    ArgumentError,
    ComplexField,
    FibreArrayConfig,
    GridSpec,
    assemble_field,
    hex_positions,
    pin_reference,
    random_phase_vector,
    ring_rotation_permutation,
    wrap_phase,
)
from .propagation import (
    FocalBasis,
    IntensityMap,
    angular_spectrum,
    apply_lens,
    focal_field,
    intensity_of,
    total_power,
)

__all__ = [
    "ArgumentError",
    "ComplexField",
    "FibreArrayConfig",
    "FocalBasis",
    "GridSpec",
    "IntensityMap",
    "angular_spectrum",
    "apply_lens",
    "assemble_field",
    "focal_field",
    "hex_positions",
    "intensity_of",
    "pin_reference",
    "random_phase_vector",
    "ring_rotation_permutation",
    "total_power",
    "wrap_phase",
]
