"""Structure-preserving simulation and boundary control of port-Hamiltonian beams."""

from phbeam.control import (
    CasimirController,
    CasimirControllerSetup,
    CasimirFunction,
    EbcController,
    EbcParams,
    casimir_closed_loop_energy,
    casimir_controller_rhs,
    ebc_control,
    ebc_damping_injection,
    ebc_energy_shaping,
    interconnect,
    shaped_hamiltonian_Hd,
    verify_casimir_conditions,
)
from phbeam.discretization import DiscreteOperators, Grid, build_operators, discrete_energy
from phbeam.dynamics import (
    BeamState,
    BeamSystem,
    BoundaryConditions,
    BoundaryInput,
    PortValues,
    Trajectory,
    integrate,
    rhs,
    simulate,
    step,
)
from phbeam.model import MaterialParams, ModelSpec, ModelVariant

__all__ = [
    "BeamState",
    "BeamSystem",
    "BoundaryConditions",
    "BoundaryInput",
    "CasimirController",
    "CasimirControllerSetup",
    "CasimirFunction",
    "DiscreteOperators",
    "EbcController",
    "EbcParams",
    "Grid",
    "MaterialParams",
    "ModelSpec",
    "ModelVariant",
    "PortValues",
    "Trajectory",
    "build_operators",
    "casimir_closed_loop_energy",
    "casimir_controller_rhs",
    "discrete_energy",
    "ebc_control",
    "ebc_damping_injection",
    "ebc_energy_shaping",
    "integrate",
    "interconnect",
    "rhs",
    "shaped_hamiltonian_Hd",
    "simulate",
    "step",
    "verify_casimir_conditions",
]
