"""Simulation of OAM helicity sorting and full state tomography of OAM light."""

from .exceptions import (
    CapacityError,
    InvalidArgument,
    OamError,
    PreconditionViolation,
    ResolutionError,
    TruncationError,
)
from .basis import (
    Basis,
    BlockDecomposition,
    ModeIndex,
    RailDensity,
    RailState,
    block_assemble,
    block_decompose,
    fidelity,
    make_basis,
    project_subspace,
    psd_project,
    trace_distance,
)
from .circuits import (
    Circuit,
    full_helicity_sorter,
    gate_hx,
    gate_hy,
    gate_phase,
    hs_even_cascade,
    hs_even_slm,
    hs_odd,
    oam_sorter,
    partial_helicity_sorter,
    routing_table,
)
from .ahst import AHSTReconstructor, Grid, IntensityGrid, reconstruct_negative, reconstruct_positive
from .tomography import (
    FullStateTomography,
    MarginalSet,
    QSTConfig,
    TomographyReport,
    assemble_full_density,
    random_density,
    run_full_qst,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "InvalidArgument", "OamError", "PreconditionViolation", "ResolutionError",
    "TruncationError", "Basis", "BlockDecomposition", "ModeIndex", "RailDensity", "RailState",
    "block_assemble", "block_decompose", "fidelity", "make_basis", "project_subspace",
    "psd_project", "trace_distance", "Circuit", "full_helicity_sorter", "gate_hx", "gate_hy",
    "gate_phase", "hs_even_cascade", "hs_even_slm", "hs_odd", "oam_sorter",
    "partial_helicity_sorter", "routing_table", "AHSTReconstructor", "Grid", "IntensityGrid",
    "reconstruct_negative", "reconstruct_positive", "FullStateTomography", "MarginalSet",
    "QSTConfig", "TomographyReport", "assemble_full_density", "random_density",
    "run_full_qst",
]
