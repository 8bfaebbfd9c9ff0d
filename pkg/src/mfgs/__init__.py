"""Multi-fidelity gradient sampling for fixed-order H-infinity controller design."""

from .lti import (
    ClosedLoop,
    Controller,
    ControllerLayout,
    DescriptorPlant,
    DimensionError,
    IrregularPencilError,
    ModelHierarchy,
    assemble_closed_loop,
    make_general_plant,
    make_normalized_lqg,
    pack_controller,
    unpack_controller,
)
from .analysis import (
    NormResult,
    SpectralResult,
    hinf_norm,
    linf_norm,
    linf_oracle_grid,
    spectral_abscissa,
    transfer_eval,
)
from .grad import ControllerGradient, fd_gradient, grad_hinf, grad_specabs
from .qp import HullProblem, min_norm_hull
from .gs import GsParams, GsTrace, gs_step, run_gs, sample_ball, stabilize
from .mf import HierarchyProblem, MfResult, default_schedule, run_amfgs, run_hfgs, run_rmfgs
from .bench import HeatHierarchySpec, build_heat_hierarchy, load_hierarchy, save_hierarchy

__version__ = "0.1.0"
