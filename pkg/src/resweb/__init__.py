"""Resonance webs, double-resonance normal forms, channels and weak-KAM
barriers for nearly integrable convex Hamiltonians with three degrees of
freedom."""

from .averaged import (
    AlphaBeta,
    ChannelData,
    MechanicalSystem,
    PeriodicOrbit,
    alpha_beta,
    embed_channel,
    minimal_orbit,
    overlap_check,
    scan_channel,
)
from .estimates import DeviationReport, verify_deviation
from .lattice import (
    dirichlet_approx,
    rational_period,
    shear_transform,
    totally_irreducible,
    unimodular_complete,
)
from .model import (
    ConvexHamiltonian,
    FourierMode,
    FourierPerturbation,
    NearlyIntegrableSystem,
    sup_norms,
)
from .normalform import NormalForm, reduce, remainder_sweep, symmetry_check
from .resonance import (
    DoubleResonance,
    ResonanceCircle,
    classify,
    dirichlet_cover,
    find_double_resonances,
    trace_circle,
)
from .torus import TorusPotential
from .weakkam import (
    TorusGrid,
    barrier,
    build_kernel,
    elementary_solutions,
    lax_oleinik,
)

__version__ = "0.1.0"
