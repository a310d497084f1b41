"""bla-lab: measurement and analysis of the best linear approximation
of nonlinear systems under random-phase multisine excitation."""

from .bla_robust import (
    BlaEstimate,
    ExperimentRecord,
    estimate_bla,
    mse_of_bla,
    record_from_time_data,
)
from .ccd_doe import (
    CcdPlan,
    DoeRegion,
    EigenPath,
    QuadraticSurface,
    build_plan,
    denormalize,
    eigen_path,
    extremum,
    fit_surface,
    normalize,
)
from .ratfit import FitSpec, RationalModel, fit_rational, weight_from_variance
from .signal_gen import (
    MultisineSpec,
    SignalRealization,
    harmonic_grid,
    realize_multisine,
    rescale,
)
from .structdetect import (
    StructureVerdict,
    SweepResult,
    bootstrap_root_uncertainty,
    classify_structure,
)
from .sysmodels import (
    LtiSystem,
    NlFeedback,
    NlMsdParams,
    NlXfbParams,
    ParallelWH,
    StaticNl,
    WienerHammerstein,
    add_noise,
    bussgang_gain,
    lti_response,
    nl_msd_default,
    simulate_block_model,
    simulate_nl_msd,
    simulate_nl_xfb,
)

__version__ = "0.1.0"
