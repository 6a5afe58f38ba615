"""Discover affine metamorphic relations and use them to test a kinetic-energy model."""

__version__ = "0.1.0"

from .algebra import (
    AffineMR,
    FlatLayout,
    MRSet,
    apply_mr,
    catalogue_mr,
    compose,
    dense_mr,
    flatten,
    identity_mr,
    manual_catalogue,
    mr_distance,
    unflatten,
)
from .analysis import (
    covariance_eigenanalysis,
    high_variance_attributes,
    nearest_catalogue_match,
    parameter_matrix,
    targeted_discover,
)
from .errors import (
    ConvergenceError,
    DimensionCapError,
    MRForgeError,
    NonFiniteCostError,
    SearchFailureError,
    SingularParameterError,
    ValidationError,
)
from .harness import (
    CampaignReport,
    MRTestResult,
    export_report,
    load_report,
    run_campaign,
    run_mr_test,
)
from .model import (
    EnergySeries,
    GridSpec,
    ModelInput,
    Variant,
    VelocityFields,
    energy_pipeline,
    kinetic_energy,
    random_sea_level,
    velocities,
)
from .search import (
    CostConfig,
    SearchConfig,
    SearchTrace,
    accept_step,
    cost,
    discover,
    flat_function,
    minimize,
    propose_mutation,
)
