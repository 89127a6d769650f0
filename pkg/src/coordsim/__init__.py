"""coordsim: simulation and capacity computation for classical-quantum network coordination."""

__version__ = "0.1.0"

from .config import Caps, Tolerances, caps_from_env, default_caps
from .errors import (
    BadCut,
    BudgetExceeded,
    CoordSimError,
    DimensionCap,
    DimMismatch,
    InfeasibleExtension,
    LengthMismatch,
    NotHermitian,
    NotPSD,
    NotUnitTrace,
    ParseError,
    ShapeOverflow,
    TopologyMismatch,
    ValidationError,
)
from .qstate import (
    DensityOperator,
    PptResult,
    RegisterCut,
    afw_continuity_bound,
    bell_phi_plus,
    conditional_entropy,
    maximally_mixed,
    mutual_information,
    partial_trace,
    ppt_check,
    pure_state,
    basis_projector,
    tensor,
    trace_distance,
    validate_density,
    von_neumann_entropy,
)
from .cqmodel import (
    CqNetworkState,
    Extension,
    Topology,
    assemble,
    assemble_extension,
    broadcast_extension,
    broadcast_target,
    classical_two_node,
    feasibility_residual,
    info_broadcast,
    info_nc,
    info_two_node,
    marginalize_extension,
    no_comm_extension,
    no_comm_target,
    two_node_extension,
    two_node_target,
    u_equals_x_extension,
)
from .softcover import (
    CEnsemble,
    Codebook,
    CurveRow,
    codebook_size,
    draw_codebook,
    holevo_information,
    make_ensemble,
    mixture_state,
    resolvability_curve,
    resolvability_gap,
)
from .protocols import (
    BroadcastCode,
    NoCommCode,
    ProtocolRow,
    TwoNodeCode,
    encoder_pmf,
    induced_state_two_node,
    make_broadcast_code,
    make_no_comm_code,
    make_two_node_code,
    protocol_gap_two_node,
    run_broadcast,
    run_no_comm,
    run_two_node,
)
from .region import (
    RatePoint,
    RegionBoundary,
    RegionResult,
    SearchOptions,
    broadcast_no_cr_rate,
    broadcast_region,
    brute_force_oracle,
    min_comm_rate,
    min_no_cr_rate,
    nc_capacity,
    trace_two_node_region,
)
