"""Privacy-budget scheduling: Renyi accounting, a block ledger, the DPF
scheduler family with FCFS/RR baselines, stream semantics with a DP user
counter, and a deterministic discrete-event simulator."""

from .accounting import (
    AlphaGrid,
    DpGuarantee,
    RdpCurve,
    block_initial_curve,
    compose,
    gaussian_curve,
    laplace_curve,
    pure_dp_curve,
    rdp_to_dp,
    zero_curve,
)
from .blocks import (
    BlockDescriptor,
    BlockKind,
    BlockSelector,
    ClaimState,
    Ledger,
    Mode,
    PrivacyClaim,
    PrivateBlock,
    StateError,
)
from .engine import (
    GlobalBudget,
    Metrics,
    SimConfig,
    SimEvent,
    SimInvariantError,
    compare_policies,
    replay_events,
    run,
)
from .scheduling import Policy, PolicyConfig, Scheduler
from .semantics import (
    BinaryCounter,
    CounterConfig,
    Semantic,
    SemanticConfig,
    SemanticsManager,
    assign_block,
    binary_mechanism_rdp_curve,
    bound_constant,
)
from .workload import ArrivalSpec, DemandTemplate, WorkloadSpec, generate_workload

__version__ = "0.1.0"
