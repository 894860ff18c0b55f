//! Large deviations: the action functional `J`, rate functions `I`, skeleton flows,
//! small-noise flow SDEs, capacities and the `eps log c` slope.

pub mod capacity;
pub mod flow;
pub mod optimize;
pub mod rate;

pub use capacity::{
    capacity_estimate, exit_event, ldp_slope, worst_case_qv, CapacityReport, PolicyFrequency,
    QvPath, QvReport, SlopePoint, SlopeReport,
};
pub use flow::{
    euler_convergence, flow_regularity, gsde_map, gsde_solve, sample_pairs, skeleton_euler,
    skeleton_ode, CoefficientFamily, Coefficients, FieldFn, FlowPaths, FlowSample, FlowSpec,
    FlowValues, FnCoefficients, LinearFlow, RegularityReport, SineFlow,
};
pub use rate::{rate_i, rate_j, RateOptions, RateResult, RateTarget, SkeletonMap, SkeletonPair};
