//! Architecture samplers and resource-targeted space proposals.

mod fit;
mod sampler;

pub use fit::{
    mean_abs_inner, optimize_proposals, orthogonality_penalty, orthogonality_penalty_var, proposal_objective,
    proposal_objective_var, sample_costs, scatter_csv, ProposalConfig, ProposalSet,
};
pub use sampler::{
    ensemble_arch, ensemble_arch_var, sample_arch, sample_arch_var, sample_mixture, softmax_rows, LogitMatrix,
    SampledArch, Sampler, SamplerKind,
};
