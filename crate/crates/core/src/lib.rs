//! Distributed hypothesis detection over networks of agents.
//!
//! Agents observe private signals, run exponential-weights belief updates,
//! and average scores with neighbors through a row-stochastic communication
//! matrix. The crate measures each agent's cost against a centralized expert
//! and provides the spectral tools and network mutations that drive that cost.

pub mod detection;
pub mod error;
pub mod experiments;
pub mod markov;
pub mod scenario;
pub mod signal;
pub mod topology;

pub use detection::{
    beliefs, closed_form_scores, kl_cost_increment, lemma3_bound, run, step, theorem1_bound,
    theorem1_eta, BeliefProfile, CostLedger, EtaMode, RunConfig, ScoreState, Trajectory,
};
pub use error::{Error, Result};
pub use markov::{
    mixing_sum, spectral_summary, stationary_distribution, RowStochasticMatrix, SpectralSummary,
};
pub use signal::{
    check_identifiability, information_profile, sample_signal, InformationProfile, SignalModel,
    StateSpace,
};
pub use topology::{
    analytic_spectrum, generate, optimal_mix, remove_link, MixedChain, NetworkKind, NetworkSpec,
};
