//! Actor-critic training on the augmented state `(t, upsilon, s, y)`.
//!
//! Each epoch simulates episodes with an auxiliary variable drawn around the
//! current `upsilon*`, regresses the critic on one-step targets, takes a
//! likelihood-ratio step on the actor, and periodically re-estimates
//! `upsilon*` either by SGD through the critic or, for ES-type objectives, by
//! the empirical quantile of episode costs.

pub mod buffer;
pub mod steps;
mod train;
pub mod upsilon;

pub use buffer::ReplayBuffer;
pub use steps::{actor_step, critic_step, policy_gradient, StepContext};
pub use train::{bounds_and_bracket, train, Agent, LogRow, NetConfig, NetPolicy, TrainConfig, TrainOutcome, LOG_HEADER};
pub use upsilon::{
    es_quantile_update, sample_upsilon, sample_upsilon_unclipped, search_upsilon, upsilon_objective, CriticSurface,
    UpsilonSearch, UpsilonState, UpsilonSurface,
};
