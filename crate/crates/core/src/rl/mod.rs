//! TD3 with hindsight relabeling, demonstration injection and an initial
//! random-exploration phase.

mod agent;
mod her;
mod replay;
mod train;
mod transition;

pub use agent::{clipped_double_q_target, Batch, CriticLosses, Td3Agent, Td3Config};
pub use her::her_relabel;
pub use replay::ReplayBuffer;
pub use train::{
    evaluate_agent, read_curve, rollout, write_curve, CurveRow, EpisodeSummary, TrainConfig, TrainVariant, Trainer,
    CURVE_HEADER,
};
pub use transition::{Demonstrator, EnvStep, GoalEnv, Transition};
