//! Channel modelling, cascaded channel estimation and resource allocation for
//! RIS-assisted downlinks in one or two cells.
//!
//! Numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the aliases
//! below fix the precision for callers that do not need the generality.

pub mod channel;
pub mod error;
pub mod estimation;
pub mod multi_user;
pub mod scalar;
pub mod single_user;

pub use channel::{
    generate_scenario, noise_power, path_loss, sample_fading, Association, ChannelSet, LinkSet, PathLossKind,
    RisConfig, Scenario, SystemConstants,
};
pub use error::{Result, RisError};
pub use estimation::{estimate_links, nmse, EstimatorKind, PriorCovariance, TrainingParams};
pub use multi_user::{allocate, associate_users, AllocationParams, AllocationResult, PowerAllocation, Strategy};
pub use scalar::Real;
pub use single_user::{SingleUserMethod, SingleUserSolution};

pub type Scenario64 = channel::Scenario<f64>;
pub type Scenario32 = channel::Scenario<f32>;
pub type RisConfig64 = channel::RisConfig<f64>;
pub type RisConfig32 = channel::RisConfig<f32>;
pub type LinkSet64 = channel::LinkSet<f64>;
pub type LinkSet32 = channel::LinkSet<f32>;
pub type ChannelSet64 = channel::ChannelSet<f64>;
pub type ChannelSet32 = channel::ChannelSet<f32>;
pub type PowerAllocation64 = multi_user::PowerAllocation<f64>;
pub type PowerAllocation32 = multi_user::PowerAllocation<f32>;
pub type AllocationResult64 = multi_user::AllocationResult<f64>;
pub type AllocationResult32 = multi_user::AllocationResult<f32>;
pub type SingleUserSolution64 = single_user::SingleUserSolution<f64>;
pub type SingleUserSolution32 = single_user::SingleUserSolution<f32>;
pub type CVector64 = scalar::CVector<f64>;
pub type CMatrix64 = scalar::CMatrix<f64>;
