//! Deterministic discrete-event simulation of QoS-aware LLM inference serving.
//!
//! Numeric building blocks (cost model, deadlines, priority keys, decode
//! history, request types) are generic over the scalar type; the aliases
//! below name the two instantiations. The scheduler and simulator run in
//! `f64`.

pub mod config;
pub mod cost_model;
pub mod error;
pub mod experiment;
pub mod num;
pub mod policy;
pub mod sched;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};

pub type CostProfileF32 = cost_model::CostProfile<f32>;
pub type CostProfileF64 = cost_model::CostProfile<f64>;
pub type QosSpecF32 = workload::QosSpec<f32>;
pub type QosSpecF64 = workload::QosSpec<f64>;
pub type RequestInfoF32 = workload::RequestInfo<f32>;
pub type RequestInfoF64 = workload::RequestInfo<f64>;
pub type RequestF32 = workload::Request<f32>;
pub type RequestF64 = workload::Request<f64>;
pub type LogNormalFitF32 = workload::LogNormalFit<f32>;
pub type LogNormalFitF64 = workload::LogNormalFit<f64>;
pub type HistoryPriorF32 = policy::HistoryPrior<f32>;
pub type HistoryPriorF64 = policy::HistoryPrior<f64>;
pub type DecodeHistoryF32 = policy::DecodeHistory<f32>;
pub type DecodeHistoryF64 = policy::DecodeHistory<f64>;
pub type PriorityKeyF32 = policy::PriorityKey<f32>;
pub type PriorityKeyF64 = policy::PriorityKey<f64>;
