//! Trace-driven simulator for orchestrating shared compute between RAN and
//! AI workloads.
//!
//! The pipeline: real (or synthetic) cell traces are normalized into demand
//! profiles ([`trace`]), a multi-task LSTM forecasts next-step demand and
//! spike probability ([`forecast`]), and a soft actor-critic agent
//! ([`agent`]) drives a rate-limited, MIG-quantized allocation environment
//! ([`env`]). Static split policies ([`policy`]) run through the same
//! environment for comparison, and [`metrics`] turns per-step telemetry into
//! completion/adaptability reports. [`orchestrator`] wires the control loop
//! together; [`cli`] exposes it as a command-line tool.
//!
//! All numerical code is generic over the [`Scalar`] float type; the
//! concrete aliases below fix the pipeline at `f64`.

pub mod agent;
pub mod cli;
pub mod config;
pub mod env;
pub mod forecast;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod trace;

mod error;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the shipped pipeline. The networks are tiny, so
///64-bit precision costs little and keeps gradient checks tight.
pub type Real = f64;

pub type Tensor64 = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Graph64 = nn::Graph<f64>;
pub type ParamStore64 = nn::ParamStore<f64>;

pub type TraceSeries = trace::TraceSeries;
pub type DemandProfile = trace::DemandProfile<Real>;
pub type WindowedDataset = trace::WindowedDataset<Real>;
