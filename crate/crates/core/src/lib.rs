//! Online, distributed learning of application knowledge for autotuned
//! applications.
//!
//! A parallel application exposes *software knobs* (discrete tunable
//! parameters) and measures *extra-functional properties* (EFPs) such as
//! execution time or result quality. While the application runs in
//! production, a coordinating [`server`] hands out knob configurations chosen
//! by a design of experiments ([`doe`]) to the application instances
//! ([`client`]), collects their measurements, fits surrogate models
//! ([`models`], [`ensemble`]), validates and selects one per EFP
//! ([`evaluate`]), clusters the observed input features ([`clustering`]) and
//! finally broadcasts a list of operating points ([`knowledge`]) that every
//! instance uses to pick its configuration under user requirements.
//!
//! The [`protocol`] module carries the messages between the two sides and
//! [`harness`] provides synthetic applications and an experiment runner.

pub mod clustering;
pub mod client;
pub mod doe;
pub mod domain;
pub mod ensemble;
pub mod evaluate;
pub mod harness;
pub mod knowledge;
pub mod models;
pub mod protocol;
pub mod server;

pub use domain::{
    ApplicationDescription, EfpVector, FeatureVector, KnobConfig, KnobDomain, KnowledgeBase,
    Observation, OperatingPoint,
};
