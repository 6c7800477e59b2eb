//! Simulation and protocol library for multi-radio wireless mesh networks.
//!
//! The crate models a static mesh backbone ([`topology`]) driven by a
//! seeded discrete-event engine with a shared-medium MAC ([`engine`]). On top
//! of it sit the link-quality metric ([`metrics`]), proactive link-state
//! routing with a local route maintainer ([`routing`]), airtime admission
//! control ([`qos`]) and the application services ([`services`]).
//! [`harness`] loads scenarios, runs replicas and sweeps, and exports
//! results.
//!
//! Numeric cores are generic over [`scalar::Scalar`]; the aliases below fix
//! the common `f64` instantiations.

pub mod engine;
pub mod harness;
pub mod metrics;
pub mod qos;
pub mod routing;
pub mod scalar;
pub mod services;
pub mod topology;

pub type LinkStatsF64 = metrics::LinkStats<f64>;
pub type ElpParamsF64 = metrics::ElpParams<f64>;
pub type AdmissionLedgerF64 = qos::AdmissionLedger<f64>;
pub type RoutingTableF64 = routing::RoutingTable<f64>;
pub type LinkStateDbF64 = routing::LinkStateDb<f64>;
