//! Deployment layer: configuration, offline provisioning, per-server online
//! state, the in-process harness and the socket daemons.

pub mod bench;
pub mod client;
pub mod config;
pub mod daemon;
pub mod local;
pub mod offline;
pub mod server;
pub mod supply;

pub use bench::{run_suite, BenchOptions, BenchReport, Measurement, Suite};
pub use client::{query_servers, ClientReport};
pub use config::{Config, HeConfig};
pub use daemon::{bind, open_peer_link, party, serve, server_handshake, PeerLink, ServeOptions, ServeReport, CONTROL_SESSION};
pub use local::{BatchOutcome, LocalDeployment, QueryOutcome, Schedule};
pub use offline::{audit_stores, provisioned_demand, run_offline, OfflineOptions, OfflineReport, OVERPROVISION};
pub use server::{QueryTicket, ServerCore};
pub use supply::{DealerSource, TripletSource};
