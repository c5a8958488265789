//! FedAvg over simulated clients.

mod client;
mod coordinator;

pub use client::LocalClient;
pub use coordinator::{
    fedavg_aggregate, run_federation, write_round_history, FederatedClient, FederationConfig, FederationOutcome,
    RoundRecord, BASE_BATCH_SIZE,
};
