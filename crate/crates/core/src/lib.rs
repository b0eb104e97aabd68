//! Federated graph learning with graphless clients.
//!
//! Clients that hold an attributed graph and clients that hold only node
//! features train a shared GCN. Each client also trains a structure-free
//! feature encoder that distills the GCN's predictions; graphless clients
//! learn their own adjacency by contrasting GCN embeddings against the
//! encoder's. The server averages GCN and encoder parameters only.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod graph;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod seed;

pub use error::{Error, Result};
