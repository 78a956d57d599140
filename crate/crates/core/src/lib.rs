//! Core of a desk-scale bartending cell: recipe retrieval, inventory
//! reconciliation, action-program compilation and closed-loop pour simulation,
//! tied together by a per-order session state machine.

pub mod config;
pub mod corpus;
pub mod orchestrator;
pub mod perception;
pub mod plan;
pub mod reconcile;
pub mod scene;
pub mod sim;
