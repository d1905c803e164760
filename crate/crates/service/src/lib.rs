//! Scene ingestion, benchmarking, training-record emission and the editing
//! session service built on `lap-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod scene_file;
pub mod server;
pub mod session;
