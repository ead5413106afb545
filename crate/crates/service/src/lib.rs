//! Session service and command-line front end for the recommendation loop.

pub mod api;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod jobs;
pub mod session;
pub mod state;
