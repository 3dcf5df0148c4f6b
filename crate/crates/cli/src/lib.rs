//! Command-line front end and stateless JSON service for the morphik solver.

pub mod api;
pub mod cli;
pub mod service;
