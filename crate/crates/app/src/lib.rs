//! Command-line interface and HTTP gateway for the acurai middleware.

pub mod cli;
pub mod config;
pub mod gateway;
