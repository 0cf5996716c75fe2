pub mod adapters;
pub mod app;
pub mod client;
pub mod clock;
pub mod config;
pub mod error;
pub mod hub;
pub mod images;
pub mod kernel;
pub mod model;
pub mod rules;
pub mod server;
pub mod sim;
pub mod telemetry;
