pub mod checks;
pub mod cli;
pub mod config;
pub mod dictionary;
pub mod engine;
pub mod projection;
pub mod scenarios;
pub mod schedule;
pub mod space;
