pub mod sim;
pub mod teachers;
pub mod env;
pub mod nn;
pub mod trainer;
pub mod config;
pub mod eval;
