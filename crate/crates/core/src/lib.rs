pub mod lang;
pub mod math;
pub mod reason;
pub mod valuation;
pub mod nn;
pub mod assets;
pub mod envs;
pub mod policy;
pub mod train;
pub mod explain;
pub mod config;
pub mod checkpoint;
pub mod cli;
