pub mod agent;
pub mod cli;
pub mod config;
pub mod domain;
pub mod dsp;
pub mod eval;
pub mod perception;
pub mod render;
pub mod sloshsim;
pub mod vision;
