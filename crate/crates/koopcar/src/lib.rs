pub mod config;
pub mod dataset;
pub mod error;
pub mod eso;
pub mod koopman;
pub mod nn;
pub mod mpc;
pub mod plant;
pub mod reference;
pub mod qp;
pub mod runner;
