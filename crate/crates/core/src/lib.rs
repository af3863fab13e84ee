#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amplitude;
pub mod error;
pub mod kvn;
pub mod model;
pub mod quadrature;
pub mod ensemble;
pub mod spectral;
pub mod worked;
pub mod config;
pub mod io;
pub mod cli;
