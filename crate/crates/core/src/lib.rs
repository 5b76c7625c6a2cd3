#![no_std]

extern crate alloc;

pub mod agent;
pub mod data;
pub mod env;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod preference;
pub mod ranknet;
pub mod rng;
pub mod scheduler;
pub mod theory;

pub use error::{Error, Result};

