pub mod bench;
pub mod cross_relation;
pub mod dsp;
pub mod error;
pub mod io;
pub mod kv;
pub mod peaks;
pub mod room;
pub mod seeding;
pub mod signal;
pub mod solvers;
pub mod strategies;

pub use error::{Error, Result};
