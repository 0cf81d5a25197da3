//! Morse complexes, chain maps induced by smooth maps, and cup products,
//! computed from gradient flows of low-dimensional Morse-Smale systems.

pub mod cli;
pub mod complex;
pub mod critical;
pub mod cup;
pub mod dynamics;
pub mod error;
pub mod exterior;
pub mod functor;
pub mod geometry;
pub mod invariants;
pub mod linalg;
pub mod settings;

pub use error::{Error, Result};
pub use settings::{FlowSettings, Tolerances};
