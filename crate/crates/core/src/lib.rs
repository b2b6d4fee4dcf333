//! Window-based event denoising: event I/O, a log-intensity event simulator
//! with background-activity noise, the temporal window and bone-event
//! checks, a hierarchical sparse-coding network with manual gradients,
//! baseline filters and evaluation.

pub mod bec;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod event;
pub mod geometry;
pub mod gof;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod sim;
pub mod temporal;

pub use error::{Error, Result};
pub use event::{Event, EventWindow, Label, SensorGeometry};
