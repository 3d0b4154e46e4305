//! Interpretable end-to-end driving with an implicit scene feature.
//!
//! Multi-frame LiDAR and a front camera are fused by transformer stages into
//! one scene feature. A GRU planning head and four auxiliary perception
//! heads (object density, BEV map, traffic rules, weather) read that feature
//! through per-head channel attention, which makes it possible to measure
//! how much each auxiliary task overlaps with what planning uses.
//!
//! Everything runs on the small autodiff engine in [`tensor`]; the
//! simulator in [`sim`] provides data, closed-loop evaluation and metrics.

pub mod analysis;
pub mod codec;
pub mod config;
pub mod controller;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod model;
pub mod sensor;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
