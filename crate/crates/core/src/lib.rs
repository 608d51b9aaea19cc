//! Stylized indoor scene synthesis with per-object texturing.
//!
//! Objects are placed into oriented boxes (from a file or a language
//! model), painted one after another by a depth-conditioned inpainting
//! backend that sees a shared scene reference, and can then be edited and
//! re-textured through a small HTTP service.

pub mod diffusion;
pub mod geometry;
pub mod layout;
pub mod pipeline;
pub mod raster;
pub mod service;
pub mod synth;
pub mod texturing;
