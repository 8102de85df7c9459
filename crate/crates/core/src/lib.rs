//! Vision-guided attention laboratory.
//!
//! A tiny decoder with a visual-token prefix, grounding read off its visual
//! logits, guided attention that works on attention outputs alone, and an
//! evaluation kit built around planted scenes.
//!
//! Everything numeric is generic over [`numerics::Scalar`] (`f32` or `f64`).
//! The aliases below fix the precision for the common cases: weight files are
//! `f32`, and the oracle tests run in `f64`.

pub mod error;
pub mod evalkit;
pub mod grounding;
pub mod model;
pub mod numerics;
pub mod vga;

pub use error::{Error, Result};

pub type Matrix32 = numerics::Matrix<f32>;
pub type Matrix64 = numerics::Matrix<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Grounding32 = grounding::Grounding<f32>;
pub type Grounding64 = grounding::Grounding<f64>;
pub type VgaSession32 = vga::VgaSession<f32>;
pub type VgaSession64 = vga::VgaSession<f64>;
