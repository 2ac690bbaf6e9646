//! Construction and numerical certification of special Lagrangian
//! submanifolds in the cotangent bundle of the sphere with its Stenzel
//! Calabi–Yau structure.

pub mod config;
pub mod construct;
pub mod error;
pub mod lie;
pub mod linalg;
pub mod moment;
pub mod pipeline;
pub mod quadrature;
pub mod quadric;
pub mod special;
pub mod stenzel;
pub mod verify;

pub use error::{Result, SlagError};
