//! Lifelong person search at desk scale.
//!
//! A toy detector with a norm-aware embedding head is trained over a
//! sequence of synthetic domains. Knowledge of earlier domains is kept
//! with a small exemplar store, a frozen copy of the previous model,
//! identity prototypes, hard background proposals and a queue of
//! unlabeled person features.

pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod lifelong;
pub mod losses;
pub mod memory;
pub mod perception;
pub mod rng;
pub mod synthgen;

pub use error::{LpsError, Result};
pub use geometry::{iou, BoundingBox};
pub use synthgen::{DomainDataset, DomainSpec, Identity, SceneSample};
