//! Zero-shot object detection head trained with semantic supervision.
//!
//! Region features and class embeddings are mapped into a shared space, fused
//! by element-wise product and scored by two consistency heads: one for the
//! background and seen classes (cross-entropy), one for unseen classes
//! (binary cross-entropy against a seen-to-unseen similarity matrix). A
//! supervised region-to-region contrastive loss shapes the visual embedding,
//! and a class-agnostic regressor refines boxes. At test time the two paths
//! are fused and passed through class-wise NMS.
//!
//! The image backbone and proposal network are replaced by [`synthdata`], a
//! seeded generator of region proposals whose features depend linearly on the
//! class semantics, which makes zero-shot transfer measurable on a CPU.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod semantics;
pub mod synthdata;
pub mod trainer;

pub use error::{Result, ZsdError};
