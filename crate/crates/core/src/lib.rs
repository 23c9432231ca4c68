//! Vessel segmentation corruption, corrective-instruction and refinement engine.
//!
//! The crate synthesizes parameterized errors into multi-class arterial label
//! volumes, renders each error into a corrective instruction, parses
//! instructions back into edit commands, and applies them with a deterministic
//! geometric refiner. A metrics harness scores refined shapes.

pub mod volume;
pub mod centerline;
pub mod geometry;
pub mod hash;
pub mod phantom;
pub mod tube;
pub mod corruption;
pub mod instruction;
pub mod llm_bridge;
pub mod metrics;
pub mod refine;
pub mod pipeline;
