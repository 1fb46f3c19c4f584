//! Relative rotation estimation between a reference RGB-D view and a query RGB
//! view of an unseen object, by rendering a textured mesh of the reference and
//! comparing it against the query.
//!
//! The pipeline is: back-project the reference depth ([`camera`]), build a
//! textured triangle mesh ([`mesh`]), sample candidate rotations on a
//! viewpoint lattice ([`rotations`]), render each candidate ([`render`]),
//! score it with MS-SSIM on colour and semantic maps ([`losses`],
//! [`semantics`]) and refine the best one by gradient descent
//! ([`estimator`]). [`evaluation`] scores estimates against ground truth.

pub mod camera;
pub mod crop;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod image;
pub mod losses;
pub mod mesh;
pub mod render;
pub mod rotations;
pub mod semantics;
pub mod synthetic;

pub use error::{Error, Result};
pub use image::{BoundingBox, Image, Mask};
pub use rotations::Rotation;
