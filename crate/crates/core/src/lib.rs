//! Vexel turns a raster image into a layered vector-graphics document and
//! iteratively reshapes and recolors its elements to minimize embedding-space
//! guidance losses.
//!
//! Pipeline: [`vectorize`] builds a multi-round document from an image,
//! [`render`] rasterizes it differentiably, [`guidance`] scores the raster
//! against text prompts through an embedding backend, and [`optim`] runs Adam
//! over decoupled shape/color parameter groups. [`io`] covers the SVG subset,
//! PNG, and the run-configuration format.

pub mod geom;
pub mod guidance;
pub mod io;
pub mod model;
pub mod optim;
pub mod raster;
pub mod render;
pub mod vectorize;

mod error;

pub use error::{Error, Result};
