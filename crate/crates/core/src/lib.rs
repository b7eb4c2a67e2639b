//! Learning robot commands from demonstration video.
//!
//! The crate has two networks and the machinery around them:
//!
//! * a grasp network ([`gnet`]): encoder–decoder segmentation, grasp
//!   rectangles fitted to mask clusters ([`geom`], [`raster`]), and a region
//!   classifier trained jointly with the segmenter;
//! * a captioning network ([`cnet`]): per-frame and difference-map features
//!   fused into a two-layer LSTM that emits a fixed-template command.
//!
//! [`scenegen`] renders synthetic tabletop scenes and demonstration episodes,
//! [`capmetrics`] scores captions, and [`simeval`] replaces the physical arm
//! with a geometric grasp check. Everything trains on [`micrograd`], a small
//! double-precision reverse-mode stack.

pub mod capmetrics;
pub mod cnet;
pub mod error;
pub mod geom;
pub mod gnet;
pub mod micrograd;
pub mod raster;
pub mod scenegen;
pub mod simeval;
pub mod tensor;

pub use error::{Error, Result};
pub use geom::{BoundingBox, GraspSolution, OrientedRect};
pub use raster::{BinaryMask, ColorMask, DifferenceMap, PixelCluster, RasterFrame};
pub use scenegen::{ActionTriple, Category, CategorySet, CommandSentence, Episode, Scene};
pub use tensor::Tensor;
