//! Plug-and-play watermarking for image classifiers.
//!
//! A small proprietary network is trained, independently of the model it
//! protects, to recognise trigger backgrounds. At deployment its watermark
//! class probabilities are added onto designated coordinates of the protected
//! model's softmax output. Benign inputs pass through untouched because the
//! proprietary network stays silent on them; inputs blended with a trigger
//! background land on the owner's chosen labels. The protected model's
//! parameters are never modified.

pub mod attacks;
pub mod baseline;
pub mod data;
mod error;
pub mod fusion;
pub mod image;
pub mod imaging;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod ptynet;
pub mod report;
pub mod seed;
pub mod trigger;
pub mod verify;

pub use error::{Error, Result};
pub use image::{Image, Mask};
