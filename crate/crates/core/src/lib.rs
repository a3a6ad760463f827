//! Point-cloud object recognition lab.
//!
//! Geometry kernels, stimulus construction for density / inversion / voxel
//! ("Lego") manipulations, a small reverse-mode autodiff engine, DGCNN and
//! Point Transformer classifiers with their ablation variants, training and
//! evaluation harnesses, and the statistics used to compare model accuracy
//! profiles with human ones.

pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod dataio;
pub mod exec;
pub mod geometry;
pub mod models;
pub mod rng;
pub mod stimulus;
pub mod trainer;
