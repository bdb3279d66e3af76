pub mod ingest;
pub mod nn;
pub mod spectral;
pub mod vqvae;
pub mod weights;
pub mod synthetic;
pub mod fusion;
pub mod baseline;
pub mod costmodel;
pub mod pipeline;
pub mod dataset;
