//! Open-ended evolution of voxel buildings.
//!
//! CPPN genomes evolve under NEAT with novelty measured in the latent space of
//! a 3D convolutional autoencoder. The autoencoder is periodically retrained
//! on discovered individuals, which redefines what counts as novel.

pub mod autoencoder;
pub mod config;
pub mod cppn;
pub mod dataset;
pub mod metrics;
pub mod neat;
pub mod novelty;
pub mod orchestrator;
pub mod rng;
pub mod voxel;

pub use voxnox_tensor as tensor;

pub use autoencoder::{Autoencoder, Autoencoder32, Autoencoder64, AutoencoderConfig, LatentVector};
pub use config::{ExperimentConfig, Strategy};
pub use cppn::{CppnGenome, ConnectionGene, NodeGene};
pub use metrics::{PatternConfig, PatternDistribution};
pub use neat::{NeatParams, Population};
pub use novelty::NoveltyArchive;
pub use voxel::{BooleanLattice, Dims, Material, MaterialLattice, OneHotLattice, StructuralStats};
