pub mod augment;
pub mod checkpoint;
pub mod corpus;
pub mod discriminator;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod generator;
pub mod nn;
pub mod oracle;
pub mod params;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
