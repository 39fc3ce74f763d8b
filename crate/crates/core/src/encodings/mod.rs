//! Input featurisations: multiresolution hash grid for positions and real
//! spherical harmonics for view directions.

pub mod hash;
pub mod sh;

pub use hash::{hash_encode, hash_encode_backward, record_hash_encode, HashGridConfig, HashGridParams, LevelInfo};
pub use sh::{sh_encode, ShConfig};
