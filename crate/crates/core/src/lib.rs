//! Polyharmonic spline cascades.
//!
//! A cascade is a chain of *packages*. Each package holds a fixed
//! constellation of key points `C` and a block of function values `Y` at
//! those points; evaluating it on a batch interpolates every column of `Y`
//! with the kernel `m·(ln m − b) + c` of squared distances. Training never
//! touches interpolation coefficients directly: every batch is linearized
//! around the current values and a single `r×r` symmetric system yields a
//! synchronized update of all layers' `Y` at once.

pub mod cascade;
pub mod cli;
pub mod data;
pub mod error;
pub mod numerics;
pub mod package;
pub mod trainer;

pub use cascade::{
    init_cascade, CascadeState, ForwardTrace, GradientSet, InitOptions, LayerSpec,
    ReplicatedCascade,
};
pub use error::{Error, Result};
pub use numerics::Matrix;
pub use package::{KernelConstants, LayerTrace, PackageState};

/// ChaCha8 stream for one purpose (`domain`) and index under a user seed.
pub(crate) fn seeded_rng(seed: u64, domain: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 40) | index);
    rng
}
