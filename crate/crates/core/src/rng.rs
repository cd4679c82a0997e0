//! Seeded data generation. ChaCha8 is counter-based and specified bit for
//! bit, so every platform draws the same inputs for a given seed and stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ArrayType, DenseArray};

/// Generator for one named input: `stream` separates inputs sharing a seed.
pub fn generator(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    g.set_stream(stream);
    g
}

/// Dense array of uniform(-1, 1) values.
pub fn uniform(seed: u64, stream: u64, ty: ArrayType) -> DenseArray {
    let mut g = generator(seed, stream);
    let vals = (0..ty.len()).map(|_| g.gen_range(-1.0..1.0)).collect();
    DenseArray::new(ty, vals).expect("length matches the type")
}

/// Dense array of small integers in `-range..=range`, for exact comparisons.
pub fn integers(seed: u64, stream: u64, ty: ArrayType, range: i32) -> DenseArray {
    let mut g = generator(seed, stream);
    let vals = (0..ty.len()).map(|_| g.gen_range(-range..=range) as f64).collect();
    DenseArray::new(ty, vals).expect("length matches the type")
}
