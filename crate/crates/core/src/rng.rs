//! Seeded random streams.
//!
//! Every stochastic component owns a `ChaCha8Rng` derived from the run seed
//! and a fixed stream id, so adding draws to one component never perturbs
//! another.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw.
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}
