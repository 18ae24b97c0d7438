//! Seeded fixtures shared by the benchmarks in `benches/`.

use jigsaw_core::evaluation::LabeledScores;
use jigsaw_core::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` images of uniform noise in `[0, 1]`.
pub fn noise_images(n: usize, channels: usize, side: usize, seed: u64) -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..channels * side * side).map(|_| rng.random()).collect();
            ImageTensor::new(channels, side, side, data).expect("valid shape")
        })
        .collect()
}

/// `n` scores where the anomalous tenth is shifted up by one.
pub fn shifted_scores(n: usize, seed: u64) -> LabeledScores {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anomalous: Vec<bool> = (0..n).map(|i| i % 10 == 0).collect();
    let scores = anomalous.iter().map(|&a| rng.random::<f64>() + f64::from(u8::from(a))).collect();
    LabeledScores::new(scores, anomalous).expect("matching lengths")
}
