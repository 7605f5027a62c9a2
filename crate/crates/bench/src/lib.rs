//! Synthetic fixtures shared by the benchmarks.

use pstm_core::{BinaryDataset, BitVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_bits(rng: &mut impl Rng, width: usize) -> BitVector {
    BitVector::from_bits((0..width).map(|_| rng.random::<bool>()))
}

pub fn random_points(n: usize, width: usize, seed: u64) -> Vec<BitVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_bits(&mut rng, width)).collect()
}

/// `modes` noisy prototypes per class; each point flips ~5% of its
/// prototype's bits.
pub fn multimodal(classes: usize, modes: usize, per_mode: usize, width: usize, seed: u64) -> BinaryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<BitVector> = (0..classes * modes).map(|_| random_bits(&mut rng, width)).collect();
    let (mut points, mut labels) = (Vec::new(), Vec::new());
    for (i, proto) in protos.iter().enumerate() {
        for _ in 0..per_mode {
            let mut x = proto.clone();
            for b in 0..width {
                if rng.random_bool(0.05) {
                    x.set(b, !x.get(b));
                }
            }
            points.push(x);
            labels.push(i / modes);
        }
    }
    BinaryDataset::new(points, labels, classes).expect("non-empty fixture")
}
