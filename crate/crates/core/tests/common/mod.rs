#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 8;

fn idx(magic: u32, dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Learnable 8×8 ten-class images: class `k` brightens six pixels of its
/// own, on top of dim noise.
fn images(n: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
    let mut px = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 10;
        labels.push(k as u8);
        for p in 0..SIDE * SIDE {
            let lit = p / 6 == k;
            let base: u8 = if lit { 200 } else { 0 };
            px.push(base.saturating_add(rng.random_range(0..50)));
        }
    }
    (px, labels)
}

/// Writes train/test IDX files in the MNIST naming scheme.
pub fn write_idx_dataset(dir: &Path, n_train: usize, n_test: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (prefix, n) in [("train", n_train), ("t10k", n_test)] {
        let (px, lbl) = images(n, &mut rng);
        std::fs::write(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            idx(0x803, &[n, SIDE, SIDE], &px),
        )
        .unwrap();
        std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), idx(0x801, &[n], &lbl)).unwrap();
    }
}
