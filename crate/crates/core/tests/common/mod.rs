#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use sharpness_core::linalg::SymmetricMatrix;
use sharpness_core::measures::SeededStream;

/// Symmetric matrix with standard-normal entries, scaled by `scale`.
pub fn random_symmetric(stream: &SeededStream, case: u64, d: usize, scale: f64) -> SymmetricMatrix {
    let mut rng = stream.rng(0, case);
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v: f64 = scale * rng.sample::<f64, _>(StandardNormal);
            m[i * d + j] = v;
            m[j * d + i] = v;
        }
    }
    SymmetricMatrix::from_row_major(d, &m).unwrap()
}

pub fn random_vec(stream: &SeededStream, case: u64, d: usize) -> Vec<f64> {
    let mut rng = stream.rng(1, case);
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn uniform(stream: &SeededStream, case: u64, lo: f64, hi: f64) -> f64 {
    stream.rng(2, case).random_range(lo..hi)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
