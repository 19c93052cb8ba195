//! Random small IV datasets for property tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use wildiv::rng::{self, NormalSampler};
use wildiv::ClusteredDataset;

/// `q` clusters of 4 to 9 rows, one endogenous regressor, `dz` instruments,
/// W = intercept plus `dw - 1` covariates.
pub fn random_dataset(seed: u64, q: usize, dz: usize, dw: usize) -> ClusteredDataset {
    let mut r = rng::substream(seed, &[0x7e57]);
    let normal = NormalSampler::default();
    let mut sizes = Vec::new();
    for _ in 0..q {
        sizes.push(4 + (rng::open_uniform(&mut r) * 6.0) as usize);
    }
    let n: usize = sizes.iter().sum();
    let mut ids = Vec::with_capacity(n);
    for (j, &s) in sizes.iter().enumerate() {
        ids.extend(std::iter::repeat(j as i64).take(s));
    }
    let z = DMatrix::from_fn(n, dz, |_, _| normal.draw(&mut r));
    let w = DMatrix::from_fn(n, dw, |_, c| if c == 0 { 1.0 } else { normal.draw(&mut r) });
    let pi: Vec<f64> = (0..dz).map(|_| 0.5 + normal.draw(&mut r).abs()).collect();
    let mut x = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let e = normal.draw(&mut r);
        let v = 0.5 * e + normal.draw(&mut r);
        let zi: f64 = (0..dz).map(|k| z[(i, k)] * pi[k]).sum();
        x[(i, 0)] = zi + 0.3 * w[(i, dw - 1)] + v;
        y[i] = 0.7 * x[(i, 0)] + 0.2 * w[(i, 0)] + e;
    }
    ClusteredDataset::new(y, x, z, w, &ids).expect("generated data is valid")
}
