//! Small hand-checkable datasets used by tests, examples and the CLI self-check.

use nalgebra::{DMatrix, DVector};

use crate::data::ClusteredDataset;

/// Rows `(y, x, z)` of the two-cluster toy fixture.
pub const T1_ROWS: [(f64, f64, f64); 6] = [
    (1.0, 0.5, 1.0),
    (2.0, 1.0, 2.0),
    (1.5, 0.8, 1.5),
    (0.5, 0.2, 0.5),
    (1.8, 1.1, 1.9),
    (1.2, 0.7, 1.1),
];

/// Cluster labels of [`T1_ROWS`].
pub const T1_CLUSTERS: [i64; 6] = [1, 1, 1, 2, 2, 2];

/// Two clusters of three rows, one endogenous regressor, one instrument,
/// intercept-only W.
pub fn t1() -> ClusteredDataset {
    let y = DVector::from_iterator(6, T1_ROWS.iter().map(|r| r.0));
    let x = DMatrix::from_iterator(6, 1, T1_ROWS.iter().map(|r| r.1));
    let z = DMatrix::from_iterator(6, 1, T1_ROWS.iter().map(|r| r.2));
    let w = DMatrix::from_element(6, 1, 1.0);
    ClusteredDataset::new(y, x, z, w, &T1_CLUSTERS).expect("fixture is valid")
}

/// [`t1`] with a second instrument `z^2`.
pub fn t1_augmented() -> ClusteredDataset {
    let base = t1();
    let z = DMatrix::from_fn(6, 2, |r, c| {
        let v = T1_ROWS[r].2;
        if c == 0 {
            v
        } else {
            v * v
        }
    });
    base.with_instruments(z).expect("fixture is valid")
}
