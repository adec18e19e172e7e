//! Thin wrapper over the sparse LU of `faer`.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Square sparse matrix in coordinate form; duplicates are summed.
#[derive(Clone, Debug, Default)]
pub(crate) struct Triplets {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.entries.push((i, j, v));
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    /// Direct solve. Fails if the factorization produces non-finite values
    /// or a solution whose residual is not small.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if n == 0 {
            return Ok(Vec::new());
        }
        let trip: Vec<Triplet<usize, usize, f64>> =
            self.entries.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
            .map_err(|e| Error::SingularSystem(format!("matrix assembly failed: {e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::SingularSystem(format!("factorization failed: {e:?}")))?;
        let mut b = Mat::<f64>::zeros(n, 1);
        for (i, &r) in rhs.iter().enumerate() {
            b[(i, 0)] = r;
        }
        let xm = lu.solve(&b);
        let x: Vec<f64> = (0..n).map(|i| xm[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("solution contains non-finite values".into()));
        }
        let ax = self.matvec(&x);
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let res = ax.iter().zip(rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if res > 1e-6 * scale.max(f64::MIN_POSITIVE) && res > 1e-300 {
            return Err(Error::SingularSystem(format!("residual {res:e} relative to right-hand side {scale:e}")));
        }
        Ok(x)
    }
}
