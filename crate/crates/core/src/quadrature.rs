//! Quadrature on the reference simplex: `(0, 1)` in 1D and the triangle
//! with vertices `(0,0), (1,0), (0,1)` in 2D.

use crate::error::{Error, Result};

pub const MAX_ORDER_1D: usize = 40;
pub const MAX_ORDER_2D: usize = 24;

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Gauss-Legendre nodes and weights on `(0, 1)`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        if d.is_finite() {
            dp = d;
        }
        let wt = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = 0.5 * (1.0 - t);
        x[n - 1 - i] = 0.5 * (1.0 + t);
        w[i] = 0.5 * wt;
        w[n - 1 - i] = 0.5 * wt;
    }
    (x, w)
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

/// Rule exact for polynomials of total degree `order` on the reference
/// simplex of dimension `dim`.
pub fn quadrature_rule(dim: usize, order: usize) -> Result<QuadratureRule> {
    match dim {
        1 if order <= MAX_ORDER_1D => {
            let (x, w) = gauss_legendre(order / 2 + 1);
            Ok(QuadratureRule { points: x.into_iter().map(|t| [t, 0.0]).collect(), weights: w })
        }
        2 if order <= MAX_ORDER_2D => {
            // collapsed tensor rule: x = u, y = (1 - u) v, dA = (1 - u) du dv
            let (xu, wu) = gauss_legendre((order + 2).div_ceil(2));
            let (xv, wv) = gauss_legendre((order + 1).div_ceil(2));
            let mut points = Vec::with_capacity(xu.len() * xv.len());
            let mut weights = Vec::with_capacity(xu.len() * xv.len());
            for (&u, &a) in xu.iter().zip(&wu) {
                for (&v, &b) in xv.iter().zip(&wv) {
                    points.push([u, (1.0 - u) * v]);
                    weights.push(a * b * (1.0 - u));
                }
            }
            Ok(QuadratureRule { points, weights })
        }
        _ => Err(Error::UnsupportedQuadrature { dim, order }),
    }
}
