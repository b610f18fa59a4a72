//! Gauss–Hermite expectations of tanh-family functions of a univariate Gaussian.

use crate::gausscore::{sym_eigen, Matrix, SymMatrix};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

pub const MIN_ORDER: usize = 10;
pub const MAX_ORDER: usize = 200;

/// Integrand selector for [`gh_expect`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TanhKind {
    Tanh,
    TanhPrime,
    TanhSecond,
    TanhThird,
    LogCosh,
    XTanh,
}

impl TanhKind {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            TanhKind::Tanh => t.tanh(),
            TanhKind::TanhPrime => {
                let th = t.tanh();
                1.0 - th * th
            }
            TanhKind::TanhSecond => {
                let th = t.tanh();
                -2.0 * th * (1.0 - th * th)
            }
            TanhKind::TanhThird => {
                let th = t.tanh();
                -2.0 * (1.0 - th * th) * (1.0 - 3.0 * th * th)
            }
            TanhKind::LogCosh => log_cosh(t),
            TanhKind::XTanh => t * t.tanh(),
        }
    }
}

/// `ln cosh t` without overflow for large `|t|`.
pub fn log_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Nodes and weights for expectations against the standard normal density:
/// `E f(Z) ~= sum_i weights[i] * f(nodes[i])`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Physicists' Hermite rule: nodes start from the eigenvalues of the
    /// Jacobi matrix and are polished by Newton iteration on the orthonormal
    /// recurrence, which also gives weights with full relative accuracy.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        const PIM4: f64 = 0.751_125_544_464_942_5;
        let nf = n as f64;
        let jacobi = Matrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64 / 2.0).sqrt() } else { 0.0 });
        let start = sym_eigen(&SymMatrix::new(jacobi).expect("tridiagonal is symmetric"))
            .expect("finite tridiagonal")
            .values;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for (i, &z0) in start.iter().enumerate() {
            let mut z = z0;
            let mut pp = 0.0;
            for _ in 0..50 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * (1.0 + z.abs()) {
                    break;
                }
            }
            x[i] = z;
            w[i] = 2.0 / (pp * pp);
        }
        // enforce exact symmetry of the rule
        for i in 0..n / 2 {
            let (a, b) = (0.5 * (x[i] - x[n - 1 - i]), 0.5 * (w[i] + w[n - 1 - i]));
            x[i] = a;
            x[n - 1 - i] = -a;
            w[i] = b;
            w[n - 1 - i] = b;
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let nodes = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights = w.iter().map(|v| v * inv_sqrt_pi).collect();
        Self { nodes, weights }
    }

    /// Cached rule of the given order.
    pub fn cached(n: usize) -> Arc<GaussHermite> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard.entry(n).or_insert_with(|| Arc::new(GaussHermite::new(n))).clone()
    }

    pub fn expect(&self, mean: f64, std: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(mean + std * z))
            .sum()
    }
}

/// `E f(mean + std * Z)` for `Z ~ N(0, 1)`. Orders outside `[10, 200]` are clamped.
pub fn gh_expect(mean: f64, std: f64, kind: TanhKind, order: usize) -> f64 {
    if std == 0.0 {
        return kind.eval(mean);
    }
    let rule = GaussHermite::cached(order.clamp(MIN_ORDER, MAX_ORDER));
    rule.expect(mean, std.abs(), |t| kind.eval(t))
}
