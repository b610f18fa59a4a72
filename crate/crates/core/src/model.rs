//! Linear generator and softmax-quadratic discriminator.

use crate::error::{Error, Result};
use crate::gausscore::{sym_eigen, Matrix, SeededRng, SymMatrix, Vector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenMode {
    /// `G(z) = y (Λz + μ)` with `y = ±1`.
    Symmetric2,
    /// `G(z) = Λz + μ_y` with `y` uniform on `1..=k`.
    SharedCov,
}

/// Generator with a shared covariance factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub mode: GenMode,
    pub lambda_factor: Matrix,
    pub means: Vec<Vector>,
}

/// Latent draws `z` (rows) and their component labels.
///
/// Labels are `±1` for [`GenMode::Symmetric2`] and `1..=k` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Matrix,
    pub labels: Vec<i64>,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl GeneratorParams {
    pub fn symmetric(lambda_factor: Matrix, mu: Vector) -> Result<Self> {
        let g = Self { mode: GenMode::Symmetric2, lambda_factor, means: vec![mu] };
        g.validate()?;
        Ok(g)
    }

    pub fn shared_cov(lambda_factor: Matrix, means: Vec<Vector>) -> Result<Self> {
        let g = Self { mode: GenMode::SharedCov, lambda_factor, means };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lambda_factor.nrows();
        if d == 0 || !self.lambda_factor.is_square() {
            return Err(Error::invalid("generator factor must be square and non-empty"));
        }
        match self.mode {
            GenMode::Symmetric2 if self.means.len() != 1 => {
                return Err(Error::invalid("symmetric generator takes exactly one mean"))
            }
            GenMode::SharedCov if self.means.len() < 2 => {
                return Err(Error::invalid("shared-covariance generator needs k >= 2 means"))
            }
            _ => {}
        }
        if self.means.iter().any(|m| m.len() != d) {
            return Err(Error::invalid("generator mean dimension mismatch"));
        }
        let finite = self.lambda_factor.iter().chain(self.means.iter().flat_map(|m| m.iter())).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("generator parameters must be finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lambda_factor.nrows()
    }

    /// Number of mixture components generated.
    pub fn k(&self) -> usize {
        match self.mode {
            GenMode::Symmetric2 => 2,
            GenMode::SharedCov => self.means.len(),
        }
    }

    /// Signed label and mean index for a raw label.
    fn resolve(&self, y: i64) -> Result<(f64, usize)> {
        match self.mode {
            GenMode::Symmetric2 if y == 1 || y == -1 => Ok((y as f64, 0)),
            GenMode::SharedCov if y >= 1 && (y as usize) <= self.means.len() => Ok((1.0, y as usize - 1)),
            _ => Err(Error::invalid(format!("label {y} out of range for {:?}", self.mode))),
        }
    }

    /// `ΛΛ^T`, the covariance of every generated component.
    pub fn component_cov(&self) -> SymMatrix {
        SymMatrix::symmetrize(&(&self.lambda_factor * self.lambda_factor.transpose()))
    }

    /// Parameters flattened as `vec(Λ)` (row-major) followed by the means.
    pub fn to_flat(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d + d * self.means.len());
        for i in 0..d {
            for j in 0..d {
                out.push(self.lambda_factor[(i, j)]);
            }
        }
        for m in &self.means {
            out.extend(m.iter());
        }
        out
    }
}

pub fn gen_forward(g: &GeneratorParams, z: &Vector, y: i64) -> Result<Vector> {
    if z.len() != g.dim() {
        return Err(Error::invalid("latent dimension mismatch"));
    }
    let (sign, idx) = g.resolve(y)?;
    Ok((&g.lambda_factor * z + &g.means[idx]) * sign)
}

/// Draw labels and latents: for every row the label first, then `d` normals.
pub fn sample_latent(g: &GeneratorParams, n: usize, rng: &mut SeededRng) -> LatentBatch {
    let d = g.dim();
    let mut z = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = match g.mode {
            GenMode::Symmetric2 => rng.sign() as i64,
            GenMode::SharedCov => rng.below(g.means.len()) as i64 + 1,
        };
        labels.push(y);
        for j in 0..d {
            z[(i, j)] = rng.standard_normal();
        }
    }
    LatentBatch { z, labels }
}

/// Push a latent batch through the generator; rows are samples.
pub fn gen_apply(g: &GeneratorParams, latent: &LatentBatch) -> Result<Matrix> {
    let d = g.dim();
    if latent.z.ncols() != d || latent.z.nrows() != latent.labels.len() {
        return Err(Error::invalid("latent batch shape mismatch"));
    }
    let mut out = &latent.z * g.lambda_factor.transpose();
    for (i, &y) in latent.labels.iter().enumerate() {
        let (sign, idx) = g.resolve(y)?;
        let mut row = out.row_mut(i);
        row += g.means[idx].transpose();
        if sign < 0.0 {
            row.neg_mut();
        }
    }
    Ok(out)
}

pub fn gen_sample_batch(g: &GeneratorParams, n: usize, rng: &mut SeededRng) -> Matrix {
    let latent = sample_latent(g, n, rng);
    gen_apply(g, &latent).expect("labels drawn from the generator's own range")
}

/// Exact `E[G G^T]`.
pub fn gen_second_moment(g: &GeneratorParams) -> SymMatrix {
    let mut m = g.component_cov();
    let w = 1.0 / g.means.len() as f64;
    for mu in &g.means {
        m = m.add_outer(w, mu);
    }
    m
}

/// Exact `E[G]` (zero in the symmetric mode).
pub fn gen_mean(g: &GeneratorParams) -> Vector {
    match g.mode {
        GenMode::Symmetric2 => Vector::zeros(g.dim()),
        GenMode::SharedCov => {
            let k = g.means.len() as f64;
            g.means.iter().fold(Vector::zeros(g.dim()), |acc, m| acc + m) / k
        }
    }
}

/// `D(x) = ½ x^T A x + LSE_{i<=k}(b_i^T x + c_i) − LSE_{i>k}(b_i^T x + c_i)`.
///
/// In tied mode `b_2 = −b_1` and `b_4 = −b_3` hold exactly and the constants are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub a: SymMatrix,
    pub logits: Vec<Vector>,
    pub consts: Vec<f64>,
    pub tied: bool,
}

impl DiscriminatorParams {
    pub fn new(a: SymMatrix, logits: Vec<Vector>, consts: Vec<f64>, tied: bool) -> Result<Self> {
        let dd = Self { a, logits, consts, tied };
        dd.validate()?;
        Ok(dd)
    }

    /// Tied two-component discriminator from its free vectors `b_1`, `b_3`.
    pub fn tied(a: SymMatrix, b1: Vector, b3: Vector) -> Result<Self> {
        let logits = vec![b1.clone(), -b1, b3.clone(), -b3];
        Self::new(a, logits, vec![0.0; 4], true)
    }

    pub fn zeros(d: usize, k: usize, tied: bool) -> Self {
        Self {
            a: SymMatrix::zeros(d),
            logits: vec![Vector::zeros(d); 2 * k],
            consts: vec![0.0; 2 * k],
            tied,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.a.dim();
        let n = self.logits.len();
        if n < 2 || n % 2 != 0 || self.consts.len() != n {
            return Err(Error::invalid("discriminator needs 2k logit vectors and 2k constants"));
        }
        if self.logits.iter().any(|b| b.len() != d) {
            return Err(Error::invalid("logit vector dimension mismatch"));
        }
        if self.tied {
            if n != 4 {
                return Err(Error::invalid("tied discriminator must have exactly four logit vectors"));
            }
            if self.logits[1] != -&self.logits[0] || self.logits[3] != -&self.logits[2] {
                return Err(Error::invalid("tied discriminator requires b2 = -b1 and b4 = -b3"));
            }
            if self.consts.iter().any(|&c| c != 0.0) {
                return Err(Error::invalid("tied discriminator requires zero constants"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn k(&self) -> usize {
        self.logits.len() / 2
    }

    /// Restore `b_2 = −b_1`, `b_4 = −b_3` after `b_1`, `b_3` were updated.
    pub(crate) fn retie(&mut self) {
        if self.tied {
            self.logits[1] = -&self.logits[0];
            self.logits[3] = -&self.logits[2];
        }
    }
}

/// Stable `ln Σ exp(v_i)`.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Normalized softmax weights, in place.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for t in v.iter_mut() {
        *t = (*t - m).exp();
        s += *t;
    }
    for t in v.iter_mut() {
        *t /= s;
    }
}

fn group_logits(dd: &DiscriminatorParams, x: &Vector) -> Vec<f64> {
    dd.logits.iter().zip(&dd.consts).map(|(b, c)| b.dot(x) + c).collect()
}

/// Within-group softmax weights `q_i(x)`: first `k` sum to one, last `k` sum to one.
pub(crate) fn group_weights(dd: &DiscriminatorParams, x: &Vector) -> Vec<f64> {
    let mut t = group_logits(dd, x);
    let k = dd.k();
    let (lo, hi) = t.split_at_mut(k);
    softmax_in_place(lo);
    softmax_in_place(hi);
    t
}

pub fn disc_value(dd: &DiscriminatorParams, x: &Vector) -> f64 {
    let k = dd.k();
    let t = group_logits(dd, x);
    0.5 * dd.a.quad_form(x) + log_sum_exp(&t[..k]) - log_sum_exp(&t[k..])
}

pub fn disc_grad_x(dd: &DiscriminatorParams, x: &Vector) -> Vector {
    let k = dd.k();
    let q = group_weights(dd, x);
    let mut g = dd.a.mul_vec(x);
    for (i, b) in dd.logits.iter().enumerate() {
        let s = if i < k { q[i] } else { -q[i] };
        g.axpy(s, b, 1.0);
    }
    g
}

/// Gradient of a scalar with respect to discriminator parameters.
///
/// `a` is the symmetric-matrix gradient (the directional derivative along a
/// symmetric `E` is `<a, E>`). In tied mode `logits` holds the free vectors
/// `b_1`, `b_3` only and `consts` is all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscGrad {
    pub a: Matrix,
    pub logits: Vec<Vector>,
    pub consts: Vec<f64>,
}

impl DiscGrad {
    pub fn zeros_like(dd: &DiscriminatorParams) -> Self {
        let d = dd.dim();
        let nb = if dd.tied { 2 } else { dd.logits.len() };
        Self { a: Matrix::zeros(d, d), logits: vec![Vector::zeros(d); nb], consts: vec![0.0; dd.consts.len()] }
    }

    pub fn norm_sq(&self) -> f64 {
        self.a.norm_squared()
            + self.logits.iter().map(|b| b.norm_squared()).sum::<f64>()
            + self.consts.iter().map(|c| c * c).sum::<f64>()
    }
}

/// Gradient with respect to generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GenGrad {
    pub lambda: Matrix,
    pub means: Vec<Vector>,
}

impl GenGrad {
    pub fn zeros_like(g: &GeneratorParams) -> Self {
        let d = g.dim();
        Self { lambda: Matrix::zeros(d, d), means: vec![Vector::zeros(d); g.means.len()] }
    }

    pub fn norm(&self) -> f64 {
        (self.lambda.norm_squared() + self.means.iter().map(|m| m.norm_squared()).sum::<f64>()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradPack {
    pub gen: GenGrad,
    pub disc: DiscGrad,
}

/// Fold untied per-vector gradients into the free tied vectors:
/// `∂/∂b_1 − ∂/∂b_2` and `∂/∂b_3 − ∂/∂b_4`.
pub(crate) fn fold_tied(full: &[Vector]) -> Vec<Vector> {
    vec![&full[0] - &full[1], &full[2] - &full[3]]
}

pub fn disc_grad_params(dd: &DiscriminatorParams, x: &Vector) -> DiscGrad {
    let k = dd.k();
    let q = group_weights(dd, x);
    let a = x * x.transpose() * 0.5;
    let signed: Vec<f64> = q.iter().enumerate().map(|(i, &w)| if i < k { w } else { -w }).collect();
    let full: Vec<Vector> = signed.iter().map(|&s| x * s).collect();
    if dd.tied {
        DiscGrad { a, logits: fold_tied(&full), consts: vec![0.0; dd.consts.len()] }
    } else {
        DiscGrad { a, logits: full, consts: signed }
    }
}

/// `λ_max(A) + 2 max_i ‖b_i‖²`.
pub fn disc_smoothness_bound(dd: &DiscriminatorParams) -> f64 {
    let lmax = sym_eigen(&dd.a).map(|e| e.max_value()).unwrap_or(f64::NAN);
    let bmax = dd.logits.iter().map(|b| b.norm_squared()).fold(0.0, f64::max);
    lmax + 2.0 * bmax
}

/// JSON form of the generator/discriminator pair. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsJson {
    pub mode: GenMode,
    pub d: usize,
    pub k: usize,
    pub lambda: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(default)]
    pub tied: bool,
}

fn row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn from_row_major(d: usize, v: &[f64], what: &str) -> Result<Matrix> {
    if v.len() != d * d {
        return Err(Error::invalid(format!("{what}: expected {} entries, got {}", d * d, v.len())));
    }
    Ok(Matrix::from_row_slice(d, d, v))
}

impl ParamsJson {
    pub fn from_params(g: &GeneratorParams, dd: Option<&DiscriminatorParams>) -> Self {
        Self {
            mode: g.mode,
            d: g.dim(),
            k: g.k(),
            lambda: row_major(&g.lambda_factor),
            means: g.means.iter().map(|m| m.iter().cloned().collect()).collect(),
            a: dd.map(|dd| row_major(dd.a.as_matrix())),
            b: dd.map(|dd| dd.logits.iter().map(|b| b.iter().cloned().collect()).collect()),
            c: dd.map(|dd| dd.consts.clone()),
            tied: dd.is_some_and(|dd| dd.tied),
        }
    }

    pub fn generator(&self) -> Result<GeneratorParams> {
        let lambda = from_row_major(self.d, &self.lambda, "lambda")?;
        let means = self.means.iter().map(|m| Vector::from_row_slice(m)).collect();
        let g = GeneratorParams { mode: self.mode, lambda_factor: lambda, means };
        g.validate()?;
        if g.k() != self.k {
            return Err(Error::invalid(format!("k = {} does not match {} means", self.k, g.means.len())));
        }
        Ok(g)
    }

    pub fn discriminator(&self) -> Result<Option<DiscriminatorParams>> {
        let (Some(a), Some(b), Some(c)) = (&self.a, &self.b, &self.c) else {
            return Ok(None);
        };
        let a = SymMatrix::new(from_row_major(self.d, a, "A")?)?;
        let logits = b.iter().map(|v| Vector::from_row_slice(v)).collect();
        DiscriminatorParams::new(a, logits, c.clone(), self.tied).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gausscore::second_moment;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    #[test]
    fn forward_examples() {
        let g = GeneratorParams::symmetric(Matrix::identity(2, 2), v(&[0.0, 0.0])).unwrap();
        assert_eq!(gen_forward(&g, &v(&[1.0, 2.0]), 1).unwrap(), v(&[1.0, 2.0]));
        let g = GeneratorParams::symmetric(Matrix::identity(2, 2), v(&[3.0, 0.0])).unwrap();
        assert_eq!(gen_forward(&g, &v(&[0.0, 0.0]), -1).unwrap(), v(&[-3.0, 0.0]));
        assert!(gen_forward(&g, &v(&[0.0, 0.0]), 0).is_err());
        let means = vec![v(&[1.0, 0.0]), v(&[0.0, 5.0]), v(&[2.0, 2.0])];
        let g = GeneratorParams::shared_cov(Matrix::zeros(2, 2), means).unwrap();
        assert_eq!(gen_forward(&g, &v(&[0.3, -0.7]), 2).unwrap(), v(&[0.0, 5.0]));
        assert!(gen_forward(&g, &v(&[0.3, -0.7]), 4).is_err());
    }

    #[test]
    fn batch_atoms_and_label_balance() {
        let g = GeneratorParams::symmetric(Matrix::zeros(2, 2), v(&[1.0, 1.0])).unwrap();
        let x = gen_sample_batch(&g, 200, &mut SeededRng::new(4, 0));
        for row in x.row_iter() {
            assert!(row[0] == row[1] && row[0].abs() == 1.0);
        }
        let g = GeneratorParams::symmetric(Matrix::identity(1, 1) * 0.1, v(&[1.0])).unwrap();
        let n = 100_000;
        let x = gen_sample_batch(&g, n, &mut SeededRng::new(4, 1));
        let pos = x.iter().filter(|&&t| t > 0.0).count() as f64 / n as f64;
        assert!((0.49..=0.51).contains(&pos), "{pos}");
        let y = gen_sample_batch(&g, n, &mut SeededRng::new(4, 1));
        assert_eq!(x, y);
    }

    #[test]
    fn second_moment_examples() {
        let g = GeneratorParams::symmetric(Matrix::identity(2, 2), v(&[0.0, 0.0])).unwrap();
        assert_eq!(gen_second_moment(&g), SymMatrix::identity(2));
        let g = GeneratorParams::symmetric(Matrix::zeros(2, 2), v(&[1.0, 1.0])).unwrap();
        assert_eq!(gen_second_moment(&g).into_matrix(), Matrix::from_element(2, 2, 1.0));
        let lam = Matrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.8]);
        let mu = v(&[1.0, -2.0]);
        let s = GeneratorParams::symmetric(lam.clone(), mu.clone()).unwrap();
        let k = GeneratorParams::shared_cov(lam, vec![mu.clone(), -mu]).unwrap();
        let diff = gen_second_moment(&s).sub(&gen_second_moment(&k));
        assert!(diff.frobenius_sq().sqrt() < 1e-14);
    }

    #[test]
    fn second_moment_matches_monte_carlo() {
        let lam = Matrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.8]);
        let g = GeneratorParams::shared_cov(lam, vec![v(&[1.0, 0.0]), v(&[0.0, 2.0]), v(&[-1.0, -1.0])]).unwrap();
        let n = 1_000_000;
        let x = gen_sample_batch(&g, n, &mut SeededRng::new(5, 0));
        let exact = gen_second_moment(&g);
        let err = second_moment(&x).sub(&exact).frobenius_sq().sqrt();
        let tol = 5.0 * exact.frobenius_sq().sqrt() / (n as f64).sqrt();
        assert!(err <= tol, "err={err} tol={tol}");
    }

    #[test]
    fn disc_value_examples() {
        let dd = DiscriminatorParams::zeros(3, 2, false);
        assert_eq!(disc_value(&dd, &v(&[1.0, -4.0, 9.0])), 0.0);
        let mut dd = DiscriminatorParams::zeros(1, 2, false);
        dd.a = SymMatrix::identity(1);
        assert_eq!(disc_value(&dd, &v(&[2.0])), 2.0);
        let dd = DiscriminatorParams::tied(SymMatrix::zeros(1), v(&[1.0]), v(&[0.0])).unwrap();
        assert!((disc_value(&dd, &v(&[1.0])) - 0.433_780_830_483_027).abs() < 1e-12);
    }

    #[test]
    fn grad_x_examples() {
        let dd = DiscriminatorParams::zeros(3, 2, false);
        assert_eq!(disc_grad_x(&dd, &v(&[1.0, 2.0, 3.0])), Vector::zeros(3));
        let mut dd = DiscriminatorParams::zeros(3, 2, false);
        dd.a = SymMatrix::identity(3);
        assert_eq!(disc_grad_x(&dd, &v(&[1.0, 2.0, 3.0])), v(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn grad_params_examples() {
        let dd = DiscriminatorParams::tied(SymMatrix::identity(2), v(&[1.0, -1.0]), v(&[0.3, 0.2])).unwrap();
        let x = v(&[2.0, 2.0]);
        let g = disc_grad_params(&dd, &x);
        assert_eq!(g.logits[0], Vector::zeros(2));
        assert_eq!(g.a, &x * x.transpose() * 0.5);
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(disc_smoothness_bound(&DiscriminatorParams::zeros(2, 2, true)), 0.0);
        let b = v(&[0.2_f64.sqrt(), 0.0]);
        let dd = DiscriminatorParams::tied(SymMatrix::identity(2).scale(0.3), b.clone(), b * 0.5).unwrap();
        assert!((disc_smoothness_bound(&dd) - 0.7).abs() < 1e-14);
        let mut dd = DiscriminatorParams::zeros(2, 2, false);
        dd.a = SymMatrix::from_diagonal(&[0.5, -1.0]);
        assert_eq!(disc_smoothness_bound(&dd), 0.5);
    }

    #[test]
    fn tied_constructor_rejects_broken_ties() {
        let mut dd = DiscriminatorParams::tied(SymMatrix::zeros(2), v(&[1.0, 0.0]), v(&[0.0, 1.0])).unwrap();
        dd.logits[1] = v(&[0.0, 0.0]);
        assert!(dd.validate().is_err());
        dd.retie();
        assert!(dd.validate().is_ok());
    }

    #[test]
    fn json_round_trip() {
        let g = GeneratorParams::symmetric(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]), v(&[0.5, -0.5])).unwrap();
        let dd = DiscriminatorParams::tied(SymMatrix::from_diagonal(&[1.0, 2.0]), v(&[0.1, 0.2]), v(&[0.3, 0.4])).unwrap();
        let js = ParamsJson::from_params(&g, Some(&dd));
        let text = serde_json::to_string(&js).unwrap();
        assert!(text.contains("\"A\""));
        let back: ParamsJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.generator().unwrap(), g);
        assert_eq!(back.discriminator().unwrap().unwrap(), dd);
        assert_eq!(back.lambda, vec![1.0, 2.0, 3.0, 4.0]);
    }

    fn random_disc(d: usize, tied: bool, rng: &mut SeededRng) -> DiscriminatorParams {
        let a = SymMatrix::symmetrize(&Matrix::from_fn(d, d, |_, _| rng.uniform(-1.0, 1.0)));
        let mut vecs = |n: usize| (0..n).map(|_| Vector::from_fn(d, |_, _| rng.uniform(-1.0, 1.0))).collect::<Vec<_>>();
        if tied {
            let b = vecs(2);
            DiscriminatorParams::tied(a, b[0].clone(), b[1].clone()).unwrap()
        } else {
            let logits = vecs(4);
            let consts = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
            DiscriminatorParams::new(a, logits, consts, false).unwrap()
        }
    }

    proptest! {
        #[test]
        fn tied_disc_is_even(d in 1usize..=5, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed, 0);
            let dd = random_disc(d, true, &mut rng);
            let x = Vector::from_fn(d, |_, _| 3.0 * rng.standard_normal());
            prop_assert!((disc_value(&dd, &x) - disc_value(&dd, &-&x)).abs() <= 1e-12);
        }

        #[test]
        fn symmetric_samples_are_centered(seed in any::<u64>()) {
            let g = GeneratorParams::symmetric(Matrix::identity(3, 3) * 0.2, v(&[1.0, -1.0, 2.0])).unwrap();
            let n = 20_000;
            let x = gen_sample_batch(&g, n, &mut SeededRng::new(seed, 2));
            let m = crate::gausscore::column_mean(&x);
            // per-coordinate sd is at most sqrt(4 + 0.04)
            prop_assert!(m.norm() <= 5.0 * 3.0 * 2.1 / (n as f64).sqrt());
        }
    }
}
