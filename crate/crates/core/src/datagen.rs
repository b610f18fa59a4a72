//! Synthetic mixture datasets and their CSV/JSON storage.

use crate::em::GmmParams;
use crate::error::{Error, Result};
use crate::gausscore::{random_orthogonal, Matrix, SeededRng, Stream, SymMatrix, Vector};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GmmParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Matrix,
    pub meta: Option<DatasetMeta>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn d(&self) -> usize {
        self.samples.ncols()
    }

    pub fn truth(&self) -> Option<&GmmParams> {
        self.meta.as_ref().and_then(|m| m.truth.as_ref())
    }
}

fn from_truth(kind: &str, truth: GmmParams, n: usize, seed: u64) -> Result<Dataset> {
    let (samples, _) = truth.sample(n, &mut SeededRng::for_stream(seed, Stream::Data))?;
    let meta = DatasetMeta { kind: kind.to_string(), d: truth.dim(), n, seed, truth: Some(truth) };
    Ok(Dataset { samples, meta: Some(meta) })
}

/// `½N(1, sI) + ½N(−1, sI)`.
pub fn make_isotropic(d: usize, n: usize, scale: f64, seed: u64) -> Result<Dataset> {
    if d == 0 || n == 0 || !(scale >= 0.0) {
        return Err(Error::invalid("make_isotropic needs d, n >= 1 and scale >= 0"));
    }
    let truth = GmmParams::symmetric(Vector::from_element(d, 1.0), SymMatrix::identity(d).scale(scale))?;
    from_truth("isotropic", truth, n, seed)
}

/// Rotated covariance `Q diag(w) Q^T` with `w_i ~ U(1/(2d), 1/2)` and Haar `Q`.
pub fn rotated_truth(d: usize, seed: u64) -> Result<GmmParams> {
    if d == 0 {
        return Err(Error::invalid("rotated truth needs d >= 1"));
    }
    let q = random_orthogonal(d, &mut SeededRng::for_stream(seed, Stream::Orthogonal))?;
    let mut spec = SeededRng::for_stream(seed, Stream::Spectrum);
    let lo = 1.0 / (2.0 * d as f64);
    let w = Vector::from_fn(d, |_, _| spec.uniform(lo, 0.5));
    let cov = SymMatrix::symmetrize(&(&q * Matrix::from_diagonal(&w) * q.transpose()));
    GmmParams::symmetric(Vector::from_element(d, 1.0), cov)
}

pub fn make_rotated(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("make_rotated needs n >= 1"));
    }
    from_truth("rotated", rotated_truth(d, seed)?, n, seed)
}

/// Uniform-weight shared-covariance mixture.
pub fn make_k_mixture(means: Vec<Vector>, cov: SymMatrix, n: usize, seed: u64) -> Result<Dataset> {
    if means.len() < 2 || n == 0 {
        return Err(Error::invalid("make_k_mixture needs k >= 2 and n >= 1"));
    }
    let truth = GmmParams::uniform_shared(means, cov)?;
    from_truth("kmix", truth, n, seed)
}

/// Means `±3 e_1`, `±3 e_2` with covariance `0.03 I` in `d` dimensions.
pub fn default_k4_means(d: usize) -> Result<Vec<Vector>> {
    if d < 2 {
        return Err(Error::invalid("the four-component layout needs d >= 2"));
    }
    let e = |i: usize, s: f64| {
        let mut v = Vector::zeros(d);
        v[i] = s * 3.0;
        v
    };
    Ok(vec![e(0, 1.0), e(0, -1.0), e(1, 1.0), e(1, -1.0)])
}

pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

/// Write `x0,...,x{d-1}` CSV plus a `.meta.json` sidecar when metadata is present.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let d = ds.d();
    w.write_record((0..d).map(|j| format!("x{j}"))).map_err(csv_io)?;
    for row in ds.samples.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(csv_io)?;
    }
    w.flush()?;
    if let Some(meta) = &ds.meta {
        std::fs::write(meta_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line: 0, message: format!("{other:?}") },
    }
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path).map_err(csv_io)?;
    let header = r.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let d = header.len();
    if d == 0 {
        return Err(Error::Parse { line: 1, message: "empty header".into() });
    }
    for (j, h) in header.iter().enumerate() {
        if h.trim() != format!("x{j}") {
            return Err(Error::Parse { line: 1, message: format!("unexpected column name {h:?}") });
        }
    }
    let mut values = Vec::new();
    let mut n = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(n as u64 + 2);
        if rec.len() != d {
            return Err(Error::Parse { line, message: format!("expected {d} fields, found {}", rec.len()) });
        }
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("not a number: {field:?}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: "non-finite value".into() });
            }
            values.push(v);
        }
        n += 1;
    }
    let samples = Matrix::from_row_slice(n, d, &values);
    let mp = meta_path(path);
    let meta = if mp.exists() {
        let text = std::fs::read_to_string(&mp)?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    Ok(Dataset { samples, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gausscore::{second_moment, sym_eigen};
    use crate::metrics::{condition1_check, principal_direction};
    use proptest::prelude::*;

    #[test]
    fn isotropic_atoms_and_determinism() {
        let ds = make_isotropic(4, 30, 0.0, 1).unwrap();
        for row in ds.samples.row_iter() {
            assert!(row.iter().all(|&v| v == row[0] && v.abs() == 1.0));
        }
        assert_eq!(make_isotropic(20, 640, 0.03, 9).unwrap(), make_isotropic(20, 640, 0.03, 9).unwrap());
    }

    #[test]
    fn isotropic_second_moment() {
        let n = 100_000;
        let ds = make_isotropic(20, n, 0.03, 5).unwrap();
        let exact = ds.truth().unwrap().second_moment();
        let err = second_moment(&ds.samples).sub(&exact).frobenius_sq().sqrt();
        assert!(err <= 5.0 * exact.frobenius_sq().sqrt() / (n as f64).sqrt(), "err={err}");
    }

    #[test]
    fn rotated_spectrum_and_condition() {
        let d = 100;
        let ds = make_rotated(d, 640, 3).unwrap();
        let truth = ds.truth().unwrap();
        let eig = sym_eigen(truth.cov(0)).unwrap();
        let lo = 1.0 / (2.0 * d as f64);
        assert!(eig.values.iter().all(|&w| w > lo - 1e-12 && w < 0.5 + 1e-12));
        let dir = principal_direction(&ds.samples).unwrap();
        let (holds, margin) = condition1_check(&truth.means[0], truth.cov(0), &dir).unwrap();
        assert!(holds && margin > 0.0);
        assert_eq!(make_rotated(d, 640, 3).unwrap(), ds);
    }

    #[test]
    fn k_mixture_label_balance() {
        let means = default_k4_means(20).unwrap();
        let ds = make_k_mixture(means.clone(), SymMatrix::identity(20).scale(0.03), 40_000, 2).unwrap();
        let mut counts = [0usize; 4];
        for row in ds.samples.row_iter() {
            let x = row.transpose();
            let best = (0..4).min_by(|&a, &b| (&x - &means[a]).norm().total_cmp(&(&x - &means[b]).norm())).unwrap();
            counts[best] += 1;
        }
        for c in counts {
            assert!((c as f64 / 40_000.0 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = make_isotropic(3, 17, 0.03, 4).unwrap();
        save_csv(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1,x2\n"));
        assert_eq!(load_csv(&path).unwrap(), ds);

        std::fs::remove_file(meta_path(&path)).unwrap();
        let bare = load_csv(&path).unwrap();
        assert!(bare.meta.is_none());
        assert_eq!(bare.samples, ds.samples);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "x0,x1\n1.0,2.0\n3.0\n").unwrap();
        match load_csv(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
        std::fs::write(&bad, "x0,x1\n1.0,2.0\n3.0,abc\n").unwrap();
        assert!(matches!(load_csv(&bad), Err(Error::Parse { line: 3, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), d in 1usize..=100, n in 1usize..=200) {
            let mut rng = SeededRng::new(seed, 0);
            let samples = Matrix::from_fn(n, d, |_, _| rng.standard_normal() * 10f64.powi(rng.below(20) as i32 - 10));
            let ds = Dataset { samples, meta: None };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("r.csv");
            save_csv(&ds, &path).unwrap();
            prop_assert_eq!(load_csv(&path).unwrap(), ds);
        }
    }
}
