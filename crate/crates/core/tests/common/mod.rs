//! Shared harness: central finite differences against the analytic minimax gradients.

use gatgmm::model::{sample_latent, DiscriminatorParams, GeneratorParams, LatentBatch};
use gatgmm::objective::{minimax_value, minimax_value_and_grads, Anchors};
use gatgmm::{Matrix, SeededRng, SymMatrix, Vector};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-6;
pub const DIMS: [usize; 3] = [1, 2, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    SymmetricTied,
    SymmetricUntied,
    SharedCovK4,
}

pub struct Instance {
    pub g: GeneratorParams,
    pub dd: DiscriminatorParams,
    pub anchors: Anchors,
    pub x: Matrix,
    pub latent: LatentBatch,
}

fn rand_vec(d: usize, scale: f64, rng: &mut SeededRng) -> Vector {
    Vector::from_fn(d, |_, _| scale * rng.standard_normal())
}

pub fn instance(family: Family, d: usize, seed: u64) -> Instance {
    let mut rng = SeededRng::new(seed, 99);
    let k = if family == Family::SharedCovK4 { 4 } else { 2 };
    let lambda_factor = Matrix::from_fn(d, d, |i, j| if i == j { 0.5 } else { 0.0 } + 0.2 * rng.standard_normal());
    let g = match family {
        Family::SharedCovK4 => GeneratorParams::shared_cov(lambda_factor, (0..k).map(|_| rand_vec(d, 0.7, &mut rng)).collect()),
        _ => GeneratorParams::symmetric(lambda_factor, rand_vec(d, 0.7, &mut rng)),
    }
    .unwrap();
    let a = SymMatrix::symmetrize(&Matrix::from_fn(d, d, |_, _| 0.3 * rng.standard_normal()));
    let dd = match family {
        Family::SymmetricTied => DiscriminatorParams::tied(a, rand_vec(d, 0.8, &mut rng), rand_vec(d, 0.8, &mut rng)).unwrap(),
        _ => {
            let logits = (0..2 * k).map(|_| rand_vec(d, 0.8, &mut rng)).collect();
            let consts = (0..2 * k).map(|_| 0.5 * rng.standard_normal()).collect();
            DiscriminatorParams::new(a, logits, consts, false).unwrap()
        }
    };
    let d_vecs: Vec<Vector> = (0..k).map(|_| rand_vec(d, 1.0, &mut rng)).collect();
    let e_consts = (0..k).map(|_| 0.3 * rng.standard_normal()).collect();
    let anchors = Anchors::new(d_vecs, e_consts, rng.uniform(0.5, 3.0)).unwrap();
    let x = Matrix::from_fn(7, d, |_, _| rng.standard_normal());
    let latent = sample_latent(&g, 9, &mut rng);
    Instance { g, dd, anchors, x, latent }
}

fn value(inst: &Instance, g: &GeneratorParams, dd: &DiscriminatorParams) -> f64 {
    minimax_value(g, dd, &inst.anchors, &inst.x, &inst.latent).unwrap()
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

/// Per-block relative error `‖fd − analytic‖ / max(‖analytic‖, ‖fd‖, 1e-8)`.
#[derive(Debug, Default, Clone)]
pub struct BlockErrors {
    pub a: f64,
    pub logits: f64,
    pub consts: f64,
    pub means: f64,
    pub lambda: f64,
}

impl BlockErrors {
    pub fn max(&self) -> f64 {
        [self.a, self.logits, self.consts, self.means, self.lambda].into_iter().fold(0.0, f64::max)
    }

    pub fn merge(&mut self, o: &BlockErrors) {
        self.a = self.a.max(o.a);
        self.logits = self.logits.max(o.logits);
        self.consts = self.consts.max(o.consts);
        self.means = self.means.max(o.means);
        self.lambda = self.lambda.max(o.lambda);
    }
}

fn rel(fd: &[f64], an: &[f64]) -> f64 {
    if fd.is_empty() {
        return 0.0;
    }
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let diff: Vec<f64> = fd.iter().zip(an).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(an).max(norm(fd)).max(1e-8)
}

pub fn block_errors(inst: &Instance) -> BlockErrors {
    let (_, grads) = minimax_value_and_grads(&inst.g, &inst.dd, &inst.anchors, &inst.x, &inst.latent).unwrap();
    let d = inst.g.dim();
    let dd = &inst.dd;

    // A along symmetric directions E_ij = e_i e_jᵀ + e_j e_iᵀ (halved on the diagonal).
    let (mut fd_a, mut an_a) = (Vec::new(), Vec::new());
    for i in 0..d {
        for j in i..d {
            fd_a.push(central(|h| {
                let mut p = dd.clone();
                let mut m = p.a.as_matrix().clone();
                m[(i, j)] += h;
                if i != j {
                    m[(j, i)] += h;
                }
                p.a = SymMatrix::new(m).unwrap();
                value(inst, &inst.g, &p)
            }));
            an_a.push(if i == j { grads.disc.a[(i, i)] } else { grads.disc.a[(i, j)] + grads.disc.a[(j, i)] });
        }
    }

    let (mut fd_b, mut an_b) = (Vec::new(), Vec::new());
    let free = if dd.tied { vec![0, 2] } else { (0..dd.logits.len()).collect() };
    for (slot, &idx) in free.iter().enumerate() {
        for j in 0..d {
            fd_b.push(central(|h| {
                let mut p = dd.clone();
                p.logits[idx][j] += h;
                if p.tied {
                    p.logits[idx + 1] = -&p.logits[idx];
                }
                value(inst, &inst.g, &p)
            }));
            an_b.push(grads.disc.logits[slot][j]);
        }
    }

    let (mut fd_c, mut an_c) = (Vec::new(), Vec::new());
    if !dd.tied {
        for i in 0..dd.consts.len() {
            fd_c.push(central(|h| {
                let mut p = dd.clone();
                p.consts[i] += h;
                value(inst, &inst.g, &p)
            }));
            an_c.push(grads.disc.consts[i]);
        }
    }

    let (mut fd_m, mut an_m) = (Vec::new(), Vec::new());
    for c in 0..inst.g.means.len() {
        for j in 0..d {
            fd_m.push(central(|h| {
                let mut g = inst.g.clone();
                g.means[c][j] += h;
                value(inst, &g, dd)
            }));
            an_m.push(grads.gen.means[c][j]);
        }
    }

    let (mut fd_l, mut an_l) = (Vec::new(), Vec::new());
    for i in 0..d {
        for j in 0..d {
            fd_l.push(central(|h| {
                let mut g = inst.g.clone();
                g.lambda_factor[(i, j)] += h;
                value(inst, &g, dd)
            }));
            an_l.push(grads.gen.lambda[(i, j)]);
        }
    }

    BlockErrors {
        a: rel(&fd_a, &an_a),
        logits: rel(&fd_b, &an_b),
        consts: rel(&fd_c, &an_c),
        means: rel(&fd_m, &an_m),
        lambda: rel(&fd_l, &an_l),
    }
}

/// Worst block errors over `configs` instances of `family`, cycling `d` through [`DIMS`].
pub fn family_errors(family: Family, configs: usize, seed: u64) -> BlockErrors {
    let mut worst = BlockErrors::default();
    for c in 0..configs {
        let inst = instance(family, DIMS[c % DIMS.len()], seed.wrapping_mul(1000).wrapping_add(c as u64));
        worst.merge(&block_errors(&inst));
    }
    worst
}
