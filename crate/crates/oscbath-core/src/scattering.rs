//! Scattering operators built from the principal-value operator G.
//!
//! Every operator here has the form a + sum_k diag(L_k) G_c diag(R_k) where G_c is G or its
//! complex conjugate. Only the real PV matrix is stored densely; conjugates and adjoints are
//! cheap rewrites of the diagonal factors.

use crate::radial::{laguerre_basis, smooth_random, RadialGrid};
use crate::spectral::SpectralData;
use crate::{Result, C64, I};
use ndarray::{linalg::general_mat_mul, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

/// The real principal-value part of G on a grid:
/// (P h)(r) = 4 pi PV int h(r') r'^2 / ((r r')^{1/2} (r^2 - r'^2)) dr'.
#[derive(Debug)]
pub struct PvMatrix {
    grid: Arc<RadialGrid>,
    p: Array2<f64>,
}

impl PvMatrix {
    pub fn build(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        let r = grid.nodes();
        let w = grid.weights();
        let rmax = grid.r_max();
        let order = grid.order();
        let dref = grid.diff_ref();
        let sqrt_r: Vec<f64> = r.iter().map(|x| x.sqrt()).collect();
        let r32: Vec<f64> = r.iter().map(|x| x * x.sqrt()).collect();
        let mut p = Array2::<f64>::zeros((n, n));
        p.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| {
                let ri = r[i];
                let mut diag_sum = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let d = ri - r[j];
                    row[j] = w[j] * 4.0 * PI * r32[j] / (sqrt_r[i] * (ri + r[j]) * d);
                    diag_sum += w[j] / d;
                }
                row[i] = 2.0 * PI * (-diag_sum + (ri / (rmax - ri)).ln());
                // the subtracted integrand at its own node is -F'(r_i)
                let panel = i / order;
                let li = i - panel * order;
                let scale = 2.0 / grid.panel_width(panel);
                for (lj, d) in dref[li].iter().enumerate() {
                    let j = panel * order + lj;
                    row[j] -= w[i] * 4.0 * PI / sqrt_r[i] * d * scale * r32[j] / (ri + r[j]);
                }
            });
        PvMatrix { grid, p }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.p
    }

    /// P applied to each vector, as one real matrix product.
    pub fn apply_batch(&self, xs: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let n = self.grid.len();
        let m = xs.len();
        let mut y = Array2::<f64>::zeros((n, 2 * m));
        for (k, x) in xs.iter().enumerate() {
            for (j, v) in x.iter().enumerate() {
                y[[j, 2 * k]] = v.re;
                y[[j, 2 * k + 1]] = v.im;
            }
        }
        let mut z = Array2::<f64>::zeros((n, 2 * m));
        general_mat_mul(1.0, &self.p, &y, 0.0, &mut z);
        (0..m).map(|k| (0..n).map(|j| C64::new(z[[j, 2 * k]], z[[j, 2 * k + 1]])).collect()).collect()
    }
}

/// G = P - 2 pi^2 i, or its conjugate P + 2 pi^2 i.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Kernel {
    G,
    GBar,
}

impl Kernel {
    fn delta(self) -> C64 {
        match self {
            Kernel::G => -2.0 * PI * PI * I,
            Kernel::GBar => 2.0 * PI * PI * I,
        }
    }

    fn flip(self) -> Self {
        match self {
            Kernel::G => Kernel::GBar,
            Kernel::GBar => Kernel::G,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Term {
    pub left: Vec<C64>,
    pub kernel: Kernel,
    pub right: Vec<C64>,
}

/// a + sum diag(left) G_c diag(right).
#[derive(Debug, Clone)]
pub struct GridOperator {
    pub label: String,
    identity: C64,
    terms: Vec<Term>,
    pv: Arc<PvMatrix>,
}

fn conj_vec(v: &[C64]) -> Vec<C64> {
    v.iter().map(|x| x.conj()).collect()
}

impl GridOperator {
    pub fn new(label: impl Into<String>, identity: C64, terms: Vec<Term>, pv: Arc<PvMatrix>) -> Self {
        GridOperator {
            label: label.into(),
            identity,
            terms,
            pv,
        }
    }

    /// The bare operator G.
    pub fn g(pv: Arc<PvMatrix>) -> Self {
        let one = vec![C64::new(1.0, 0.0); pv.grid.len()];
        Self::new(
            "G",
            C64::new(0.0, 0.0),
            vec![Term {
                left: one.clone(),
                kernel: Kernel::G,
                right: one,
            }],
            pv,
        )
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.pv.grid
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// A-bar g = conj(A conj g).
    pub fn conj(&self) -> Self {
        GridOperator {
            label: format!("conj({})", self.label),
            identity: self.identity.conj(),
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    left: conj_vec(&t.left),
                    kernel: t.kernel.flip(),
                    right: conj_vec(&t.right),
                })
                .collect(),
            pv: self.pv.clone(),
        }
    }

    /// Hilbert-space adjoint, using G* = -G.
    pub fn adjoint(&self) -> Self {
        GridOperator {
            label: format!("adj({})", self.label),
            identity: self.identity.conj(),
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    left: t.right.iter().map(|x| -x.conj()).collect(),
                    kernel: t.kernel,
                    right: conj_vec(&t.left),
                })
                .collect(),
            pv: self.pv.clone(),
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.apply_batch(std::slice::from_ref(&x.to_vec())).pop().unwrap()
    }

    pub fn apply_batch(&self, xs: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let mut out: Vec<Vec<C64>> = xs.iter().map(|x| x.iter().map(|v| v * self.identity).collect()).collect();
        for t in &self.terms {
            let ys: Vec<Vec<C64>> = xs.iter().map(|x| x.iter().zip(&t.right).map(|(a, b)| a * b).collect()).collect();
            let py = self.pv.apply_batch(&ys);
            let d = t.kernel.delta();
            for ((o, p), y) in out.iter_mut().zip(&py).zip(&ys) {
                for j in 0..o.len() {
                    o[j] += t.left[j] * (p[j] + d * y[j]);
                }
            }
        }
        out
    }

    /// Dense complex matrix acting on node values.
    pub fn to_dense(&self) -> Array2<C64> {
        let n = self.grid().len();
        let p = self.pv.matrix();
        let mut a = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            a[[i, i]] += self.identity;
        }
        for t in &self.terms {
            let d = t.kernel.delta();
            for i in 0..n {
                for j in 0..n {
                    a[[i, j]] += t.left[i] * p[[i, j]] * t.right[j];
                }
                a[[i, i]] += t.left[i] * d * t.right[i];
            }
        }
        a
    }
}

/// T, T*, W+-, and the conjugates used by the symplectic map.
#[derive(Debug, Clone)]
pub struct ScatteringOps {
    pub spectral: Arc<SpectralData>,
    pub pv: Arc<PvMatrix>,
    pub t: GridOperator,
    pub t_star: GridOperator,
    pub w_plus: GridOperator,
    pub w_minus: GridOperator,
    pub w_plus_bar: GridOperator,
    pub w_minus_bar: GridOperator,
    /// conj(W+)*.
    pub w_plus_bar_adj: GridOperator,
    /// conj(W-)*.
    pub w_minus_bar_adj: GridOperator,
}

impl ScatteringOps {
    pub fn build(spectral: Arc<SpectralData>) -> Result<Self> {
        let pv = Arc::new(PvMatrix::build(spectral.grid.clone()));
        Ok(Self::with_pv(spectral, pv))
    }

    /// Reuses an already assembled PV matrix on the same grid.
    pub fn with_pv(spectral: Arc<SpectralData>, pv: Arc<PvMatrix>) -> Self {
        let grid = spectral.grid.clone();
        let lam = spectral.params.lambda;
        let ff = &spectral.form_factor;
        let r = grid.nodes();
        let rho: Vec<f64> = r.iter().map(|&x| ff.eval(x)).collect();
        let qbar: Vec<C64> = spectral.q.values().iter().map(|q| q.conj()).collect();
        let one = C64::new(1.0, 0.0);

        let t_star = GridOperator::new(
            "T*",
            one,
            vec![Term {
                left: r.iter().zip(&rho).map(|(x, p)| C64::new(-lam * x.sqrt() * p, 0.0)).collect(),
                kernel: Kernel::G,
                right: r.iter().zip(&qbar).map(|(x, q)| x.sqrt() * q).collect(),
            }],
            pv.clone(),
        );
        let mut t = t_star.adjoint();
        t.label = "T".into();

        let a: Vec<C64> = rho.iter().map(|p| C64::new(-0.5 * lam * p, 0.0)).collect();
        let ar: Vec<C64> = rho.iter().zip(r).map(|(p, x)| C64::new(-0.5 * lam * p * x, 0.0)).collect();
        let rq: Vec<C64> = qbar.iter().zip(r).map(|(q, x)| q * x).collect();
        let w_plus = GridOperator::new(
            "W+",
            one,
            vec![
                Term {
                    left: a.clone(),
                    kernel: Kernel::G,
                    right: rq.clone(),
                },
                Term {
                    left: ar.clone(),
                    kernel: Kernel::G,
                    right: qbar.clone(),
                },
            ],
            pv.clone(),
        );
        let w_minus = GridOperator::new(
            "W-",
            C64::new(0.0, 0.0),
            vec![
                Term {
                    left: a,
                    kernel: Kernel::G,
                    right: rq,
                },
                Term {
                    left: ar.iter().map(|x| -x).collect(),
                    kernel: Kernel::G,
                    right: qbar,
                },
            ],
            pv.clone(),
        );
        let w_plus_bar = w_plus.conj();
        let w_minus_bar = w_minus.conj();
        ScatteringOps {
            w_plus_bar_adj: w_plus_bar.adjoint(),
            w_minus_bar_adj: w_minus_bar.adjoint(),
            w_plus_bar,
            w_minus_bar,
            spectral,
            pv,
            t,
            t_star,
            w_plus,
            w_minus,
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.spectral.grid
    }

    /// W- from its smooth kernel lambda rho(r) conj Q(r') / (2 (r r')^{1/2} (r + r')).
    pub fn w_minus_kernel_apply(&self, f: &[C64]) -> Vec<C64> {
        let grid = self.grid();
        let r = grid.nodes();
        let mu = grid.measure();
        let lam = self.spectral.params.lambda;
        let ff = &self.spectral.form_factor;
        let g: Vec<C64> = self.spectral.q.values().iter().zip(f).zip(mu).zip(r).map(|(((q, x), m), rj)| q.conj() * x * m / rj.sqrt()).collect();
        r.par_iter()
            .map(|&ri| {
                let mut s = C64::new(0.0, 0.0);
                for (gj, rj) in g.iter().zip(r) {
                    s += gj / (ri + rj);
                }
                s * (0.5 * lam * ff.eval(ri) / ri.sqrt())
            })
            .collect()
    }

    /// Hilbert-Schmidt norm of W- from the kernel on the grid.
    pub fn w_minus_hs_norm(&self) -> f64 {
        let grid = self.grid();
        let r = grid.nodes();
        let mu = grid.measure();
        let lam = self.spectral.params.lambda;
        let ff = &self.spectral.form_factor;
        let q = self.spectral.q.values();
        let s: f64 = (0..r.len())
            .into_par_iter()
            .map(|i| {
                let a = (0.5 * lam * ff.eval(r[i])).powi(2) * mu[i] / r[i];
                let mut acc = 0.0;
                for j in 0..r.len() {
                    acc += q[j].norm_sqr() * mu[j] / (r[j] * (r[i] + r[j]).powi(2));
                }
                a * acc
            })
            .sum();
        s.sqrt()
    }

    fn project(&self, f: &[C64], a: &[C64], b: &[C64]) -> Vec<C64> {
        let c = self.grid().dot(a, f);
        b.iter().map(|x| c * x).collect()
    }

    /// Residual vectors of the four CCR operator identities applied to f.
    pub fn identity_residuals(&self, fs: &[Vec<C64>]) -> [Vec<Vec<C64>>; 4] {
        let qp = self.spectral.q_plus.values();
        let qm = self.spectral.q_minus.values();
        let qpb = conj_vec(qp);
        let qmb = conj_vec(qm);
        let wp_adj = self.w_plus.adjoint();
        let wm_adj = self.w_minus.adjoint();

        let wpf = self.w_plus.apply_batch(fs);
        let wmf = self.w_minus.apply_batch(fs);
        let wp_adj_f = wp_adj.apply_batch(fs);
        let wmb_adj_f = self.w_minus_bar_adj.apply_batch(fs);

        let a1 = wp_adj.apply_batch(&wpf);
        let b1 = wm_adj.apply_batch(&wmf);
        let a2 = self.w_plus.apply_batch(&wp_adj_f);
        let b2 = self.w_minus_bar.apply_batch(&wmb_adj_f);
        let a3 = self.w_plus_bar_adj.apply_batch(&wmf);
        let b3 = self.w_minus_bar_adj.apply_batch(&wpf);
        let a4 = self.w_minus.apply_batch(&wp_adj_f);
        let b4 = self.w_plus_bar.apply_batch(&wmb_adj_f);

        let mut out: [Vec<Vec<C64>>; 4] = Default::default();
        for (k, f) in fs.iter().enumerate() {
            let pp = self.project(f, qp, qp);
            let pm = self.project(f, qm, qm);
            let ppm = self.project(f, qm, &qpb);
            let pmp = self.project(f, qp, &qmb);
            let n = f.len();
            out[0].push((0..n).map(|j| a1[k][j] - b1[k][j] + pp[j] - pm[j] - f[j]).collect());
            out[1].push((0..n).map(|j| a2[k][j] - b2[k][j] - f[j]).collect());
            out[2].push((0..n).map(|j| a3[k][j] - b3[k][j] + ppm[j] - pmp[j]).collect());
            out[3].push((0..n).map(|j| a4[k][j] - b4[k][j]).collect());
        }
        out
    }
}

pub const IDENTITY_NAMES: [&str; 4] = [
    "W+* W+ - W-* W- + P+ - P- = 1",
    "W+ W+* - conj(W-) conj(W-)* = 1",
    "conj(W+)* W- - conj(W-)* W+ + P+- - P-+ = 0",
    "W- W+* - conj(W+) conj(W-)* = 0",
];

#[derive(Debug, Clone, Serialize)]
pub struct IdentityResidual {
    pub identity: String,
    pub max_relative: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub n: usize,
    pub trials: usize,
    pub residuals: Vec<IdentityResidual>,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        self.residuals.iter().map(|r| r.max_relative).fold(0.0, f64::max)
    }
}

/// Largest relative residual of each identity over smooth random vectors.
pub fn verify_ccr_identities(ops: &ScatteringOps, trials: usize, seed: u64) -> IdentityReport {
    let grid = ops.grid();
    let basis = laguerre_basis(grid, 6, 2.0 / ops.spectral.form_factor.scale());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs: Vec<Vec<C64>> = (0..trials).map(|_| smooth_random(&basis, &mut rng)).collect();
    let res = ops.identity_residuals(&fs);
    let residuals = res
        .iter()
        .zip(IDENTITY_NAMES)
        .map(|(rs, name)| IdentityResidual {
            identity: name.to_string(),
            max_relative: rs.iter().zip(&fs).map(|(r, f)| grid.norm(r) / grid.norm(f)).fold(0.0, f64::max),
        })
        .collect();
    IdentityReport {
        n: grid.len(),
        trials,
        residuals,
    }
}

/// ||T* Q|| / ||Q||.
pub fn t_star_q_residual(ops: &ScatteringOps) -> f64 {
    let q = ops.spectral.q.values();
    let grid = ops.grid();
    grid.norm(&ops.t_star.apply(q)) / grid.norm(q)
}

/// Galerkin matrix <psi_k | A psi_l> on a Laguerre basis.
pub fn galerkin(op: &GridOperator, count: usize, a: f64) -> Array2<C64> {
    let grid = op.grid().clone();
    let basis = laguerre_basis(&grid, count, a);
    let images = op.apply_batch(&basis);
    Array2::from_shape_fn((count, count), |(k, l)| grid.dot(&basis[k], &images[l]))
}
