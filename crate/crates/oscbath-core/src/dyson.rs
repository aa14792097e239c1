//! Anharmonic perturbation by a bounded potential V(q) = sum_j w_j e^{i mu_j q}: moments and
//! admissibility, the truncated Dyson expansion of the three-point function and the
//! sine-product bound that controls it.

use crate::equilibrium::{fit_log_linear, thermal_norm_sq, CorrelationSeries, DecayFit, ThermalState, ThreePoint};
use crate::formfactor::{FormFactor, ModelParams};
use crate::quad::{gauss_legendre, integrate_breaks, QuadOpts};
use crate::radial::RadialGrid;
use crate::scattering::ScatteringOps;
use crate::spectral::{find_resonance, Continuation};
use crate::symplectic::{v_map_batch, TestFunction};
use crate::{Error, Result, C64, I};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub mu: f64,
    pub w: C64,
}

/// A finite complex measure with nu(A) = conj nu(-A).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    atoms: Vec<Atom>,
}

impl TryFrom<RawMeasure> for AtomicMeasure {
    type Error = Error;
    fn try_from(raw: RawMeasure) -> Result<Self> {
        AtomicMeasure::new(raw.atoms)
    }
}

impl From<AtomicMeasure> for RawMeasure {
    fn from(m: AtomicMeasure) -> Self {
        RawMeasure { atoms: m.atoms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.iter().any(|a| !(a.mu.is_finite() && a.w.re.is_finite() && a.w.im.is_finite())) {
            return Err(Error::Invalid("measure atoms must be finite".into()));
        }
        let scale = atoms.iter().map(|a| a.w.norm()).fold(0.0, f64::max);
        for a in &atoms {
            // total mass at -mu must equal the conjugate of the mass at mu
            let mass = |mu: f64| atoms.iter().filter(|b| (b.mu - mu).abs() <= 1e-12 * (1.0 + mu.abs())).map(|b| b.w).sum::<C64>();
            if (mass(-a.mu) - mass(a.mu).conj()).norm() > 1e-12 * scale {
                return Err(Error::Invalid(format!("measure is not symmetric: atom at mu = {} has no conjugate partner at {}", a.mu, -a.mu)));
            }
        }
        Ok(AtomicMeasure { atoms })
    }

    pub fn empty() -> Self {
        AtomicMeasure { atoms: vec![] }
    }

    /// The pair {(mu, w), (-mu, conj w)}.
    pub fn pair(mu: f64, w: C64) -> Result<Self> {
        Self::new(vec![Atom { mu, w }, Atom { mu: -mu, w: w.conj() }])
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn moments(&self) -> Moments {
        let m = |i: i32| self.atoms.iter().map(|a| a.w.norm() * a.mu.abs().powi(i)).sum();
        Moments { a0: m(0), a1: m(1), a2: m(2) }
    }

    /// Every atom (mu, w) replaced by (-mu, conj w).
    pub fn mirrored(&self) -> Self {
        AtomicMeasure {
            atoms: self.atoms.iter().map(|a| Atom { mu: -a.mu, w: a.w.conj() }).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        AtomicMeasure {
            atoms: self.atoms.iter().map(|a| Atom { mu: a.mu, w: a.w * s }).collect(),
        }
    }
}

/// kappa_tilde = 2 pi int_R lambda^2 |rho(z)^2 z^2| / |G(z) conj G(conj z)| dr on z = r + i kappa.
pub fn kappa_tilde(ff: &FormFactor, params: &ModelParams, kappa: f64) -> Result<f64> {
    if params.lambda == 0.0 {
        return Ok(0.0);
    }
    let res = find_resonance(ff, params)?;
    kappa_tilde_with(ff, params, res.kappa_hat, kappa)
}

pub fn kappa_tilde_with(ff: &FormFactor, params: &ModelParams, kappa_hat: C64, kappa: f64) -> Result<f64> {
    let l2 = params.lambda * params.lambda;
    if l2 == 0.0 {
        return Ok(0.0);
    }
    if !(kappa > 0.0) {
        return Err(Error::Invalid(format!("kappa must be positive, got {kappa}")));
    }
    let strip = ff.strip_half_width();
    if kappa >= strip {
        return Err(Error::StripViolation { im: kappa, strip });
    }
    let default = Continuation::new(ff, params)?;
    let height = default.eta().max(1.5 * kappa).min(0.5 * (kappa + strip));
    let cont = if height > default.eta() { Continuation::with_height(ff, params, height)? } else { default };
    if kappa >= 0.9 * cont.eta() {
        return Err(Error::ContourViolation { im: kappa, eta: cont.eta() });
    }
    if kappa >= kappa_hat.im {
        log::warn!("kappa = {kappa} is not below Im kappa_hat = {}; the contour passes the resonance", kappa_hat.im);
    }
    let denom = |r: f64| {
        let z = C64::new(r, kappa);
        (cont.g_unchecked(z) * cont.gc_unchecked(z)).norm()
    };
    let extent = ff.support_radius(1e-17) + 1.0;
    let mut min_abs = f64::INFINITY;
    for k in 0..=4000 {
        min_abs = min_abs.min(denom(extent * k as f64 / 4000.0));
    }
    let near = (kappa_hat.im - kappa).abs().max(1e-9);
    for k in -50..=50 {
        let r = kappa_hat.re + near * k as f64 / 10.0;
        if r >= 0.0 {
            min_abs = min_abs.min(denom(r));
        }
    }
    if min_abs < 1e-8 {
        return Err(Error::ResonanceOnContour { min_abs });
    }
    let mut breaks: Vec<f64> = [kappa_hat.re - 3.0 * near, kappa_hat.re, kappa_hat.re + 3.0 * near, 1.0]
        .into_iter()
        .filter(|b| *b > 0.0 && *b < extent)
        .collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // the integrand is even in r
    let half = integrate_breaks(
        |r| {
            let z = C64::new(r, kappa);
            let p = ff.eval_c(z);
            C64::new(l2 * (p * p * z * z).norm() / denom(r), 0.0)
        },
        0.0,
        extent,
        &breaks,
        QuadOpts::rel(1e-12),
    )
    .ok()?;
    Ok(4.0 * PI * half.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub moments: Moments,
    /// kappa - 2 (a0 + kappa_tilde a2), the predicted anharmonic decay rate.
    pub margin: f64,
    pub admissible: bool,
}

pub fn admissibility(measure: &AtomicMeasure, kappa: f64, kappa_tilde: f64) -> Admissibility {
    let moments = measure.moments();
    let margin = kappa - 2.0 * (moments.a0 + kappa_tilde * moments.a2);
    Admissibility {
        kappa,
        kappa_tilde,
        moments,
        margin,
        admissible: margin > 0.0,
    }
}

/// Quadrature over the ordered simplex 0 <= t_n <= ... <= t_1 <= t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimplexQuadrature {
    /// Nested Gauss-Legendre after the collapsed map t_k = t_{k-1} s_k; one node count per order.
    Collapsed { nodes: Vec<usize> },
    /// Nested composite Gauss-Legendre with panels no wider than `panel`; for long times.
    Composite { panel: f64, nodes: usize },
    /// Uniform samples of the simplex, with a standard error.
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for SimplexQuadrature {
    fn default() -> Self {
        SimplexQuadrature::Collapsed { nodes: vec![12, 12, 8, 8] }
    }
}

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DysonConfig {
    #[serde(default = "default_order")]
    pub order: usize,
    /// Decay parameter entering the admissibility margin.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub quadrature: SimplexQuadrature,
}

fn default_order() -> usize {
    3
}

impl Default for DysonConfig {
    fn default() -> Self {
        DysonConfig {
            order: default_order(),
            kappa: None,
            quadrature: SimplexQuadrature::default(),
        }
    }
}

impl DysonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order > MAX_ORDER {
            return Err(Error::Invalid(format!("order must lie in 1..={MAX_ORDER}, got {}", self.order)));
        }
        let ok = match &self.quadrature {
            SimplexQuadrature::Collapsed { nodes } => !nodes.is_empty() && nodes.iter().all(|&n| n > 0),
            SimplexQuadrature::Composite { panel, nodes } => *panel > 0.0 && *nodes > 0,
            SimplexQuadrature::MonteCarlo { samples, .. } => *samples > 1,
        };
        if !ok {
            return Err(Error::Invalid("simplex quadrature needs positive node counts".into()));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0) {
                return Err(Error::Invalid(format!("kappa must be positive, got {k}")));
            }
        }
        Ok(())
    }
}

/// Points (flattened, `order` coordinates each, t_1 first) and weights.
#[derive(Debug, Clone)]
pub struct SimplexRule {
    pub order: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub monte_carlo: bool,
}

impl SimplexRule {
    pub fn new(quad: &SimplexQuadrature, order: usize, t: f64) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::Invalid(format!("order must lie in 1..={MAX_ORDER}, got {order}")));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Invalid(format!("simplex needs a finite t >= 0, got {t}")));
        }
        let mut rule = SimplexRule {
            order,
            points: vec![],
            weights: vec![],
            monte_carlo: false,
        };
        match quad {
            SimplexQuadrature::Collapsed { nodes } => {
                let p = nodes.get(order - 1).or(nodes.last()).copied().unwrap_or(8);
                let (x, w) = gauss_legendre(p);
                let unit: Vec<(f64, f64)> = x.iter().zip(&w).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
                let mut prefix = Vec::with_capacity(order);
                rule.nest(&|upper| unit.iter().map(|(s, w)| (upper * s, upper * w)).collect(), t, 1.0, &mut prefix);
            }
            SimplexQuadrature::Composite { panel, nodes } => {
                let (x, w) = gauss_legendre(*nodes);
                let panel = *panel;
                let axis = |upper: f64| -> Vec<(f64, f64)> {
                    let m = ((upper / panel).ceil() as usize).max(1);
                    let h = upper / m as f64;
                    (0..m).flat_map(|k| x.iter().zip(&w).map(move |(x, w)| (h * (k as f64 + 0.5 * (x + 1.0)), 0.5 * h * w))).collect()
                };
                let mut prefix = Vec::with_capacity(order);
                rule.nest(&axis, t, 1.0, &mut prefix);
            }
            SimplexQuadrature::MonteCarlo { samples, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed ^ (order as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let vol = t.powi(order as i32) / (1..=order).product::<usize>() as f64;
                let mut buf = vec![0.0; order];
                for _ in 0..*samples {
                    for b in buf.iter_mut() {
                        *b = rng.gen::<f64>() * t;
                    }
                    buf.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    rule.points.extend_from_slice(&buf);
                    rule.weights.push(vol / *samples as f64);
                }
                rule.monte_carlo = true;
            }
        }
        Ok(rule)
    }

    fn nest(&mut self, axis: &dyn Fn(f64) -> Vec<(f64, f64)>, upper: f64, weight: f64, prefix: &mut Vec<f64>) {
        for (x, w) in axis(upper) {
            prefix.push(x);
            if prefix.len() == self.order {
                self.points.extend_from_slice(prefix);
                self.weights.push(weight * w);
            } else {
                self.nest(axis, x, weight * w, prefix);
            }
            prefix.pop();
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.order..(k + 1) * self.order]
    }
}

/// Spacing of the correlation tables; eight-point interpolation keeps errors near 1e-11
/// for densities concentrated below r of order a few.
const TABLE_STEP: f64 = 0.05;
const TABLE_PAD: usize = 8;

#[derive(Debug, Clone)]
struct Table {
    start: f64,
    values: Vec<f64>,
}

const LAGRANGE_DENOM: [f64; 8] = [-5040.0, 720.0, -240.0, 144.0, -144.0, 240.0, -720.0, 5040.0];

impl Table {
    fn at(&self, tau: f64) -> f64 {
        let x = (tau - self.start) / TABLE_STEP;
        let i0 = ((x.floor() as isize) - 3).clamp(0, self.values.len() as isize - 8) as usize;
        let u = x - i0 as f64;
        let mut prod = 1.0;
        for k in 0..8 {
            let d = u - k as f64;
            if d.abs() < 1e-13 {
                return self.values[i0 + k];
            }
            prod *= d;
        }
        let s: f64 = self.values[i0..i0 + 8]
            .iter()
            .zip(LAGRANGE_DENOM)
            .enumerate()
            .map(|(k, (v, d))| v / ((u - k as f64) * d))
            .sum();
        s * prod
    }
}

/// Real-valued correlation functions of tau for the images phi = v(1), g and f +- h.
#[derive(Debug, Clone)]
struct Tables {
    /// Im <phi|e^{i tau r} phi>, odd
    im_a: Table,
    /// Re <phi|eta e^{i tau r} phi>, even
    re_a_eta: Table,
    /// Im <phi|e^{i tau r} g>
    im_b: Table,
    /// Re <phi|eta e^{i tau r} g>
    re_b_eta: Table,
    /// Re <f + h|eta e^{i tau r} phi>
    re_c_plus: Table,
    /// Im <f - h|e^{i tau r} phi>
    im_c_minus: Table,
}

impl Tables {
    fn build(phi: &[C64], g: &[C64], fh_plus: &[C64], fh_minus: &[C64], state: &ThermalState, grid: &RadialGrid, horizon: f64) -> Tables {
        let fine = grid.fine_rule(horizon + (TABLE_PAD as f64 + 1.0) * TABLE_STEP);
        let eta = state.eta_on(grid);
        let density = |x: &[C64], y: &[C64], thermal: bool| -> Vec<C64> {
            let per_dr: Vec<C64> = (0..grid.len())
                .map(|j| {
                    let r = grid.nodes()[j];
                    let e = if thermal { eta[j] } else { 1.0 };
                    4.0 * PI * r * r * e * x[j].conj() * y[j]
                })
                .collect();
            fine.weighted_density(&per_dr)
        };
        let dens = [
            density(phi, phi, false),
            density(phi, phi, true),
            density(phi, g, false),
            density(phi, g, true),
            density(fh_plus, phi, true),
            density(fh_minus, phi, false),
        ];
        let peak = dens.iter().flat_map(|d| d.iter().map(|v| v.norm())).fold(0.0, f64::max);
        let keep: Vec<usize> = (0..fine.len()).filter(|&j| dens.iter().any(|d| d[j].norm() > 1e-20 * peak)).collect();
        let r: Vec<f64> = keep.iter().map(|&j| fine.nodes[j]).collect();
        let d: Vec<[C64; 6]> = keep.iter().map(|&j| std::array::from_fn(|k| dens[k][j])).collect();

        let start = -(TABLE_PAD as f64) * TABLE_STEP;
        let count = ((horizon / TABLE_STEP).ceil() as usize) + 2 * TABLE_PAD + 1;
        let rows: Vec<[C64; 6]> = (0..count)
            .collect::<Vec<_>>()
            .par_chunks(256)
            .flat_map_iter(|chunk| {
                // phasor recurrence within a chunk, reseeded exactly at its start
                let tau0 = start + chunk[0] as f64 * TABLE_STEP;
                let mut ph: Vec<C64> = r.iter().map(|&x| (I * tau0 * x).exp()).collect();
                let step: Vec<C64> = r.iter().map(|&x| (I * TABLE_STEP * x).exp()).collect();
                let mut out = Vec::with_capacity(chunk.len());
                for _ in chunk {
                    let mut acc = [C64::new(0.0, 0.0); 6];
                    for ((p, s), dj) in ph.iter_mut().zip(&step).zip(&d) {
                        for k in 0..6 {
                            acc[k] += dj[k] * *p;
                        }
                        *p *= s;
                    }
                    out.push(acc);
                }
                out
            })
            .collect();
        let col = |k: usize, f: fn(C64) -> f64| Table {
            start,
            values: rows.iter().map(|row| f(row[k])).collect(),
        };
        Tables {
            im_a: col(0, |z| z.im),
            re_a_eta: col(1, |z| z.re),
            im_b: col(2, |z| z.im),
            re_b_eta: col(3, |z| z.re),
            re_c_plus: col(4, |z| z.re),
            im_c_minus: col(5, |z| z.im),
        }
    }
}

/// Everything needed to evaluate the expansion for fixed f, g, h up to a time horizon.
pub struct DysonEvaluator {
    zeroth: ThreePoint,
    tables: Tables,
    has_outer: bool,
    horizon: f64,
    re_a_eta0: f64,
}

/// One evaluation of the truncated series.
#[derive(Debug, Clone, Serialize)]
pub struct DysonValue {
    pub t: f64,
    pub value: C64,
    /// terms[n] is the order-n contribution; terms[0] is the harmonic three-point value.
    pub terms: Vec<C64>,
    pub partial_sums: Vec<C64>,
    /// Standard errors of the Monte Carlo terms, zero for deterministic rules.
    pub std_errors: Vec<f64>,
    /// The last term exceeds the one before it in modulus.
    pub truncation_dominates: bool,
}

impl DysonEvaluator {
    pub fn new(f: &TestFunction, g: &TestFunction, h: &TestFunction, state: &ThermalState, ops: &ScatteringOps, horizon: f64) -> Result<Self> {
        let grid = ops.grid().clone();
        let images = v_map_batch(&[f.clone(), g.clone(), h.clone(), TestFunction::oscillator(C64::new(1.0, 0.0), grid.clone())], ops)?;
        let vals: Vec<&[C64]> = images.iter().map(|v| v.values()).collect();
        Self::from_images(vals[0], vals[1], vals[2], vals[3], state, &grid, horizon)
    }

    /// From the free-field images of f, g, h and of the oscillator position element.
    pub fn from_images(vf: &[C64], vg: &[C64], vh: &[C64], phi: &[C64], state: &ThermalState, grid: &Arc<RadialGrid>, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        let zeroth = ThreePoint::from_images(vf, vg, vh, state, grid)?.with_horizon(horizon);
        thermal_norm_sq(phi, grid, state)?;
        let plus: Vec<C64> = vf.iter().zip(vh).map(|(a, b)| a + b).collect();
        let minus: Vec<C64> = vf.iter().zip(vh).map(|(a, b)| a - b).collect();
        let has_outer = plus.iter().chain(&minus).any(|v| *v != C64::new(0.0, 0.0));
        let tables = Tables::build(phi, vg, &plus, &minus, state, grid, horizon);
        let re_a_eta0 = tables.re_a_eta.at(0.0);
        Ok(DysonEvaluator {
            zeroth,
            tables,
            has_outer,
            horizon,
            re_a_eta0,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn zeroth(&self) -> &ThreePoint {
        &self.zeroth
    }

    /// Sum over atom assignments of the order-n integrand at one simplex point, without the
    /// 2^n omega(W(f) W(e^{itr} g) W(h)) prefactor.
    fn integrand(&self, t: f64, ts: &[f64], atoms: &[Atom]) -> C64 {
        let n = ts.len();
        let tb = &self.tables;
        let mut im_a = [[0.0; MAX_ORDER]; MAX_ORDER];
        let mut re_a = [[0.0; MAX_ORDER]; MAX_ORDER];
        let mut im_b = [0.0; MAX_ORDER];
        let mut re_b = [0.0; MAX_ORDER];
        let mut cp = [0.0; MAX_ORDER];
        let mut cm = [0.0; MAX_ORDER];
        for k in 0..n {
            for m in k + 1..n {
                let d = ts[k] - ts[m];
                im_a[k][m] = tb.im_a.at(d);
                re_a[k][m] = tb.re_a_eta.at(d);
            }
            im_b[k] = tb.im_b.at(ts[k]);
            re_b[k] = tb.re_b_eta.at(ts[k]);
            if self.has_outer {
                cp[k] = tb.re_c_plus.at(t - ts[k]);
                cm[k] = tb.im_c_minus.at(t - ts[k]);
            }
        }
        let na = atoms.len();
        let mut idx = [0usize; MAX_ORDER];
        let mut total = C64::new(0.0, 0.0);
        loop {
            let mut weight = C64::new(1.0, 0.0);
            let mut mu = [0.0; MAX_ORDER];
            for k in 0..n {
                mu[k] = atoms[idx[k]].mu;
                weight *= atoms[idx[k]].w;
            }
            let mut sines = 1.0;
            let mut quad = 0.0;
            let mut re_d = 0.0;
            let mut im_d = 0.0;
            for k in 0..n {
                let mut arg = im_b[k];
                for m in k + 1..n {
                    arg += mu[m] * im_a[k][m];
                    quad += 2.0 * mu[k] * mu[m] * re_a[k][m];
                }
                sines *= (0.5 * mu[k] * arg).sin();
                quad += mu[k] * mu[k] * self.re_a_eta0 + 2.0 * mu[k] * re_b[k];
                re_d += mu[k] * cp[k];
                im_d += mu[k] * cm[k];
            }
            if sines != 0.0 {
                let expo = C64::new(-0.25 * quad - 0.5 * re_d, -0.5 * im_d);
                total += weight * sines * expo.exp();
            }
            // next assignment
            let mut k = 0;
            loop {
                if k == n {
                    return total;
                }
                idx[k] += 1;
                if idx[k] < na {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Order-n term at time t, with its Monte Carlo standard error.
    pub fn term(&self, n: usize, t: f64, measure: &AtomicMeasure, quad: &SimplexQuadrature) -> Result<(C64, f64)> {
        if t > self.horizon * (1.0 + 1e-12) {
            return Err(Error::Invalid(format!("t = {t} exceeds the evaluator horizon {}", self.horizon)));
        }
        if measure.is_empty() || t == 0.0 {
            return Ok((C64::new(0.0, 0.0), 0.0));
        }
        let rule = SimplexRule::new(quad, n, t)?;
        let atoms = measure.atoms();
        let idx: Vec<usize> = (0..rule.len()).collect();
        let partial: Vec<(C64, f64)> = idx
            .par_chunks(2048)
            .map(|chunk| {
                let mut s = C64::new(0.0, 0.0);
                let mut s2 = 0.0;
                for &k in chunk {
                    let v = self.integrand(t, rule.point(k), atoms);
                    s += rule.weights[k] * v;
                    s2 += v.norm_sqr();
                }
                (s, s2)
            })
            .collect();
        let sum = pairwise_sum(&partial.iter().map(|p| p.0).collect::<Vec<_>>());
        let pref = 2f64.powi(n as i32) * self.zeroth.at(t);
        let mut err = 0.0;
        if rule.monte_carlo {
            let count = rule.len() as f64;
            let vol = rule.weights[0] * count;
            let mean = sum / vol;
            let second: f64 = partial.iter().map(|p| p.1).sum::<f64>() / count;
            let var = (second - mean.norm_sqr()).max(0.0);
            err = (pref.norm() * vol * (var / count).sqrt()).max(0.0);
        }
        Ok((pref * sum, err))
    }

    pub fn evaluate(&self, t: f64, measure: &AtomicMeasure, config: &DysonConfig) -> Result<DysonValue> {
        config.validate()?;
        let mut terms = vec![self.zeroth.at(t)];
        let mut std_errors = vec![0.0];
        if !measure.is_empty() {
            for n in 1..=config.order {
                let (v, e) = self.term(n, t, measure, &config.quadrature)?;
                terms.push(v);
                std_errors.push(e);
            }
        }
        let mut partial_sums = Vec::with_capacity(terms.len());
        let mut acc = C64::new(0.0, 0.0);
        for v in &terms {
            acc += v;
            partial_sums.push(acc);
        }
        let k = terms.len();
        let truncation_dominates = k >= 3 && terms[k - 1].norm() > terms[k - 2].norm();
        if truncation_dominates {
            log::warn!("truncated series at t = {t}: order-{} term exceeds its predecessor", k - 1);
        }
        Ok(DysonValue {
            t,
            value: acc,
            terms,
            partial_sums,
            std_errors,
            truncation_dominates,
        })
    }
}

fn pairwise_sum(v: &[C64]) -> C64 {
    match v.len() {
        0 => C64::new(0.0, 0.0),
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// omega_f(W(f) tau^Q_t(W(g)) W(h)) from the expansion truncated at `config.order`.
#[allow(clippy::too_many_arguments)]
pub fn dyson_three_point(
    f: &TestFunction,
    g: &TestFunction,
    h: &TestFunction,
    measure: &AtomicMeasure,
    t: f64,
    config: &DysonConfig,
    state: &ThermalState,
    ops: &ScatteringOps,
) -> Result<DysonValue> {
    config.validate()?;
    DysonEvaluator::new(f, g, h, state, ops, t.abs())?.evaluate(t, measure, config)
}

/// Large-time limit of the f = h = 0 series.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Plateau {
    pub value: C64,
    /// max |value(t) - value(T)| over the window.
    pub spread: f64,
    pub window_start: f64,
}

/// Fraction of the time range, counted from the end, over which the plateau is judged.
pub const PLATEAU_FRACTION: f64 = 0.25;
pub const PLATEAU_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct AnharmonicDecay {
    pub series: CorrelationSeries,
    pub plateau: Plateau,
    pub fit: DecayFit,
    pub admissibility: Option<Admissibility>,
    /// Times at which the last retained order dominated its predecessor.
    pub truncation_flags: Vec<f64>,
}

/// Series |omega(W(f) tau^Q_t(W(g)) W(h)) - omega(W(f) W(h)) plateau| with a log-linear fit over
/// `window`.
#[allow(clippy::too_many_arguments)]
pub fn anharmonic_decay_probe(
    f: &TestFunction,
    g: &TestFunction,
    h: &TestFunction,
    measure: &AtomicMeasure,
    times: &[f64],
    window: (f64, f64),
    config: &DysonConfig,
    state: &ThermalState,
    ops: &ScatteringOps,
) -> Result<AnharmonicDecay> {
    config.validate()?;
    if times.len() < 5 || times.windows(2).any(|w| !(w[1] > w[0])) || times[0] < 0.0 {
        return Err(Error::Invalid("decay probe needs at least five increasing, non-negative times".into()));
    }
    let t_end = *times.last().unwrap();
    let admissibility = match config.kappa {
        Some(kappa) => {
            let sd = &ops.spectral;
            let kt = kappa_tilde_with(&sd.form_factor, &sd.params, sd.kappa_hat, kappa)?;
            let report = admissibility(measure, kappa, kt);
            if !report.admissible {
                log::warn!("measure is not admissible: margin {:.3e}", report.margin);
            }
            Some(report)
        }
        None => None,
    };

    let grid = ops.grid().clone();
    let images = v_map_batch(&[f.clone(), g.clone(), h.clone(), TestFunction::oscillator(C64::new(1.0, 0.0), grid.clone())], ops)?;
    let zero = vec![C64::new(0.0, 0.0); grid.len()];
    let (vf, vg, vh, phi) = (images[0].values(), images[1].values(), images[2].values(), images[3].values());
    let full = DysonEvaluator::from_images(vf, vg, vh, phi, state, &grid, t_end)?;
    let bare = DysonEvaluator::from_images(&zero, vg, &zero, phi, state, &grid, t_end)?;

    let window_start = t_end - PLATEAU_FRACTION * (t_end - times[0]);
    let late: Vec<C64> = times
        .iter()
        .filter(|&&t| t >= window_start)
        .map(|&t| bare.evaluate(t, measure, config).map(|v| v.value))
        .collect::<Result<_>>()?;
    let last = *late.last().unwrap();
    let spread = late.iter().map(|v| (v - last).norm()).fold(0.0, f64::max);
    if !(spread < PLATEAU_TOL) {
        return Err(Error::PlateauNotReached { spread });
    }
    let plateau = Plateau {
        value: last,
        spread,
        window_start,
    };

    let mut values = Vec::with_capacity(times.len());
    let mut truncation_flags = vec![];
    for &t in times {
        let v = full.evaluate(t, measure, config)?;
        if v.truncation_dominates {
            truncation_flags.push(t);
        }
        values.push(v.value);
    }
    let series = CorrelationSeries {
        times: times.to_vec(),
        values,
        baseline: full.zeroth.omega13 * plateau.value,
    };
    let pts: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(series.deviations())
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, d)| (*t, d))
        .collect();
    let fit = fit_log_linear(&pts)?;
    Ok(AnharmonicDecay {
        series,
        plateau,
        fit,
        admissibility,
        truncation_flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundDims {
    pub max_n: usize,
    pub max_dim: usize,
}

impl Default for BoundDims {
    fn default() -> Self {
        BoundDims { max_n: 8, max_dim: 16 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundViolation {
    pub trial: usize,
    pub j: usize,
    pub lhs: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SineBoundReport {
    pub trials: usize,
    pub checks: usize,
    pub violations: Vec<BoundViolation>,
    /// Largest observed A(j) / bound.
    pub max_ratio: f64,
}

impl SineBoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// One instance of the sine-product inequality: vectors f, f_1..f_n, increasing times and
/// real couplings.
#[derive(Debug, Clone)]
pub struct BoundInstance {
    pub f: Vec<C64>,
    pub fs: Vec<Vec<C64>>,
    pub times: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub gamma: f64,
}

fn im_inner(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).im).sum()
}

impl BoundInstance {
    /// The smallest alpha and beta satisfying the hypotheses at this gamma.
    pub fn tightest_constants(&self) -> (f64, f64) {
        let n = self.fs.len();
        let mut alpha: f64 = 0.0;
        let mut beta: f64 = 0.0;
        for k in 0..n {
            let lk = self.lambdas[k].abs();
            alpha = alpha.max(im_inner(&self.fs[k], &self.f).abs() / (lk * (-self.times[k] * self.gamma).exp()));
            for j in 0..k {
                let lj = self.lambdas[j].abs();
                let decay = (-(self.times[k] - self.times[j]) * self.gamma).exp();
                beta = beta.max(im_inner(&self.fs[k], &self.fs[j]).abs() / (lk * lj * decay));
            }
        }
        (alpha, beta)
    }

    /// A(j) for j = 1..=n (index j - 1).
    pub fn products(&self) -> Vec<f64> {
        let n = self.fs.len();
        let sines: Vec<f64> = (0..n)
            .map(|k| {
                let arg: f64 = (k + 1..n).map(|m| im_inner(&self.fs[k], &self.fs[m])).sum::<f64>() + im_inner(&self.fs[k], &self.f);
                arg.sin().abs()
            })
            .collect();
        (0..n).map(|j| sines[j..].iter().product()).collect()
    }

    pub fn bounds(&self, alpha: f64, beta: f64) -> Vec<f64> {
        let n = self.fs.len();
        (0..n)
            .map(|j| {
                let tail: f64 = (j + 1..n).map(|k| 1.0 + beta * self.lambdas[k] * self.lambdas[k]).product();
                (-self.gamma * self.times[j]).exp() * self.lambdas[j].abs() * alpha * tail
            })
            .collect()
    }

    pub fn random<R: Rng>(dims: BoundDims, rng: &mut R) -> Self {
        use rand_distr::StandardNormal;
        let n = rng.gen_range(1..=dims.max_n);
        let d = rng.gen_range(1..=dims.max_dim);
        let gamma = rng.gen_range(0.05..2.0);
        let f: Vec<C64> = (0..d).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lambdas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        // damped amplitudes make the hypotheses bite rather than hold with huge constants
        let fs: Vec<Vec<C64>> = (0..n)
            .map(|k| {
                let s = lambdas[k].abs() * (-0.5 * gamma * times[k]).exp() * rng.gen_range(0.05..1.0);
                (0..d).map(|_| C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample(StandardNormal)) * s).collect::<Vec<_>>()
            })
            .collect();
        BoundInstance { f, fs, times, lambdas, gamma }
    }
}

/// Checks A(j) <= e^{-gamma t_j} |lambda_j| alpha prod_{k > j} (1 + beta lambda_k^2) on random
/// instances with the tightest admissible alpha and beta.
pub fn verify_sine_product_bound(trials: usize, dims: BoundDims, seed: u64) -> SineBoundReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SineBoundReport {
        trials,
        checks: 0,
        violations: vec![],
        max_ratio: 0.0,
    };
    for trial in 0..trials {
        let inst = BoundInstance::random(dims, &mut rng);
        let (alpha, beta) = inst.tightest_constants();
        for (j, (lhs, bound)) in inst.products().into_iter().zip(inst.bounds(alpha, beta)).enumerate() {
            report.checks += 1;
            if bound > 0.0 {
                report.max_ratio = report.max_ratio.max(lhs / bound);
            }
            if lhs > bound * (1.0 + 1e-12) + 1e-300 {
                report.violations.push(BoundViolation { trial, j: j + 1, lhs, bound });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::three_point;
    use crate::formfactor::FormFactor;
    use crate::radial::{GridSpec, RadialFn};
    use crate::spectral::{d_of_z, model_grid, SpectralData};

    fn ops(lambda: f64) -> ScatteringOps {
        let ff = FormFactor::gaussian(1.0, 1.0).unwrap();
        let p = ModelParams::new(&ff, 1.0, lambda).unwrap();
        let grid = model_grid(&ff, &p, GridSpec::default()).unwrap();
        ScatteringOps::build(Arc::new(SpectralData::build(&ff, p, grid).unwrap())).unwrap()
    }

    fn elements(o: &ScatteringOps) -> (TestFunction, TestFunction, TestFunction) {
        let g = o.grid().clone();
        let f = TestFunction::new(C64::new(0.2, -0.1), RadialFn::from_fn(g.clone(), |r| C64::new(0.3 * (-r * r).exp(), 0.0)).unwrap());
        let gg = TestFunction::oscillator(C64::new(0.6, 0.3), g.clone());
        let h = TestFunction::new(C64::new(-0.1, 0.25), RadialFn::from_fn(g, |r| C64::new(0.0, 0.2 * r * (-r * r).exp())).unwrap());
        (f, gg, h)
    }

    #[test]
    fn measure_validation_and_moments() {
        let m = AtomicMeasure::pair(1.0, C64::new(0.01, 0.0)).unwrap();
        let mo = m.moments();
        assert!((mo.a0 - 0.02).abs() < 1e-16 && (mo.a2 - 0.02).abs() < 1e-16);
        assert!(AtomicMeasure::new(vec![Atom { mu: 1.0, w: C64::new(0.01, 0.0) }]).is_err());
        assert!(AtomicMeasure::pair(2.0, C64::new(0.1, 0.2)).is_ok());
        let parsed = AtomicMeasure::from_json(r#"{"atoms":[{"mu":1.0,"w":[0.01,0.0]},{"mu":-1.0,"w":[0.01,0.0]}]}"#).unwrap();
        assert_eq!(parsed, m);
        assert!(AtomicMeasure::from_json(r#"{"atoms":[{"mu":1.0,"w":[0.01,0.5]},{"mu":-1.0,"w":[0.01,0.5]}]}"#).is_err());
        let round = serde_json::to_string(&m).unwrap();
        assert_eq!(AtomicMeasure::from_json(&round).unwrap(), m);
    }

    #[test]
    fn admissibility_arithmetic() {
        let empty = admissibility(&AtomicMeasure::empty(), 0.05, 3.0);
        assert_eq!(empty.margin, 0.05);
        assert!(empty.admissible);
        let m = AtomicMeasure::pair(1.0, C64::new(0.01, 0.0)).unwrap();
        let r = admissibility(&m, 0.2, 1.5);
        assert!((r.margin - (0.2 - 2.0 * (0.02 + 1.5 * 0.02))).abs() < 1e-15);
        let heavy = AtomicMeasure::pair(1.0, C64::new(0.2, 0.0)).unwrap();
        assert!(!admissibility(&heavy, 0.2, 0.0).admissible);
    }

    #[test]
    fn kappa_tilde_matches_independent_quadrature() {
        let ff = FormFactor::gaussian(1.0, 1.0).unwrap();
        let p = ModelParams::new(&ff, 1.0, 0.1).unwrap();
        let kappa = 0.02;
        let value = kappa_tilde(&ff, &p, kappa).unwrap();
        // G from the dispersion function: D(z^2) above the axis, minus the cut jump below it
        let l2 = 0.01;
        let integrand = |r: f64| {
            let up = C64::new(r, kappa);
            let down = C64::new(r, -kappa);
            let rho = |z: C64| (-z * z / 2.0).exp();
            let g_up = d_of_z(&ff, &p, up * up).unwrap();
            let g_down = d_of_z(&ff, &p, down * down).unwrap() - 4.0 * PI * PI * I * l2 * rho(down) * rho(down) * down;
            let num = l2 * (rho(up) * rho(up) * up * up).norm();
            C64::new(num / (g_up * g_down.conj()).norm(), 0.0)
        };
        let k = find_resonance(&ff, &p).unwrap().kappa_hat;
        let brute = integrate_breaks(integrand, 1e-9, 9.0, &[k.re - 0.1, k.re, k.re + 0.1], QuadOpts::rel(1e-10)).value.re * 4.0 * PI;
        assert!((value - brute).abs() < 1e-6 * brute, "{value} {brute}");
        // lambda^2 scaling at small coupling, away from the resonance line
        let small = kappa_tilde(&ff, &p.with_lambda(0.01), 0.2).unwrap();
        let smaller = kappa_tilde(&ff, &p.with_lambda(0.005), 0.2).unwrap();
        assert!((small / smaller - 4.0).abs() < 0.05, "{small} {smaller}");
        // the resonance sits on the contour
        assert!(matches!(kappa_tilde_with(&ff, &p, k, k.im), Err(Error::ResonanceOnContour { .. })));
    }

    #[test]
    fn simplex_volumes() {
        for quad in [
            SimplexQuadrature::default(),
            SimplexQuadrature::Composite { panel: 0.7, nodes: 6 },
        ] {
            for n in 1..=3 {
                let t = 2.3;
                let rule = SimplexRule::new(&quad, n, t).unwrap();
                let vol: f64 = rule.weights.iter().sum();
                let want = t.powi(n as i32) / (1..=n).product::<usize>() as f64;
                assert!((vol - want).abs() < 1e-8 * want, "{quad:?} {n}");
                for k in 0..rule.len() {
                    let p = rule.point(k);
                    assert!(p.windows(2).all(|w| w[0] >= w[1]) && p[0] <= t && p[n - 1] >= 0.0);
                }
            }
        }
        let mc = SimplexRule::new(&SimplexQuadrature::MonteCarlo { samples: 1000, seed: 1 }, 2, 3.0).unwrap();
        assert!((mc.weights.iter().sum::<f64>() - 4.5).abs() < 1e-12);
        // integral of t_1 t_2 over the triangle is t^4 / 8
        let rule = SimplexRule::new(&SimplexQuadrature::default(), 2, 1.5).unwrap();
        let m: f64 = (0..rule.len()).map(|k| rule.weights[k] * rule.point(k)[0] * rule.point(k)[1]).sum();
        assert!((m - 1.5f64.powi(4) / 8.0).abs() < 1e-13);
    }

    #[test]
    fn table_interpolation() {
        let values: Vec<f64> = (0..200).map(|k| (0.05 * k as f64 - 0.4).sin()).collect();
        let t = Table { start: -0.4, values };
        for x in [-0.3, 0.0, 0.123, 3.3, 9.1] {
            assert!((t.at(x) - x.sin()).abs() < 1e-11, "{x}");
        }
    }

    #[test]
    fn empty_measure_and_t_zero_are_exact() {
        let o = ops(0.1);
        let s = ThermalState::new(1.0).unwrap();
        let (f, g, h) = elements(&o);
        let cfg = DysonConfig::default();
        for t in [0.0, 1.3, 4.0] {
            let v = dyson_three_point(&f, &g, &h, &AtomicMeasure::empty(), t, &cfg, &s, &o).unwrap();
            assert_eq!(v.value, three_point(&f, &g, &h, t, &s, &o).unwrap());
        }
        let m = AtomicMeasure::pair(1.0, C64::new(0.02, 0.0)).unwrap();
        let v = dyson_three_point(&f, &g, &h, &m, 0.0, &cfg, &s, &o).unwrap();
        assert_eq!(v.value, three_point(&f, &g, &h, 0.0, &s, &o).unwrap());
        assert!(v.terms[1..].iter().all(|x| *x == C64::new(0.0, 0.0)));
    }

    /// omega(W(x_1) ... W(x_k)) for free-field vectors on the grid.
    fn weyl_product(xs: &[Vec<C64>], grid: &RadialGrid, s: &ThermalState) -> C64 {
        let sum: Vec<C64> = (0..grid.len()).map(|j| xs.iter().map(|x| x[j]).sum()).collect();
        let mut phase = 0.0;
        for a in 0..xs.len() {
            for b in a + 1..xs.len() {
                phase += grid.dot(&xs[a], &xs[b]).im;
            }
        }
        (-0.25 * thermal_norm_sq(&sum, grid, s).unwrap()).exp() * (-0.5 * I * phase).exp()
    }

    #[test]
    fn first_order_matches_commutator_oracle() {
        let o = ops(0.1);
        let s = ThermalState::new(1.0).unwrap();
        let grid = o.grid().clone();
        let (f, g, h) = elements(&o);
        let w = C64::new(0.015, 0.004);
        let m = AtomicMeasure::pair(1.0, w).unwrap();
        let cfg = DysonConfig {
            order: 1,
            ..Default::default()
        };
        let imgs = v_map_batch(&[f.clone(), g.clone(), h.clone(), TestFunction::oscillator(C64::new(1.0, 0.0), grid.clone())], &o).unwrap();
        let (vf, vg, vh, phi) = (imgs[0].values(), imgs[1].values(), imgs[2].values(), imgs[3].values());
        let shift = |v: &[C64], mu: f64, tau: f64| -> Vec<C64> { v.iter().zip(grid.nodes()).map(|(x, r)| mu * x * (I * tau * r).exp()).collect() };
        for t in [0.5, 2.0] {
            // i int_0^t dt1 int nu(dmu) omega(W(f) [W(e^{i(t-t1)r} v_mu), W(e^{itr} g)] W(h)),
            // per unit weight so the ratio is the derivative in w
            let oracle = |t1: f64| -> C64 {
                let mut acc = C64::new(0.0, 0.0);
                for a in m.atoms() {
                    let q = shift(phi, a.mu, t - t1);
                    let gt = shift(vg, 1.0, t);
                    let qg = weyl_product(&[vf.to_vec(), q.clone(), gt.clone(), vh.to_vec()], &grid, &s);
                    let gq = weyl_product(&[vf.to_vec(), gt, q, vh.to_vec()], &grid, &s);
                    acc += a.w * I * (qg - gq);
                }
                acc
            };
            let want = integrate_breaks(oracle, 0.0, t, &[], QuadOpts::rel(1e-10)).value;
            let got = dyson_three_point(&f, &g, &h, &m, t, &cfg, &s, &o).unwrap().terms[1];
            assert!((got - want).norm() < 1e-4 * want.norm(), "t {t}: {got} {want}");
            // the order-1 term is linear in the weights
            let got2 = dyson_three_point(&f, &g, &h, &m.scaled(2.0), t, &cfg, &s, &o).unwrap().terms[1];
            assert!((got2 - 2.0 * got).norm() < 1e-13 * got.norm());
        }
    }

    #[test]
    fn mirrored_measure_is_invariant() {
        let o = ops(0.1);
        let s = ThermalState::new(1.0).unwrap();
        let (f, g, h) = elements(&o);
        let m = AtomicMeasure::new(vec![
            Atom { mu: 1.0, w: C64::new(0.01, 0.003) },
            Atom { mu: 0.5, w: C64::new(0.004, 0.0) },
            Atom { mu: -1.0, w: C64::new(0.01, -0.003) },
            Atom { mu: -0.5, w: C64::new(0.004, 0.0) },
        ])
        .unwrap();
        let cfg = DysonConfig { order: 2, ..Default::default() };
        let a = dyson_three_point(&f, &g, &h, &m, 1.7, &cfg, &s, &o).unwrap();
        let b = dyson_three_point(&f, &g, &h, &m.mirrored(), 1.7, &cfg, &s, &o).unwrap();
        assert!((a.value - b.value).norm() < 1e-14, "{} {}", a.value, b.value);
        assert!(a.terms[2].norm() < a.terms[1].norm());
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature() {
        let o = ops(0.1);
        let s = ThermalState::new(1.0).unwrap();
        let (f, g, h) = elements(&o);
        let m = AtomicMeasure::pair(1.0, C64::new(0.02, 0.0)).unwrap();
        let ev = DysonEvaluator::new(&f, &g, &h, &s, &o, 3.0).unwrap();
        let (det, _) = ev.term(2, 3.0, &m, &SimplexQuadrature::default()).unwrap();
        let (mc, err) = ev.term(2, 3.0, &m, &SimplexQuadrature::MonteCarlo { samples: 20000, seed: 7 }).unwrap();
        assert!(err > 0.0 && (mc - det).norm() < 5.0 * err, "{mc} {det} {err}");
        let (comp, _) = ev.term(2, 3.0, &m, &SimplexQuadrature::Composite { panel: 0.5, nodes: 8 }).unwrap();
        assert!((comp - det).norm() < 1e-9 * det.norm());
    }

    #[test]
    fn sine_product_bound_matches_constants() {
        let report = verify_sine_product_bound(2000, BoundDims::default(), 42);
        assert!(report.passed(), "{:?}", report.violations.first());
        assert!(report.max_ratio > 0.05 && report.max_ratio <= 1.0);
        // orthogonal directions: every product vanishes
        let inst = BoundInstance {
            f: vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            fs: vec![vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]; 3],
            times: vec![0.0, 1.0, 2.0],
            lambdas: vec![1.0, 0.5, -0.5],
            gamma: 0.3,
        };
        assert!(inst.products().iter().all(|&a| a == 0.0));
        // n = 1 reduces to |sin x| <= |x|
        let one = BoundInstance {
            f: vec![C64::new(0.3, 0.2)],
            fs: vec![vec![C64::new(0.1, 0.9)]],
            times: vec![0.4],
            lambdas: vec![0.7],
            gamma: 0.5,
        };
        let (alpha, beta) = one.tightest_constants();
        assert!(one.products()[0] <= one.bounds(alpha, beta)[0]);
    }
}
