//! Gaussian equilibrium correlations of Weyl operators and their approach to the factorized
//! limit.

use crate::formfactor::ModelParams;
use crate::radial::{ContourRule, RadialFn, RadialGrid};
use crate::scattering::ScatteringOps;
use crate::symplectic::{v_map_batch, AnalyticTestFunction, TestFunction};
use crate::{Error, Result, C64, I};
use serde::Serialize;
use std::f64::consts::PI;

/// Thermal weight eta(r) = coth(beta r / 2) = 1 + 2 / (e^{beta r} - 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThermalState {
    pub beta: f64,
}

impl ThermalState {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Invalid(format!("beta must be positive, got {beta}")));
        }
        Ok(ThermalState { beta })
    }

    pub fn eta(&self, r: f64) -> f64 {
        1.0 / (0.5 * self.beta * r).tanh()
    }

    /// Bose occupation 1 / (e^{beta r} - 1).
    pub fn occupation(&self, r: f64) -> f64 {
        1.0 / (self.beta * r).exp_m1()
    }

    pub fn eta_on(&self, grid: &RadialGrid) -> Vec<f64> {
        grid.sample_real(|r| self.eta(r))
    }

    /// z coth(beta z / 2), regular at z = 0.
    pub fn z_coth(&self, z: C64) -> C64 {
        let x = 0.5 * self.beta * z;
        let xc = if x.norm() < 1e-3 {
            let x2 = x * x;
            1.0 + x2 / 3.0 - x2 * x2 / 45.0
        } else {
            x / x.tanh()
        };
        xc * (2.0 / self.beta)
    }
}

/// <f|eta f>, rejecting functions whose thermal norm diverges at the origin.
pub fn thermal_norm_sq(f: &[C64], grid: &RadialGrid, state: &ThermalState) -> Result<f64> {
    let mut total = 0.0;
    let mut first = 0.0;
    for (j, ((v, m), r)) in f.iter().zip(grid.measure()).zip(grid.nodes()).enumerate() {
        let g = v.norm_sqr() * m * state.eta(*r);
        if j == 0 {
            first = r * v.norm_sqr() * 4.0 * PI * r * r * state.eta(*r);
        }
        total += g;
    }
    if !total.is_finite() || (total > 0.0 && first > 0.05 * total) {
        return Err(Error::DivergentThermalNorm);
    }
    Ok(total)
}

/// omega(W(f)) = exp(-<f|eta f> / 4) for the free field.
pub fn omega_f(f: &RadialFn, state: &ThermalState) -> Result<f64> {
    Ok((-0.25 * thermal_norm_sq(f.values(), f.grid(), state)?).exp())
}

/// omega(W(c + f)) = omega_f(v(c + f)).
pub fn omega_interacting(tf: &TestFunction, state: &ThermalState, ops: &ScatteringOps) -> Result<f64> {
    let v = v_map_batch(std::slice::from_ref(tf), ops)?.pop().unwrap();
    omega_f(&v, state)
}

/// Characteristic function of the uncoupled oscillator with renormalized frequency alpha in its
/// Gibbs state: exp(-coth(beta alpha / 2) |c'|^2 / 4), c' = Re c alpha^{-1/2} + i Im c alpha^{1/2}.
pub fn gibbs_particle_char(c: C64, params: &ModelParams) -> f64 {
    let alpha = params.alpha();
    let cp = C64::new(c.re / alpha.sqrt(), c.im * alpha.sqrt());
    (-0.25 * cp.norm_sqr() / (0.5 * params.beta * alpha).tanh()).exp()
}

/// The three-point function omega(W(f1) tau_t(W(f2)) W(f3)) for fixed f1, f2, f3.
#[derive(Debug, Clone)]
pub struct ThreePoint {
    grid: std::sync::Arc<RadialGrid>,
    eta: Vec<f64>,
    nodes: Vec<f64>,
    // mu_j eta_j conj(v1 + v3)_j v2_j and mu_j conj(v1 - v3)_j v2_j, or their fine-rule versions
    plus: Vec<C64>,
    minus: Vec<C64>,
    horizon: f64,
    pub baseline: C64,
    pub omega13: C64,
    pub omega2: f64,
}

impl ThreePoint {
    pub fn new(f1: &TestFunction, f2: &TestFunction, f3: &TestFunction, state: &ThermalState, ops: &ScatteringOps) -> Result<Self> {
        let vs = v_map_batch(&[f1.clone(), f2.clone(), f3.clone()], ops)?;
        Self::from_images(vs[0].values(), vs[1].values(), vs[2].values(), state, ops.grid())
    }

    /// Same, from the free-field images v1, v2, v3.
    pub fn from_images(v1: &[C64], v2: &[C64], v3: &[C64], state: &ThermalState, grid: &std::sync::Arc<RadialGrid>) -> Result<Self> {
        let eta = state.eta_on(grid);
        let mu = grid.measure();
        let s: Vec<C64> = v1.iter().zip(v3).map(|(a, b)| a + b).collect();
        let d: Vec<C64> = v1.iter().zip(v3).map(|(a, b)| a - b).collect();
        let plus = (0..grid.len()).map(|j| mu[j] * eta[j] * s[j].conj() * v2[j]).collect();
        let minus = (0..grid.len()).map(|j| mu[j] * d[j].conj() * v2[j]).collect();
        let omega13 = (-0.25 * thermal_norm_sq(&s, grid, state)?).exp() * (-0.5 * I * grid.dot(v1, v3).im).exp();
        let omega2 = (-0.25 * thermal_norm_sq(v2, grid, state)?).exp();
        Ok(ThreePoint {
            nodes: grid.nodes().to_vec(),
            horizon: grid.resolved_horizon(),
            grid: grid.clone(),
            eta,
            plus,
            minus,
            baseline: omega13 * omega2,
            omega13,
            omega2,
        })
    }

    /// Switches to an upsampled rule that stays accurate up to `t_max`. A no-op when the grid
    /// already resolves that horizon.
    pub fn with_horizon(mut self, t_max: f64) -> Self {
        if t_max <= self.horizon {
            return self;
        }
        let fine = self.grid.fine_rule(t_max);
        let per_dr = |v: &[C64]| -> Vec<C64> { v.iter().zip(self.grid.weights()).map(|(x, w)| x / w).collect() };
        self.plus = fine.weighted_density(&per_dr(&self.plus));
        self.minus = fine.weighted_density(&per_dr(&self.minus));
        self.nodes = fine.nodes.clone();
        self.horizon = t_max;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The exponent added to the factorized value at time t.
    pub fn exponent(&self, t: f64) -> C64 {
        let mut a = C64::new(0.0, 0.0);
        let mut b = C64::new(0.0, 0.0);
        for ((p, m), r) in self.plus.iter().zip(&self.minus).zip(&self.nodes) {
            let ph = (I * t * r).exp();
            a += p * ph;
            b += m * ph;
        }
        -0.5 * a.re - 0.5 * I * b.im
    }

    pub fn at(&self, t: f64) -> C64 {
        self.baseline * self.exponent(t).exp()
    }

    pub fn series(&self, times: &[f64]) -> CorrelationSeries {
        CorrelationSeries {
            times: times.to_vec(),
            values: times.iter().map(|&t| self.at(t)).collect(),
            baseline: self.baseline,
        }
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }
}

/// omega(W(f1) tau_t(W(f2)) W(f3)).
pub fn three_point(f1: &TestFunction, f2: &TestFunction, f3: &TestFunction, t: f64, state: &ThermalState, ops: &ScatteringOps) -> Result<C64> {
    Ok(ThreePoint::new(f1, f2, f3, state, ops)?.with_horizon(t.abs()).at(t))
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationSeries {
    pub times: Vec<f64>,
    pub values: Vec<C64>,
    pub baseline: C64,
}

impl CorrelationSeries {
    pub fn deviations(&self) -> Vec<f64> {
        self.values.iter().map(|v| (v - self.baseline).norm()).collect()
    }

    /// Whether the running maximum of |value - baseline| decreases after `burn_in`, checked on
    /// blocks of ten samples.
    pub fn eventually_decreasing(&self, burn_in: f64) -> bool {
        let d: Vec<f64> = self.times.iter().zip(self.deviations()).filter(|(t, _)| **t >= burn_in).map(|(_, d)| d).collect();
        let peaks: Vec<f64> = d.chunks(10).map(|c| c.iter().cloned().fold(0.0, f64::max)).collect();
        peaks.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9))
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least squares of log|value - baseline| against t over the window.
pub fn fit_decay_rate(series: &CorrelationSeries, window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(series.deviations())
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, d)| (*t, d))
        .collect();
    fit_log_linear(&pts)
}

pub(crate) fn fit_log_linear(pts: &[(f64, f64)]) -> Result<DecayFit> {
    if pts.len() < 5 {
        return Err(Error::Invalid(format!("decay fit needs at least 5 points, got {}", pts.len())));
    }
    if pts.iter().any(|p| !(p.1 > 1e-13)) {
        return Err(Error::NoiseFloor);
    }
    let n = pts.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(t, d) in pts {
        let y = d.ln();
        sx += t;
        sy += y;
        sxx += t * t;
        sxy += t * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let icpt = (sy - slope * sx) / n;
    let mean = sy / n;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &(t, d) in pts {
        let y = d.ln();
        ss_res += (y - icpt - slope * t).powi(2);
        ss_tot += (y - mean).powi(2);
    }
    Ok(DecayFit {
        rate: -slope,
        prefactor: icpt.exp(),
        r2: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        points: pts.len(),
    })
}

/// Both evaluations of the decaying cross terms at one time.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CrossSection {
    pub t: f64,
    /// Re <v(f)|eta e^{itr} v(g)> by radial quadrature.
    pub re_grid: f64,
    /// Same, on the shifted contour.
    pub re_contour: f64,
    /// Im <v(f)|e^{itr} v(g)> by radial quadrature.
    pub im_grid: f64,
    pub im_contour: f64,
    /// C e^{-kappa t}, the modulus bound on the shifted contour.
    pub bound_re: f64,
    pub bound_im: f64,
}

/// Evaluator for the cross terms of two analytic elements, with a contour rule built once.
pub struct DecayProbe<'a> {
    f: &'a AnalyticTestFunction,
    g: &'a AnalyticTestFunction,
    state: ThermalState,
    pub kappa: f64,
    rule: ContourRule,
    re_vals: Vec<C64>,
    im_vals: Vec<C64>,
    pub c_re: f64,
    pub c_im: f64,
}

impl<'a> DecayProbe<'a> {
    pub fn new(f: &'a AnalyticTestFunction, g: &'a AnalyticTestFunction, state: ThermalState, kappa: f64, t_max: f64) -> Result<Self> {
        let limit = f.profile.analytic_height().min(g.profile.analytic_height()).min(2.0 * PI / state.beta);
        if !(kappa > 0.0 && kappa < limit) {
            return Err(Error::ContourPole { height: kappa });
        }
        let (a, b, a2, b2) = (f.a, f.b, g.a, g.b);
        // P(z) / z
        let p_over_z = move |z: C64| a * a2 * z * z + b * b2 + I * (a2 * b - a * b2) * z;
        let htil = |z: C64| 4.0 * PI * f.profile.eval_star(z) * g.profile.eval(z);
        let re_int = move |z: C64| 0.5 * p_over_z(z) * state.z_coth(z) * htil(z);
        let im_int = move |z: C64| -0.5 * I * p_over_z(z) * z * htil(z);
        let ext = 14.0 * f.profile.scale().max(g.profile.scale());
        let mut breaks = vec![];
        for h in [f.profile.analytic_height(), g.profile.analytic_height()] {
            if h.is_finite() {
                breaks.push(-1.0);
                breaks.push(1.0);
            }
        }
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        breaks.dedup();
        let r1 = ContourRule::adaptive(&re_int, kappa, ext, t_max, &breaks, 1e-11)?;
        let r2 = ContourRule::adaptive(&im_int, kappa, ext, t_max, &breaks, 1e-11)?;
        let rule = if r1.nodes.len() >= r2.nodes.len() { r1 } else { r2 };
        let re_vals = rule.sample(re_int);
        let im_vals = rule.sample(im_int);
        Ok(DecayProbe {
            c_re: rule.abs_integral(&re_vals),
            c_im: rule.abs_integral(&im_vals),
            f,
            g,
            state,
            kappa,
            rule,
            re_vals,
            im_vals,
        })
    }

    pub fn at(&self, t: f64) -> CrossSection {
        let grid = self.f.image.grid();
        let mut re = C64::new(0.0, 0.0);
        let mut im = C64::new(0.0, 0.0);
        for (((x, y), r), m) in self.f.image.values().iter().zip(self.g.image.values()).zip(grid.nodes()).zip(grid.measure()) {
            let z = x.conj() * y * (I * t * r).exp() * *m;
            re += z * self.state.eta(*r);
            im += z;
        }
        let decay = (-self.kappa * t).exp();
        CrossSection {
            t,
            re_grid: re.re,
            re_contour: self.rule.apply(&self.re_vals, t).re,
            im_grid: im.im,
            im_contour: self.rule.apply(&self.im_vals, t).re,
            bound_re: self.c_re * decay,
            bound_im: self.c_im * decay,
        }
    }
}

/// Cross terms of two analytic elements at time t on a contour at height kappa_shift.
pub fn decay_cross_section(f: &AnalyticTestFunction, g: &AnalyticTestFunction, t: f64, state: &ThermalState, kappa_shift: f64) -> Result<CrossSection> {
    Ok(DecayProbe::new(f, g, *state, kappa_shift, t.max(1.0))?.at(t))
}

/// 0.8 min(Im kappa_hat, 2 pi / beta - 0.05 * 2 pi / beta).
pub fn default_kappa_shift(kappa_hat: C64, beta: f64) -> f64 {
    0.8 * kappa_hat.im.min(0.95 * 2.0 * PI / beta)
}
