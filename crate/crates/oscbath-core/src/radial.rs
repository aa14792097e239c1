//! Radial discretization of the one-boson space and the integrals built on it.
//!
//! Functions of |k| are sampled on a composite Gauss-Legendre grid over (0, r_max). The
//! three-dimensional volume element is folded into the grid measure 4 pi r^2 w_j.

use crate::quad::{composite_gl, differentiation_matrix, gauss_legendre, integrate_breaks, kronrod_rule, QuadOpts};
use crate::{Error, Result, C64, I};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Nodes per Gauss-Legendre panel.
pub const PANEL_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub r_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n: 2000, r_max: 30.0 }
    }
}

/// A region where panels are concentrated, with Cauchy-shaped density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Focus {
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    /// Equal-width panels.
    CompositeGl,
    /// Logarithmic panels near the origin blended with uniform panels and optional foci.
    Graded,
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    #[serde(skip)]
    measure: Vec<f64>,
    breaks: Vec<f64>,
    r_max: f64,
    order: usize,
    scheme: Scheme,
    #[serde(skip)]
    diff_ref: Vec<Vec<f64>>,
}

impl PartialEq for RadialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.weights == other.weights
    }
}

impl RadialGrid {
    fn from_breaks(breaks: Vec<f64>, order: usize, scheme: Scheme) -> Result<Self> {
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("panel breakpoints must increase".into()));
        }
        let (nodes, weights) = composite_gl(&breaks, order);
        let measure = nodes.iter().zip(&weights).map(|(r, w)| 4.0 * PI * r * r * w).collect();
        let (xr, _) = gauss_legendre(order);
        Ok(RadialGrid {
            r_max: *breaks.last().unwrap(),
            diff_ref: differentiation_matrix(&xr),
            nodes,
            weights,
            measure,
            breaks,
            order,
            scheme,
        })
    }

    /// Equal panels of width r_max / ceil(n / order).
    pub fn uniform(n: usize, r_max: f64) -> Result<Self> {
        check_size(n, r_max)?;
        let m = n.div_ceil(PANEL_ORDER);
        let breaks = (0..=m).map(|k| r_max * k as f64 / m as f64).collect();
        Self::from_breaks(breaks, PANEL_ORDER, Scheme::CompositeGl)
    }

    /// Panels distributed by a blended density: logarithmic near zero (down to about
    /// 1e-4 * scale), uniform on (0, r_max), and Cauchy-shaped around each focus.
    /// Doubling `n` splits every panel in two.
    pub fn graded(n: usize, r_max: f64, scale: f64, foci: &[Focus]) -> Result<Self> {
        check_size(n, r_max)?;
        let m = n.div_ceil(PANEL_ORDER);
        let r0 = 1e-4 * scale;
        let (w_log, w_uni, w_foc) = if foci.is_empty() { (0.25, 0.75, 0.0) } else { (0.2, 0.45, 0.35 / foci.len() as f64) };
        let log_norm = (1.0 + r_max / r0).ln();
        let cdf = |r: f64| {
            let mut v = w_log * (1.0 + r / r0).ln() / log_norm + w_uni * r / r_max;
            for f in foci {
                let lo = (f.center / f.width).atan();
                let hi = ((r_max - f.center) / f.width).atan();
                v += w_foc * (((r - f.center) / f.width).atan() + lo) / (hi + lo);
            }
            v
        };
        let mut breaks = Vec::with_capacity(m + 1);
        breaks.push(0.0);
        for k in 1..m {
            let target = k as f64 / m as f64;
            let (mut lo, mut hi) = (0.0, r_max);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            breaks.push(0.5 * (lo + hi));
        }
        breaks.push(r_max);
        Self::from_breaks(breaks, PANEL_ORDER, Scheme::Graded)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// 4 pi r_j^2 w_j.
    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn panel_count(&self) -> usize {
        self.breaks.len() - 1
    }

    /// Index range of panel p.
    pub fn panel_range(&self, p: usize) -> std::ops::Range<usize> {
        p * self.order..(p + 1) * self.order
    }

    pub fn panel_width(&self, p: usize) -> f64 {
        self.breaks[p + 1] - self.breaks[p]
    }

    /// Differentiation matrix on the reference panel [-1, 1].
    pub fn diff_ref(&self) -> &[Vec<f64>] {
        &self.diff_ref
    }

    /// Sum of mu_j conj(a_j) b_j.
    pub fn dot(&self, a: &[C64], b: &[C64]) -> C64 {
        debug_assert_eq!(a.len(), self.len());
        let mut s = C64::new(0.0, 0.0);
        for ((x, y), m) in a.iter().zip(b).zip(&self.measure) {
            s += x.conj() * y * m;
        }
        s
    }

    pub fn dot_weighted(&self, a: &[C64], b: &[C64], weight: &[f64]) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (((x, y), m), w) in a.iter().zip(b).zip(&self.measure).zip(weight) {
            s += x.conj() * y * (m * w);
        }
        s
    }

    pub fn norm(&self, a: &[C64]) -> f64 {
        a.iter().zip(&self.measure).map(|(x, m)| x.norm_sqr() * m).sum::<f64>().sqrt()
    }

    pub fn sample<F: Fn(f64) -> C64>(&self, f: F) -> Vec<C64> {
        self.nodes.iter().map(|&r| f(r)).collect()
    }

    pub fn sample_real<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|&r| f(r)).collect()
    }
}

/// A finer quadrature on the same panels, for integrands carrying e^{i t r} with t up to a
/// horizon the base grid cannot resolve. Grid functions are carried over by panel-wise
/// polynomial interpolation.
#[derive(Debug, Clone)]
pub struct FineRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    maps: Vec<(usize, usize, usize)>,
    interp: Vec<Vec<Vec<f64>>>,
    order: usize,
}

/// Phase advance per sub-panel that a 16-point rule integrates to full precision.
const PHASE_PER_PANEL: f64 = 10.0;

impl RadialGrid {
    /// Largest t for which the grid itself integrates e^{i t r} against smooth densities.
    pub fn resolved_horizon(&self) -> f64 {
        let widest = (0..self.panel_count()).map(|p| self.panel_width(p)).fold(0.0, f64::max);
        PHASE_PER_PANEL / widest
    }

    pub fn fine_rule(&self, t_max: f64) -> FineRule {
        let (xr, _) = gauss_legendre(self.order);
        let bary: Vec<f64> = (0..self.order).map(|j| 1.0 / (0..self.order).filter(|&k| k != j).map(|k| xr[j] - xr[k]).product::<f64>()).collect();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut maps = Vec::new();
        let mut interp: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut by_split = std::collections::HashMap::new();
        for p in 0..self.panel_count() {
            let (a, b) = (self.breaks[p], self.breaks[p + 1]);
            let s = ((t_max * (b - a) / PHASE_PER_PANEL).ceil() as usize).max(1);
            let idx = *by_split.entry(s).or_insert_with(|| {
                let mut m = Vec::with_capacity(s * self.order);
                for q in 0..s {
                    for &x in &xr {
                        // reference position of the sub-node inside [-1, 1]
                        let y = -1.0 + (2.0 * q as f64 + 1.0 + x) / s as f64;
                        m.push(lagrange_row(&xr, &bary, y));
                    }
                }
                interp.push(m);
                interp.len() - 1
            });
            let (sub_x, sub_w) = composite_gl(&(0..=s).map(|q| a + (b - a) * q as f64 / s as f64).collect::<Vec<_>>(), self.order);
            maps.push((p * self.order, nodes.len(), idx));
            nodes.extend(sub_x);
            weights.extend(sub_w);
        }
        FineRule {
            nodes,
            weights,
            maps,
            interp,
            order: self.order,
        }
    }
}

fn lagrange_row(x: &[f64], bary: &[f64], y: f64) -> Vec<f64> {
    if let Some(j) = x.iter().position(|&xj| xj == y) {
        let mut row = vec![0.0; x.len()];
        row[j] = 1.0;
        return row;
    }
    let terms: Vec<f64> = x.iter().zip(bary).map(|(xj, b)| b / (y - xj)).collect();
    let s: f64 = terms.iter().sum();
    terms.iter().map(|t| t / s).collect()
}

impl FineRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Interpolates grid values onto the fine nodes.
    pub fn interp(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.nodes.len()];
        for &(c0, f0, idx) in &self.maps {
            let src = &v[c0..c0 + self.order];
            for (k, row) in self.interp[idx].iter().enumerate() {
                out[f0 + k] = row.iter().zip(src).map(|(a, b)| b * a).sum();
            }
        }
        out
    }

    /// Fine-rule weights times an interpolated density given per unit dr on the grid.
    pub fn weighted_density(&self, density: &[C64]) -> Vec<C64> {
        self.interp(density).into_iter().zip(&self.weights).map(|(d, w)| d * w).collect()
    }
}

fn check_size(n: usize, r_max: f64) -> Result<()> {
    if n < 64 {
        return Err(Error::Invalid(format!("grid needs at least 64 nodes, got {n}")));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::Invalid(format!("r_max must be positive, got {r_max}")));
    }
    Ok(())
}

/// Complex samples of a radial function on a shared grid.
#[derive(Debug, Clone)]
pub struct RadialFn {
    grid: Arc<RadialGrid>,
    values: Vec<C64>,
}

impl RadialFn {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Invalid("radial function has non-finite values".into()));
        }
        Ok(RadialFn { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> C64>(grid: Arc<RadialGrid>, f: F) -> Result<Self> {
        let v = grid.sample(f);
        Self::new(grid, v)
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        RadialFn {
            grid,
            values: vec![C64::new(0.0, 0.0); n],
        }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    fn same_grid(&self, other: &RadialFn) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// <f|g> = 4 pi int conj(f) g r^2 dr.
    pub fn inner(&self, other: &RadialFn) -> Result<C64> {
        self.same_grid(other)?;
        Ok(self.grid.dot(&self.values, &other.values))
    }

    /// <f|m g> for a real radial multiplier m.
    pub fn inner_weighted<M: Fn(f64) -> f64>(&self, other: &RadialFn, m: M) -> Result<C64> {
        self.same_grid(other)?;
        let w = self.grid.sample_real(m);
        Ok(self.grid.dot_weighted(&self.values, &other.values, &w))
    }

    pub fn norm(&self) -> f64 {
        self.grid.norm(&self.values)
    }

    /// || |k|^alpha f ||.
    pub fn norm_alpha(&self, alpha: f64) -> f64 {
        self.values
            .iter()
            .zip(self.grid.nodes())
            .zip(self.grid.measure())
            .map(|((v, r), m)| v.norm_sqr() * r.powf(2.0 * alpha) * m)
            .sum::<f64>()
            .sqrt()
    }

    /// Lines "r,re,im".
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,re,im\n");
        for (r, v) in self.grid.nodes().iter().zip(&self.values) {
            s.push_str(&format!("{r:.17e},{:.17e},{:.17e}\n", v.re, v.im));
        }
        s
    }

    /// Parses the output of `to_csv`; nodes must match the grid.
    pub fn from_csv(grid: Arc<RadialGrid>, text: &str) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (k == 0 && line.starts_with('r')) {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Invalid(format!("line {}: {e}", k + 1)))?;
            if cols.len() != 3 {
                return Err(Error::Invalid(format!("line {}: expected 3 columns", k + 1)));
            }
            let j = values.len();
            if j >= grid.len() || (cols[0] - grid.nodes()[j]).abs() > 1e-12 * grid.nodes()[j].max(1.0) {
                return Err(Error::GridMismatch);
            }
            values.push(C64::new(cols[1], cols[2]));
        }
        Self::new(grid, values)
    }
}

/// PV int_0^r_max h(r) / (s - r) dr by singularity subtraction.
pub fn pv_integral<F: Fn(f64) -> f64>(h: F, s: f64, r_max: f64, opts: QuadOpts) -> Result<f64> {
    if !(s > 0.0 && s < r_max) {
        return Err(Error::PoleOutOfRange { pole: s, r_max });
    }
    let hs = h(s);
    let q = integrate_breaks(
        |r| {
            let d = s - r;
            if d == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                C64::new((h(r) - hs) / d, 0.0)
            }
        },
        0.0,
        r_max,
        &[s],
        opts,
    );
    Ok(q.ok()?.re + hs * (s / (r_max - s)).ln())
}

/// A fixed quadrature along the line Im z = height, reusable for many frequencies.
#[derive(Debug, Clone)]
pub struct ContourRule {
    pub height: f64,
    pub nodes: Vec<C64>,
    pub weights: Vec<f64>,
}

impl ContourRule {
    /// Partition [-extent, extent] adaptively for h(r + i height) e^{i t_max r} and keep the
    /// Kronrod nodes of the final intervals.
    pub fn adaptive<F: Fn(C64) -> C64>(h: &F, height: f64, extent: f64, t_max: f64, breaks: &[f64], rel_tol: f64) -> Result<Self> {
        // absolute floor from the modulus integral, so cancelling integrands still terminate
        let modulus = integrate_breaks(
            |r| C64::new(h(C64::new(r, height)).norm(), 0.0),
            -extent,
            extent,
            breaks,
            QuadOpts {
                abs_tol: 1e-300,
                rel_tol,
                max_intervals: 20000,
            },
        );
        let mut intervals = modulus.intervals;
        let floor = rel_tol * modulus.value.re;
        for t in [0.0, t_max] {
            let q = integrate_breaks(
                |r| h(C64::new(r, height)) * C64::new(0.0, t * r).exp(),
                -extent,
                extent,
                breaks,
                QuadOpts {
                    abs_tol: floor.max(1e-300),
                    rel_tol,
                    max_intervals: 20000,
                },
            );
            if !q.converged {
                return Err(Error::QuadratureDivergence {
                    estimate: q.value.norm(),
                    error: q.error,
                });
            }
            if q.intervals.len() > intervals.len() {
                intervals = q.intervals;
            }
        }
        let (x, w) = kronrod_rule(&intervals);
        Ok(ContourRule {
            height,
            nodes: x.into_iter().map(|r| C64::new(r, height)).collect(),
            weights: w,
        })
    }

    /// Sum of w_j v_j e^{i t z_j}.
    pub fn apply(&self, values: &[C64], t: f64) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for ((z, w), v) in self.nodes.iter().zip(&self.weights).zip(values) {
            s += v * (I * t * z).exp() * *w;
        }
        s
    }

    /// Sum of w_j |v_j|.
    pub fn abs_integral(&self, values: &[C64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v.norm()).sum()
    }

    pub fn sample<F: Fn(C64) -> C64>(&self, h: F) -> Vec<C64> {
        self.nodes.iter().map(|&z| h(z)).collect()
    }
}

/// Result of an oscillatory integral on a shifted contour.
#[derive(Debug, Clone, Copy)]
pub struct Oscillatory {
    pub value: C64,
    /// e^{-t kappa} int |h(r + i kappa)| dr, zero shift for t = 0.
    pub bound: f64,
    pub height: f64,
}

/// int_R h(r) e^{i t r} dr. For t > 0 the contour is moved to Im z = kappa_shift; for t = 0
/// the real line is used. `extent` bounds the effective support of h.
pub fn oscillatory_integral<F: Fn(C64) -> C64>(h: F, t: f64, kappa_shift: f64, extent: f64, breaks: &[f64]) -> Result<Oscillatory> {
    let height = if t > 0.0 { kappa_shift } else { 0.0 };
    if t > 0.0 {
        check_contour(&h, kappa_shift, extent)?;
    }
    let mut opts = QuadOpts {
        abs_tol: 1e-300,
        rel_tol: 1e-12,
        max_intervals: 20000,
    };
    let b = integrate_breaks(|r| C64::new(h(C64::new(r, height)).norm(), 0.0), -extent, extent, breaks, opts).ok()?;
    // cancellation can leave a result far below the modulus; resolve it relative to the modulus
    opts.abs_tol = (1e-13 * b.re).max(1e-300);
    let q = integrate_breaks(|r| h(C64::new(r, height)) * C64::new(0.0, t * r).exp(), -extent, extent, breaks, opts);
    let value = q.ok()? * (-t * height).exp();
    Ok(Oscillatory {
        value,
        bound: (-t * height).exp() * b.re,
        height,
    })
}

/// Scans the strip between the real line and the contour for poles of h.
pub fn check_contour<F: Fn(C64) -> C64>(h: &F, height: f64, extent: f64) -> Result<()> {
    let m = 2001;
    let mut reference: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for k in 0..m {
        let r = -extent + 2.0 * extent * k as f64 / (m - 1) as f64;
        reference = reference.max(h(C64::new(r, 0.0)).norm()).max(h(C64::new(r, height)).norm());
        for frac in [0.25, 0.5, 0.75] {
            let v = h(C64::new(r, frac * height)).norm();
            if !v.is_finite() {
                return Err(Error::ContourPole { height });
            }
            peak = peak.max(v);
        }
    }
    if peak > 1e8 * reference.max(1e-300) {
        return Err(Error::ContourPole { height });
    }
    Ok(())
}

/// Orthonormal radial functions c_m L_m^(2)(a r) e^{-a r / 2} for m < count.
pub fn laguerre_basis(grid: &RadialGrid, count: usize, a: f64) -> Vec<Vec<C64>> {
    let mut out = vec![Vec::with_capacity(grid.len()); count];
    for &r in grid.nodes() {
        let x = a * r;
        let damp = (-0.5 * x).exp();
        let (mut l0, mut l1) = (1.0, 3.0 - x);
        for (m, col) in out.iter_mut().enumerate() {
            let l = match m {
                0 => l0,
                1 => l1,
                _ => {
                    let k = (m - 1) as f64;
                    let l2 = ((2.0 * k + 3.0 - x) * l1 - (k + 2.0) * l0) / (k + 1.0);
                    l0 = l1;
                    l1 = l2;
                    l2
                }
            };
            let c = (a * a * a / (4.0 * PI * ((m + 1) * (m + 2)) as f64)).sqrt();
            col.push(C64::new(c * l * damp, 0.0));
        }
    }
    out
}

/// A smooth random vector: complex normal coefficients on the first `terms` Laguerre functions.
pub fn smooth_random<R: rand::Rng>(basis: &[Vec<C64>], rng: &mut R) -> Vec<C64> {
    use rand_distr::StandardNormal;
    let n = basis[0].len();
    let mut v = vec![C64::new(0.0, 0.0); n];
    for b in basis {
        let c = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        for (x, y) in v.iter_mut().zip(b) {
            *x += c * y;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laguerre_basis_is_orthonormal() {
        let g = grid();
        let b = laguerre_basis(&g, 16, 4.0);
        for i in 0..16 {
            for j in 0..16 {
                let v = g.dot(&b[i], &b[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v.re - want).abs() < 1e-10 && v.im == 0.0, "{i} {j} {v}");
            }
        }
    }

    fn grid() -> Arc<RadialGrid> {
        Arc::new(RadialGrid::graded(2000, 30.0, 1.0, &[]).unwrap())
    }

    #[test]
    fn weights_reproduce_length() {
        for g in [RadialGrid::uniform(2000, 30.0).unwrap(), RadialGrid::graded(2000, 30.0, 1.0, &[Focus { center: 1.0, width: 0.03 }]).unwrap()] {
            let s: f64 = g.weights().iter().sum();
            assert!((s - 30.0).abs() < 1e-12 * 30.0);
            assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
            assert!(g.nodes()[0] > 0.0 && g.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn doubling_splits_panels() {
        let f = [Focus { center: 1.0, width: 0.05 }];
        let a = RadialGrid::graded(2000, 30.0, 1.0, &f).unwrap();
        let b = RadialGrid::graded(4000, 30.0, 1.0, &f).unwrap();
        for (k, x) in a.breaks().iter().enumerate() {
            assert!((b.breaks()[2 * k] - x).abs() < 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn gaussian_moment() {
        let g = grid();
        let f = RadialFn::from_fn(g, |r| C64::new((-r * r / 2.0).exp(), 0.0)).unwrap();
        let v = f.inner(&f).unwrap();
        assert!((v.re - PI.powf(1.5)).abs() < 1e-8);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn singular_weight_is_resolved() {
        // || |k|^{-1/2} e^{-r} ||^2 = 4 pi int r e^{-2r} dr = pi
        let g = grid();
        let f = RadialFn::from_fn(g, |r| C64::new((-r).exp(), 0.0)).unwrap();
        assert!((f.norm_alpha(-0.5).powi(2) - PI).abs() < 1e-10);
        // || |k|^{-1} e^{-r} ||^2 = 4 pi int e^{-2r} = 2 pi
        assert!((f.norm_alpha(-1.0).powi(2) - 2.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn pv_examples() {
        let v = pv_integral(|_| 1.0, 1.5, 3.0, QuadOpts::default()).unwrap();
        assert!(v.abs() < 1e-14);
        let v = pv_integral(|r| r, 1.0, 2.0, QuadOpts::default()).unwrap();
        assert!((v + 2.0).abs() < 1e-13);
        assert!(matches!(pv_integral(|r| r, 3.0, 2.0, QuadOpts::default()), Err(Error::PoleOutOfRange { .. })));
    }

    #[test]
    fn pv_matches_excision_limit() {
        // symmetric excision of (s - e, s + e), extrapolated in e
        let h = |r: f64| (-r * r).exp() * r;
        let s = 1.0;
        let pv = pv_integral(h, s, 10.0, QuadOpts::default()).unwrap();
        let excise = |e: f64| {
            let f = |r: f64| C64::new(h(r) / (s - r), 0.0);
            crate::quad::integrate(f, 0.0, s - e, QuadOpts::rel(1e-13)).value.re
                + crate::quad::integrate(f, s + e, 10.0, QuadOpts::rel(1e-13)).value.re
        };
        let (a, b) = (excise(1e-3), excise(5e-4));
        let extrap = 2.0 * b - a;
        assert!((pv - extrap).abs() < 1e-6, "{pv} {extrap}");
    }

    #[test]
    fn oscillatory_contour_independence() {
        let h = |z: C64| (-(z * z)).exp();
        let a = oscillatory_integral(h, 3.0, 0.3, 12.0, &[]).unwrap();
        let b = oscillatory_integral(h, 3.0, 0.6, 12.0, &[]).unwrap();
        let exact = PI.sqrt() * (-9.0f64 / 4.0).exp();
        assert!((a.value - b.value).norm() < 1e-8);
        assert!((a.value.re - exact).abs() < 1e-10);
        for t in [1.0, 5.0, 10.0] {
            let o = oscillatory_integral(h, t, 0.5, 12.0, &[]).unwrap();
            assert!(o.value.norm() <= o.bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pole_between_contours_is_detected() {
        let h = |z: C64| 1.0 / (z - C64::new(0.0, 0.2)) / (z + C64::new(0.0, 3.0)) / (z * z + 9.0);
        assert!(matches!(oscillatory_integral(h, 1.0, 0.4, 10.0, &[]), Err(Error::ContourPole { .. })));
    }

    #[test]
    fn fine_rule_resolves_fast_phases() {
        let g = grid();
        let t = 200.0;
        let fine = g.fine_rule(t);
        let density: Vec<C64> = g.nodes().iter().map(|&r| C64::new((-r * r).exp(), 0.0)).collect();
        let got: C64 = fine.weighted_density(&density).iter().zip(&fine.nodes).map(|(d, &r)| d * (I * t * r).exp()).sum();
        // closed form of the half-line Fourier transform of a Gaussian
        let reference = C64::new(0.5 * PI.sqrt() * (-t * t / 4.0).exp(), dawson(t / 2.0));
        assert!((got - reference).norm() < 1e-10, "{got} {reference}");
        let coarse: C64 = g.nodes().iter().zip(g.weights()).map(|(&r, w)| w * (-r * r).exp() * (I * t * r).exp()).sum();
        assert!((coarse - reference).norm() > 1e-6);
    }

    fn dawson(x: f64) -> f64 {
        // asymptotic series, adequate for x >= 50
        let mut term = 1.0 / (2.0 * x);
        let mut sum = term;
        for k in 1..12 {
            term *= (2 * k - 1) as f64 / (2.0 * x * x);
            sum += term;
        }
        sum
    }

    #[test]
    fn csv_round_trip() {
        let g = Arc::new(RadialGrid::uniform(64, 5.0).unwrap());
        let f = RadialFn::from_fn(g.clone(), |r| C64::new(r.sin(), r.cos())).unwrap();
        let back = RadialFn::from_csv(g, &f.to_csv()).unwrap();
        assert_eq!(back.values(), f.values());
    }
}
