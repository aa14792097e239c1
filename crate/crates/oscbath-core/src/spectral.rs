//! Dispersion function, its boundary value on the cut, the continuation across the cut and
//! the resonance it produces.

use crate::formfactor::{FormFactor, ModelParams};
use crate::quad::{composite_gl, integrate_breaks, QuadOpts};
use crate::radial::{pv_integral, Focus, GridSpec, RadialFn, RadialGrid};
use crate::{Error, Result, C64, I};
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

fn support(ff: &FormFactor) -> f64 {
    ff.support_radius(1e-17)
}

/// D(z) = 1 - z + lambda^2 N + lambda^2 4 pi int rho^2 r^2 / (z - r^2) dr, for z off [0, inf).
pub fn d_of_z(ff: &FormFactor, params: &ModelParams, z: C64) -> Result<C64> {
    let free = 1.0 - z;
    let l2 = params.lambda * params.lambda;
    if l2 == 0.0 {
        return Ok(free);
    }
    if z.re >= 0.0 && z.im.abs() <= 1e-13 * z.norm().max(1.0) {
        return Err(Error::CutViolation { re: z.re, im: z.im });
    }
    let rmax = support(ff);
    let breaks: Vec<f64> = if z.re > 0.0 && z.re.sqrt() < rmax { vec![z.re.sqrt()] } else { vec![] };
    let q = integrate_breaks(
        |r| {
            let p = ff.eval(r);
            4.0 * PI * p * p * r * r / (z - r * r)
        },
        0.0,
        rmax,
        &breaks,
        QuadOpts::default(),
    );
    Ok(free + l2 * params.norm_sq + l2 * q.ok()?)
}

/// Boundary value D+(s) = lim D(s + i eps), s >= 0.
pub fn d_plus(ff: &FormFactor, params: &ModelParams, s: f64) -> Result<C64> {
    if s < 0.0 {
        return Err(Error::Invalid(format!("d_plus needs s >= 0, got {s}")));
    }
    let l2 = params.lambda * params.lambda;
    if l2 == 0.0 {
        return Ok(C64::new(1.0 - s, 0.0));
    }
    if s == 0.0 {
        // the integral cancels the norm term exactly
        return Ok(C64::new(1.0, 0.0));
    }
    let p = s.sqrt();
    let rmax = support(ff).max(2.0 * p + 1.0);
    let pv = pv_integral(
        |r| {
            let v = ff.eval(r);
            4.0 * PI * v * v * r * r / (p + r)
        },
        p,
        rmax,
        QuadOpts::rel(1e-13),
    )?;
    let rho = ff.eval(p);
    Ok(C64::new(1.0 - s + l2 * params.norm_sq + l2 * pv, -2.0 * PI * PI * l2 * p * rho * rho))
}

/// Continuation of r -> D+(r^2) from the real axis into the lower half plane.
///
/// With the contour Im w = eta above the real line,
/// G(z) = 1 - z^2 + lambda^2 N - 4 pi^2 i lambda^2 rho(z)^2 z + 2 pi lambda^2 int rho(w)^2 w / (z - w) dr.
/// G(z) = D(z^2) for 0 < Im z < eta, G(-z) = Gc(z) with Gc(z) = conj G(conj z), and G
/// vanishes at +-omega - i gamma while Gc vanishes at +-omega + i gamma.
#[derive(Debug, Clone)]
pub struct Continuation {
    ff: FormFactor,
    lambda2: f64,
    norm_sq: f64,
    eta: f64,
    poles: Vec<C64>,
    coef: Vec<C64>,
}

impl Continuation {
    /// Contour height min(1, 0.9 strip) in units of the form-factor scale.
    pub fn new(ff: &FormFactor, params: &ModelParams) -> Result<Self> {
        let eta = (ff.scale()).min(0.9 * ff.strip_half_width());
        Self::with_height(ff, params, eta)
    }

    pub fn with_height(ff: &FormFactor, params: &ModelParams, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < ff.strip_half_width()) {
            return Err(Error::StripViolation {
                im: eta,
                strip: ff.strip_half_width(),
            });
        }
        let l2 = params.lambda * params.lambda;
        let ext = support(ff) + 2.0 * eta;
        let m = (2.0 * ext / (0.25 * eta)).ceil() as usize;
        let breaks: Vec<f64> = (0..=m).map(|k| -ext + 2.0 * ext * k as f64 / m as f64).collect();
        let (x, w) = composite_gl(&breaks, 16);
        let mut poles = Vec::with_capacity(x.len());
        let mut coef = Vec::with_capacity(x.len());
        for (r, wt) in x.into_iter().zip(w) {
            let z = C64::new(r, eta);
            let p = ff.eval_c(z);
            poles.push(z);
            coef.push(2.0 * PI * l2 * p * p * z * wt);
        }
        Ok(Continuation {
            ff: ff.clone(),
            lambda2: l2,
            norm_sq: params.norm_sq,
            eta,
            poles,
            coef,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub(crate) fn g_unchecked(&self, z: C64) -> C64 {
        let mut s = 1.0 - z * z + self.lambda2 * self.norm_sq;
        if self.lambda2 == 0.0 {
            return s;
        }
        let p = self.ff.eval_c(z);
        s -= 4.0 * PI * PI * I * self.lambda2 * p * p * z;
        for (w, c) in self.poles.iter().zip(&self.coef) {
            s += c / (z - w);
        }
        s
    }

    fn check(&self, z: C64) -> Result<()> {
        if z.im >= self.eta {
            return Err(Error::ContourViolation { im: z.im, eta: self.eta });
        }
        if z.im.abs() > self.ff.strip_half_width() {
            return Err(Error::StripViolation {
                im: z.im,
                strip: self.ff.strip_half_width(),
            });
        }
        Ok(())
    }

    /// G(z), valid for Im z < eta. Accuracy degrades within about 0.1 eta of the contour.
    pub fn g(&self, z: C64) -> Result<C64> {
        self.check(z)?;
        Ok(self.g_unchecked(z))
    }

    /// Gc(z) = conj G(conj z), valid for Im z > -eta; the continuation of r -> D-(r^2) upward.
    pub fn gc(&self, z: C64) -> Result<C64> {
        Ok(self.g(z.conj())?.conj())
    }

    pub(crate) fn gc_unchecked(&self, z: C64) -> C64 {
        self.g_unchecked(z.conj()).conj()
    }
}

/// Closed-form second-order coefficient: kappa_hat = 1 + kappa2 lambda^2 + O(lambda^4).
pub fn kappa2(ff: &FormFactor, params: &ModelParams) -> Result<C64> {
    // 2 pi PV int_R rho^2 r / (1 - r) dr, folded onto (0, inf)
    let pv = pv_integral(
        |r| {
            let v = ff.eval(r);
            4.0 * PI * v * v * r * r / (1.0 + r)
        },
        1.0,
        support(ff).max(3.0),
        QuadOpts::rel(1e-13),
    )?;
    let rho1 = ff.eval(1.0);
    Ok(0.5 * C64::new(params.norm_sq + pv, 2.0 * PI * PI * rho1 * rho1))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Resonance {
    pub kappa_hat: C64,
    pub residual: f64,
    pub iterations: usize,
}

/// The zero kappa_hat of Gc near 1 in the upper half plane (equivalently the conjugate of
/// the zero of G near 1). Damped Newton from the perturbative seed, Muller as a fallback.
pub fn find_resonance(ff: &FormFactor, params: &ModelParams) -> Result<Resonance> {
    if params.lambda == 0.0 {
        return Ok(Resonance {
            kappa_hat: C64::new(1.0, 0.0),
            residual: 0.0,
            iterations: 0,
        });
    }
    let cont = Continuation::new(ff, params)?;
    let seed = 1.0 + params.lambda * params.lambda * kappa2(ff, params)?;
    // work with G on the conjugate point, which stays below the contour
    let f = |z: C64| -> Result<C64> { cont.g(z) };
    let z0 = seed.conj();
    let root = match newton(&f, z0) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("newton failed ({e}), trying muller");
            muller(&f, z0)?
        }
    };
    Ok(Resonance {
        kappa_hat: root.0.conj(),
        residual: root.1,
        iterations: root.2,
    })
}

const MAX_ITER: usize = 100;

fn newton<F: Fn(C64) -> Result<C64>>(f: &F, z0: C64) -> Result<(C64, f64, usize)> {
    let h = 1e-6;
    let mut z = z0;
    let mut fz = f(z)?;
    for it in 1..=MAX_ITER {
        let d = (f(z + h)? - f(z - h)?) / (2.0 * h);
        if d.norm() == 0.0 {
            break;
        }
        let step = fz / d;
        let mut damp = 1.0;
        let (mut zn, mut fn_) = (z, fz);
        for _ in 0..30 {
            zn = z - step * damp;
            fn_ = f(zn)?;
            if fn_.norm() < fz.norm() || fn_.norm() < 1e-14 {
                break;
            }
            damp *= 0.5;
        }
        let moved = (zn - z).norm();
        z = zn;
        fz = fn_;
        if fz.norm() < 1e-14 || moved < 1e-15 * z.norm() {
            return finish(z, fz, it);
        }
    }
    finish(z, fz, MAX_ITER)
}

fn finish(z: C64, fz: C64, it: usize) -> Result<(C64, f64, usize)> {
    if fz.norm() < 1e-10 {
        Ok((z, fz.norm(), it))
    } else {
        Err(Error::NoConvergence {
            iterations: it,
            residual: fz.norm(),
        })
    }
}

fn muller<F: Fn(C64) -> Result<C64>>(f: &F, z0: C64) -> Result<(C64, f64, usize)> {
    let mut x = [z0 - 0.01, z0 + 0.01, z0];
    let mut y = [f(x[0])?, f(x[1])?, f(x[2])?];
    for it in 1..=MAX_ITER {
        let h1 = x[1] - x[0];
        let h2 = x[2] - x[1];
        let d1 = (y[1] - y[0]) / h1;
        let d2 = (y[2] - y[1]) / h2;
        let a = (d2 - d1) / (h2 + h1);
        let b = a * h2 + d2;
        let disc = (b * b - 4.0 * a * y[2]).sqrt();
        let den = if (b + disc).norm() > (b - disc).norm() { b + disc } else { b - disc };
        if den.norm() == 0.0 {
            break;
        }
        let xn = x[2] - 2.0 * y[2] / den;
        let yn = f(xn)?;
        x = [x[1], x[2], xn];
        y = [y[1], y[2], yn];
        if yn.norm() < 1e-14 || (x[2] - x[1]).norm() < 1e-15 {
            return finish(xn, yn, it);
        }
    }
    finish(x[2], y[2], MAX_ITER)
}

/// Number of zeros of Gc inside the rectangle [x0, x1] x [y0, y1], by the argument principle.
/// Needs y0 > -eta.
pub fn count_zeros_gc(cont: &Continuation, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<i64> {
    if y0 <= -cont.eta() {
        return Err(Error::ContourViolation { im: -y0, eta: cont.eta() });
    }
    let corners = [C64::new(x0, y0), C64::new(x1, y0), C64::new(x1, y1), C64::new(x0, y1)];
    let mut total = 0.0;
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        total += winding_segment(cont, a, b, 0)?;
    }
    Ok((total / (2.0 * PI)).round() as i64)
}

fn winding_segment(cont: &Continuation, a: C64, b: C64, depth: usize) -> Result<f64> {
    let n = 64;
    let mut sum = 0.0;
    let mut prev = cont.gc(a)?;
    for k in 1..=n {
        let z = a + (b - a) * (k as f64 / n as f64);
        let v = cont.gc(z)?;
        if v.norm() == 0.0 {
            return Err(Error::Invalid("zero on the counting contour".into()));
        }
        let d = (v / prev).arg();
        if d.abs() > PI / 4.0 && depth < 12 {
            let z0 = a + (b - a) * ((k - 1) as f64 / n as f64);
            sum += winding_segment(cont, z0, z, depth + 1)?;
        } else {
            sum += d;
        }
        prev = v;
    }
    Ok(sum)
}

/// Boundary values, Q = -lambda rho / D+ and Q+- = (r^{1/2} +- r^{-1/2}) Q / 2 on a grid.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub params: ModelParams,
    pub form_factor: FormFactor,
    pub grid: Arc<RadialGrid>,
    pub d_plus: Vec<C64>,
    pub q: RadialFn,
    pub q_plus: RadialFn,
    pub q_minus: RadialFn,
    pub kappa_hat: C64,
    pub q_norm: f64,
    pub inf_d_plus: f64,
}

impl SpectralData {
    pub fn build(ff: &FormFactor, params: ModelParams, grid: Arc<RadialGrid>) -> Result<Self> {
        let res = find_resonance(ff, &params)?;
        Self::build_with(ff, params, grid, res.kappa_hat)
    }

    pub fn build_with(ff: &FormFactor, params: ModelParams, grid: Arc<RadialGrid>, kappa_hat: C64) -> Result<Self> {
        let nodes = grid.nodes();
        let d: Vec<C64> = nodes.iter().map(|&r| d_plus(ff, &params, r * r)).collect::<Result<_>>()?;
        let lam = params.lambda;
        let q_vals: Vec<C64> = nodes.iter().zip(&d).map(|(&r, dp)| -lam * ff.eval(r) / dp).collect();
        let qp: Vec<C64> = nodes.iter().zip(&q_vals).map(|(&r, q)| 0.5 * (r.sqrt() + 1.0 / r.sqrt()) * q).collect();
        let qm: Vec<C64> = nodes.iter().zip(&q_vals).map(|(&r, q)| 0.5 * (r.sqrt() - 1.0 / r.sqrt()) * q).collect();
        let q = RadialFn::new(grid.clone(), q_vals)?;
        let q_norm = q.norm();

        let (jmin, dmin) = d.iter().enumerate().fold((0, f64::INFINITY), |acc, (j, v)| if v.norm() < acc.1 { (j, v.norm()) } else { acc });
        // oversample between the neighbours of the minimizing node
        let lo = if jmin > 0 { nodes[jmin - 1] } else { 0.5 * nodes[0] };
        let hi = if jmin + 1 < nodes.len() { nodes[jmin + 1] } else { nodes[jmin] };
        let mut inf = dmin;
        for k in 0..=20 {
            let r = lo + (hi - lo) * k as f64 / 20.0;
            inf = inf.min(d_plus(ff, &params, r * r)?.norm());
        }

        Ok(SpectralData {
            params,
            form_factor: ff.clone(),
            q_plus: RadialFn::new(grid.clone(), qp)?,
            q_minus: RadialFn::new(grid.clone(), qm)?,
            grid,
            d_plus: d,
            q,
            kappa_hat,
            q_norm,
            inf_d_plus: inf,
        })
    }
}

/// The default grid for a model: graded panels with a focus on the resonance.
pub fn model_grid(ff: &FormFactor, params: &ModelParams, spec: GridSpec) -> Result<Arc<RadialGrid>> {
    let res = find_resonance(ff, params)?;
    grid_for(ff, spec, res.kappa_hat)
}

pub fn grid_for(ff: &FormFactor, spec: GridSpec, kappa_hat: C64) -> Result<Arc<RadialGrid>> {
    let foci = if kappa_hat.im > 0.0 {
        vec![Focus {
            center: kappa_hat.re,
            width: kappa_hat.im.max(1e-6),
        }]
    } else {
        vec![]
    };
    Ok(Arc::new(RadialGrid::graded(spec.n, spec.r_max * ff.scale(), ff.scale(), &foci)?))
}
