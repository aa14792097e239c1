//! The real-linear map v from oscillator-plus-field test functions to free-field test
//! functions, its inverse and the flow it induces.

use crate::formfactor::FormFactor;
use crate::radial::{laguerre_basis, smooth_random, RadialFn, RadialGrid};
use crate::scattering::ScatteringOps;
use crate::spectral::{Continuation, SpectralData};
use crate::{Error, Result, C64, I};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// c + f in C + f-space.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub c: C64,
    pub f: RadialFn,
}

impl TestFunction {
    pub fn new(c: C64, f: RadialFn) -> Self {
        TestFunction { c, f }
    }

    pub fn oscillator(c: C64, grid: Arc<RadialGrid>) -> Self {
        TestFunction { c, f: RadialFn::zeros(grid) }
    }

    pub fn scale(&self, s: f64) -> Self {
        TestFunction {
            c: self.c * s,
            f: RadialFn::new(self.f.grid().clone(), self.f.values().iter().map(|v| v * s).collect()).unwrap(),
        }
    }

    pub fn mul_complex(&self, s: C64) -> Self {
        TestFunction {
            c: self.c * s,
            f: RadialFn::new(self.f.grid().clone(), self.f.values().iter().map(|v| v * s).collect()).unwrap(),
        }
    }

    /// |c| + ||f|| + || |k|^{-1/2} f ||.
    pub fn norm_plus(&self) -> f64 {
        self.c.norm() + self.f.norm() + self.f.norm_alpha(-0.5)
    }

    /// |c - c'| + ||f - f'||.
    pub fn distance(&self, other: &TestFunction) -> f64 {
        let d: Vec<C64> = self.f.values().iter().zip(other.f.values()).map(|(a, b)| a - b).collect();
        (self.c - other.c).norm() + self.f.grid().norm(&d)
    }
}

fn conj(a: &[C64]) -> Vec<C64> {
    a.iter().map(|x| x.conj()).collect()
}

/// v(c + h) = conj(W+)* h + c conj(Q+) - conj(W-)* conj(h) - conj(c) conj(Q-).
pub fn v_map(tf: &TestFunction, ops: &ScatteringOps) -> Result<RadialFn> {
    Ok(v_map_batch(std::slice::from_ref(tf), ops)?.pop().unwrap())
}

pub fn v_map_batch(tfs: &[TestFunction], ops: &ScatteringOps) -> Result<Vec<RadialFn>> {
    let grid = ops.grid();
    let hs: Vec<Vec<C64>> = tfs.iter().map(|t| t.f.values().to_vec()).collect();
    if tfs.iter().any(|t| t.f.grid().len() != grid.len()) {
        return Err(Error::GridMismatch);
    }
    let hbar: Vec<Vec<C64>> = hs.iter().map(|h| conj(h)).collect();
    let a = ops.w_plus_bar_adj.apply_batch(&hs);
    let b = ops.w_minus_bar_adj.apply_batch(&hbar);
    let qp = ops.spectral.q_plus.values();
    let qm = ops.spectral.q_minus.values();
    tfs.iter()
        .zip(a.into_iter().zip(b))
        .map(|(t, (a, b))| {
            let v = (0..grid.len()).map(|j| a[j] - b[j] + t.c * qp[j].conj() - t.c.conj() * qm[j].conj()).collect();
            RadialFn::new(grid.clone(), v)
        })
        .collect()
}

/// (<conj Q+ | g> + <Q- | conj g>) + (conj(W+) g + W- conj g).
pub fn v_inverse(g: &RadialFn, ops: &ScatteringOps) -> Result<TestFunction> {
    Ok(v_inverse_batch(std::slice::from_ref(g), ops)?.pop().unwrap())
}

pub fn v_inverse_batch(gs: &[RadialFn], ops: &ScatteringOps) -> Result<Vec<TestFunction>> {
    let grid = ops.grid();
    if gs.iter().any(|g| g.grid().len() != grid.len()) {
        return Err(Error::GridMismatch);
    }
    let vals: Vec<Vec<C64>> = gs.iter().map(|g| g.values().to_vec()).collect();
    let bars: Vec<Vec<C64>> = vals.iter().map(|v| conj(v)).collect();
    let a = ops.w_plus_bar.apply_batch(&vals);
    let b = ops.w_minus.apply_batch(&bars);
    let qpb = conj(ops.spectral.q_plus.values());
    let qm = ops.spectral.q_minus.values();
    vals.iter()
        .zip(&bars)
        .zip(a.into_iter().zip(b))
        .map(|((v, vb), (a, b))| {
            let c = grid.dot(&qpb, v) + grid.dot(qm, vb);
            let f = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            Ok(TestFunction::new(c, RadialFn::new(grid.clone(), f)?))
        })
        .collect()
}

/// e^{itr} applied pointwise.
pub fn evolve_free(g: &RadialFn, t: f64) -> RadialFn {
    let v = g.values().iter().zip(g.grid().nodes()).map(|(x, r)| x * (I * t * r).exp()).collect();
    RadialFn::new(g.grid().clone(), v).unwrap()
}

/// w_t = v^{-1} e^{itr} v.
pub fn w_t(tf: &TestFunction, t: f64, ops: &ScatteringOps) -> Result<TestFunction> {
    let u = v_map(tf, ops)?;
    v_inverse(&evolve_free(&u, t), ops)
}

pub fn w_t_batch(tfs: &[TestFunction], t: f64, ops: &ScatteringOps) -> Result<Vec<TestFunction>> {
    let us: Vec<RadialFn> = v_map_batch(tfs, ops)?.iter().map(|u| evolve_free(u, t)).collect();
    v_inverse_batch(&us, ops)
}

/// Im(conj c c') + Im <f|f'>.
pub fn symplectic_form(x: &TestFunction, y: &TestFunction) -> Result<f64> {
    Ok((x.c.conj() * y.c).im + x.f.inner(&y.f)?.im)
}

/// Im <f|g> for field functions.
pub fn symplectic_form_field(f: &RadialFn, g: &RadialFn) -> Result<f64> {
    Ok(f.inner(g)?.im)
}

/// Random element with complex normal c and a smooth random field part.
pub fn random_test_function<R: rand::Rng>(grid: &Arc<RadialGrid>, basis: &[Vec<C64>], rng: &mut R) -> TestFunction {
    use rand_distr::StandardNormal;
    let c = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    TestFunction::new(c, RadialFn::new(grid.clone(), smooth_random(basis, rng)).unwrap())
}

pub fn default_basis(grid: &RadialGrid, scale: f64) -> Vec<Vec<C64>> {
    laguerre_basis(grid, 6, 2.0 / scale)
}

/// A profile f analytic on a strip above the real axis, extended to r < 0 by
/// f(-r) = conj f(r).
#[derive(Clone)]
pub enum Profile {
    Gaussian { sigma: f64 },
    /// exp(-z^2 / (2 sigma^2)) sum_k c_k i^(k mod 2) z^k.
    GaussianPoly { sigma: f64, coeffs: Vec<f64> },
    /// -lambda rho(z) / Gc(z), the continuation of conj Q.
    Oscillator {
        lambda: f64,
        form_factor: FormFactor,
        continuation: Arc<Continuation>,
        kappa_hat: C64,
    },
    /// A user-supplied continuation with its characteristic scale.
    Custom { eval: Arc<dyn Fn(C64) -> C64 + Send + Sync>, scale: f64 },
}

impl std::fmt::Debug for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Profile::Gaussian { sigma } => write!(f, "Gaussian({sigma})"),
            Profile::GaussianPoly { sigma, coeffs } => write!(f, "GaussianPoly({sigma}, {coeffs:?})"),
            Profile::Oscillator { lambda, .. } => write!(f, "Oscillator({lambda})"),
            Profile::Custom { scale, .. } => write!(f, "Custom(scale={scale})"),
        }
    }
}

impl Profile {
    pub fn oscillator(sd: &SpectralData) -> Result<Self> {
        Ok(Profile::Oscillator {
            lambda: sd.params.lambda,
            form_factor: sd.form_factor.clone(),
            continuation: Arc::new(Continuation::new(&sd.form_factor, &sd.params)?),
            kappa_hat: sd.kappa_hat,
        })
    }

    pub fn eval(&self, z: C64) -> C64 {
        match self {
            Profile::Gaussian { sigma } => (-(z * z) / (2.0 * sigma * sigma)).exp(),
            Profile::GaussianPoly { sigma, coeffs } => {
                let mut p = C64::new(0.0, 0.0);
                let mut zk = C64::new(1.0, 0.0);
                for (k, c) in coeffs.iter().enumerate() {
                    let ck = if k % 2 == 0 { C64::new(*c, 0.0) } else { C64::new(0.0, *c) };
                    p += ck * zk;
                    zk *= z;
                }
                p * (-(z * z) / (2.0 * sigma * sigma)).exp()
            }
            Profile::Oscillator {
                lambda,
                form_factor,
                continuation,
                ..
            } => -*lambda * form_factor.eval_c(z) / continuation.gc_unchecked(z),
            Profile::Custom { eval, .. } => eval(z),
        }
    }

    /// conj f(conj z), the continuation of conj f.
    pub fn eval_star(&self, z: C64) -> C64 {
        self.eval(z.conj()).conj()
    }

    /// Height of the nearest singularity above the real axis.
    pub fn analytic_height(&self) -> f64 {
        match self {
            Profile::Oscillator { kappa_hat, .. } => kappa_hat.im,
            _ => f64::INFINITY,
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            Profile::Gaussian { sigma } | Profile::GaussianPoly { sigma, .. } => *sigma,
            Profile::Oscillator { form_factor, .. } => form_factor.scale(),
            Profile::Custom { scale, .. } => *scale,
        }
    }

    /// Largest |f(-r) - conj f(r)| over sample points, relative to max |f|.
    pub fn reflection_defect(&self) -> f64 {
        let s = self.scale();
        let mut peak: f64 = 0.0;
        let mut defect: f64 = 0.0;
        for k in 1..=400 {
            let r = 8.0 * s * k as f64 / 400.0;
            let a = self.eval(C64::new(r, 0.0));
            let b = self.eval(C64::new(-r, 0.0));
            peak = peak.max(a.norm());
            defect = defect.max((b - a.conj()).norm());
        }
        defect / peak.max(f64::MIN_POSITIVE)
    }
}

/// An element (a i r^{1/2} + b r^{-1/2}) f of the analytic class together with its preimage
/// under v.
#[derive(Debug, Clone)]
pub struct AnalyticTestFunction {
    pub a: f64,
    pub b: f64,
    pub profile: Profile,
    pub image: RadialFn,
    pub cached: TestFunction,
    /// ||v(cached) - image|| / ||image||.
    pub membership_residual: f64,
    /// Strip integrals int |f(r + i s)|^2 (1 + |r|^3) dr at five heights.
    pub strip_samples: Vec<(f64, f64)>,
}

pub fn make_analytic(a: f64, b: f64, profile: Profile, ops: &ScatteringOps) -> Result<AnalyticTestFunction> {
    let defect = profile.reflection_defect();
    if defect > 1e-10 {
        return Err(Error::ReflectionViolation { defect });
    }
    let grid = ops.grid().clone();
    let image = RadialFn::from_fn(grid.clone(), |r| (a * I * r.sqrt() + b / r.sqrt()) * profile.eval(C64::new(r, 0.0)))?;
    let cached = v_inverse(&image, ops)?;
    let back = v_map(&cached, ops)?;
    let diff: Vec<C64> = back.values().iter().zip(image.values()).map(|(x, y)| x - y).collect();
    let membership_residual = grid.norm(&diff) / image.norm().max(f64::MIN_POSITIVE);

    let height = profile.analytic_height().min(10.0 * profile.scale());
    let s = profile.scale();
    let mut strip_samples = Vec::new();
    for frac in [0.0, 0.2, 0.4, 0.6, 0.8] {
        let y = frac * height;
        let n = 4000;
        let ext = 12.0 * s;
        let h = 2.0 * ext / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let r = -ext + k as f64 * h;
            acc += profile.eval(C64::new(r, y)).norm_sqr() * (1.0 + r.abs().powi(3)) * h;
        }
        if !acc.is_finite() {
            return Err(Error::StripViolation { im: y, strip: height });
        }
        strip_samples.push((y, acc));
    }
    Ok(AnalyticTestFunction {
        a,
        b,
        profile,
        image,
        cached,
        membership_residual,
        strip_samples,
    })
}

/// Field part of a plain test function literal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    Gaussian {
        sigma: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    GaussianPoly {
        sigma: f64,
        coeffs: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionSpec {
    #[serde(default)]
    pub c: [f64; 2],
    #[serde(default = "zero_field")]
    pub f: FieldSpec,
}

fn zero_field() -> FieldSpec {
    FieldSpec::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Gaussian { sigma: f64 },
    GaussianPoly { sigma: f64, coeffs: Vec<f64> },
    Oscillator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSpec {
    pub a: f64,
    pub b: f64,
    pub profile: ProfileSpec,
}

/// Either literal form accepted in input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ElementSpec {
    Analytic(AnalyticSpec),
    Plain(TestFunctionSpec),
}

impl FieldSpec {
    pub fn sample(&self, grid: &Arc<RadialGrid>) -> Result<RadialFn> {
        match self {
            FieldSpec::Zero => Ok(RadialFn::zeros(grid.clone())),
            FieldSpec::Gaussian { sigma, amplitude } => RadialFn::from_fn(grid.clone(), |r| C64::new(amplitude * (-r * r / (2.0 * sigma * sigma)).exp(), 0.0)),
            FieldSpec::GaussianPoly { sigma, coeffs } => {
                let p = Profile::GaussianPoly {
                    sigma: *sigma,
                    coeffs: coeffs.clone(),
                };
                RadialFn::from_fn(grid.clone(), |r| p.eval(C64::new(r, 0.0)))
            }
        }
    }
}

impl ProfileSpec {
    pub fn build(&self, sd: &SpectralData) -> Result<Profile> {
        Ok(match self {
            ProfileSpec::Gaussian { sigma } => Profile::Gaussian { sigma: *sigma },
            ProfileSpec::GaussianPoly { sigma, coeffs } => Profile::GaussianPoly {
                sigma: *sigma,
                coeffs: coeffs.clone(),
            },
            ProfileSpec::Oscillator => Profile::oscillator(sd)?,
        })
    }
}

/// A resolved input element: a plain test function, or an analytic one with its preimage.
#[derive(Debug, Clone)]
pub enum Element {
    Plain(TestFunction),
    Analytic(Box<AnalyticTestFunction>),
}

impl Element {
    pub fn test_function(&self) -> &TestFunction {
        match self {
            Element::Plain(t) => t,
            Element::Analytic(a) => &a.cached,
        }
    }
}

impl ElementSpec {
    pub fn resolve(&self, ops: &ScatteringOps) -> Result<Element> {
        match self {
            ElementSpec::Plain(p) => Ok(Element::Plain(TestFunction::new(C64::new(p.c[0], p.c[1]), p.f.sample(ops.grid())?))),
            ElementSpec::Analytic(a) => Ok(Element::Analytic(Box::new(make_analytic(a.a, a.b, a.profile.build(&ops.spectral)?, ops)?))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formfactor::ModelParams;
    use crate::radial::GridSpec;
    use crate::spectral::model_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops(lambda: f64) -> ScatteringOps {
        let ff = FormFactor::gaussian(1.0, 1.0).unwrap();
        let p = ModelParams::new(&ff, 1.0, lambda).unwrap();
        let grid = model_grid(&ff, &p, GridSpec::default()).unwrap();
        ScatteringOps::build(Arc::new(SpectralData::build(&ff, p, grid).unwrap())).unwrap()
    }

    #[test]
    fn oscillator_image() {
        let o = ops(0.1);
        let c = C64::new(0.7, -1.3);
        let v = v_map(&TestFunction::oscillator(c, o.grid().clone()), &o).unwrap();
        let q = o.spectral.q.values();
        for ((x, r), q) in v.values().iter().zip(o.grid().nodes()).zip(q) {
            let want = c.re * q.conj() / r.sqrt() + I * c.im * r.sqrt() * q.conj();
            assert!((x - want).norm() < 1e-12 * (1.0 + want.norm()));
        }
    }

    #[test]
    fn free_map_is_identity() {
        let o = ops(0.0);
        let basis = default_basis(o.grid(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tf = random_test_function(o.grid(), &basis, &mut rng);
        let h = TestFunction::new(C64::new(0.0, 0.0), tf.f.clone());
        assert_eq!(v_map(&h, &o).unwrap().values(), tf.f.values());
        let back = v_inverse(&tf.f, &o).unwrap();
        assert_eq!(back.c, C64::new(0.0, 0.0));
        assert_eq!(back.f.values(), tf.f.values());
    }

    #[test]
    fn real_but_not_complex_linear() {
        let o = ops(0.1);
        let basis = default_basis(o.grid(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tf = random_test_function(o.grid(), &basis, &mut rng);
        let v = v_map(&tf, &o).unwrap();
        let v2 = v_map(&tf.scale(2.0), &o).unwrap();
        for (a, b) in v.values().iter().zip(v2.values()) {
            assert!((2.0 * a - b).norm() < 1e-12 * (1.0 + b.norm()));
        }
        let vi = v_map(&tf.mul_complex(I), &o).unwrap();
        let gap: Vec<C64> = v.values().iter().zip(vi.values()).map(|(a, b)| I * a - b).collect();
        assert!(o.grid().norm(&gap) > 1e-3 * v.norm());
    }

    #[test]
    fn round_trips_and_symplecticity() {
        let o = ops(0.1);
        let basis = default_basis(o.grid(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tfs: Vec<TestFunction> = (0..20).map(|_| random_test_function(o.grid(), &basis, &mut rng)).collect();
        let vs = v_map_batch(&tfs, &o).unwrap();
        let back = v_inverse_batch(&vs, &o).unwrap();
        for (t, b) in tfs.iter().zip(&back) {
            assert!(t.distance(b) < 1e-5 * t.norm_plus(), "{}", t.distance(b));
        }
        let gs: Vec<RadialFn> = tfs.iter().map(|t| t.f.clone()).collect();
        let pre = v_inverse_batch(&gs, &o).unwrap();
        let again = v_map_batch(&pre, &o).unwrap();
        for (g, a) in gs.iter().zip(&again) {
            let d: Vec<C64> = g.values().iter().zip(a.values()).map(|(x, y)| x - y).collect();
            assert!(o.grid().norm(&d) < 1e-4 * g.norm());
        }
        for k in 0..10 {
            let (x, y) = (&tfs[2 * k], &tfs[2 * k + 1]);
            let lhs = symplectic_form_field(&vs[2 * k], &vs[2 * k + 1]).unwrap();
            let rhs = symplectic_form(x, y).unwrap();
            assert!((lhs - rhs).abs() < 1e-5 * x.norm_plus() * y.norm_plus(), "{lhs} {rhs}");
            assert_eq!(symplectic_form(x, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn flow_laws() {
        let o = ops(0.1);
        let basis = default_basis(o.grid(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tf = random_test_function(o.grid(), &basis, &mut rng);
        let w0 = w_t(&tf, 0.0, &o).unwrap();
        assert!(w0.distance(&tf) < 1e-5 * tf.norm_plus());
        let (t, s) = (0.5, 1.3);
        let ws = w_t(&tf, s, &o).unwrap();
        let wts = w_t(&ws, t, &o).unwrap();
        let direct = w_t(&tf, t + s, &o).unwrap();
        assert!(wts.distance(&direct) < 1e-4 * tf.norm_plus(), "{}", wts.distance(&direct));
        let lhs = evolve_free(&v_map(&tf, &o).unwrap(), t);
        let rhs = v_map(&w_t(&tf, t, &o).unwrap(), &o).unwrap();
        let d: Vec<C64> = lhs.values().iter().zip(rhs.values()).map(|(a, b)| a - b).collect();
        assert!(o.grid().norm(&d) < 1e-4 * tf.norm_plus());
        // the flow preserves the form
        let other = random_test_function(o.grid(), &basis, &mut rng);
        let a = symplectic_form(&tf, &other).unwrap();
        let b = symplectic_form(&w_t(&tf, 1.0, &o).unwrap(), &w_t(&other, 1.0, &o).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-4 * tf.norm_plus() * other.norm_plus());
    }

    #[test]
    fn analytic_elements() {
        let o = ops(0.1);
        let osc = make_analytic(1.0, 0.5, Profile::oscillator(&o.spectral).unwrap(), &o).unwrap();
        // (a i r^{1/2} + b r^{-1/2}) conj Q has preimage (b + i a) + 0
        assert!((osc.cached.c - C64::new(0.5, 1.0)).norm() < 1e-5, "{}", osc.cached.c);
        assert!(osc.cached.f.norm() < 1e-5);
        assert!(osc.membership_residual < 1e-5);
        let g = make_analytic(0.3, -1.0, Profile::GaussianPoly { sigma: 1.0, coeffs: vec![1.0, 0.5, -0.2] }, &o).unwrap();
        assert!(g.membership_residual < 1e-4);
        assert!(g.strip_samples.iter().all(|s| s.1.is_finite()));
        // a real odd coefficient breaks the reflection rule
        let wrong = Profile::Custom {
            eval: Arc::new(|z: C64| (1.0 + z) * (-(z * z)).exp()),
            scale: 1.0,
        };
        assert!(matches!(make_analytic(1.0, 0.0, wrong, &o), Err(Error::ReflectionViolation { .. })));
    }

    #[test]
    fn element_specs_parse() {
        let p: ElementSpec = serde_json::from_str(r#"{"c":[1.0,0.5],"f":{"kind":"gaussian","sigma":1.0}}"#).unwrap();
        assert!(matches!(p, ElementSpec::Plain(_)));
        let a: ElementSpec = serde_json::from_str(r#"{"a":1.0,"b":0.5,"profile":{"kind":"oscillator"}}"#).unwrap();
        assert!(matches!(a, ElementSpec::Analytic(_)));
    }
}
