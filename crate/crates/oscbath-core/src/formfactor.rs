//! Radial coupling form factors and the model parameters derived from them.

use crate::quad::{integrate_breaks, QuadOpts};
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// A radial profile with an analytic continuation to a horizontal strip.
pub trait AnalyticRadial: Send + Sync {
    fn eval(&self, z: C64) -> C64;
    /// Characteristic length, used to size grids and integration ranges.
    fn scale(&self) -> f64;
}

#[derive(Clone)]
pub enum Family {
    Gaussian { sigma: f64, amplitude: f64 },
    Custom(Arc<dyn AnalyticRadial>),
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Gaussian { sigma, amplitude } => write!(f, "Gaussian(sigma={sigma}, amplitude={amplitude})"),
            Family::Custom(c) => write!(f, "Custom(scale={})", c.scale()),
        }
    }
}

/// Configuration block for a form factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormFactorSpec {
    Gaussian {
        sigma: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strip_half_width: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for FormFactorSpec {
    fn default() -> Self {
        FormFactorSpec::Gaussian {
            sigma: 1.0,
            amplitude: 1.0,
            strip_half_width: None,
        }
    }
}

/// The coupling function rho(r), even, positive on the real line and analytic on |Im z| <= strip.
#[derive(Debug, Clone)]
pub struct FormFactor {
    family: Family,
    strip_half_width: f64,
}

impl FormFactor {
    pub fn gaussian(sigma: f64, amplitude: f64) -> Result<Self> {
        if !(sigma > 0.0 && amplitude > 0.0 && sigma.is_finite() && amplitude.is_finite()) {
            return Err(Error::Invalid(format!("gaussian needs sigma > 0 and amplitude > 0, got {sigma}, {amplitude}")));
        }
        Ok(FormFactor {
            family: Family::Gaussian { sigma, amplitude },
            strip_half_width: f64::INFINITY,
        })
    }

    pub fn custom(profile: Arc<dyn AnalyticRadial>, strip_half_width: f64) -> Result<Self> {
        if !(strip_half_width > 0.0) {
            return Err(Error::Invalid("strip half-width must be positive".into()));
        }
        Ok(FormFactor {
            family: Family::Custom(profile),
            strip_half_width,
        })
    }

    pub fn from_spec(spec: &FormFactorSpec) -> Result<Self> {
        match *spec {
            FormFactorSpec::Gaussian {
                sigma,
                amplitude,
                strip_half_width,
            } => {
                let ff = Self::gaussian(sigma, amplitude)?;
                match strip_half_width {
                    Some(s) => ff.with_strip(s),
                    None => Ok(ff),
                }
            }
        }
    }

    pub fn with_strip(mut self, strip_half_width: f64) -> Result<Self> {
        if !(strip_half_width > 0.0) {
            return Err(Error::Invalid("strip half-width must be positive".into()));
        }
        self.strip_half_width = strip_half_width;
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn strip_half_width(&self) -> f64 {
        self.strip_half_width
    }

    pub fn scale(&self) -> f64 {
        match &self.family {
            Family::Gaussian { sigma, .. } => *sigma,
            Family::Custom(c) => c.scale(),
        }
    }

    /// Value on the real line.
    pub fn eval(&self, r: f64) -> f64 {
        match &self.family {
            Family::Gaussian { sigma, amplitude } => amplitude * (-r * r / (2.0 * sigma * sigma)).exp(),
            Family::Custom(c) => c.eval(C64::new(r, 0.0)).re,
        }
    }

    /// Continuation without the strip check; callers guarantee |Im z| is admissible.
    pub(crate) fn eval_c(&self, z: C64) -> C64 {
        match &self.family {
            Family::Gaussian { sigma, amplitude } => (-(z * z) / (2.0 * sigma * sigma)).exp() * *amplitude,
            Family::Custom(c) => {
                if z.im == 0.0 {
                    C64::new(c.eval(z).re, 0.0)
                } else {
                    c.eval(z)
                }
            }
        }
    }

    pub fn eval_complex(&self, z: C64) -> Result<C64> {
        if z.im.abs() > self.strip_half_width {
            return Err(Error::StripViolation {
                im: z.im.abs(),
                strip: self.strip_half_width,
            });
        }
        Ok(self.eval_c(z))
    }

    /// Radius beyond which rho(r)^2 (1 + r^3) drops below `tol` relative to rho(0)^2.
    pub fn support_radius(&self, tol: f64) -> f64 {
        match &self.family {
            Family::Gaussian { sigma, .. } => sigma * ((1.0 / tol).ln() + 12.0).sqrt(),
            Family::Custom(c) => {
                let s = c.scale();
                let r0 = self.eval(0.0).powi(2).max(1e-300);
                let mut r = s;
                let mut quiet = 0;
                while r < 1e4 * s {
                    let v = self.eval(r).powi(2) * (1.0 + r.powi(3));
                    if v < tol * r0 {
                        quiet += 1;
                        if quiet >= 3 {
                            return r;
                        }
                    } else {
                        quiet = 0;
                    }
                    r += 0.5 * s;
                }
                r
            }
        }
    }

    /// Norms 4 pi int_0^inf r^(2+2 alpha) rho(r)^2 dr for alpha in {-1, -1/2, 0, 1/2}.
    pub fn coupling_norms(&self) -> Result<CouplingNorms> {
        let l = self.support_radius(1e-40);
        let mut weighted = Vec::new();
        for alpha in [-1.0, -0.5, 0.0, 0.5] {
            let p = 2.0 + 2.0 * alpha;
            let q = integrate_breaks(
                |r| C64::new(4.0 * PI * r.powf(p) * self.eval(r).powi(2), 0.0),
                0.0,
                l,
                &[self.scale()],
                QuadOpts::rel(1e-13),
            );
            let error = q.error;
            let value = q.ok()?.re;
            weighted.push(WeightedNorm { alpha, value, error });
        }
        Ok(CouplingNorms {
            norm_sq: weighted[0].value,
            weighted,
        })
    }

    /// Numerical check that the form factor is positive and even, and analytic and integrable on its strip.
    pub fn check_regularity(&self, beta: f64) -> RegularityReport {
        let mut clauses = Vec::new();
        let l = self.support_radius(1e-30);
        let samples: Vec<f64> = (1..=1000).map(|k| l * k as f64 / 1000.0).collect();

        let min_val = samples.iter().map(|&r| self.eval(r)).fold(f64::INFINITY, f64::min);
        clauses.push(Clause {
            name: "positivity".into(),
            passed: min_val > 0.0,
            values: vec![],
            detail: format!("min rho on (0, {l:.3}] = {min_val:e}"),
        });

        let even_defect = samples
            .iter()
            .map(|&r| (self.eval_c(C64::new(r, 0.0)) - self.eval_c(C64::new(-r, 0.0))).norm())
            .fold(0.0, f64::max);
        clauses.push(Clause {
            name: "evenness".into(),
            passed: even_defect <= 1e-14 * self.eval(0.0).abs().max(1.0),
            values: vec![],
            detail: format!("max |rho(r) - rho(-r)| = {even_defect:e}"),
        });

        let need = 2.0 * PI / beta;
        clauses.push(Clause {
            name: "strip coverage".into(),
            passed: self.strip_half_width >= need,
            values: vec![],
            detail: format!("strip half-width {} vs 2 pi / beta = {need}", self.strip_half_width),
        });

        let mut values = Vec::new();
        let mut finite = true;
        for s in [0.0, 0.5 * need, need, -0.5 * need, -need] {
            if s.abs() > self.strip_half_width {
                finite = false;
                values.push((s, f64::NAN));
                continue;
            }
            let q = integrate_breaks(
                |r| {
                    let v = self.eval_c(C64::new(r, s));
                    C64::new(v.norm_sqr() * (1.0 + r.abs().powi(3)), 0.0)
                },
                -l,
                l,
                &[0.0],
                QuadOpts::rel(1e-10),
            );
            let ok = q.converged && q.value.re.is_finite();
            finite &= ok;
            values.push((s, q.value.re));
        }
        clauses.push(Clause {
            name: "strip integral".into(),
            passed: finite,
            values,
            detail: "int |rho(r+is)|^2 (1+|r|^3) dr on the centre, mid and boundary lines".into(),
        });
        RegularityReport { beta, clauses }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightedNorm {
    pub alpha: f64,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingNorms {
    /// || |k|^-1 rho ||^2
    pub norm_sq: f64,
    pub weighted: Vec<WeightedNorm>,
}

impl CouplingNorms {
    pub fn get(&self, alpha: f64) -> Option<f64> {
        self.weighted.iter().find(|w| w.alpha == alpha).map(|w| w.value)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Clause {
    pub name: String,
    pub passed: bool,
    pub values: Vec<(f64, f64)>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub beta: f64,
    pub clauses: Vec<Clause>,
}

impl RegularityReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

/// Inverse temperature, coupling and the squared norm || |k|^-1 rho ||^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub beta: f64,
    pub lambda: f64,
    pub norm_sq: f64,
}

impl ModelParams {
    pub fn new(ff: &FormFactor, beta: f64, lambda: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Invalid(format!("beta must be positive, got {beta}")));
        }
        if !lambda.is_finite() {
            return Err(Error::Invalid("lambda must be finite".into()));
        }
        Ok(ModelParams {
            beta,
            lambda,
            norm_sq: ff.coupling_norms()?.norm_sq,
        })
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        ModelParams { lambda, ..self }
    }

    /// Counterterm R = (lambda^2 / 2) || |k|^-1 rho ||^2.
    pub fn r_shift(&self) -> f64 {
        0.5 * self.lambda * self.lambda * self.norm_sq
    }

    /// Renormalized oscillator frequency alpha = sqrt(1 + lambda^2 ||.||^2).
    pub fn alpha(&self) -> f64 {
        (1.0 + self.lambda * self.lambda * self.norm_sq).sqrt()
    }
}
