use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Subcommand, ValueEnum};
use num_complex::Complex64 as C64;
use oscbath_core::dyson::{verify_sine_product_bound, SineBoundReport, AtomicMeasure, BoundDims, DysonEvaluator};
use oscbath_core::equilibrium::{omega_interacting, ThermalState, ThreePoint};
use oscbath_core::formfactor::FormFactor;
use oscbath_core::radial::GridSpec;
use oscbath_core::scattering::{t_star_q_residual, verify_ccr_identities, IdentityResidual, ScatteringOps};
use oscbath_core::spectral::{find_resonance, model_grid, SpectralData};
use oscbath_core::symplectic::{default_basis, random_test_function, symplectic_form, v_map_batch, ElementSpec, TestFunction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{read_element, read_measure, RunConfig, Sweep};
use crate::exit::CliError;
use crate::output::{csv_bytes, json_bytes, Run};

pub const IDENTITY_TOL: f64 = 1e-4;
pub const T_STAR_Q_TOL: f64 = 1e-5;
pub const SUM_RULE_TOL: f64 = 1e-5;
pub const SYMPLECTIC_TOL: f64 = 1e-5;
pub const KMS_TOL: f64 = 1e-12;
/// Residuals below this are at roundoff, where refinement cannot reduce them further.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Subcommand, Serialize)]
pub enum Command {
    /// Resonance kappa_hat and the sum rule over a coupling sweep (CSV).
    Resonance {
        /// start:stop:step; defaults to the config's lambda.
        #[arg(long)]
        lambda_sweep: Option<Sweep>,
    },
    /// Residuals of the scattering-operator identities (JSON).
    Identities {
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Three-point correlation omega(W(f1) tau_t(W(f2)) W(f3)) over time (CSV).
    Correlate {
        #[arg(long)]
        f1: Option<PathBuf>,
        #[arg(long)]
        f2: Option<PathBuf>,
        #[arg(long)]
        f3: Option<PathBuf>,
        #[arg(long, default_value = "0:20:0.25")]
        t: Sweep,
    },
    /// Equilibrium value omega(W(f)) of one Weyl operator (JSON).
    Equilibrium {
        #[arg(long)]
        weyl: Option<PathBuf>,
    },
    /// Truncated Dyson series for the anharmonic dynamics (CSV).
    Dyson {
        #[arg(long)]
        measure: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        f1: Option<PathBuf>,
        #[arg(long)]
        f2: Option<PathBuf>,
        #[arg(long)]
        f3: Option<PathBuf>,
        #[arg(long, default_value = "0:10:0.5")]
        t: Sweep,
    },
    /// Run a verification suite; exits with 2 when it fails.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        /// Random trials; the suite's default when absent.
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Identities,
    #[value(alias = "appendix-b")]
    SineBound,
    Symplectic,
    Kms,
    All,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Resonance { .. } => "resonance",
            Command::Identities { .. } => "identities",
            Command::Correlate { .. } => "correlate",
            Command::Equilibrium { .. } => "equilibrium",
            Command::Dyson { .. } => "dyson",
            Command::Verify { .. } => "verify",
        }
    }

    /// Input files named on the command line, falling back to the config.
    pub fn inputs(&self, cfg: &RunConfig) -> Vec<PathBuf> {
        let pick = |flag: &Option<PathBuf>, fallback: &Option<PathBuf>| flag.clone().or_else(|| fallback.clone());
        let i = &cfg.inputs;
        match self {
            Command::Correlate { f1, f2, f3, .. } | Command::Dyson { f1, f2, f3, .. } => {
                let mut v: Vec<PathBuf> = [pick(f1, &i.f1), pick(f2, &i.f2), pick(f3, &i.f3)].into_iter().flatten().collect();
                if let Command::Dyson { measure, .. } = self {
                    v.extend(pick(measure, &i.measure));
                }
                v
            }
            Command::Equilibrium { weyl } => pick(weyl, &i.weyl).into_iter().collect(),
            _ => vec![],
        }
    }
}

pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    pub refine: u32,
    pub run: Run,
}

struct Model {
    ff: FormFactor,
    ops: ScatteringOps,
    state: ThermalState,
}

fn build_model(cfg: &RunConfig, grid: GridSpec) -> Result<Model, CliError> {
    let ff = cfg.form_factor()?;
    let params = cfg.params(&ff)?;
    let g = model_grid(&ff, &params, grid)?;
    let sd = SpectralData::build(&ff, params, g)?;
    Ok(Model {
        ops: ScatteringOps::build(Arc::new(sd))?,
        state: ThermalState::new(cfg.beta)?,
        ff,
    })
}

fn element(path: Option<&Path>, ops: &ScatteringOps, fallback: impl FnOnce() -> TestFunction) -> Result<TestFunction, CliError> {
    match path {
        Some(p) => Ok(read_element(p)?.resolve(ops)?.test_function().clone()),
        None => Ok(fallback()),
    }
}

fn zero(ops: &ScatteringOps) -> TestFunction {
    TestFunction::oscillator(C64::new(0.0, 0.0), ops.grid().clone())
}

pub fn run(cmd: &Command, mut ctx: Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let i = &cfg.inputs;
    if ctx.refine > 0 && !matches!(cmd, Command::Identities { .. } | Command::Verify { .. }) {
        log::warn!("--refine applies to identities and verify only; ignored");
    }
    let body = match cmd {
        Command::Resonance { lambda_sweep } => resonance(cfg, lambda_sweep.as_ref(), &mut ctx.run)?,
        Command::Identities { trials } => {
            let report = identities(cfg, *trials, ctx.seed, ctx.refine, &mut ctx.run)?;
            let body = json_bytes(&report)?;
            return finish_verification(ctx.run, body, report.passed, "identity study");
        }
        Command::Correlate { f1, f2, f3, t } => {
            let m = build_model(cfg, cfg.grid)?;
            let o = &m.ops;
            let f2 = f2.as_ref().or(i.f2.as_ref()).ok_or_else(|| CliError::config("correlate needs --f2"))?;
            let e1 = element(f1.as_deref().or(i.f1.as_deref()), o, || zero(o))?;
            let e2 = element(Some(f2), o, || zero(o))?;
            let e3 = element(f3.as_deref().or(i.f3.as_deref()), o, || zero(o))?;
            let times = t.points();
            let tp = ThreePoint::new(&e1, &e2, &e3, &m.state, o)?.with_horizon(t.stop);
            let series = tp.series(&times);
            #[derive(Serialize)]
            struct Row {
                t: f64,
                re: f64,
                im: f64,
                abs_dev: f64,
            }
            let rows: Vec<Row> = times
                .iter()
                .zip(&series.values)
                .map(|(&t, v)| Row {
                    t,
                    re: v.re,
                    im: v.im,
                    abs_dev: (v - series.baseline).norm(),
                })
                .collect();
            ctx.run.tolerance("baseline_re", series.baseline.re);
            ctx.run.tolerance("baseline_im", series.baseline.im);
            csv_bytes(&rows)?
        }
        Command::Equilibrium { weyl } => {
            let m = build_model(cfg, cfg.grid)?;
            let path = weyl.as_ref().or(i.weyl.as_ref()).ok_or_else(|| CliError::config("equilibrium needs --weyl"))?;
            let spec: ElementSpec = read_element(path)?;
            let tf = spec.resolve(&m.ops)?.test_function().clone();
            let omega = omega_interacting(&tf, &m.state, &m.ops)?;
            #[derive(Serialize)]
            struct Value<'a> {
                omega: f64,
                config_hash: &'a str,
            }
            json_bytes(&Value {
                omega,
                config_hash: &ctx.run.meta.config_hash,
            })?
        }
        Command::Dyson { measure, order, f1, f2, f3, t } => {
            let mut dcfg = cfg.dyson.clone();
            if let Some(n) = order {
                dcfg.order = *n;
            }
            dcfg.validate().map_err(|e| CliError::config(format!("dyson: {e}")))?;
            let path = measure.as_ref().or(i.measure.as_ref()).ok_or_else(|| CliError::config("dyson needs --measure"))?;
            let nu: AtomicMeasure = read_measure(path)?;
            let m = build_model(cfg, cfg.grid)?;
            let o = &m.ops;
            let e1 = element(f1.as_deref().or(i.f1.as_deref()), o, || zero(o))?;
            let e2 = element(f2.as_deref().or(i.f2.as_deref()), o, || TestFunction::oscillator(C64::new(1.0, 0.0), o.grid().clone()))?;
            let e3 = element(f3.as_deref().or(i.f3.as_deref()), o, || zero(o))?;
            let ev = DysonEvaluator::new(&e1, &e2, &e3, &m.state, o, t.stop)?;
            dyson_csv(&ev, &nu, &dcfg, &t.points(), &mut ctx.run)?
        }
        Command::Verify { suite, trials } => {
            let report = verify(cfg, *suite, *trials, ctx.seed, ctx.refine, &mut ctx.run)?;
            let failed: Vec<String> = report.iter().filter(|r| !r.passed).map(|r| format!("{:?}", r.suite)).collect();
            let body = json_bytes(&report)?;
            return finish_verification(ctx.run, body, failed.is_empty(), &format!("suites {failed:?}"));
        }
    };
    ctx.run.finish(&body)
}

fn finish_verification(run: Run, body: Vec<u8>, passed: bool, what: &str) -> Result<(), CliError> {
    run.finish(&body)?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!("{what} failed; see the report for residuals")))
    }
}

fn resonance(cfg: &RunConfig, sweep: Option<&Sweep>, run: &mut Run) -> Result<Vec<u8>, CliError> {
    let ff = cfg.form_factor()?;
    let base = cfg.params(&ff)?;
    let lambdas = sweep.map(|s| s.points()).unwrap_or_else(|| vec![cfg.lambda]);
    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        re_kappa: f64,
        im_kappa: f64,
        residual: f64,
        q_norm: f64,
    }
    let rows: Vec<Row> = lambdas
        .par_iter()
        .map(|&l| -> Result<Row, CliError> {
            let p = base.with_lambda(l);
            let res = find_resonance(&ff, &p)?;
            let grid = model_grid(&ff, &p, cfg.grid)?;
            let sd = SpectralData::build_with(&ff, p, grid, res.kappa_hat)?;
            Ok(Row {
                lambda: l,
                re_kappa: res.kappa_hat.re,
                im_kappa: res.kappa_hat.im,
                residual: res.residual,
                q_norm: sd.q_norm,
            })
        })
        .collect::<Result<_, _>>()?;
    run.tolerance("max_resonance_residual", rows.iter().map(|r| r.residual).fold(0.0, f64::max));
    run.tolerance("max_sum_rule_error", rows.iter().map(|r| (r.q_norm - 1.0).abs()).fold(0.0, f64::max));
    csv_bytes(&rows)
}

#[derive(Debug, Serialize)]
pub struct IdentityLevel {
    pub n: usize,
    pub residuals: Vec<IdentityResidual>,
    pub max_residual: f64,
    pub t_star_q: f64,
    pub sum_rule_error: f64,
}

#[derive(Debug, Serialize)]
pub struct IdentityStudy {
    pub trials: usize,
    pub seed: u64,
    pub levels: Vec<IdentityLevel>,
    /// Each refinement reduced the residual, or both sat at roundoff.
    pub refinement_convergent: bool,
    pub passed: bool,
}

fn identities(cfg: &RunConfig, trials: usize, seed: u64, refine: u32, run: &mut Run) -> Result<IdentityStudy, CliError> {
    let mut levels = vec![];
    for k in 0..=refine {
        let grid = GridSpec {
            n: cfg.grid.n << k,
            ..cfg.grid
        };
        let m = build_model(cfg, grid)?;
        let report = verify_ccr_identities(&m.ops, trials, seed);
        levels.push(IdentityLevel {
            n: grid.n,
            max_residual: report.max(),
            t_star_q: t_star_q_residual(&m.ops),
            sum_rule_error: (m.ops.spectral.q_norm - 1.0).abs(),
            residuals: report.residuals,
        });
        log::info!("identities at N={}: max residual {:.2e}", grid.n, levels.last().unwrap().max_residual);
    }
    let refinement_convergent = levels
        .windows(2)
        .all(|w| (w[0].max_residual <= ROUNDOFF_FLOOR && w[1].max_residual <= ROUNDOFF_FLOOR) || w[1].max_residual <= w[0].max_residual);
    let passed = refinement_convergent
        && levels
            .iter()
            .all(|l| l.max_residual < IDENTITY_TOL && l.t_star_q < T_STAR_Q_TOL && l.sum_rule_error < SUM_RULE_TOL);
    let last = levels.last().unwrap();
    run.tolerance("max_identity_residual", last.max_residual);
    run.tolerance("t_star_q", last.t_star_q);
    run.tolerance("sum_rule_error", last.sum_rule_error);
    Ok(IdentityStudy {
        trials,
        seed,
        levels,
        refinement_convergent,
        passed,
    })
}

fn dyson_csv(ev: &DysonEvaluator, nu: &AtomicMeasure, dcfg: &oscbath_core::dyson::DysonConfig, times: &[f64], run: &mut Run) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(vec![]);
    let mut header = vec!["t".to_string(), "re".into(), "im".into()];
    for n in 0..=dcfg.order {
        header.push(format!("term{n}_re"));
        header.push(format!("term{n}_im"));
    }
    header.push("truncation_dominates".into());
    w.write_record(&header)?;
    let mut flagged = 0usize;
    let mut max_std: f64 = 0.0;
    for &t in times {
        let v = ev.evaluate(t, nu, dcfg)?;
        let mut rec = vec![t.to_string(), v.value.re.to_string(), v.value.im.to_string()];
        for n in 0..=dcfg.order {
            let x = v.terms.get(n).copied().unwrap_or_default();
            rec.push(x.re.to_string());
            rec.push(x.im.to_string());
        }
        rec.push(v.truncation_dominates.to_string());
        w.write_record(&rec)?;
        if v.truncation_dominates {
            flagged += 1;
        }
        max_std = v.std_errors.iter().cloned().fold(max_std, f64::max);
    }
    if flagged > 0 {
        log::warn!("last retained order dominates at {flagged} of {} times", times.len());
    }
    run.tolerance("truncation_flagged_points", flagged as f64);
    run.tolerance("max_monte_carlo_std_error", max_std);
    w.into_inner().map_err(|e| CliError::config(e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub tolerance: f64,
    pub achieved: f64,
    pub details: serde_json::Value,
}

fn verify(cfg: &RunConfig, suite: Suite, trials: Option<usize>, seed: u64, refine: u32, run: &mut Run) -> Result<Vec<SuiteReport>, CliError> {
    let suites: Vec<Suite> = match suite {
        Suite::All => vec![Suite::Identities, Suite::SineBound, Suite::Symplectic, Suite::Kms],
        s => vec![s],
    };
    let needs_model = suites.iter().any(|s| matches!(s, Suite::Symplectic | Suite::Kms));
    let model = if needs_model { Some(build_model(cfg, cfg.grid)?) } else { None };
    let mut out = vec![];
    for s in suites {
        let report = match s {
            Suite::Identities => {
                let study = identities(cfg, trials.unwrap_or(100), seed, refine, run)?;
                SuiteReport {
                    suite: s,
                    passed: study.passed,
                    tolerance: IDENTITY_TOL,
                    achieved: study.levels.iter().map(|l| l.max_residual).fold(0.0, f64::max),
                    details: serde_json::to_value(&study)?,
                }
            }
            Suite::SineBound => {
                let r: SineBoundReport = verify_sine_product_bound(trials.unwrap_or(10_000), BoundDims::default(), seed);
                run.tolerance("sine_bound_violations", r.violations.len() as f64);
                SuiteReport {
                    suite: s,
                    passed: r.passed(),
                    tolerance: 1.0,
                    achieved: r.max_ratio,
                    details: serde_json::to_value(&r)?,
                }
            }
            Suite::Symplectic => {
                let o = &model.as_ref().unwrap().ops;
                let worst = symplectic_defect(o, trials.unwrap_or(100), seed)?;
                run.tolerance("symplectic_defect", worst);
                SuiteReport {
                    suite: s,
                    passed: worst < SYMPLECTIC_TOL,
                    tolerance: SYMPLECTIC_TOL,
                    achieved: worst,
                    details: serde_json::json!({ "pairs": trials.unwrap_or(100) }),
                }
            }
            Suite::Kms => {
                let m = model.as_ref().unwrap();
                let drift = kms_drift(m, trials.unwrap_or(5), seed)?;
                run.tolerance("kms_drift", drift);
                SuiteReport {
                    suite: s,
                    passed: drift < KMS_TOL,
                    tolerance: KMS_TOL,
                    achieved: drift,
                    details: serde_json::json!({ "functions": trials.unwrap_or(5), "times": KMS_TIMES }),
                }
            }
            Suite::All => unreachable!(),
        };
        log::info!("suite {:?}: {}", s, if report.passed { "passed" } else { "failed" });
        out.push(report);
    }
    Ok(out)
}

/// max |Im<v x|v y> - sigma(x, y)| / (|x|_+ |y|_+) over random pairs.
fn symplectic_defect(o: &ScatteringOps, pairs: usize, seed: u64) -> Result<f64, CliError> {
    let basis = default_basis(o.grid(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = random_test_function(o.grid(), &basis, &mut rng);
        let y = random_test_function(o.grid(), &basis, &mut rng);
        let imgs = v_map_batch(&[x.clone(), y.clone()], o)?;
        let lhs = imgs[0].inner(&imgs[1])?.im;
        worst = worst.max((lhs - symplectic_form(&x, &y)?).abs() / (x.norm_plus() * y.norm_plus()));
    }
    Ok(worst)
}

const KMS_TIMES: [f64; 6] = [0.7, 3.0, 15.0, 60.0, 200.0, 500.0];

/// max |omega(tau_t W f) - omega(W f)| over random f and times up to 500.
fn kms_drift(m: &Model, functions: usize, seed: u64) -> Result<f64, CliError> {
    let o = &m.ops;
    let basis = default_basis(o.grid(), m.ff.scale());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = zero(o);
    let mut worst: f64 = 0.0;
    for _ in 0..functions {
        let f = random_test_function(o.grid(), &basis, &mut rng).scale(0.5);
        let tp = ThreePoint::new(&z, &f, &z, &m.state, o)?.with_horizon(KMS_TIMES[KMS_TIMES.len() - 1]);
        let w0 = tp.at(0.0);
        for t in KMS_TIMES {
            worst = worst.max((tp.at(t) - w0).norm());
        }
    }
    Ok(worst)
}
