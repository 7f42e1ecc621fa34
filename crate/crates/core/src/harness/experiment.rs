use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::config::{preset_defaults, NetworkKind, ScenarioConfig};
use crate::datamodel::{self, AgentSignalModel, TaskPrior};
use crate::error::{Error, Result};
use crate::network::{self, ConstraintSpec, ValidationReport};
use crate::privacy;
use crate::projection;
use crate::seed::{stream, StreamKind};
use crate::simulate::{self, Algorithm, MonteCarloPlan, NoisePlan, NoiseSource, Scenario};
use crate::theory::{
    self, GlobalModel, PowerRule, StabilityBounds, SteadyState, TheoryOptions, TheoryTrajectory,
};

/// Lower clamp of every reported dB value.
pub const DB_FLOOR: f64 = -300.0;

pub fn to_db(x: f64) -> f64 {
    if x > 0.0 {
        (10.0 * x.log10()).max(DB_FLOOR)
    } else if x.is_nan() {
        f64::NAN
    } else {
        DB_FLOOR
    }
}

/// Network, prior and signal statistics drawn from the scenario stream of the master seed.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub scenario: Scenario,
    pub report: ValidationReport,
    pub snr_db: Vec<f64>,
}

fn constraints_for(cfg: &ScenarioConfig, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<ConstraintSpec> {
    let cr = (cfg.coefficient_range[0], cfg.coefficient_range[1]);
    let or = (cfg.offset_range[0], cfg.offset_range[1]);
    match cfg.network {
        NetworkKind::Line => network::random_scalar_constraints(&network::line_sets(cfg.agents), cr, or, rng),
        NetworkKind::Dense => network::random_scalar_constraints(&network::dense_sets(cfg.agents), cr, or, rng),
        NetworkKind::Custom => cfg
            .constraints
            .iter()
            .enumerate()
            .map(|(q, c)| {
                let coefs = match &c.coefficients {
                    Some(v) => v.clone(),
                    None => c.participants.iter().map(|_| network::signed_uniform(cr, rng)).collect(),
                };
                let b = c.offset.unwrap_or_else(|| network::signed_uniform(or, rng));
                ConstraintSpec::scalar(q, c.participants.clone(), coefs, b)
            })
            .collect(),
    }
}

pub fn build_scenario(cfg: &ScenarioConfig) -> Result<BuiltScenario> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0, 0, StreamKind::Scenario);
    let dims = vec![cfg.dim; cfg.agents];
    let net = network::build_network(constraints_for(cfg, &mut rng), &dims)?;
    let report = network::validate_assumptions(&net);

    let r = datamodel::null_basis(&net).ncols();
    let latent = match cfg.prior_scale {
        Some(s) => DMatrix::identity(r, r) * s,
        None => TaskPrior::default_latent_cov(net.total_dim, r),
    };
    let prior = datamodel::make_task_prior(&net, &latent, &DVector::zeros(r))?;

    let eig = (cfg.regressor_eigen_range[0], cfg.regressor_eigen_range[1]);
    let r_u: Vec<DMatrix<f64>> = (0..cfg.agents)
        .map(|_| datamodel::random_covariance(cfg.dim, eig, &mut rng))
        .collect();
    let snr_db = match &cfg.snr_db {
        Some(v) => v.clone(),
        None => (0..cfg.agents)
            .map(|_| {
                let [lo, hi] = cfg.snr_db_range;
                if hi > lo {
                    rand::Rng::random_range(&mut rng, lo..=hi)
                } else {
                    lo
                }
            })
            .collect(),
    };
    let mut signal = AgentSignalModel::new(r_u, vec![1.0; cfg.agents], vec![cfg.step_size; cfg.agents])?;
    datamodel::calibrate_snr(&mut signal, &prior, &snr_db)?;
    Ok(BuiltScenario {
        scenario: Scenario { net, prior, signal },
        report,
        snr_db,
    })
}

/// One curve family of an experiment.
#[derive(Debug, Clone, Serialize)]
pub struct FamilySpec {
    pub label: String,
    pub algorithm: Algorithm,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_source: Option<NoiseSource>,
    #[serde(skip)]
    pub delta: Vec<f64>,
}

fn fmt_rho(rho: f64) -> String {
    format!("{rho}")
}

pub fn families(cfg: &ScenarioConfig, prior: &TaskPrior) -> Result<Vec<FamilySpec>> {
    let mut out = Vec::new();
    let tagged = cfg.noise_sources.len() > 1;
    for alg in &cfg.algorithms {
        match alg {
            Algorithm::AtpDelta => {
                for &rho in &cfg.rho {
                    let delta = privacy::thresholds(prior, cfg.agents, rho)?;
                    for &src in &cfg.noise_sources {
                        let mut label = format!("atp_delta_rho{}", fmt_rho(rho));
                        if tagged {
                            label.push('_');
                            label.push_str(source_label(src));
                        }
                        out.push(FamilySpec {
                            label,
                            algorithm: *alg,
                            rho: Some(rho),
                            noise_source: Some(src),
                            delta: delta.clone(),
                        });
                    }
                }
            }
            other => out.push(FamilySpec {
                label: other.label().to_string(),
                algorithm: *other,
                rho: None,
                noise_source: None,
                delta: Vec::new(),
            }),
        }
    }
    Ok(out)
}

pub fn source_label(s: NoiseSource) -> &'static str {
    match s {
        NoiseSource::ClosedForm => "closed_form",
        NoiseSource::SteadyState => "steady_state",
        NoiseSource::Adaptive => "adaptive",
    }
}

/// Linear-scale values of one iteration; `None` where a curve is unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub iter: usize,
    pub msd_emp: Option<f64>,
    pub msd_th: Option<f64>,
    pub xi_emp: Option<f64>,
    pub xi_th: Option<f64>,
    pub sigma_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainToLoss {
    pub gain_db: f64,
    pub loss_db: f64,
    /// `|gain| / |loss|`; infinite when the loss vanishes.
    pub ratio: f64,
    pub infinite: bool,
    /// Both gain and loss vanish.
    pub degenerate: bool,
}

/// Ratio of privacy gain to accuracy loss between two steady states given in dB.
pub fn gain_to_loss(xi_a_db: f64, msd_a_db: f64, xi_b_db: f64, msd_b_db: f64) -> GainToLoss {
    let gain = (xi_a_db - xi_b_db).abs();
    let loss = (msd_a_db - msd_b_db).abs();
    let degenerate = gain == 0.0 && loss == 0.0;
    let infinite = loss == 0.0 && !degenerate;
    let ratio = if degenerate {
        f64::NAN
    } else if infinite {
        f64::INFINITY
    } else {
        gain / loss
    };
    GainToLoss {
        gain_db: xi_a_db - xi_b_db,
        loss_db: msd_a_db - msd_b_db,
        ratio,
        infinite,
        degenerate,
    }
}

/// Cauchy check over the last 10% of a trajectory: every pair of values in the
/// window agrees to `tol` relative to the largest magnitude.
pub fn window_converged(values: &[f64], tol: f64) -> bool {
    let tail = values.len().div_ceil(10).max(2).min(values.len());
    let w = &values[values.len() - tail..];
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = w.iter().map(|v| v.abs()).fold(0.0, f64::max);
    w.iter().all(|v| v.is_finite()) && hi - lo <= tol * scale.max(f64::MIN_POSITIVE)
}

/// Mean of the finite values among the last 10% of iterations (at least one).
pub fn steady_state_mean(values: &[f64]) -> f64 {
    let tail = values.len().div_ceil(10).max(1).min(values.len());
    let xs: Vec<f64> = values[values.len() - tail..].iter().copied().filter(|v| v.is_finite()).collect();
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    /// `‖P‖₂` of the limiting projector.
    pub p_norm: f64,
    /// Largest `‖P(i)‖₂` along the analytic trajectory.
    pub p_norm_max: Option<f64>,
    pub agents: Vec<StabilityBounds>,
    pub mu_inside: bool,
    /// `ρ(P(I − ℳℛ_u))` of the limiting projector.
    pub mean_spectral_radius: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilySummary {
    #[serde(flatten)]
    pub spec: FamilySpec,
    pub msd_emp_db: Option<f64>,
    pub msd_emp_se_db: Option<f64>,
    pub msd_th_db: Option<f64>,
    pub xi_emp_db: Option<f64>,
    pub xi_th_db: Option<f64>,
    pub sigma_mean: f64,
    pub analytic_steady_state: Option<SteadyState>,
    pub analytic_steady_state_db: Option<f64>,
    pub analytic_error: Option<String>,
    pub stability: Option<StabilityReport>,
    /// Noise powers, hence weights and `Γ`, settled over the last tenth of iterations.
    pub powers_converged: bool,
    pub ridge_used: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainEntry {
    pub label: String,
    pub reference: String,
    pub theory: Option<GainToLoss>,
    pub empirical: Option<GainToLoss>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub runs: usize,
    pub iterations: usize,
    pub total_dim: usize,
    pub null_dim: usize,
    pub labeled_defaults: Vec<String>,
    pub notices: Vec<String>,
    pub snr_db: Vec<f64>,
    pub noise_variance: Vec<f64>,
    pub validation: ValidationReport,
    pub families: Vec<FamilySummary>,
    pub gain_to_loss: Vec<GainEntry>,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone)]
pub struct FamilyResult {
    pub spec: FamilySpec,
    pub rows: Vec<CurveRow>,
}

#[derive(Debug, Clone)]
pub struct OutputBundle {
    pub families: Vec<FamilyResult>,
    pub summary: Summary,
}

/// Stage-aware limit power `tr(W²)/(tr W − δ)` for every iteration.
pub fn steady_state_schedule(cfg: &ScenarioConfig, prior: &TaskPrior, delta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = cfg.agents;
    let stage = |scale: f64| -> Result<Vec<f64>> {
        (0..n)
            .map(|k| privacy::steady_state_power(&(prior.w_kk(k) * scale), delta[k]))
            .collect()
    };
    let first = stage(1.0)?;
    let second = match cfg.tracking {
        Some(tc) => Some((tc.at, stage(tc.scale)?)),
        None => None,
    };
    Ok((0..cfg.iterations)
        .map(|i| match &second {
            Some((at, s)) if i >= *at => s.clone(),
            _ => first.clone(),
        })
        .collect())
}

fn final_scale(cfg: &ScenarioConfig) -> f64 {
    cfg.tracking.map_or(1.0, |t| t.scale)
}

fn theory_for(
    cfg: &ScenarioConfig,
    built: &BuiltScenario,
    model: &GlobalModel,
    fam: &FamilySpec,
) -> Result<Option<TheoryTrajectory>> {
    let rule = match (fam.algorithm, fam.noise_source) {
        (Algorithm::AtpDelta, Some(NoiseSource::ClosedForm)) => PowerRule::ClosedForm { delta: fam.delta.clone() },
        (Algorithm::AtpDelta, Some(NoiseSource::SteadyState)) => PowerRule::SteadyState { delta: fam.delta.clone() },
        (Algorithm::AtpDelta, _) => return Ok(None),
        (Algorithm::Atp0, _) => PowerRule::Zero,
        (Algorithm::Nocoop, _) => PowerRule::NoCoop,
    };
    let mut opts = TheoryOptions::new(cfg.iterations);
    opts.tracking = cfg.tracking;
    opts.dim_cap = cfg.dim_cap;
    let s = &built.scenario;
    theory::privacy_recursions(&s.net, model, &s.prior, &rule, &opts).map(Some)
}

fn limit_powers(cfg: &ScenarioConfig, prior: &TaskPrior, fam: &FamilySpec) -> Result<Vec<f64>> {
    match fam.algorithm {
        Algorithm::AtpDelta => {
            let scale = final_scale(cfg);
            (0..cfg.agents)
                .map(|k| privacy::steady_state_power(&(prior.w_kk(k) * scale), fam.delta[k]))
                .collect()
        }
        _ => Ok(vec![0.0; cfg.agents]),
    }
}

fn stability_for(
    cfg: &ScenarioConfig,
    built: &BuiltScenario,
    model: &GlobalModel,
    fam: &FamilySpec,
    traj: Option<&TheoryTrajectory>,
) -> Result<(projection::ProjectionSet, Vec<f64>, StabilityReport)> {
    let s = &built.scenario;
    let sigma2 = limit_powers(cfg, &s.prior, fam)?;
    let set = match fam.algorithm {
        Algorithm::Nocoop => projection::identity_set(&s.net),
        _ => projection::build_projection_set(&s.net, &sigma2)?,
    };
    let p_norm = projection::operator_norm(&set);
    let agents: Vec<StabilityBounds> = s.signal.r_u.iter().map(|r| theory::stability_bounds(r, p_norm)).collect();
    let mu_inside = agents.iter().all(|b| b.contains(cfg.step_size));
    let report = StabilityReport {
        p_norm,
        p_norm_max: traj.map(|t| t.points.iter().map(|p| p.p_norm).fold(0.0, f64::max)),
        agents,
        mu_inside,
        mean_spectral_radius: theory::mean_spectral_radius(&set, model),
    };
    Ok((set, sigma2, report))
}

fn opt_finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

const POWER_TOL: f64 = 1e-2;

/// Build, analyse and simulate every configured curve family.
pub fn run_experiment(cfg: &ScenarioConfig, force: bool) -> Result<OutputBundle> {
    let built = build_scenario(cfg)?;
    if !built.report.required_pass() && !force {
        let names: Vec<String> = built
            .report
            .failures()
            .iter()
            .filter(|c| c.required)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        return Err(Error::Assumption(names.join("; ")));
    }
    let s = &built.scenario;
    let model = GlobalModel::new(&s.net, &s.signal)?;
    let fams = families(cfg, &s.prior)?;
    let mut notices = Vec::new();
    if !built.report.required_pass() {
        notices.push("required assumption checks failed; continuing because of --force".to_string());
    }
    if !built.report.self_block_deficiency_holds() {
        notices.push("no agent has a rank-deficient own column block (advisory check)".to_string());
    }
    let theory_on = cfg.theory && model.check_cap(cfg.dim_cap).is_ok();
    if cfg.theory && !theory_on {
        notices.push(format!(
            "stacked dimension {} exceeds the analytic cap {}; theory curves skipped",
            model.total, cfg.dim_cap
        ));
    }

    let mut results = Vec::new();
    let mut summaries = Vec::new();
    for fam in fams {
        let traj = if theory_on || fam.noise_source == Some(NoiseSource::ClosedForm) {
            if !theory_on && model.check_cap(cfg.dim_cap).is_err() {
                return Err(Error::DimensionCap { dim: model.total, cap: cfg.dim_cap });
            }
            theory_for(cfg, &built, &model, &fam)?
        } else {
            None
        };

        let (limit_set, limit_sigma, stability) = stability_for(cfg, &built, &model, &fam, traj.as_ref())?;
        let mut analytic = None;
        let mut analytic_error = None;
        if theory_on && cfg.steady_state && fam.noise_source != Some(NoiseSource::Adaptive) {
            let gamma = theory::gamma_matrix(&limit_set, &model, &limit_sigma);
            match theory::steady_state_msd(&model, &limit_set, &gamma, cfg.dim_cap) {
                Ok(ss) => analytic = Some(ss),
                Err(e) => analytic_error = Some(e.to_string()),
            }
        }

        let record = if cfg.simulate {
            let noise = match (fam.algorithm, fam.noise_source) {
                (Algorithm::AtpDelta, Some(NoiseSource::ClosedForm)) => {
                    NoisePlan::Schedule(traj.as_ref().expect("closed-form theory").schedule())
                }
                (Algorithm::AtpDelta, Some(NoiseSource::SteadyState)) => {
                    NoisePlan::Schedule(steady_state_schedule(cfg, &s.prior, &fam.delta)?)
                }
                (Algorithm::AtpDelta, _) => NoisePlan::Adaptive { delta: fam.delta.clone(), alpha: cfg.alpha },
                _ => NoisePlan::None,
            };
            let plan = MonteCarloPlan {
                runs: cfg.runs,
                iterations: cfg.iterations,
                seed: cfg.seed,
                algorithm: fam.algorithm,
                noise,
                tracking: cfg.tracking,
            };
            Some(simulate::run_monte_carlo(&plan, s)?)
        } else {
            None
        };
        let emp = record.as_ref().map(|r| simulate::empirical_privacy(r, cfg.agents));

        let shown = traj.as_ref().filter(|_| theory_on);
        let rows: Vec<CurveRow> = (0..cfg.iterations)
            .map(|i| CurveRow {
                iter: i,
                msd_emp: record.as_ref().map(|r| r.msd[i]),
                msd_th: shown.map(|t| t.points[i].msd),
                xi_emp: emp.as_ref().and_then(|e| opt_finite(e.xi[i])),
                xi_th: shown.and_then(|t| opt_finite(t.points[i].xi)),
                sigma_mean: match (&record, &traj) {
                    (Some(r), _) => r.sigma_mean[i],
                    (None, Some(t)) => t.points[i].sigma2.iter().sum::<f64>() / cfg.agents as f64,
                    _ => 0.0,
                },
            })
            .collect();

        let ss = |f: &dyn Fn(&CurveRow) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = rows.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect();
            opt_finite(to_db(steady_state_mean(&v)))
        };
        let msd_emp_se_db = record.as_ref().and_then(|r| {
            let per: Vec<f64> = r.batches.iter().map(|b| to_db(steady_state_mean(&b.msd))).collect();
            simulate::batch_standard_error(&per)
        });
        let powers_converged = match &traj {
            Some(t) => (0..cfg.agents).all(|k| {
                let v: Vec<f64> = t.points.iter().map(|p| p.sigma2[k]).collect();
                window_converged(&v, POWER_TOL)
            }),
            None => window_converged(&rows.iter().map(|r| r.sigma_mean).collect::<Vec<_>>(), POWER_TOL),
        };
        if !powers_converged {
            notices.push(format!(
                "{}: noise powers still moving over the last tenth of iterations; steady-state values use limit powers",
                fam.label
            ));
        }
        summaries.push(FamilySummary {
            spec: fam.clone(),
            msd_emp_db: ss(&|r| r.msd_emp),
            msd_emp_se_db,
            msd_th_db: ss(&|r| r.msd_th),
            xi_emp_db: ss(&|r| r.xi_emp),
            xi_th_db: ss(&|r| r.xi_th),
            sigma_mean: steady_state_mean(&rows.iter().map(|r| r.sigma_mean).collect::<Vec<_>>()),
            analytic_steady_state_db: analytic.as_ref().map(|a| to_db(a.msd_exact)),
            analytic_steady_state: analytic,
            analytic_error,
            stability: Some(stability),
            powers_converged,
            ridge_used: traj.as_ref().is_some_and(|t| t.ridge_used) || emp.as_ref().is_some_and(|e| e.ridge),
        });
        results.push(FamilyResult { spec: fam, rows });
    }

    let mut gains = Vec::new();
    if let Some(base) = summaries.iter().find(|f| f.spec.algorithm == Algorithm::Atp0) {
        for f in summaries.iter().filter(|f| f.spec.algorithm == Algorithm::AtpDelta) {
            let pair = |xa: Option<f64>, ma: Option<f64>, xb: Option<f64>, mb: Option<f64>| match (xa, ma, xb, mb) {
                (Some(a), Some(b), Some(c), Some(d)) => Some(gain_to_loss(a, b, c, d)),
                _ => None,
            };
            gains.push(GainEntry {
                label: f.spec.label.clone(),
                reference: base.spec.label.clone(),
                theory: pair(f.xi_th_db, f.msd_th_db, base.xi_th_db, base.msd_th_db),
                empirical: pair(f.xi_emp_db, f.msd_emp_db, base.xi_emp_db, base.msd_emp_db),
            });
        }
    }

    let summary = Summary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        runs: if cfg.simulate { cfg.runs } else { 0 },
        iterations: cfg.iterations,
        total_dim: s.net.total_dim,
        null_dim: s.prior.null_dim(),
        labeled_defaults: preset_defaults(&cfg.name).into_iter().map(String::from).collect(),
        notices,
        snr_db: built.snr_db.clone(),
        noise_variance: s.signal.sigma_v2.clone(),
        validation: built.report.clone(),
        families: summaries,
        gain_to_loss: gains,
        config: cfg.clone(),
    };
    Ok(OutputBundle { families: results, summary })
}
