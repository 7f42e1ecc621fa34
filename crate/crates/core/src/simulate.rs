//! Monte-Carlo simulation of the adapt-then-project strategy and its baselines.
//!
//! Runs are grouped into a fixed number of batches that depend only on the run
//! count. Batches are processed in parallel waves and reduced strictly in batch
//! order, so results are bitwise reproducible for any worker count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{next_sample, AgentSignalModel, StreamSample, TaskPrior};
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::privacy::{sample_noise, AdaptiveNoiseState};
use crate::projection::{self, ProjectionSet};
use crate::seed::{stream, StreamKind};
use crate::theory::TrackingChange;

/// Upper bound on the number of batches used for reduction and standard errors.
pub const MAX_BATCHES: usize = 20;
/// Relative ridge for singular empirical covariances.
pub const EMPIRICAL_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    AtpDelta,
    Atp0,
    Nocoop,
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::AtpDelta => "atp_delta",
            Algorithm::Atp0 => "atp0",
            Algorithm::Nocoop => "nocoop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    ClosedForm,
    SteadyState,
    Adaptive,
}

/// Privacy-noise powers used by a simulation.
#[derive(Debug, Clone)]
pub enum NoisePlan {
    None,
    /// Deterministic `sigma2[i][k]`.
    Schedule(Vec<Vec<f64>>),
    /// Distributed estimator run independently inside every realization.
    Adaptive { delta: Vec<f64>, alpha: f64 },
}

/// Everything a realization needs: topology, prior and signal statistics.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub net: NetworkSpec,
    pub prior: TaskPrior,
    pub signal: AgentSignalModel,
}

#[derive(Debug, Clone)]
pub struct MonteCarloPlan {
    pub runs: usize,
    pub iterations: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub noise: NoisePlan,
    pub tracking: Option<TrackingChange>,
}

impl MonteCarloPlan {
    fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.runs == 0 || self.iterations == 0 {
            return Err(Error::Config("runs and iterations must be at least 1".into()));
        }
        let n = scenario.net.n_agents();
        match &self.noise {
            NoisePlan::Schedule(s) => {
                if s.len() < self.iterations || s.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension("noise schedule does not cover every iteration and agent".into()));
                }
                if s.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Config("noise powers must be finite and non-negative".into()));
                }
            }
            NoisePlan::Adaptive { delta, alpha } => {
                if delta.len() != n {
                    return Err(Error::Dimension("one threshold per agent required".into()));
                }
                if !(0.0..1.0).contains(alpha) {
                    return Err(Error::Config("forgetting factor must lie in [0, 1)".into()));
                }
            }
            NoisePlan::None => {}
        }
        if let Some(tc) = self.tracking {
            if tc.at >= self.iterations || !(tc.scale > 0.0) {
                return Err(Error::Config("tracking change must lie inside the horizon with positive scale".into()));
            }
        }
        Ok(())
    }
}

/// `ψ_k(i) = w_k(i−1) + μ_k u_k (d_k − u_kᵀ w_k(i−1))`.
pub fn adapt_step(mu: f64, sample: &StreamSample, w_prev: &DVector<f64>) -> DVector<f64> {
    let err = sample.d - sample.u.dot(w_prev);
    w_prev + &sample.u * (mu * err)
}

/// Non-cooperative LMS update, identical to the adaptation step.
pub fn nocoop_step(mu: f64, sample: &StreamSample, w_prev: &DVector<f64>) -> DVector<f64> {
    adapt_step(mu, sample, w_prev)
}

/// Broadcast shares `ψ'_ℓ = ψ_ℓ + n_ℓ`; one draw per sender, seen by every neighbor.
pub fn exchange_step<R: Rng>(psi: &[DVector<f64>], sigma2: &[f64], rngs: &mut [R]) -> Vec<DVector<f64>> {
    psi.iter()
        .zip(sigma2)
        .zip(rngs.iter_mut())
        .map(|((p, &s), rng)| p + sample_noise(s, p.len(), rng))
        .collect()
}

/// Projection of agent `k`: its own intermediate estimate enters un-noised.
pub fn project_step(
    k: usize,
    net: &NetworkSpec,
    set: &ProjectionSet,
    psi: &[DVector<f64>],
    shares: &[DVector<f64>],
) -> DVector<f64> {
    let mut stacked = DVector::zeros(net.local_dim(k));
    let mut pos = 0;
    for &l in &net.neighborhoods[k] {
        let src = if l == k { &psi[k] } else { &shares[l] };
        stacked.rows_mut(pos, src.len()).copy_from(src);
        pos += src.len();
    }
    projection::project(k, set, &stacked)
}

/// Layout of the sample vector `z = (w_k°, Φ_ℓ)` of one directed edge.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeLayout {
    pub k: usize,
    pub l: usize,
    /// Sizes of the `w_k°` part and of the `Φ_ℓ` parts.
    pub parts: Vec<usize>,
    pub dim: usize,
}

/// Running first and second raw moments of a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    pub count: f64,
    pub sum: Vec<f64>,
    /// Packed upper triangle, row-major.
    pub outer: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator {
            count: 0.0,
            sum: vec![0.0; dim],
            outer: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn push(&mut self, z: &[f64]) {
        self.count += 1.0;
        let mut idx = 0;
        for (i, &zi) in z.iter().enumerate() {
            self.sum[i] += zi;
            for &zj in &z[i..] {
                self.outer[idx] += zi * zj;
                idx += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.outer.iter_mut().zip(&other.outer) {
            *a += b;
        }
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.sum.len();
        let n = self.count;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let mut c = DMatrix::zeros(d, d);
        let mut idx = 0;
        for i in 0..d {
            for j in i..d {
                let v = (self.outer[idx] - n * mean[i] * mean[j]) / (n - 1.0);
                c[(i, j)] = v;
                c[(j, i)] = v;
                idx += 1;
            }
        }
        c
    }
}

/// Sums gathered over one batch of runs.
#[derive(Debug, Clone)]
struct BatchStats {
    runs: usize,
    msd: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    edges: Vec<Vec<MomentAccumulator>>,
}

impl BatchStats {
    fn new(t: usize, n: usize, layouts: &[EdgeLayout]) -> Self {
        BatchStats {
            runs: 0,
            msd: vec![0.0; t],
            sigma: vec![vec![0.0; n]; t],
            edges: (0..t)
                .map(|_| layouts.iter().map(|e| MomentAccumulator::new(e.dim)).collect())
                .collect(),
        }
    }

    fn merge(&mut self, o: &BatchStats) {
        self.runs += o.runs;
        for (a, b) in self.msd.iter_mut().zip(&o.msd) {
            *a += b;
        }
        for (ra, rb) in self.sigma.iter_mut().zip(&o.sigma) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        for (ra, rb) in self.edges.iter_mut().zip(&o.edges) {
            for (a, b) in ra.iter_mut().zip(rb) {
                a.merge(b);
            }
        }
    }
}

/// Per-batch summaries used for Monte-Carlo standard errors.
#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub runs: usize,
    pub msd: Vec<f64>,
    pub xi: Vec<f64>,
    /// `[iteration][agent]` single-share privacy error (noisy-share algorithm only).
    pub single_share: Vec<Vec<f64>>,
}

/// Aggregated output of a Monte-Carlo experiment for one algorithm.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub iterations: usize,
    pub msd: Vec<f64>,
    /// Mean noise power over agents and runs.
    pub sigma_mean: Vec<f64>,
    /// `[iteration][agent]` mean noise power over runs.
    pub sigma_agent: Vec<Vec<f64>>,
    pub edges: Vec<EdgeLayout>,
    /// `[iteration][edge]`.
    pub stats: Vec<Vec<MomentAccumulator>>,
    pub batches: Vec<BatchSummary>,
}

fn edge_layouts(net: &NetworkSpec, algorithm: Algorithm) -> Vec<EdgeLayout> {
    net.edges()
        .into_iter()
        .map(|(k, l)| {
            let parts = match algorithm {
                Algorithm::AtpDelta | Algorithm::Atp0 => vec![net.dims[k], net.dims[l], net.dims[k]],
                Algorithm::Nocoop => vec![net.dims[k], net.dims[l]],
            };
            EdgeLayout {
                k,
                l,
                dim: parts.iter().sum(),
                parts,
            }
        })
        .collect()
}

/// Deduplicated per-iteration projection sets for a deterministic schedule.
fn schedule_sets(net: &NetworkSpec, sched: &[Vec<f64>], t: usize) -> Result<(Vec<ProjectionSet>, Vec<usize>)> {
    let mut sets: Vec<ProjectionSet> = Vec::new();
    let mut index = Vec::with_capacity(t);
    let mut last: Option<&Vec<f64>> = None;
    for row in sched.iter().take(t) {
        if last != Some(row) {
            sets.push(projection::build_projection_set(net, row)?);
            last = Some(row);
        }
        index.push(sets.len() - 1);
    }
    Ok((sets, index))
}

struct RunContext<'a> {
    scenario: &'a Scenario,
    plan: &'a MonteCarloPlan,
    layouts: &'a [EdgeLayout],
    sets: &'a [ProjectionSet],
    set_index: &'a [usize],
}

fn simulate_run(ctx: &RunContext, run: usize, acc: &mut BatchStats) -> Result<()> {
    let sc = ctx.scenario;
    let plan = ctx.plan;
    let net = &sc.net;
    let n = net.n_agents();
    let run64 = run as u64;

    let mut task_rng = stream(plan.seed, run64, 0, StreamKind::Task);
    let xi = DVector::from_fn(sc.prior.null_dim(), |_, _| task_rng.sample::<f64, _>(StandardNormal));
    let w_base = sc.prior.task_from_standard(&xi);
    let w_tracked = plan.tracking.map(|tc| &sc.prior.mean + (&w_base - &sc.prior.mean) * tc.scale.sqrt());
    let split = |w: &DVector<f64>| -> Vec<DVector<f64>> {
        (0..n).map(|k| w.rows(net.offsets[k], net.dims[k]).into_owned()).collect()
    };
    let wo_base = split(&w_base);
    let wo_tracked = w_tracked.as_ref().map(split);
    let means: Vec<DVector<f64>> = (0..n).map(|k| sc.prior.mean_k(k)).collect();

    let mut data_rng: Vec<ChaCha8Rng> = (0..n)
        .map(|k| stream(plan.seed, run64, k as u64, StreamKind::Regressor))
        .collect();
    let mut noise_rng: Vec<ChaCha8Rng> = (0..n)
        .map(|k| stream(plan.seed, run64, k as u64, StreamKind::PrivacyNoise))
        .collect();
    let mut adaptive: Option<Vec<AdaptiveNoiseState>> = match &plan.noise {
        NoisePlan::Adaptive { delta, alpha } => Some(delta.iter().map(|&d| AdaptiveNoiseState::new(d, *alpha)).collect()),
        _ => None,
    };

    let mut w: Vec<DVector<f64>> = net.dims.iter().map(|&m| DVector::zeros(m)).collect();
    let mut z = Vec::new();
    let zero_sigma = vec![0.0; n];

    for i in 0..plan.iterations {
        let wo = match (&wo_tracked, plan.tracking) {
            (Some(t), Some(tc)) if i >= tc.at => t,
            _ => &wo_base,
        };
        let psi: Vec<DVector<f64>> = (0..n)
            .map(|k| {
                let s = next_sample(&sc.signal, &wo[k], k, &mut data_rng[k]);
                adapt_step(sc.signal.mu[k], &s, &w[k])
            })
            .collect();

        let mut shares: Option<Vec<DVector<f64>>> = None;
        let sigma: Vec<f64> = match plan.algorithm {
            Algorithm::Nocoop => {
                w = psi.clone();
                zero_sigma.clone()
            }
            Algorithm::Atp0 => {
                let set = &ctx.sets[ctx.set_index[i]];
                w = (0..n).map(|k| project_step(k, net, set, &psi, &psi)).collect();
                zero_sigma.clone()
            }
            Algorithm::AtpDelta => {
                let sigma: Vec<f64> = match (&plan.noise, adaptive.as_mut()) {
                    (NoisePlan::Schedule(s), _) => s[i].clone(),
                    (NoisePlan::Adaptive { delta, .. }, Some(states)) => states
                        .iter_mut()
                        .enumerate()
                        .map(|(k, st)| {
                            st.update(&psi[k], &means[k], delta[k]);
                            st.sigma2
                        })
                        .collect(),
                    _ => zero_sigma.clone(),
                };
                let sh = exchange_step(&psi, &sigma, &mut noise_rng);
                let built;
                let set = if adaptive.is_some() {
                    built = projection::build_projection_set(net, &sigma)?;
                    &built
                } else {
                    &ctx.sets[ctx.set_index[i]]
                };
                w = (0..n).map(|k| project_step(k, net, set, &psi, &sh)).collect();
                shares = Some(sh);
                sigma
            }
        };

        let mut sq = 0.0;
        for k in 0..n {
            sq += (&wo[k] - &w[k]).norm_squared();
            acc.sigma[i][k] += sigma[k];
        }
        acc.msd[i] += sq / n as f64;

        for (e, lay) in ctx.layouts.iter().enumerate() {
            let (k, l) = (lay.k, lay.l);
            z.clear();
            z.extend(wo[k].iter().zip(means[k].iter()).map(|(a, b)| a - b));
            match plan.algorithm {
                Algorithm::Nocoop => {
                    z.extend(w[l].iter().zip(means[l].iter()).map(|(a, b)| a - b));
                }
                Algorithm::Atp0 => {
                    z.extend(psi[l].iter().zip(means[l].iter()).map(|(a, b)| a - b));
                    z.extend(psi[k].iter().zip(means[k].iter()).map(|(a, b)| a - b));
                }
                Algorithm::AtpDelta => {
                    let sh = shares.as_ref().expect("shares exist");
                    z.extend(psi[l].iter().zip(means[l].iter()).map(|(a, b)| a - b));
                    z.extend(sh[k].iter().zip(means[k].iter()).map(|(a, b)| a - b));
                }
            }
            acc.edges[i][e].push(&z);
        }
    }
    acc.runs += 1;
    Ok(())
}

fn batch_bounds(runs: usize) -> Vec<(usize, usize)> {
    let b = runs.min(MAX_BATCHES);
    (0..b).map(|j| (j * runs / b, (j + 1) * runs / b)).collect()
}

/// Empirical privacy derived from edge statistics.
#[derive(Debug, Clone)]
pub struct EmpiricalPrivacy {
    pub xi: Vec<f64>,
    /// `[iteration][agent]`; only defined for the noisy-share algorithm.
    pub single_share: Vec<Vec<f64>>,
    pub ridge: bool,
}

fn llmse_from_cov(cov: &DMatrix<f64>, target: usize, obs: &[usize], ridge: &mut bool) -> f64 {
    let w = cov.view((0, 0), (target, target)).trace();
    let no = obs.len();
    let u = DMatrix::from_fn(target, no, |r, c| cov[(r, obs[c])]);
    let x = DMatrix::from_fn(no, no, |r, c| cov[(obs[r], obs[c])]);
    let sol = match x.clone().cholesky() {
        Some(ch) => ch.solve(&u.transpose()),
        None => {
            *ridge = true;
            let eps = EMPIRICAL_RIDGE * x.trace().abs().max(f64::MIN_POSITIVE) / no as f64;
            let xr = &x + DMatrix::identity(no, no) * eps;
            xr.clone()
                .cholesky()
                .map(|c| c.solve(&u.transpose()))
                .or_else(|| xr.lu().solve(&u.transpose()))
                .unwrap_or_else(|| DMatrix::zeros(no, target))
        }
    };
    w - crate::linalg::trace_product(&u, &sol)
}

fn privacy_from_stats(
    algorithm: Algorithm,
    n: usize,
    layouts: &[EdgeLayout],
    stats: &[Vec<MomentAccumulator>],
) -> EmpiricalPrivacy {
    let mut ridge = false;
    let mut xi = Vec::with_capacity(stats.len());
    let mut single = Vec::with_capacity(stats.len());
    for row in stats {
        let mut per_agent = vec![0.0; n];
        let mut counts = vec![0usize; n];
        let mut share = vec![f64::NAN; n];
        for (lay, acc) in layouts.iter().zip(row) {
            if acc.count < 2.0 {
                continue;
            }
            let cov = acc.covariance();
            let mk = lay.parts[0];
            let obs: Vec<usize> = (mk..lay.dim).collect();
            per_agent[lay.k] += llmse_from_cov(&cov, mk, &obs, &mut ridge);
            counts[lay.k] += 1;
            if algorithm == Algorithm::AtpDelta && share[lay.k].is_nan() {
                let own: Vec<usize> = (mk + lay.parts[1]..lay.dim).collect();
                share[lay.k] = llmse_from_cov(&cov, mk, &own, &mut ridge);
            }
        }
        let mut total = 0.0;
        let mut any = false;
        for k in 0..n {
            if counts[k] > 0 {
                total += per_agent[k] / counts[k] as f64;
                any = true;
            }
        }
        xi.push(if any { total / n as f64 } else { f64::NAN });
        single.push(share);
    }
    EmpiricalPrivacy {
        xi,
        single_share: single,
        ridge,
    }
}

/// Run all realizations of `plan` and aggregate them.
pub fn run_monte_carlo(plan: &MonteCarloPlan, scenario: &Scenario) -> Result<RunRecord> {
    plan.validate(scenario)?;
    let net = &scenario.net;
    let n = net.n_agents();
    let t = plan.iterations;
    let layouts = edge_layouts(net, plan.algorithm);

    let (sets, set_index) = match (plan.algorithm, &plan.noise) {
        (Algorithm::Nocoop, _) => (Vec::new(), Vec::new()),
        (Algorithm::Atp0, _) => schedule_sets(net, &vec![vec![0.0; n]; t], t)?,
        (Algorithm::AtpDelta, NoisePlan::Schedule(s)) => schedule_sets(net, s, t)?,
        (Algorithm::AtpDelta, NoisePlan::None) => schedule_sets(net, &vec![vec![0.0; n]; t], t)?,
        (Algorithm::AtpDelta, NoisePlan::Adaptive { .. }) => (Vec::new(), Vec::new()),
    };
    let ctx = RunContext {
        scenario,
        plan,
        layouts: &layouts,
        sets: &sets,
        set_index: &set_index,
    };

    let bounds = batch_bounds(plan.runs);
    let wave = rayon::current_num_threads().max(1);
    let mut total = BatchStats::new(t, n, &layouts);
    let mut summaries = Vec::with_capacity(bounds.len());
    for group in bounds.chunks(wave) {
        let results: Vec<Result<BatchStats>> = group
            .par_iter()
            .map(|&(lo, hi)| {
                let mut acc = BatchStats::new(t, n, &layouts);
                for run in lo..hi {
                    simulate_run(&ctx, run, &mut acc)?;
                }
                Ok(acc)
            })
            .collect();
        for res in results {
            let b = res?;
            let runs = b.runs as f64;
            let pv = privacy_from_stats(plan.algorithm, n, &layouts, &b.edges);
            summaries.push(BatchSummary {
                runs: b.runs,
                msd: b.msd.iter().map(|v| v / runs).collect(),
                xi: pv.xi,
                single_share: pv.single_share,
            });
            total.merge(&b);
        }
    }

    let r = total.runs as f64;
    Ok(RunRecord {
        algorithm: plan.algorithm,
        runs: total.runs,
        iterations: t,
        msd: total.msd.iter().map(|v| v / r).collect(),
        sigma_mean: total.sigma.iter().map(|row| row.iter().sum::<f64>() / (r * n as f64)).collect(),
        sigma_agent: total.sigma.iter().map(|row| row.iter().map(|v| v / r).collect()).collect(),
        edges: layouts,
        stats: total.edges,
        batches: summaries,
    })
}

/// Network privacy error and single-share errors from the pooled statistics.
pub fn empirical_privacy(record: &RunRecord, n_agents: usize) -> EmpiricalPrivacy {
    privacy_from_stats(record.algorithm, n_agents, &record.edges, &record.stats)
}

/// Batch-means standard error of a per-batch statistic.
pub fn batch_standard_error(values: &[f64]) -> Option<f64> {
    let b = values.len();
    if b < 2 || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mean = values.iter().sum::<f64>() / b as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    Some((var / b as f64).sqrt())
}
