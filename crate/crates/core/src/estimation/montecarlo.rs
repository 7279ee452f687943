use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::fit::{nls_fit, FitConfig};
use crate::estimation::measurements::{simulate_measurements, SampleGrid};
use crate::hybrid::simulate::simulate;
use crate::hybrid::spec::HybridSystemSpec;
use crate::information::fim::salted_fim;
use crate::information::metrics::crlb;
use crate::information::noise::NoiseModel;
use crate::information::output::OutputMap;
use crate::information::serialize_matrix;
use crate::linalg::symmetrize;

pub const MIN_RUNS: usize = 50;

/// Fraction of runs that must converge for the summary to be meaningful.
const MIN_CONVERGED_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub horizon: f64,
    pub grid: SampleGrid,
    pub fit: FitConfig,
    /// Start of every fit; the true parameters when absent.
    pub theta_init: Option<Vec<f64>>,
    /// Worker threads; [`thread_cap`] when absent.
    pub threads: Option<usize>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            grid: SampleGrid::Integrator,
            fit: FitConfig::default(),
            theta_init: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub runs: usize,
    pub converged: usize,
    pub seed: u64,
    pub theta_true: Vec<f64>,
    pub mean: Vec<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub empirical_cov: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub crlb: DMatrix<f64>,
    /// `trace(crlb) / trace(empirical_cov)`.
    pub efficiency: f64,
}

/// Worker count from `SALTFIM_THREADS`, else the available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("SALTFIM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn sample_covariance(samples: &[Vec<f64>], p: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(p);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(p, p);
    for s in samples {
        let d = DVector::from_column_slice(s) - &mean;
        cov += &d * d.transpose();
    }
    (mean, symmetrize(&(cov / (n - 1.0))))
}

/// Repeated noisy measurement and refit at `θ_true`. Run `i` draws its noise
/// from `seed + i`; results are reduced in run order.
pub fn monte_carlo_crlb(
    spec: &HybridSystemSpec,
    theta_true: &[f64],
    out: &OutputMap,
    noise: &NoiseModel,
    runs: usize,
    seed: u64,
    config: &MonteCarloConfig,
) -> Result<MonteCarloSummary> {
    if runs < MIN_RUNS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_RUNS} Monte-Carlo runs are required, got {runs}"
        )));
    }
    config.fit.validate()?;
    let p = spec.n_params;
    let cfg = &config.fit.integrator;
    let arc = simulate(
        spec,
        theta_true,
        &spec.initial_state,
        spec.initial_mode,
        config.horizon,
        cfg,
    )?;
    let z0 = DMatrix::zeros(spec.n_states, p);
    let sfim = salted_fim(&arc, spec, theta_true, out, noise, &z0, cfg)?;
    let bound = crlb(&sfim.fim.fim, 0.0)?;
    let init = config
        .theta_init
        .clone()
        .unwrap_or_else(|| theta_true.to_vec());
    let one = |i: usize| -> Option<Vec<f64>> {
        let ms = simulate_measurements(
            &arc,
            spec,
            theta_true,
            out,
            noise,
            &config.grid,
            seed.wrapping_add(i as u64),
            cfg,
        )
        .ok()?;
        let fit = nls_fit(&ms, spec, out, &init, &config.fit).ok()?;
        if !fit.converged {
            log::debug!("run {i} did not converge");
        }
        fit.converged.then_some(fit.theta_hat)
    };
    let threads = config.threads.unwrap_or_else(thread_cap).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Estimation(format!("thread pool: {e}")))?;
    let results: Vec<Option<Vec<f64>>> =
        pool.install(|| (0..runs).into_par_iter().map(one).collect());
    let estimates: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let converged = estimates.len();
    if (converged as f64) < MIN_CONVERGED_FRACTION * runs as f64 {
        return Err(Error::Estimation(format!(
            "only {converged} of {runs} fits converged"
        )));
    }
    let (mean, empirical_cov) = sample_covariance(&estimates, p);
    let efficiency = bound.trace() / empirical_cov.trace();
    Ok(MonteCarloSummary {
        runs,
        converged,
        seed,
        theta_true: theta_true.to_vec(),
        mean: mean.iter().copied().collect(),
        empirical_cov,
        crlb: bound,
        efficiency,
    })
}
