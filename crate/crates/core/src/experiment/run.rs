use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{monte_carlo_crlb, FitConfig, MonteCarloConfig, MonteCarloSummary};
use crate::experiment::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::experiment::models::{build_model, Model};
use crate::hybrid::{simulate, HybridArc};
use crate::information::metrics::{info_metrics_with_threshold, rank_threshold};
use crate::information::{
    analyze, full_horizon_window, hpe_certificate, hpe_windows, HpeCertificate, InformationReport,
    ModeAnalysis, NoiseModel, OutputMap,
};
use crate::linalg::{lambda_min, sym_eigenvalues, to_rows};
use crate::sensitivity::{propagate, PropagationMode};
use crate::systems::{fig3_case, DiskImages};

/// Points on the perturbation circle written for the planar crossing case.
const DISK_POINTS: usize = 64;

/// A validated config with its model, measured signals and noise.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: Model,
    pub outputs: OutputMap,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub mode: PropagationMode,
    pub rank: usize,
    pub lambda_min: f64,
    pub sigma: f64,
    pub logdet: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HpeReport {
    pub mode: PropagationMode,
    pub mu_t: f64,
    pub mu_j: usize,
    #[serde(flatten)]
    pub certificate: HpeCertificate,
    pub lambda_min_fim: f64,
    /// `λ_min(F) ≥ λ_floor` whenever the certificate holds.
    pub bound_satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiskReport {
    pub radius: f64,
    pub reset_jacobian: Vec<Vec<f64>>,
    pub saltation: Vec<Vec<f64>>,
    pub max_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub model: String,
    pub states: Vec<String>,
    pub params: Vec<String>,
    pub outputs: Vec<String>,
    pub theta: Vec<f64>,
    pub horizon: f64,
    pub events: usize,
    pub metrics: Vec<MetricsRow>,
    pub information: Vec<InformationReport>,
    pub hpe: HpeReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disk: Option<DiskReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub model: String,
    pub params: Vec<String>,
    pub horizon: f64,
    pub events: usize,
    pub metrics: Vec<MetricsRow>,
    pub information: Vec<InformationReport>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub arc: HybridArc,
    pub analyses: Vec<ModeAnalysis>,
    /// `∂τ_j/∂θ` per event.
    pub event_time_gradients: Vec<Vec<f64>>,
    pub disk: Option<DiskImages>,
    pub report: RunReport,
}

fn as_config(e: Error) -> Error {
    if e.is_validation() {
        e
    } else {
        Error::Config(e.to_string())
    }
}

fn metrics_row(r: &InformationReport) -> MetricsRow {
    MetricsRow {
        mode: r.mode,
        rank: r.metrics.rank,
        lambda_min: r.metrics.lambda_min_nonzero,
        sigma: r.metrics.sigma,
        logdet: r.metrics.logdet_regularized,
    }
}

impl Experiment {
    /// Build the model and noise; every failure here is a validation error.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = build_model(&config.model, &config.params).map_err(as_config)?;
        let outputs = match &config.outputs {
            None => model.outputs.clone(),
            Some(names) => {
                let mut idx = Vec::with_capacity(names.len());
                for n in names {
                    let i = model
                        .outputs
                        .names
                        .iter()
                        .position(|m| m == n)
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "unknown output '{n}' (expected one of {:?})",
                                model.outputs.names
                            ))
                        })?;
                    idx.push(i);
                }
                if idx.is_empty() {
                    return Err(Error::Config("at least one output is required".into()));
                }
                model.outputs.rows(&idx)?
            }
        };
        let noise = config.noise.build().map_err(as_config)?;
        if noise.m() != outputs.m {
            return Err(Error::Config(format!(
                "noise covariance is {}x{} but {} outputs are measured",
                noise.m(),
                noise.m(),
                outputs.m
            )));
        }
        Ok(Self {
            config,
            model,
            outputs,
            noise,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(ExperimentConfig::load(path)?)
    }

    pub fn simulate(&self) -> Result<HybridArc> {
        let s = &self.model.spec;
        simulate(
            s,
            &self.model.theta,
            &s.initial_state,
            s.initial_mode,
            self.config.horizon,
            &self.config.integrator,
        )
    }

    fn z0(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.model.spec.n_states, self.model.spec.n_params)
    }

    pub fn analyze(&self, arc: &HybridArc, mode: PropagationMode) -> Result<ModeAnalysis> {
        let m = &self.model;
        analyze(
            arc,
            &m.spec,
            &m.theta,
            &self.outputs,
            &self.noise,
            mode,
            &self.z0(),
            &self.config.integrator,
        )
    }

    fn reports(
        &self,
        arc: &HybridArc,
        analyses: &[ModeAnalysis],
    ) -> Result<Vec<InformationReport>> {
        let times = arc.event_times();
        analyses
            .iter()
            .map(|a| InformationReport::new(&a.fim, &times, self.config.epsilon))
            .collect()
    }

    /// Propagate every requested mode along one arc.
    pub fn compare(&self, modes: &[PropagationMode]) -> Result<CompareReport> {
        if modes.is_empty() {
            return Err(Error::Config(
                "at least one propagation mode is required".into(),
            ));
        }
        let arc = self.simulate()?;
        let analyses = modes
            .iter()
            .map(|&m| self.analyze(&arc, m))
            .collect::<Result<Vec<_>>>()?;
        let information = self.reports(&arc, &analyses)?;
        Ok(CompareReport {
            schema_version: SCHEMA_VERSION,
            model: self.model.name.clone(),
            params: self.model.spec.param_names.clone(),
            horizon: self.config.horizon,
            events: arc.events.len(),
            metrics: information.iter().map(metrics_row).collect(),
            information,
        })
    }

    fn hpe(&self, a: &ModeAnalysis, n_events: usize) -> Result<HpeReport> {
        let (windows, mu_t, mu_j) = match &self.config.hpe {
            Some(h) => (
                hpe_windows(
                    &a.outputs,
                    &self.noise,
                    h.mu_t,
                    h.mu_j,
                    h.stride.unwrap_or(h.mu_t),
                )?,
                h.mu_t,
                h.mu_j,
            ),
            None => (
                vec![full_horizon_window(&a.outputs, &self.noise)?],
                self.config.horizon,
                n_events,
            ),
        };
        let certificate = hpe_certificate(&windows, &self.noise, n_events);
        let lambda_min_fim = lambda_min(&a.fim.fim);
        let slack = 1e-10 * certificate.lambda_floor.abs().max(1.0);
        Ok(HpeReport {
            mode: a.fim.mode,
            mu_t,
            mu_j,
            bound_satisfied: !certificate.holds
                || lambda_min_fim >= certificate.lambda_floor - slack,
            certificate,
            lambda_min_fim,
        })
    }

    /// Simulate, propagate every configured mode, certify excitation and,
    /// when configured, run the Monte-Carlo study. `seed` overrides the
    /// configured Monte-Carlo seed.
    pub fn run(&self, seed: Option<u64>) -> Result<RunResult> {
        let arc = self.simulate()?;
        let analyses = self
            .config
            .propagation
            .iter()
            .map(|&m| self.analyze(&arc, m))
            .collect::<Result<Vec<_>>>()?;
        let salted = analyses
            .iter()
            .position(|a| a.fim.mode == PropagationMode::Saltation);
        let event_time_gradients: Vec<Vec<f64>> = match salted {
            Some(i) => analyses[i]
                .sensitivity
                .jumps
                .iter()
                .map(|j| j.event_time_gradient.iter().copied().collect())
                .collect(),
            None => {
                let m = &self.model;
                propagate(
                    &arc,
                    &m.spec,
                    &m.theta,
                    &self.z0(),
                    PropagationMode::Saltation,
                    &self.config.integrator,
                )?
                .jumps
                .iter()
                .map(|j| j.event_time_gradient.iter().copied().collect())
                .collect()
            }
        };
        let information = self.reports(&arc, &analyses)?;
        let hpe = self.hpe(&analyses[salted.unwrap_or(0)], arc.events.len())?;
        let montecarlo = match &self.config.montecarlo {
            None => None,
            Some(mc) => {
                let cfg = MonteCarloConfig {
                    horizon: self.config.horizon,
                    grid: mc.grid.clone(),
                    fit: FitConfig {
                        max_iters: mc.max_iters,
                        integrator: self.config.integrator,
                        ..FitConfig::default()
                    },
                    theta_init: mc.theta_init.clone(),
                    threads: None,
                };
                let m = &self.model;
                Some(monte_carlo_crlb(
                    &m.spec,
                    &m.theta,
                    &self.outputs,
                    &self.noise,
                    mc.runs,
                    seed.unwrap_or(mc.seed),
                    &cfg,
                )?)
            }
        };
        let (disk, disk_report) = if self.model.name == "fig3" {
            let case = fig3_case();
            let images = case.images(DISK_POINTS)?;
            let report = DiskReport {
                radius: case.radius,
                reset_jacobian: to_rows(&case.dx_r),
                saltation: to_rows(&case.saltation()?),
                max_distance: images.max_distance(),
            };
            (Some(images), Some(report))
        } else {
            (None, None)
        };
        let m = &self.model;
        let report = RunReport {
            schema_version: SCHEMA_VERSION,
            model: m.name.clone(),
            states: m.spec.state_names.clone(),
            params: m.spec.param_names.clone(),
            outputs: self.outputs.names.clone(),
            theta: m.theta.clone(),
            horizon: self.config.horizon,
            events: arc.events.len(),
            metrics: information.iter().map(metrics_row).collect(),
            information,
            hpe,
            montecarlo,
            disk: disk_report,
        };
        Ok(RunResult {
            arc,
            analyses,
            event_time_gradients,
            disk,
            report,
        })
    }
}

/// Shortest decimal that reads back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn csv_file(
    dir: &Path,
    name: &str,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    w.flush()?;
    Ok(path)
}

fn json_file<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

/// `t, mode, states...` on the integration grid; event times appear twice.
pub fn write_arc_csv(dir: &Path, exp: &Experiment, arc: &HybridArc) -> Result<PathBuf> {
    let spec = &exp.model.spec;
    let mut header = vec!["t".to_string(), "mode".to_string()];
    header.extend(spec.state_names.iter().cloned());
    let rows = arc.segments.iter().flat_map(|seg| {
        let mode = spec.mode_name(seg.mode).to_string();
        seg.trajectory
            .times
            .iter()
            .zip(&seg.trajectory.states)
            .map(move |(&t, x)| {
                let mut r = vec![num(t), mode.clone()];
                r.extend(x.iter().map(|&v| num(v)));
                r
            })
    });
    csv_file(dir, "arc.csv", &header, rows)
}

pub fn write_events_csv(dir: &Path, exp: &Experiment, res: &RunResult) -> Result<PathBuf> {
    let spec = &exp.model.spec;
    let mut header: Vec<String> = ["j", "tau", "source", "target"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(
        res.analyses
            .iter()
            .map(|a| format!("trace_dI_{}", a.fim.mode)),
    );
    header.extend(spec.param_names.iter().map(|p| format!("dtau_d{p}")));
    let rows = res.arc.events.iter().enumerate().map(|(j, e)| {
        let mut r = vec![
            j.to_string(),
            num(e.time),
            spec.mode_name(e.source).to_string(),
            spec.mode_name(e.target).to_string(),
        ];
        r.extend(
            res.analyses
                .iter()
                .map(|a| num(a.fim.increments[j].trace())),
        );
        r.extend(res.event_time_gradients[j].iter().map(|&v| num(v)));
        r
    });
    csv_file(dir, "events.csv", &header, rows)
}

/// `t, lambda_1..lambda_p, logdet, rank` of the running FIM.
pub fn write_fim_timeseries(dir: &Path, analysis: &ModeAnalysis, epsilon: f64) -> Result<PathBuf> {
    let p = analysis.fim.fim.nrows();
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|i| format!("lambda_{i}")));
    header.extend(["logdet".to_string(), "rank".to_string()]);
    let mut rows = Vec::with_capacity(analysis.fim.series.len());
    for s in &analysis.fim.series {
        let eig = sym_eigenvalues(&s.fim);
        let m = info_metrics_with_threshold(&s.fim, epsilon, Some(rank_threshold(&eig)))?;
        let mut r = vec![num(s.t)];
        r.extend(eig.iter().map(|&v| num(v)));
        r.push(num(m.logdet_regularized));
        r.push(m.rank.to_string());
        rows.push(r);
    }
    csv_file(
        dir,
        &format!("fim_timeseries_{}.csv", analysis.fim.mode),
        &header,
        rows.into_iter(),
    )
}

fn write_disk_csv(dir: &Path, d: &DiskImages) -> Result<PathBuf> {
    let header: Vec<String> = [
        "pre_x1",
        "pre_x2",
        "reset_x1",
        "reset_x2",
        "saltation_x1",
        "saltation_x2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows = (0..d.pre.len()).map(|i| {
        [d.pre[i], d.reset[i], d.saltation[i]]
            .iter()
            .flat_map(|p| [num(p[0]), num(p[1])])
            .collect()
    });
    csv_file(dir, "disk_images.csv", &header, rows)
}

/// Write every artifact of a run into `dir`, returning the paths written.
pub fn write_run(dir: &Path, exp: &Experiment, res: &RunResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec![
        write_arc_csv(dir, exp, &res.arc)?,
        write_events_csv(dir, exp, res)?,
    ];
    for a in &res.analyses {
        files.push(write_fim_timeseries(dir, a, exp.config.epsilon)?);
    }
    if let Some(d) = &res.disk {
        files.push(write_disk_csv(dir, d)?);
    }
    files.push(json_file(dir, "report.json", &res.report)?);
    Ok(files)
}

pub fn write_compare(dir: &Path, report: &CompareReport) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    json_file(dir, "report.json", report)
}
