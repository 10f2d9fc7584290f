//! One-step-ahead scoring of the quantile predictors.
//!
//! Every predictor receives the realized standardized quantiles at `t - 1`
//! and is scored against the realized standardized quantiles at `t`. Errors
//! are measured in the standardized space of each dataset's own parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::PercentileDataset;
use crate::error::{Error, Result};
use crate::mlp::{check_recipe, train, MlpModel, TrainConfig, TrainOutcome, TrainingPairs};
use crate::mom::Standardizer;
use crate::par::{map_indexed, Exec};
use crate::params::ModelParams;
use crate::sim::{generate_dataset, SimConfig, N_QUANTILES};

/// Standardized realized quantiles of a dataset, `[scenario][t - 1][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedData {
    n_scenarios: usize,
    n_steps: usize,
    values: Vec<f64>,
}

impl StandardizedData {
    pub fn new(ds: &PercentileDataset, standardizer: &Standardizer, exec: Exec) -> Result<Self> {
        let (n_scenarios, n_steps) = (ds.n_scenarios(), ds.n_steps());
        let rows = map_indexed(exec, n_scenarios, |s| {
            let mut out = Vec::with_capacity(n_steps * N_QUANTILES);
            for t in 1..=n_steps {
                out.extend(standardizer.standardize(ds.quantiles(s, t), t)?.values);
            }
            Ok(out)
        });
        let mut values = Vec::with_capacity(n_scenarios * n_steps * N_QUANTILES);
        for r in rows {
            values.extend(r?);
        }
        Ok(StandardizedData {
            n_scenarios,
            n_steps,
            values,
        })
    }

    /// Builds directly from standardized values laid out `[s][t - 1][k]`.
    pub fn from_values(n_scenarios: usize, n_steps: usize, values: Vec<f64>) -> Result<Self> {
        let expected = n_scenarios * n_steps * N_QUANTILES;
        if values.len() != expected {
            return Err(Error::Shape {
                expected,
                got: values.len(),
            });
        }
        Ok(StandardizedData {
            n_scenarios,
            n_steps,
            values,
        })
    }

    pub fn n_scenarios(&self) -> usize {
        self.n_scenarios
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn row(&self, scenario: usize, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.n_steps, "t = {t} out of 1..={}", self.n_steps);
        let start = (scenario * self.n_steps + t - 1) * N_QUANTILES;
        &self.values[start..start + N_QUANTILES]
    }

    /// Pairs `(z_t, z_{t+1})` for `t = 1..n_steps - 1`, scenario-major.
    pub fn training_pairs(&self) -> Result<TrainingPairs> {
        let mut pairs = TrainingPairs::new(N_QUANTILES);
        for s in 0..self.n_scenarios {
            for t in 1..self.n_steps {
                pairs.push(self.row(s, t), self.row(s, t + 1), s, t)?;
            }
        }
        Ok(pairs)
    }
}

/// What a predictor sees for one scenario: the realized standardized
/// quantiles at `t` and the standardizer of the dataset being scored.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub scenario: usize,
    pub t: usize,
    pub z_prev: &'a [f64],
    pub standardizer: &'a Standardizer,
}

/// A one-step-ahead map in standardized space, from `t` to `t + 1`.
pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn predict(&self, input: &StepInput<'_>) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MomPredictor;

impl Predictor for MomPredictor {
    fn name(&self) -> &str {
        "mom"
    }

    fn predict(&self, input: &StepInput<'_>) -> Result<Vec<f64>> {
        input.standardizer.mom_step(input.z_prev, input.t)
    }
}

#[derive(Debug, Clone)]
pub struct NnPredictor<'m> {
    pub model: &'m MlpModel,
}

impl Predictor for NnPredictor<'_> {
    fn name(&self) -> &str {
        "nn"
    }

    fn predict(&self, input: &StepInput<'_>) -> Result<Vec<f64>> {
        check_recipe(self.model, input.standardizer)?;
        self.model.forward(input.z_prev)
    }
}

fn check_steps(data: &StandardizedData) -> Result<()> {
    if data.n_scenarios == 0 {
        return Err(Error::Empty("dataset has no scenarios"));
    }
    if data.n_steps < 2 {
        return Err(Error::Timestep {
            t: data.n_steps,
            reason: "scoring needs at least two timesteps",
        });
    }
    Ok(())
}

/// Per-scenario prediction errors at target step `t`, `[s][k]` flattened.
fn errors_at(
    predictor: &dyn Predictor,
    data: &StandardizedData,
    standardizer: &Standardizer,
    t: usize,
    exec: Exec,
) -> Result<Vec<f64>> {
    let rows = map_indexed(exec, data.n_scenarios, |s| {
        let pred = predictor.predict(&StepInput {
            scenario: s,
            t: t - 1,
            z_prev: data.row(s, t - 1),
            standardizer,
        })?;
        if pred.len() != N_QUANTILES {
            return Err(Error::Shape {
                expected: N_QUANTILES,
                got: pred.len(),
            });
        }
        Ok(pred
            .iter()
            .zip(data.row(s, t))
            .map(|(p, r)| p - r)
            .collect::<Vec<f64>>())
    });
    let mut out = Vec::with_capacity(data.n_scenarios * N_QUANTILES);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// RMSE over scenarios and percentiles for each target `t = 2..=n_steps`;
/// entry `i` belongs to `t = i + 2`.
pub fn rmse_by_timestep(
    predictor: &dyn Predictor,
    data: &StandardizedData,
    standardizer: &Standardizer,
    exec: Exec,
) -> Result<Vec<f64>> {
    check_steps(data)?;
    (2..=data.n_steps)
        .map(|t| {
            let e = errors_at(predictor, data, standardizer, t, exec)?;
            // per-scenario partial sums keep the total independent of order
            let mut partial: Vec<f64> = e
                .chunks(N_QUANTILES)
                .map(|c| c.iter().map(|v| v * v).sum())
                .collect();
            partial.sort_by(f64::total_cmp);
            let sse: f64 = partial.iter().sum();
            Ok((sse / e.len() as f64).sqrt())
        })
        .collect()
}

/// Sample standard deviation (ddof = 1) across scenarios of each realized
/// standardized quantile, `[t - 1][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticError {
    n_steps: usize,
    values: Vec<f64>,
}

impl StochasticError {
    pub fn at(&self, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.n_steps);
        &self.values[(t - 1) * N_QUANTILES..t * N_QUANTILES]
    }
}

pub fn stochastic_error(data: &StandardizedData) -> Result<StochasticError> {
    let n = data.n_scenarios;
    if n < 2 {
        return Err(Error::Empty("stochastic error needs at least two scenarios"));
    }
    let mut values = Vec::with_capacity(data.n_steps * N_QUANTILES);
    for t in 1..=data.n_steps {
        for k in 0..N_QUANTILES {
            let mean = (0..n).map(|s| data.row(s, t)[k]).sum::<f64>() / n as f64;
            let ss = (0..n)
                .map(|s| (data.row(s, t)[k] - mean).powi(2))
                .sum::<f64>();
            values.push((ss / (n - 1) as f64).sqrt());
        }
    }
    Ok(StochasticError {
        n_steps: data.n_steps,
        values,
    })
}

/// Mean prediction error at target step `t` per percentile, divided by the
/// stochastic error there.
pub fn cross_section(
    predictor: &dyn Predictor,
    data: &StandardizedData,
    standardizer: &Standardizer,
    se: &StochasticError,
    t: usize,
    exec: Exec,
) -> Result<Vec<f64>> {
    check_steps(data)?;
    if t < 2 || t > data.n_steps {
        return Err(Error::Timestep {
            t,
            reason: "cross sections need 2 <= t <= n_steps",
        });
    }
    let sd = se.at(t);
    if let Some(k) = sd.iter().position(|v| *v <= 0.0) {
        return Err(Error::ZeroStochasticError { t, s: k });
    }
    let e = errors_at(predictor, data, standardizer, t, exec)?;
    let n = data.n_scenarios as f64;
    Ok((0..N_QUANTILES)
        .map(|k| {
            let mean = e.chunks(N_QUANTILES).map(|c| c[k]).sum::<f64>() / n;
            mean / sd[k]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseRow {
    pub t: usize,
    pub nn_in: f64,
    pub nn_oos: f64,
    pub mom_in: f64,
    pub mom_oos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub t: usize,
    pub nn: Vec<f64>,
    pub mom: Vec<f64>,
}

impl CrossSection {
    /// Fraction of percentiles whose NN relative error lies in `[-1, 1]`.
    pub fn nn_within_one(&self) -> f64 {
        self.nn.iter().filter(|v| v.abs() <= 1.0).count() as f64 / self.nn.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: Vec<RmseRow>,
    /// In-sample cross sections; empty when the stochastic error vanishes.
    pub cross_sections: Vec<CrossSection>,
    pub cross_sections_oos: Vec<CrossSection>,
    pub n_scenarios_train: usize,
    pub n_scenarios_valid: usize,
    pub train_fingerprint: String,
    pub valid_fingerprint: String,
    /// Fraction of out-of-sample NN predictions that are not nondecreasing.
    pub nn_non_monotone_oos: f64,
}

pub const DEFAULT_CROSS_SECTION_STEPS: [usize; 4] = [3, 6, 9, 12];

/// One dataset together with its standardizer.
pub struct Scored<'a> {
    pub dataset: &'a PercentileDataset,
    pub data: &'a StandardizedData,
    pub standardizer: &'a Standardizer,
}

fn cross_sections(
    nn: &dyn Predictor,
    mom: &dyn Predictor,
    d: &Scored<'_>,
    steps: &[usize],
    exec: Exec,
) -> Result<Vec<CrossSection>> {
    let se = stochastic_error(d.data)?;
    let mut out = Vec::new();
    for &t in steps.iter().filter(|&&t| t >= 2 && t <= d.data.n_steps) {
        match (
            cross_section(nn, d.data, d.standardizer, &se, t, exec),
            cross_section(mom, d.data, d.standardizer, &se, t, exec),
        ) {
            (Ok(nn), Ok(mom)) => out.push(CrossSection { t, nn, mom }),
            // degenerate data has no spread to normalize by
            (Err(Error::ZeroStochasticError { .. }), _) | (_, Err(Error::ZeroStochasticError { .. })) => {
                return Ok(Vec::new())
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Ok(out)
}

fn non_monotone_fraction(model: &MlpModel, d: &Scored<'_>, exec: Exec) -> Result<f64> {
    let nn = NnPredictor { model };
    let n = d.data.n_scenarios;
    let flags = map_indexed(exec, n, |s| {
        let mut bad = 0usize;
        for t in 1..d.data.n_steps {
            let p = nn.predict(&StepInput {
                scenario: s,
                t,
                z_prev: d.data.row(s, t),
                standardizer: d.standardizer,
            })?;
            bad += usize::from(p.windows(2).any(|w| w[1] < w[0]));
        }
        Ok(bad)
    });
    let mut total = 0usize;
    for f in flags {
        total += f?;
    }
    Ok(total as f64 / (n * (d.data.n_steps - 1)) as f64)
}

/// Scores both predictors on an in-sample and an out-of-sample dataset.
pub fn evaluate(
    model: &MlpModel,
    train: &Scored<'_>,
    valid: &Scored<'_>,
    cross_steps: &[usize],
    exec: Exec,
) -> Result<EvalReport> {
    let nn = NnPredictor { model };
    let mom = MomPredictor;
    let nn_in = rmse_by_timestep(&nn, train.data, train.standardizer, exec)?;
    let nn_oos = rmse_by_timestep(&nn, valid.data, valid.standardizer, exec)?;
    let mom_in = rmse_by_timestep(&mom, train.data, train.standardizer, exec)?;
    let mom_oos = rmse_by_timestep(&mom, valid.data, valid.standardizer, exec)?;
    if nn_in.len() != nn_oos.len() {
        return Err(Error::Shape {
            expected: nn_in.len(),
            got: nn_oos.len(),
        });
    }
    let rmse = (0..nn_in.len())
        .map(|i| RmseRow {
            t: i + 2,
            nn_in: nn_in[i],
            nn_oos: nn_oos[i],
            mom_in: mom_in[i],
            mom_oos: mom_oos[i],
        })
        .collect();
    Ok(EvalReport {
        rmse,
        cross_sections: cross_sections(&nn, &mom, train, cross_steps, exec)?,
        cross_sections_oos: cross_sections(&nn, &mom, valid, cross_steps, exec)?,
        n_scenarios_train: train.data.n_scenarios,
        n_scenarios_valid: valid.data.n_scenarios,
        train_fingerprint: train.dataset.fingerprint().to_string(),
        valid_fingerprint: valid.dataset.fingerprint().to_string(),
        nn_non_monotone_oos: non_monotone_fraction(model, valid, exec)?,
    })
}

/// Inputs to [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub train_params: ModelParams,
    pub valid_params: ModelParams,
    pub train_sim: SimConfig,
    pub valid_sim: SimConfig,
    pub train_cfg: TrainConfig,
    pub eta_source: crate::params::EtaSource,
    pub drift: crate::mom::DriftMode,
    pub cross_steps: Vec<usize>,
}

pub struct ExperimentOutput {
    pub report: EvalReport,
    pub train_dataset: PercentileDataset,
    pub valid_dataset: PercentileDataset,
    pub outcome: TrainOutcome,
}

/// Generates both datasets, trains on the first and scores on both.
pub fn run_experiment(spec: &ExperimentSpec, exec: Exec) -> Result<ExperimentOutput> {
    let train_ds = generate_dataset(&spec.train_params, &spec.train_sim, exec)?;
    let valid_ds = generate_dataset(&spec.valid_params, &spec.valid_sim, exec)?;
    let train_std = Standardizer::new(&spec.train_params, spec.eta_source)?.with_drift(spec.drift);
    let valid_std = Standardizer::new(&spec.valid_params, spec.eta_source)?.with_drift(spec.drift);
    let train_z = StandardizedData::new(&train_ds, &train_std, exec)?;
    let valid_z = StandardizedData::new(&valid_ds, &valid_std, exec)?;
    let outcome = train(
        &train_z.training_pairs()?,
        &spec.train_cfg,
        train_std.recipe_fingerprint(),
    )?;
    let report = evaluate(
        &outcome.model,
        &Scored {
            dataset: &train_ds,
            data: &train_z,
            standardizer: &train_std,
        },
        &Scored {
            dataset: &valid_ds,
            data: &valid_z,
            standardizer: &valid_std,
        },
        &spec.cross_steps,
        exec,
    )?;
    Ok(ExperimentOutput {
        report,
        train_dataset: train_ds,
        valid_dataset: valid_ds,
        outcome,
    })
}

impl EvalReport {
    pub fn rmse_csv(&self) -> String {
        let mut s = String::from("t,nn_in,nn_oos,mom_in,mom_oos\n");
        for r in &self.rmse {
            writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.nn_in, r.nn_oos, r.mom_in, r.mom_oos
            )
            .unwrap();
        }
        s
    }

    pub fn cross_section_csv(cs: &CrossSection) -> String {
        let mut s = String::from("percentile,nn_rel_err,mom_rel_err\n");
        for k in 0..cs.nn.len() {
            writeln!(s, "{:.1},{:.16e},{:.16e}", (k + 1) as f64 * 0.5, cs.nn[k], cs.mom[k]).unwrap();
        }
        s
    }

    /// Writes `rmse.csv`, `cross_section_t<k>.csv` (in-sample) and
    /// `cross_section_oos_t<k>.csv` into `dir`; returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![(dir.join("rmse.csv"), self.rmse_csv())];
        for cs in &self.cross_sections {
            files.push((dir.join(format!("cross_section_t{}.csv", cs.t)), Self::cross_section_csv(cs)));
        }
        for cs in &self.cross_sections_oos {
            files.push((
                dir.join(format!("cross_section_oos_t{}.csv", cs.t)),
                Self::cross_section_csv(cs),
            ));
        }
        for (path, body) in &files {
            fs::write(path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }

    /// Fixed-width table of the RMSE rows.
    pub fn rmse_table(&self) -> String {
        let mut s = String::from("RMSE of standardized quantiles, one step ahead\n");
        writeln!(s, "{:>3}  {:>12}  {:>12}  {:>12}  {:>12}", "t", "nn_in", "nn_oos", "mom_in", "mom_oos").unwrap();
        for r in &self.rmse {
            writeln!(
                s,
                "{:>3}  {:>12.6}  {:>12.6}  {:>12.6}  {:>12.6}",
                r.t, r.nn_in, r.nn_oos, r.mom_in, r.mom_oos
            )
            .unwrap();
        }
        s
    }
}
