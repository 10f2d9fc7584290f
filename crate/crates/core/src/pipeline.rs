//! Reproducible runs: a flat run configuration and the generate / train /
//! evaluate steps that write datasets, models, reports and a manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{params_fingerprint, PercentileDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, ExperimentSpec, Scored, StandardizedData, DEFAULT_CROSS_SECTION_STEPS};
use crate::kv::{fingerprint, KvDoc};
use crate::mlp::{train, InputActivation, MlpModel, TrainConfig, TrainOutcome};
use crate::mom::{DriftMode, Standardizer};
use crate::par::Exec;
use crate::params::{fmt_f64, EtaSource, ModelParams};
use crate::sim::{generate_dataset, SimConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MODEL_FILE: &str = "model.txt";
pub const REPORT_DIR: &str = "report";

const VALID_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;
const TRAIN_SEED_OFFSET: u64 = 0x3C6E_F372_FE94_F82A;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Train,
    Valid,
}

impl Which {
    pub fn as_str(self) -> &'static str {
        match self {
            Which::Train => "train",
            Which::Valid => "valid",
        }
    }
}

impl std::str::FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Which::Train),
            "valid" => Ok(Which::Valid),
            other => Err(Error::param(
                "which",
                format!("unknown dataset `{other}` (expected train | valid)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params_train: ModelParams,
    pub params_valid: ModelParams,
    /// Shape of both simulations; the seeds come from the fields below.
    pub sim: SimConfig,
    pub allow_large: bool,
    pub train: TrainConfig,
    pub eta_source: EtaSource,
    pub drift_mode: DriftMode,
    pub master_seed: u64,
    /// Defaults to a fixed offset of `master_seed`.
    pub valid_seed: Option<u64>,
    /// Defaults to a fixed offset of `master_seed`.
    pub train_seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub cross_steps: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        RunConfig {
            params_train: ModelParams::training(),
            params_valid: ModelParams::validation(),
            sim,
            allow_large: false,
            train: TrainConfig::default(),
            eta_source: EtaSource::default(),
            drift_mode: DriftMode::default(),
            master_seed: sim.master_seed,
            valid_seed: None,
            train_seed: None,
            output_dir: None,
            threads: None,
            cross_steps: DEFAULT_CROSS_SECTION_STEPS.to_vec(),
        }
    }
}

fn params_to_kv(p: &ModelParams, prefix: &str) -> Vec<(String, String)> {
    let f = |k: &str, v: String| (format!("{prefix}{k}"), v);
    vec![
        f("alpha1", fmt_f64(p.alpha1)),
        f("alpha2", fmt_f64(p.alpha2)),
        f("sigma1", fmt_f64(p.sigma1)),
        f("sigma2", fmt_f64(p.sigma2)),
        f("mu_prime", fmt_f64(p.mu_prime)),
        f("rho", fmt_f64(p.rho_prime)),
        f("r0", fmt_f64(p.r0)),
        f("m0", fmt_f64(p.m0)),
        f("dt", fmt_f64(p.dt)),
        f("n_steps", p.n_steps.to_string()),
    ]
}

const PARAM_KEYS: [&str; 11] = [
    "alpha1", "alpha2", "sigma1", "sigma2", "mu", "mu_prime", "rho", "r0", "m0", "dt", "n_steps",
];

/// `mu` is a rate level and `mu_prime` its log; `m0` defaults to the level.
fn params_from_kv(doc: &KvDoc, prefix: &str, base: &ModelParams) -> Result<ModelParams> {
    let key = |k: &str| format!("{prefix}{k}");
    let mut p = *base;
    let get = |k: &str, v: f64| -> Result<f64> { Ok(doc.get::<f64>(&key(k))?.unwrap_or(v)) };
    p.alpha1 = get("alpha1", p.alpha1)?;
    p.alpha2 = get("alpha2", p.alpha2)?;
    p.sigma1 = get("sigma1", p.sigma1)?;
    p.sigma2 = get("sigma2", p.sigma2)?;
    p.rho_prime = get("rho", p.rho_prime)?;
    p.r0 = get("r0", p.r0)?;
    p.dt = get("dt", p.dt)?;
    p.n_steps = doc.get(&key("n_steps"))?.unwrap_or(p.n_steps);
    let level: Option<f64> = doc.get(&key("mu"))?;
    let log_level: Option<f64> = doc.get(&key("mu_prime"))?;
    match (level, log_level) {
        (Some(_), Some(_)) => {
            return Err(Error::param("mu", format!("set either {prefix}mu or {prefix}mu_prime, not both")))
        }
        (Some(mu), None) => {
            if mu.is_nan() || mu <= 0.0 {
                return Err(Error::param("mu", "must be a positive rate"));
            }
            p.mu_prime = mu.ln();
            p.m0 = mu;
        }
        (None, Some(lm)) => {
            p.mu_prime = lm;
            p.m0 = lm.exp();
        }
        (None, None) => {}
    }
    p.m0 = get("m0", p.m0)?;
    p.validate()?;
    Ok(p)
}

fn known_keys() -> BTreeSet<String> {
    let mut keys: BTreeSet<String> = [
        "sim.branch_factor",
        "sim.branch_depth",
        "sim.n_scenarios",
        "sim.max_nodes",
        "sim.allow_large",
        "train.learning_rate",
        "train.batch_size",
        "train.max_epochs",
        "train.tol",
        "train.patience",
        "train.seed",
        "train.l2",
        "train.holdout_fraction",
        "modes.eta_source",
        "modes.drift_mode",
        "modes.input_activation",
        "master_seed",
        "valid_seed",
        "output_dir",
        "threads",
        "eval.cross_section_steps",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["params_train.", "params_valid."] {
        keys.extend(PARAM_KEYS.iter().map(|k| format!("{prefix}{k}")));
    }
    keys
}

impl RunConfig {
    /// Applies the keys of `doc` on top of `self`. Unknown keys are errors.
    pub fn apply(&mut self, doc: &KvDoc) -> Result<()> {
        let known = known_keys();
        if let Some(k) = doc.keys().find(|k| !known.contains(*k)) {
            return Err(Error::parse(doc.origin(), format!("unknown config key `{k}`")));
        }
        self.params_train = params_from_kv(doc, "params_train.", &self.params_train)?;
        self.params_valid = params_from_kv(doc, "params_valid.", &self.params_valid)?;
        let s = &mut self.sim;
        s.branch_factor = doc.get("sim.branch_factor")?.unwrap_or(s.branch_factor);
        s.branch_depth = doc.get("sim.branch_depth")?.unwrap_or(s.branch_depth);
        s.n_scenarios = doc.get("sim.n_scenarios")?.unwrap_or(s.n_scenarios);
        if let Some(cap) = doc.get::<u64>("sim.max_nodes")? {
            s.max_nodes = Some(cap);
        }
        self.allow_large = doc.get("sim.allow_large")?.unwrap_or(self.allow_large);
        let t = &mut self.train;
        t.learning_rate = doc.get("train.learning_rate")?.unwrap_or(t.learning_rate);
        t.batch_size = doc.get("train.batch_size")?.unwrap_or(t.batch_size);
        t.max_epochs = doc.get("train.max_epochs")?.unwrap_or(t.max_epochs);
        t.tol = doc.get("train.tol")?.unwrap_or(t.tol);
        t.patience = doc.get("train.patience")?.unwrap_or(t.patience);
        t.l2 = doc.get("train.l2")?.unwrap_or(t.l2);
        t.holdout_fraction = doc.get("train.holdout_fraction")?.unwrap_or(t.holdout_fraction);
        t.input_activation = doc
            .get::<InputActivation>("modes.input_activation")?
            .unwrap_or(t.input_activation);
        if let Some(seed) = doc.get("train.seed")? {
            self.train_seed = Some(seed);
        }
        self.eta_source = doc.get("modes.eta_source")?.unwrap_or(self.eta_source);
        self.drift_mode = doc.get("modes.drift_mode")?.unwrap_or(self.drift_mode);
        self.master_seed = doc.get("master_seed")?.unwrap_or(self.master_seed);
        if let Some(seed) = doc.get("valid_seed")? {
            self.valid_seed = Some(seed);
        }
        if let Some(dir) = doc.get_str("output_dir") {
            self.output_dir = Some(PathBuf::from(dir));
        }
        if let Some(n) = doc.get("threads")? {
            self.threads = Some(n);
        }
        if let Some(list) = doc.get_str("eval.cross_section_steps") {
            self.cross_steps = list
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::parse(doc.origin(), format!("bad step `{v}` in eval.cross_section_steps")))
                })
                .collect::<Result<_>>()?;
        }
        self.validate()
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(doc)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&KvDoc::parse(&text, path.display().to_string())?)
    }

    pub fn validate(&self) -> Result<()> {
        self.params_train.validate()?;
        self.params_valid.validate()?;
        if self.params_train.n_steps != self.params_valid.n_steps {
            return Err(Error::param("n_steps", "training and validation must share n_steps"));
        }
        self.train.validate()?;
        self.sim_for(Which::Train).validate(&self.params_train)?;
        self.sim_for(Which::Valid).validate(&self.params_valid)?;
        if self.threads == Some(0) {
            return Err(Error::param("threads", "must be >= 1"));
        }
        Ok(())
    }

    pub fn valid_seed(&self) -> u64 {
        self.valid_seed
            .unwrap_or(self.master_seed.wrapping_add(VALID_SEED_OFFSET))
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
            .unwrap_or(self.master_seed.wrapping_add(TRAIN_SEED_OFFSET))
    }

    pub fn params(&self, which: Which) -> &ModelParams {
        match which {
            Which::Train => &self.params_train,
            Which::Valid => &self.params_valid,
        }
    }

    pub fn sim_for(&self, which: Which) -> SimConfig {
        SimConfig {
            master_seed: match which {
                Which::Train => self.master_seed,
                Which::Valid => self.valid_seed(),
            },
            max_nodes: if self.allow_large { None } else { self.sim.max_nodes },
            ..self.sim
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.train_seed(),
            ..self.train
        }
    }

    pub fn standardizer(&self, which: Which) -> Result<Standardizer> {
        Ok(Standardizer::new(self.params(which), self.eta_source)?.with_drift(self.drift_mode))
    }

    /// Full resolved echo; parsing it back yields an identical config.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = params_to_kv(&self.params_train, "params_train.");
        kv.extend(params_to_kv(&self.params_valid, "params_valid."));
        let s = &self.sim;
        kv.push(("sim.branch_factor".into(), s.branch_factor.to_string()));
        kv.push(("sim.branch_depth".into(), s.branch_depth.to_string()));
        kv.push(("sim.n_scenarios".into(), s.n_scenarios.to_string()));
        if let Some(cap) = s.max_nodes {
            kv.push(("sim.max_nodes".into(), cap.to_string()));
        }
        kv.push(("sim.allow_large".into(), self.allow_large.to_string()));
        let t = self.train_config();
        for (k, v) in t.to_kv("train.") {
            if k != "train.input_activation" {
                kv.push((k, v));
            }
        }
        kv.push(("modes.eta_source".into(), self.eta_source.to_string()));
        kv.push(("modes.drift_mode".into(), self.drift_mode.to_string()));
        kv.push(("modes.input_activation".into(), self.train.input_activation.to_string()));
        kv.push(("master_seed".into(), self.master_seed.to_string()));
        kv.push(("valid_seed".into(), self.valid_seed().to_string()));
        if let Some(dir) = &self.output_dir {
            kv.push(("output_dir".into(), dir.display().to_string()));
        }
        let steps: Vec<String> = self.cross_steps.iter().map(|t| t.to_string()).collect();
        kv.push(("eval.cross_section_steps".into(), steps.join(",")));
        kv
    }

    pub fn experiment_spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            train_params: self.params_train,
            valid_params: self.params_valid,
            train_sim: self.sim_for(Which::Train),
            valid_sim: self.sim_for(Which::Valid),
            train_cfg: self.train_config(),
            eta_source: self.eta_source,
            drift: self.drift_mode,
            cross_steps: self.cross_steps.clone(),
        }
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| Error::param("output_dir", "no output directory configured"))
    }

    pub fn dataset_path(&self, which: Which) -> Result<PathBuf> {
        Ok(self.output_dir()?.join(format!("{}.csv", which.as_str())))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Merges `entries` into `<dir>/manifest.txt`, keeping earlier keys.
pub fn update_manifest(cfg: &RunConfig, dir: &Path, entries: &[(String, String)]) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let mut doc = if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        KvDoc::parse(&text, path.display().to_string())?
    } else {
        KvDoc::new(path.display().to_string())
    };
    doc.set("bk2f.version", VERSION);
    let config = cfg.to_kv();
    // where the files go does not change what is in them
    let hashed: Vec<(String, String)> = config.iter().filter(|(k, _)| k != "output_dir").cloned().collect();
    doc.set("config.fingerprint", fingerprint(&hashed));
    doc.extend(config.into_iter().map(|(k, v)| (format!("config.{k}"), v)));
    doc.extend(entries.iter().cloned());
    fs::write(&path, doc.render()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Simulates one dataset and writes it with its sidecar.
pub fn cmd_generate(cfg: &RunConfig, which: Which, exec: Exec) -> Result<PathBuf> {
    let dir = cfg.output_dir()?;
    ensure_dir(dir)?;
    let ds = generate_dataset(cfg.params(which), &cfg.sim_for(which), exec)?;
    let path = cfg.dataset_path(which)?;
    ds.write(&path)?;
    let w = which.as_str();
    update_manifest(
        cfg,
        dir,
        &[
            (format!("dataset.{w}.file"), file_name(&path)),
            (format!("dataset.{w}.fingerprint"), ds.fingerprint().to_string()),
            (format!("dataset.{w}.master_seed"), ds.sim_config().master_seed.to_string()),
        ],
    )?;
    Ok(path)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads a dataset and checks that it was generated from `which`'s params.
pub fn load_dataset(cfg: &RunConfig, which: Which, path: &Path) -> Result<PercentileDataset> {
    let ds = PercentileDataset::read(path)?;
    let expected = params_fingerprint(cfg.params(which));
    if ds.params_fingerprint() != expected {
        return Err(Error::Fingerprint {
            expected,
            found: ds.params_fingerprint().to_string(),
        });
    }
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model_path: PathBuf,
    pub outcome: TrainOutcome,
}

/// Trains on a dataset generated from the training params; writes `model.txt`.
pub fn cmd_train(cfg: &RunConfig, dataset: &Path, exec: Exec) -> Result<TrainSummary> {
    let dir = cfg.output_dir()?;
    ensure_dir(dir)?;
    let ds = load_dataset(cfg, Which::Train, dataset)?;
    let std = cfg.standardizer(Which::Train)?;
    let z = StandardizedData::new(&ds, &std, exec)?;
    let train_cfg = cfg.train_config();
    let outcome = train(&z.training_pairs()?, &train_cfg, std.recipe_fingerprint())?;
    let model_path = dir.join(MODEL_FILE);
    let mut meta = train_cfg.to_kv("train.");
    meta.push(("dataset.fingerprint".into(), ds.fingerprint().to_string()));
    meta.push(("train.best_epoch".into(), outcome.best_epoch.to_string()));
    meta.push(("train.epochs_run".into(), outcome.history.len().to_string()));
    outcome.model.write(&model_path, &meta)?;
    let best = outcome.best();
    update_manifest(
        cfg,
        dir,
        &[
            ("model.file".into(), MODEL_FILE.into()),
            ("model.train_dataset".into(), ds.fingerprint().to_string()),
            ("model.best_epoch".into(), outcome.best_epoch.to_string()),
            ("model.train_loss".into(), fmt_f64(best.train_loss)),
            ("model.holdout_loss".into(), fmt_f64(best.holdout_loss)),
            ("model.fingerprint".into(), fingerprint(&[("model".into(), outcome.model.to_text(&[]))])),
        ],
    )?;
    Ok(TrainSummary { model_path, outcome })
}

/// Scores a trained model and the method-of-moments map on both datasets and
/// writes the report files into `<output_dir>/report`.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    model_path: &Path,
    train_path: &Path,
    valid_path: &Path,
    exec: Exec,
) -> Result<(EvalReport, PathBuf)> {
    let dir = cfg.output_dir()?;
    let (model, _) = MlpModel::read(model_path)?;
    let train_ds = load_dataset(cfg, Which::Train, train_path)?;
    let valid_ds = load_dataset(cfg, Which::Valid, valid_path)?;
    let train_std = cfg.standardizer(Which::Train)?;
    let valid_std = cfg.standardizer(Which::Valid)?;
    let train_z = StandardizedData::new(&train_ds, &train_std, exec)?;
    let valid_z = StandardizedData::new(&valid_ds, &valid_std, exec)?;
    let report = evaluate(
        &model,
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
        &cfg.cross_steps,
        exec,
    )?;
    let report_dir = dir.join(REPORT_DIR);
    let files = report.write(&report_dir)?;
    let names: Vec<String> = files.iter().map(|p| file_name(p)).collect();
    update_manifest(
        cfg,
        dir,
        &[
            ("report.dir".into(), REPORT_DIR.into()),
            ("report.files".into(), names.join(",")),
            ("report.space".into(), "standardized".into()),
            ("report.train_dataset".into(), report.train_fingerprint.clone()),
            ("report.valid_dataset".into(), report.valid_fingerprint.clone()),
            ("report.nn_non_monotone_oos".into(), fmt_f64(report.nn_non_monotone_oos)),
        ],
    )?;
    Ok((report, report_dir))
}

/// Generate both datasets, train, evaluate.
pub fn cmd_run(cfg: &RunConfig, exec: Exec) -> Result<(EvalReport, PathBuf)> {
    let train_path = cmd_generate(cfg, Which::Train, exec)?;
    let valid_path = cmd_generate(cfg, Which::Valid, exec)?;
    let summary = cmd_train(cfg, &train_path, exec)?;
    cmd_evaluate(cfg, &summary.model_path, &train_path, &valid_path, exec)
}
