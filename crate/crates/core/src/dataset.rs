//! Condensed simulation output and its on-disk form.
//!
//! The CSV has header `scenario,t,q0005,q0010,...,q1000` (probability in
//! per-mille) and one row per `(scenario, t)` for `t = 1..=n_steps`, values in
//! 17 significant digits. A `.meta` sidecar holds the generating parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kv::{fingerprint, KvDoc};
use crate::params::ModelParams;
use crate::sim::{quantile_grid, SimConfig, N_QUANTILES};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const DATASET_KIND: &str = "bk2f-percentile-dataset";

#[derive(Debug, Clone, PartialEq)]
pub struct PercentileDataset {
    params: ModelParams,
    sim: SimConfig,
    n_scenarios: usize,
    n_steps: usize,
    /// `[scenario][t - 1][quantile]`, flattened.
    values: Vec<f64>,
    grid: Vec<f64>,
    fingerprint: String,
    params_fingerprint: String,
}

/// Fingerprint of a model parameter set alone.
pub fn params_fingerprint(params: &ModelParams) -> String {
    fingerprint(&params.to_kv("params."))
}

/// Fingerprint of everything that determines a dataset's contents.
pub fn dataset_fingerprint(params: &ModelParams, sim: &SimConfig) -> String {
    let mut kv = params.to_kv("params.");
    kv.extend(sim.to_kv("sim."));
    fingerprint(&kv)
}

impl PercentileDataset {
    pub fn new(params: ModelParams, sim: SimConfig, values: Vec<f64>) -> Result<Self> {
        let n_steps = params.n_steps;
        let expected = sim.n_scenarios * n_steps * N_QUANTILES;
        if values.len() != expected {
            return Err(Error::Shape {
                expected,
                got: values.len(),
            });
        }
        Ok(PercentileDataset {
            fingerprint: dataset_fingerprint(&params, &sim),
            params_fingerprint: params_fingerprint(&params),
            params,
            sim,
            n_scenarios: sim.n_scenarios,
            n_steps,
            values,
            grid: quantile_grid(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn sim_config(&self) -> &SimConfig {
        &self.sim
    }

    pub fn n_scenarios(&self) -> usize {
        self.n_scenarios
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn params_fingerprint(&self) -> &str {
        &self.params_fingerprint
    }

    /// Quantiles of `r` for `scenario` at step `t` (`1..=n_steps`).
    pub fn quantiles(&self, scenario: usize, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.n_steps, "t = {t} out of 1..={}", self.n_steps);
        let start = (scenario * self.n_steps + t - 1) * N_QUANTILES;
        &self.values[start..start + N_QUANTILES]
    }

    /// The `t = 0` level: every quantile equals `r0`.
    pub fn initial_quantiles(&self) -> Vec<f64> {
        vec![self.params.r0; N_QUANTILES]
    }

    /// Copy with scenarios reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_scenarios {
            return Err(Error::Shape {
                expected: self.n_scenarios,
                got: order.len(),
            });
        }
        let block = self.n_steps * N_QUANTILES;
        let mut values = Vec::with_capacity(self.values.len());
        for &s in order {
            values.extend_from_slice(&self.values[s * block..(s + 1) * block]);
        }
        Ok(PercentileDataset {
            values,
            ..self.clone()
        })
    }

    pub fn csv_header() -> String {
        let mut h = String::from("scenario,t");
        for k in 1..=N_QUANTILES {
            write!(h, ",q{:04}", k * 5).unwrap();
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for s in 0..self.n_scenarios {
            for t in 1..=self.n_steps {
                write!(out, "{s},{t}").unwrap();
                for v in self.quantiles(s, t) {
                    write!(out, ",{v:.16e}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn meta(&self) -> KvDoc {
        let mut doc = KvDoc::new("meta");
        doc.set("format", DATASET_KIND);
        doc.set("format_version", DATASET_FORMAT_VERSION.to_string());
        doc.extend(self.params.to_kv("params."));
        doc.extend(self.sim.to_kv("sim."));
        doc.set("master_seed", self.sim.master_seed.to_string());
        doc.set("fingerprint", self.fingerprint.clone());
        doc.set("params_fingerprint", self.params_fingerprint.clone());
        doc
    }

    /// Writes `path` and its `.meta` sidecar; returns the sidecar path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let meta_path = meta_path(path);
        fs::write(&meta_path, self.meta().render()).map_err(|e| Error::io(&meta_path, e))?;
        Ok(meta_path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta_path = meta_path(path);
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta = KvDoc::parse(&meta_text, meta_path.display().to_string())?;
        if meta.get_str("format") != Some(DATASET_KIND) {
            return Err(Error::parse(meta_path.display(), "not a dataset sidecar"));
        }
        let version: u32 = meta.require("format_version")?;
        if version != DATASET_FORMAT_VERSION {
            return Err(Error::parse(
                meta_path.display(),
                format!("unsupported format_version {version}"),
            ));
        }
        let params = ModelParams::from_kv(&meta, "params.")?;
        let sim = SimConfig {
            branch_factor: meta.require("sim.branch_factor")?,
            branch_depth: meta.require("sim.branch_depth")?,
            n_scenarios: meta.require("sim.n_scenarios")?,
            master_seed: meta.require("sim.master_seed")?,
            max_nodes: None,
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds = Self::parse_csv(&text, params, sim, &path.display().to_string())?;
        let recorded: String = meta.require("fingerprint")?;
        if recorded != ds.fingerprint {
            return Err(Error::Fingerprint {
                expected: recorded,
                found: ds.fingerprint,
            });
        }
        Ok(ds)
    }

    fn parse_csv(text: &str, params: ModelParams, sim: SimConfig, origin: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header != Self::csv_header() {
            return Err(Error::parse(origin, "unexpected CSV header"));
        }
        let n_steps = params.n_steps;
        let mut values = Vec::with_capacity(sim.n_scenarios * n_steps * N_QUANTILES);
        let mut row = 0usize;
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let lineno = i + 2;
            let mut fields = line.split(',');
            let s: usize = parse_field(fields.next(), origin, lineno)?;
            let t: usize = parse_field(fields.next(), origin, lineno)?;
            if s != row / n_steps || t != row % n_steps + 1 {
                return Err(Error::parse(
                    origin,
                    format!("line {lineno}: expected scenario {} t {}", row / n_steps, row % n_steps + 1),
                ));
            }
            let before = values.len();
            for f in fields {
                values.push(parse_field::<f64>(Some(f), origin, lineno)?);
            }
            if values.len() - before != N_QUANTILES {
                return Err(Error::parse(
                    origin,
                    format!("line {lineno}: expected {N_QUANTILES} quantile columns"),
                ));
            }
            row += 1;
        }
        if row != sim.n_scenarios * n_steps {
            return Err(Error::parse(
                origin,
                format!("expected {} data rows, found {row}", sim.n_scenarios * n_steps),
            ));
        }
        Self::new(params, sim, values)
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, origin: &str, lineno: usize) -> Result<T> {
    let f = field.ok_or_else(|| Error::parse(origin, format!("line {lineno}: missing field")))?;
    f.trim()
        .parse()
        .map_err(|_| Error::parse(origin, format!("line {lineno}: bad value `{f}`")))
}

/// Sidecar path: same basename with a `.meta` suffix.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}
