//! Single-hidden-layer perceptron mapping standardized quantiles at `t` to
//! standardized quantiles at `t + 1`:
//!
//! ```text
//! out = W2 f(W1 g(x) + b1) + b2,   f = logistic,  g = identity | logistic
//! ```
//!
//! Trained by plain mini-batch SGD on squared error with an L2 penalty on the
//! weight matrices. Everything here runs in a fixed order, so a seed fully
//! determines the trained model.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mom::Standardizer;
use crate::sim::N_QUANTILES;

pub const HIDDEN_UNITS: usize = 10;
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_KIND: &str = "bk2f-mlp";

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputActivation {
    #[default]
    Identity,
    Logistic,
}

impl InputActivation {
    pub fn as_str(self) -> &'static str {
        match self {
            InputActivation::Identity => "identity",
            InputActivation::Logistic => "logistic",
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            InputActivation::Identity => x,
            InputActivation::Logistic => logistic(x),
        }
    }
}

impl fmt::Display for InputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(InputActivation::Identity),
            "logistic" => Ok(InputActivation::Logistic),
            other => Err(Error::param(
                "input_activation",
                format!("unknown value `{other}` (expected identity | logistic)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Dims {
    pub const STANDARD: Dims = Dims {
        input: N_QUANTILES,
        hidden: HIDDEN_UNITS,
        output: N_QUANTILES,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Dims,
    /// `hidden x input`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub input_activation: InputActivation,
    /// Fingerprint of the standardization the model was trained under.
    pub scaler_recipe: String,
}

/// Same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros(d: Dims) -> Self {
        Gradients {
            w1: vec![0.0; d.hidden * d.input],
            b1: vec![0.0; d.hidden],
            w2: vec![0.0; d.output * d.hidden],
            b2: vec![0.0; d.output],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl MlpModel {
    pub fn zeros(dims: Dims, input_activation: InputActivation, scaler_recipe: String) -> Self {
        MlpModel {
            dims,
            w1: vec![0.0; dims.hidden * dims.input],
            b1: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.output * dims.hidden],
            b2: vec![0.0; dims.output],
            input_activation,
            scaler_recipe,
        }
    }

    /// Uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(
        dims: Dims,
        input_activation: InputActivation,
        scaler_recipe: String,
        rng: &mut impl Rng,
    ) -> Self {
        let mut m = Self::zeros(dims, input_activation, scaler_recipe);
        let limit = (6.0 / (dims.input + dims.hidden) as f64).sqrt();
        m.w1.iter_mut()
            .for_each(|w| *w = rng.random_range(-limit..limit));
        let limit = (6.0 / (dims.hidden + dims.output) as f64).sqrt();
        m.w2.iter_mut()
            .for_each(|w| *w = rng.random_range(-limit..limit));
        m
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }

    fn hidden(&self, x: &[f64], act_in: &mut [f64], h: &mut [f64]) {
        let d = self.dims;
        for (a, &xi) in act_in.iter_mut().zip(x) {
            *a = self.input_activation.apply(xi);
        }
        for ((hj, row), bj) in h.iter_mut().zip(self.w1.chunks_exact(d.input)).zip(&self.b1) {
            let pre = bj + row.iter().zip(act_in.iter()).map(|(w, a)| w * a).sum::<f64>();
            *hj = logistic(pre);
        }
    }

    fn output(&self, h: &[f64], out: &mut [f64]) {
        let d = self.dims;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.w2[k * d.hidden..(k + 1) * d.hidden];
            *o = self.b2[k] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims;
        if x.len() != d.input {
            return Err(Error::Shape {
                expected: d.input,
                got: x.len(),
            });
        }
        let mut act_in = vec![0.0; d.input];
        let mut h = vec![0.0; d.hidden];
        let mut out = vec![0.0; d.output];
        self.hidden(x, &mut act_in, &mut h);
        self.output(&h, &mut out);
        Ok(out)
    }

    fn weight_norm_sq(&self) -> f64 {
        self.w1.iter().chain(&self.w2).map(|w| w * w).sum()
    }

    fn apply(&mut self, g: &Gradients, lr: f64) {
        fn step(p: &mut [f64], g: &[f64], lr: f64) {
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
        step(&mut self.w1, &g.w1, lr);
        step(&mut self.b1, &g.b1, lr);
        step(&mut self.w2, &g.w2, lr);
        step(&mut self.b2, &g.b2, lr);
    }

    /// Loss and exact gradients over the `rows` of `pairs`.
    fn loss_and_grad(&self, pairs: &TrainingPairs, rows: &[usize], l2: f64) -> (f64, Gradients) {
        let d = self.dims;
        let mut g = Gradients::zeros(d);
        let mut act_in = vec![0.0; d.input];
        let mut h = vec![0.0; d.hidden];
        let mut out = vec![0.0; d.output];
        let mut delta_h = vec![0.0; d.hidden];
        let norm = 1.0 / (rows.len() * d.output) as f64;
        let mut sse = 0.0;
        for &r in rows {
            let (x, y) = (pairs.input(r), pairs.target(r));
            self.hidden(x, &mut act_in, &mut h);
            self.output(&h, &mut out);
            delta_h.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..d.output {
                let err = out[k] - y[k];
                sse += err * err;
                let delta = 2.0 * err * norm;
                g.b2[k] += delta;
                let w_row = &self.w2[k * d.hidden..(k + 1) * d.hidden];
                let g_row = &mut g.w2[k * d.hidden..(k + 1) * d.hidden];
                for j in 0..d.hidden {
                    g_row[j] += delta * h[j];
                    delta_h[j] += delta * w_row[j];
                }
            }
            for j in 0..d.hidden {
                let dh = delta_h[j] * h[j] * (1.0 - h[j]);
                g.b1[j] += dh;
                let g_row = &mut g.w1[j * d.input..(j + 1) * d.input];
                for (gw, a) in g_row.iter_mut().zip(&act_in) {
                    *gw += dh * a;
                }
            }
        }
        if l2 > 0.0 {
            g.w1.iter_mut().zip(&self.w1).for_each(|(g, w)| *g += l2 * w);
            g.w2.iter_mut().zip(&self.w2).for_each(|(g, w)| *g += l2 * w);
        }
        (sse * norm + 0.5 * l2 * self.weight_norm_sq(), g)
    }

    fn loss_rows(&self, pairs: &TrainingPairs, rows: &[usize], l2: f64) -> f64 {
        let d = self.dims;
        let mut act_in = vec![0.0; d.input];
        let mut h = vec![0.0; d.hidden];
        let mut out = vec![0.0; d.output];
        let mut sse = 0.0;
        for &r in rows {
            self.hidden(pairs.input(r), &mut act_in, &mut h);
            self.output(&h, &mut out);
            sse += out
                .iter()
                .zip(pairs.target(r))
                .map(|(o, y)| (o - y) * (o - y))
                .sum::<f64>();
        }
        sse / (rows.len() * d.output) as f64 + 0.5 * l2 * self.weight_norm_sq()
    }
}

/// Mean squared error over every entry of `pairs` plus `l2 |W|^2 / 2`.
pub fn loss(model: &MlpModel, pairs: &TrainingPairs, l2: f64) -> Result<f64> {
    check_pairs(model, pairs)?;
    let rows: Vec<usize> = (0..pairs.len()).collect();
    Ok(model.loss_rows(pairs, &rows, l2))
}

/// Gradient of [`loss`] with respect to every weight and bias.
pub fn backward(model: &MlpModel, pairs: &TrainingPairs, l2: f64) -> Result<Gradients> {
    check_pairs(model, pairs)?;
    let rows: Vec<usize> = (0..pairs.len()).collect();
    Ok(model.loss_and_grad(pairs, &rows, l2).1)
}

fn check_pairs(model: &MlpModel, pairs: &TrainingPairs) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Empty("no training pairs"));
    }
    if pairs.width != model.dims.input || pairs.width != model.dims.output {
        return Err(Error::Shape {
            expected: model.dims.input,
            got: pairs.width,
        });
    }
    Ok(())
}

/// Input/target rows with the `(scenario, t)` each input came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingPairs {
    width: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    pub meta: Vec<(usize, usize)>,
}

impl TrainingPairs {
    pub fn new(width: usize) -> Self {
        TrainingPairs {
            width,
            ..Default::default()
        }
    }

    pub fn push(&mut self, input: &[f64], target: &[f64], scenario: usize, t: usize) -> Result<()> {
        for v in [input, target] {
            if v.len() != self.width {
                return Err(Error::Shape {
                    expected: self.width,
                    got: v.len(),
                });
            }
        }
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        self.meta.push((scenario, t));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input(&self, row: usize) -> &[f64] {
        &self.inputs[row * self.width..(row + 1) * self.width]
    }

    pub fn target(&self, row: usize) -> &[f64] {
        &self.targets[row * self.width..(row + 1) * self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Holdout improvements smaller than this count as stagnation.
    pub tol: f64,
    /// Stagnant epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub l2: f64,
    /// Fraction of scenarios held out for model selection.
    pub holdout_fraction: f64,
    pub input_activation: InputActivation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.3,
            batch_size: 32,
            max_epochs: 200,
            tol: 1e-6,
            patience: 10,
            seed: 7,
            l2: 1e-6,
            holdout_fraction: 0.1,
            input_activation: InputActivation::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if self.max_epochs < 1 {
            return Err(Error::param("max_epochs", "must be >= 1"));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::param("l2", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::param("holdout_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn to_kv(&self, prefix: &str) -> Vec<(String, String)> {
        use crate::params::fmt_f64;
        vec![
            (format!("{prefix}learning_rate"), fmt_f64(self.learning_rate)),
            (format!("{prefix}batch_size"), self.batch_size.to_string()),
            (format!("{prefix}max_epochs"), self.max_epochs.to_string()),
            (format!("{prefix}tol"), fmt_f64(self.tol)),
            (format!("{prefix}patience"), self.patience.to_string()),
            (format!("{prefix}seed"), self.seed.to_string()),
            (format!("{prefix}l2"), fmt_f64(self.l2)),
            (format!("{prefix}holdout_fraction"), fmt_f64(self.holdout_fraction)),
            (format!("{prefix}input_activation"), self.input_activation.to_string()),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    pub holdout_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochStats {
        &self.history[self.best_epoch]
    }
}

/// Splits row indices by scenario: `(train, holdout)`.
fn split_by_scenario(pairs: &TrainingPairs, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut scenarios: Vec<usize> = pairs.meta.iter().map(|m| m.0).collect();
    scenarios.sort_unstable();
    scenarios.dedup();
    let n_hold = if scenarios.len() < 2 {
        0
    } else {
        ((scenarios.len() as f64 * fraction).round() as usize).clamp(usize::from(fraction > 0.0), scenarios.len() - 1)
    };
    scenarios.shuffle(rng);
    let mut held = scenarios[..n_hold].to_vec();
    held.sort_unstable();
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for (row, (s, _)) in pairs.meta.iter().enumerate() {
        if held.binary_search(s).is_ok() {
            hold.push(row);
        } else {
            train.push(row);
        }
    }
    (train, hold)
}

/// Mini-batch SGD; returns the model with the lowest holdout loss.
pub fn train(pairs: &TrainingPairs, cfg: &TrainConfig, scaler_recipe: String) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("no training pairs"));
    }
    let dims = Dims {
        input: pairs.width,
        hidden: HIDDEN_UNITS,
        output: pairs.width,
    };
    train_with_dims(pairs, cfg, dims, scaler_recipe)
}

pub fn train_with_dims(
    pairs: &TrainingPairs,
    cfg: &TrainConfig,
    dims: Dims,
    scaler_recipe: String,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::init(dims, cfg.input_activation, scaler_recipe, &mut rng);
    check_pairs(&model, pairs)?;
    let (mut train_rows, hold_rows) = split_by_scenario(pairs, cfg.holdout_fraction, &mut rng);
    let select_rows = if hold_rows.is_empty() {
        train_rows.clone()
    } else {
        hold_rows
    };

    let mut best = model.clone();
    let mut best_loss = model.loss_rows(pairs, &select_rows, cfg.l2);
    let mut best_epoch = 0;
    let mut stagnant = 0;
    let mut history = Vec::with_capacity(cfg.max_epochs);

    for epoch in 0..cfg.max_epochs {
        train_rows.shuffle(&mut rng);
        let mut running = 0.0;
        let mut batches = 0usize;
        for batch in train_rows.chunks(cfg.batch_size) {
            let (l, g) = model.loss_and_grad(pairs, batch, cfg.l2);
            if !l.is_finite() {
                return Err(Error::Diverged { epoch, loss: l });
            }
            model.apply(&g, cfg.learning_rate);
            running += l;
            batches += 1;
        }
        let holdout_loss = model.loss_rows(pairs, &select_rows, cfg.l2);
        if !holdout_loss.is_finite() || !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: holdout_loss,
            });
        }
        history.push(EpochStats {
            epoch,
            train_loss: running / batches.max(1) as f64,
            holdout_loss,
        });
        if holdout_loss < best_loss - cfg.tol {
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        if holdout_loss < best_loss {
            best_loss = holdout_loss;
            best = model.clone();
            best_epoch = epoch;
        }
        if stagnant >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_epoch,
        history,
    })
}

/// Predicts the quantiles of `r` at `t + 1` from those at `t` through the
/// network, in the standardized space of `standardizer`. Output is not
/// forced to be monotone.
pub fn nn_predict(
    model: &MlpModel,
    prev: &[f64],
    t: usize,
    standardizer: &Standardizer,
) -> Result<Vec<f64>> {
    check_recipe(model, standardizer)?;
    let z = standardizer.standardize(prev, t)?;
    let next = model.forward(&z.values)?;
    standardizer.destandardize(&next, t + 1)
}

pub fn check_recipe(model: &MlpModel, standardizer: &Standardizer) -> Result<()> {
    let expected = standardizer.recipe_fingerprint();
    if model.scaler_recipe != expected {
        return Err(Error::Fingerprint {
            expected,
            found: model.scaler_recipe.clone(),
        });
    }
    Ok(())
}

impl MlpModel {
    /// Flat text form; `extra` lines (e.g. the training config) are kept as
    /// `key value` headers.
    pub fn to_text(&self, extra: &[(String, String)]) -> String {
        let d = self.dims;
        let mut s = String::new();
        writeln!(s, "format {MODEL_KIND}").unwrap();
        writeln!(s, "format_version {MODEL_FORMAT_VERSION}").unwrap();
        writeln!(s, "dims {} {} {}", d.input, d.hidden, d.output).unwrap();
        writeln!(s, "input_activation {}", self.input_activation).unwrap();
        writeln!(s, "scaler {}", self.scaler_recipe).unwrap();
        for (k, v) in extra {
            writeln!(s, "meta {k} {v}").unwrap();
        }
        for i in 0..d.hidden {
            for j in 0..d.input {
                writeln!(s, "W1 {i} {j} {:.16e}", self.w1[i * d.input + j]).unwrap();
            }
        }
        for i in 0..d.hidden {
            writeln!(s, "b1 {i} {:.16e}", self.b1[i]).unwrap();
        }
        for i in 0..d.output {
            for j in 0..d.hidden {
                writeln!(s, "W2 {i} {j} {:.16e}", self.w2[i * d.hidden + j]).unwrap();
            }
        }
        for i in 0..d.output {
            writeln!(s, "b2 {i} {:.16e}", self.b2[i]).unwrap();
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<(Self, Vec<(String, String)>)> {
        let err = |line: usize, msg: &str| Error::parse(origin, format!("line {line}: {msg}"));
        let mut dims = None;
        let mut act = None;
        let mut scaler = None;
        let mut version = None;
        let mut kind_ok = false;
        let mut extra = Vec::new();
        let mut model: Option<MlpModel> = None;
        let mut seen = 0usize;

        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let mut f = raw.split_whitespace();
            let Some(tag) = f.next() else { continue };
            let rest: Vec<&str> = f.collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(n, "bad index"));
            let val = |s: &str| s.parse::<f64>().map_err(|_| err(n, "bad value"));
            match tag {
                "format" => kind_ok = rest == [MODEL_KIND],
                "format_version" => version = rest.first().and_then(|v| v.parse::<u32>().ok()),
                "dims" => {
                    if rest.len() != 3 {
                        return Err(err(n, "dims needs three sizes"));
                    }
                    dims = Some(Dims {
                        input: num(rest[0])?,
                        hidden: num(rest[1])?,
                        output: num(rest[2])?,
                    });
                }
                "input_activation" => act = Some(rest.first().copied().unwrap_or("").parse()?),
                "scaler" => scaler = rest.first().map(|s| s.to_string()),
                "meta" => {
                    if rest.len() == 2 {
                        extra.push((rest[0].to_string(), rest[1].to_string()));
                    }
                }
                "W1" | "b1" | "W2" | "b2" => {
                    if model.is_none() {
                        if !kind_ok {
                            return Err(Error::parse(origin, "not a model file"));
                        }
                        if version != Some(MODEL_FORMAT_VERSION) {
                            return Err(Error::parse(origin, "unsupported format_version"));
                        }
                        let d = dims.ok_or_else(|| err(n, "weights before dims"))?;
                        model = Some(MlpModel::zeros(
                            d,
                            act.unwrap_or_default(),
                            scaler.clone().ok_or_else(|| err(n, "missing scaler line"))?,
                        ));
                    }
                    let m = model.as_mut().unwrap();
                    let d = m.dims;
                    let (slot, idx) = match (tag, rest.len()) {
                        ("W1", 3) => {
                            let (i, j) = (num(rest[0])?, num(rest[1])?);
                            if i >= d.hidden || j >= d.input {
                                return Err(err(n, "index out of range"));
                            }
                            (&mut m.w1, i * d.input + j)
                        }
                        ("W2", 3) => {
                            let (i, j) = (num(rest[0])?, num(rest[1])?);
                            if i >= d.output || j >= d.hidden {
                                return Err(err(n, "index out of range"));
                            }
                            (&mut m.w2, i * d.hidden + j)
                        }
                        ("b1", 2) if num(rest[0])? < d.hidden => (&mut m.b1, num(rest[0])?),
                        ("b2", 2) if num(rest[0])? < d.output => (&mut m.b2, num(rest[0])?),
                        _ => return Err(err(n, "malformed weight record")),
                    };
                    slot[idx] = val(rest[rest.len() - 1])?;
                    seen += 1;
                }
                _ => return Err(err(n, "unknown record")),
            }
        }
        let model = model.ok_or_else(|| Error::parse(origin, "no weights"))?;
        let d = model.dims;
        let expected = d.hidden * d.input + d.hidden + d.output * d.hidden + d.output;
        if seen != expected {
            return Err(Error::parse(
                origin,
                format!("expected {expected} weight records, found {seen}"),
            ));
        }
        if !model.is_finite() {
            return Err(Error::parse(origin, "non-finite weight"));
        }
        Ok((model, extra))
    }

    pub fn write(&self, path: &Path, extra: &[(String, String)]) -> Result<()> {
        fs::write(path, self.to_text(extra)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{EtaSource, ModelParams};

    const MINI: Dims = Dims {
        input: 2,
        hidden: 1,
        output: 2,
    };

    fn mini() -> MlpModel {
        let mut m = MlpModel::zeros(MINI, InputActivation::Identity, "r".into());
        m.w1 = vec![1.0, 0.0];
        m.w2 = vec![1.0, 1.0];
        m
    }

    fn random_model(dims: Dims, act: InputActivation, seed: u64) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::init(dims, act, "r".into(), &mut rng);
        m.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        m.b2.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        m
    }

    fn random_pairs(width: usize, n: usize, seed: u64) -> TrainingPairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = TrainingPairs::new(width);
        for i in 0..n {
            let x: Vec<f64> = (0..width).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..width).map(|_| rng.random_range(-2.0..2.0)).collect();
            p.push(&x, &y, i, 1).unwrap();
        }
        p
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = MlpModel::zeros(Dims::STANDARD, InputActivation::Identity, "r".into());
        let out = m.forward(&[1.5; 200]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn miniature_by_hand() {
        // logistic(0) = 0.5 reaches both outputs through unit weights
        assert_eq!(mini().forward(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn input_activation_modes_differ() {
        let mut a = mini();
        let x = [0.8, -0.3];
        let ya = a.forward(&x).unwrap();
        a.input_activation = InputActivation::Logistic;
        let yb = a.forward(&x).unwrap();
        assert_ne!(ya, yb);
        // logistic(0.8) feeds the hidden unit instead of 0.8
        let expected = logistic(logistic(0.8));
        assert!((yb[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let m = MlpModel::zeros(Dims::STANDARD, InputActivation::Identity, "r".into());
        assert!(matches!(
            m.forward(&[0.0; 199]),
            Err(Error::Shape {
                expected: 200,
                got: 199
            })
        ));
    }

    #[test]
    fn loss_cases() {
        let m = mini();
        let mut pairs = TrainingPairs::new(2);
        let x = [0.4, -1.0];
        pairs.push(&x, &m.forward(&x).unwrap(), 0, 1).unwrap();
        assert_eq!(loss(&m, &pairs, 0.0).unwrap(), 0.0);

        let zero = MlpModel::zeros(MINI, InputActivation::Identity, "r".into());
        let mut zp = TrainingPairs::new(2);
        zp.push(&[1.0, 2.0], &[0.0, 0.0], 0, 1).unwrap();
        assert_eq!(loss(&zero, &zp, 0.0).unwrap(), 0.0);

        // x = (0, 0): outputs (0.5, 0.5); targets (1, -1):
        // ((0.5 - 1)^2 + (0.5 + 1)^2) / 2 = 1.25
        let mut hp = TrainingPairs::new(2);
        hp.push(&[0.0, 0.0], &[1.0, -1.0], 0, 1).unwrap();
        assert!((loss(&m, &hp, 0.0).unwrap() - 1.25).abs() < 1e-15);
        // penalty: |W|^2 = 1 + 1 + 1 = 3, times l2 / 2
        assert!((loss(&m, &hp, 0.1).unwrap() - 1.4).abs() < 1e-15);
        assert!(loss(&m, &TrainingPairs::new(2), 0.0).is_err());
    }

    #[test]
    fn gradient_vanishes_at_exact_fit() {
        let m = random_model(Dims { input: 6, hidden: 3, output: 6 }, InputActivation::Identity, 1);
        let mut pairs = TrainingPairs::new(6);
        for i in 0..5 {
            let x: Vec<f64> = (0..6).map(|k| (i * 6 + k) as f64 * 0.1 - 1.0).collect();
            pairs.push(&x, &m.forward(&x).unwrap(), i, 1).unwrap();
        }
        assert!(backward(&m, &pairs, 0.0).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn l2_shifts_weight_gradients_only() {
        let m = random_model(Dims { input: 4, hidden: 3, output: 4 }, InputActivation::Logistic, 2);
        let pairs = random_pairs(4, 6, 3);
        let g0 = backward(&m, &pairs, 0.0).unwrap();
        let g1 = backward(&m, &pairs, 0.25).unwrap();
        for ((a, b), w) in g0.w1.iter().zip(&g1.w1).zip(&m.w1) {
            assert!((b - a - 0.25 * w).abs() < 1e-15);
        }
        for ((a, b), w) in g0.w2.iter().zip(&g1.w2).zip(&m.w2) {
            assert!((b - a - 0.25 * w).abs() < 1e-15);
        }
        assert_eq!(g0.b1, g1.b1);
        assert_eq!(g0.b2, g1.b2);
    }

    fn finite_difference_check(dims: Dims, act: InputActivation, seed: u64) {
        let m = random_model(dims, act, seed);
        let pairs = random_pairs(dims.input, 7, seed + 1);
        let l2 = 1e-3;
        let g = backward(&m, &pairs, l2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let h = 1e-5;
        for _ in 0..50 {
            let which = rng.random_range(0..4);
            let mut plus = m.clone();
            let mut minus = m.clone();
            let (p, q, analytic) = match which {
                0 => {
                    let i = rng.random_range(0..m.w1.len());
                    (&mut plus.w1[i], &mut minus.w1[i], g.w1[i])
                }
                1 => {
                    let i = rng.random_range(0..m.b1.len());
                    (&mut plus.b1[i], &mut minus.b1[i], g.b1[i])
                }
                2 => {
                    let i = rng.random_range(0..m.w2.len());
                    (&mut plus.w2[i], &mut minus.w2[i], g.w2[i])
                }
                _ => {
                    let i = rng.random_range(0..m.b2.len());
                    (&mut plus.b2[i], &mut minus.b2[i], g.b2[i])
                }
            };
            *p += h;
            *q -= h;
            let numeric =
                (loss(&plus, &pairs, l2).unwrap() - loss(&minus, &pairs, l2).unwrap()) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel <= 1e-6, "param set {which}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [InputActivation::Identity, InputActivation::Logistic] {
            finite_difference_check(MINI, act, 10);
            finite_difference_check(Dims { input: 9, hidden: 4, output: 9 }, act, 20);
        }
    }

    fn linear_task(n_scenarios: usize) -> TrainingPairs {
        // y = A x + c with A of rank 2 on a 12-dimensional space
        let width = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..width).map(|k| (k as f64 * 0.3).sin() * 0.4).collect();
        let v: Vec<f64> = (0..width).map(|k| (k as f64 * 0.7).cos() * 0.4).collect();
        let mut pairs = TrainingPairs::new(width);
        for s in 0..n_scenarios {
            for t in 1..4 {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                let x: Vec<f64> = (0..width).map(|k| a * u[k] + b * v[k]).collect();
                let y: Vec<f64> = (0..width)
                    .map(|k| 0.5 * a * u[k] - 0.8 * b * v[k] + 0.1)
                    .collect();
                pairs.push(&x, &y, s, t).unwrap();
            }
        }
        pairs
    }

    #[test]
    fn learns_a_low_rank_linear_map() {
        let pairs = linear_task(100);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            max_epochs: 500,
            patience: 500,
            l2: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&pairs, &cfg, "r".into()).unwrap();
        assert!(out.best().holdout_loss < 1e-3, "{:?}", out.best());
    }

    #[test]
    fn early_training_loss_does_not_rise() {
        let pairs = linear_task(100);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            max_epochs: 5,
            l2: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&pairs, &cfg, "r".into()).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|e| e.train_loss).collect();
        assert_eq!(losses.len(), 5);
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    }

    #[test]
    fn constant_targets_are_learned() {
        let mut pairs = TrainingPairs::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for s in 0..40 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            pairs.push(&x, &[0.3; 5], s, 1).unwrap();
        }
        let cfg = TrainConfig {
            learning_rate: 0.5,
            max_epochs: 300,
            patience: 300,
            l2: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&pairs, &cfg, "r".into()).unwrap();
        assert!(out.best().holdout_loss < 1e-4, "{:?}", out.best());
        let y = out.model.forward(&[0.0; 5]).unwrap();
        assert!(y.iter().all(|v| (v - 0.3).abs() < 0.02));
    }

    #[test]
    fn training_is_deterministic() {
        let pairs = linear_task(20);
        let cfg = TrainConfig {
            max_epochs: 10,
            ..TrainConfig::default()
        };
        let a = train(&pairs, &cfg, "r".into()).unwrap();
        let b = train(&pairs, &cfg, "r".into()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.model.to_text(&[]), b.model.to_text(&[]));
        let c = train(&pairs, &TrainConfig { seed: 99, ..cfg }, "r".into()).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn divergence_is_reported() {
        let pairs = linear_task(10);
        let cfg = TrainConfig {
            learning_rate: 1e6,
            max_epochs: 50,
            patience: 50,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&pairs, &cfg, "r".into()),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn holdout_is_split_by_scenario() {
        let pairs = linear_task(30);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (train_rows, hold) = split_by_scenario(&pairs, 0.1, &mut rng);
        assert_eq!(hold.len(), 3 * 3);
        assert_eq!(train_rows.len() + hold.len(), pairs.len());
        let held: std::collections::HashSet<usize> = hold.iter().map(|&r| pairs.meta[r].0).collect();
        assert!(train_rows.iter().all(|&r| !held.contains(&pairs.meta[r].0)));
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let m = random_model(Dims::STANDARD, InputActivation::Logistic, 4);
        let extra = vec![("train.seed".to_string(), "7".to_string())];
        let text = m.to_text(&extra);
        let (back, meta) = MlpModel::from_text(&text, "mem").unwrap();
        assert_eq!(back, m);
        assert_eq!(meta, extra);
        let x: Vec<f64> = (0..200).map(|k| (k as f64 - 100.0) / 40.0).collect();
        assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn malformed_model_files_are_rejected() {
        let m = random_model(MINI, InputActivation::Identity, 4);
        let text = m.to_text(&[]);
        let dropped: String = text.lines().filter(|l| !l.starts_with("b2 1")).map(|l| format!("{l}\n")).collect();
        assert!(MlpModel::from_text(&dropped, "x").is_err());
        assert!(MlpModel::from_text(&text.replace("W1 0 1", "W1 5 1"), "x").is_err());
        assert!(MlpModel::from_text(&text.replace("format bk2f-mlp", "format other"), "x").is_err());
        assert!(MlpModel::from_text("", "x").is_err());
    }

    #[test]
    fn zero_net_predicts_the_shift() {
        let p = ModelParams::training();
        let s = Standardizer::new(&p, EtaSource::AsPrinted).unwrap();
        let m = MlpModel::zeros(Dims::STANDARD, InputActivation::Identity, s.recipe_fingerprint());
        let mid: Vec<f64> = (1..=200).map(|k| (k as f64 - 0.5) / 200.0).collect();
        let prev = s.theoretical_quantiles(3, &mid).unwrap();
        let out = nn_predict(&m, &prev, 3, &s).unwrap();
        let c = crate::analytics::phi(p.time(4), &p).exp();
        assert!(out.iter().all(|v| *v == c));
    }

    #[test]
    fn recipe_mismatch_is_rejected() {
        let p = ModelParams::training();
        let s = Standardizer::new(&p, EtaSource::AsPrinted).unwrap();
        let m = MlpModel::zeros(Dims::STANDARD, InputActivation::Identity, "other".into());
        assert!(matches!(
            nn_predict(&m, &[0.03; 200], 3, &s),
            Err(Error::Fingerprint { .. })
        ));
    }
}
