//! Branching Euler simulation of the two-factor Black-Karasinski model.
//!
//! Each scenario is a tree rooted at `(r0, m0)`. For the first `branch_depth`
//! steps every node spawns `branch_factor` children, each with its own pair of
//! shocks; after that every node carries on as a single path. Only one level
//! is resident at a time: it is condensed to [`N_QUANTILES`] order statistics
//! before the next level is built.

use crate::dataset::PercentileDataset;
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::par::{self, Exec};
use crate::rng::{ShockStream, MAX_BRANCH_FACTOR, MAX_STEPS};

/// Number of quantiles kept per level: probabilities 0.5%, 1.0%, ..., 100%.
pub const N_QUANTILES: usize = 200;

/// Bytes held per node at peak: parent level, child level, sort buffer.
const BYTES_PER_NODE: u128 = 40;

/// Levels at least this large are expanded in parallel chunks.
const PAR_LEVEL_MIN: usize = 1 << 15;
const PARENTS_PER_CHUNK: usize = 1 << 12;

/// The quantile probabilities `k / 200` for `k = 1..=200`.
pub fn quantile_grid() -> Vec<f64> {
    (1..=N_QUANTILES).map(|k| k as f64 / N_QUANTILES as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub r: f64,
    pub m: f64,
}

/// Log-space state; the simulator never leaves log space except to emit rates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LogNode {
    ln_r: f64,
    ln_m: f64,
}

#[derive(Debug, Clone, Copy)]
struct StepConsts {
    a1_dt: f64,
    a2_dt: f64,
    vol_r: f64,
    vol_m: f64,
    mu_prime: f64,
    rho: f64,
    rho_c: f64,
}

impl StepConsts {
    fn new(p: &ModelParams) -> Self {
        let sqrt_dt = p.dt.sqrt();
        StepConsts {
            a1_dt: p.alpha1 * p.dt,
            a2_dt: p.alpha2 * p.dt,
            vol_r: p.sigma1 * sqrt_dt,
            vol_m: p.sigma2 * sqrt_dt,
            mu_prime: p.mu_prime,
            rho: p.rho_prime,
            rho_c: (1.0 - p.rho_prime * p.rho_prime).sqrt(),
        }
    }

    /// The `r` update reads the pre-update `ln m`.
    #[inline(always)]
    fn step(&self, n: LogNode, z_m: f64, z_r: f64) -> LogNode {
        let z_r = if self.rho == 0.0 {
            z_r
        } else {
            self.rho * z_m + self.rho_c * z_r
        };
        LogNode {
            ln_m: n.ln_m + self.a2_dt * (self.mu_prime - n.ln_m) + self.vol_m * z_m,
            ln_r: n.ln_r + self.a1_dt * (n.ln_m - n.ln_r) + self.vol_r * z_r,
        }
    }
}

/// One exponential Euler step from `node` with standard normal shocks
/// `z_m` (for `m`) and `z_r` (for `r`).
pub fn euler_step(node: NodeState, z_m: f64, z_r: f64, params: &ModelParams) -> NodeState {
    let next = StepConsts::new(params).step(
        LogNode {
            ln_r: node.r.ln(),
            ln_m: node.m.ln(),
        },
        z_m,
        z_r,
    );
    NodeState {
        r: next.ln_r.exp(),
        m: next.ln_m.exp(),
    }
}

/// Zero-shock recursion `r_0, r_1, ..., r_{n_steps}`, bit-identical to what
/// the simulator produces when both volatilities are zero.
pub fn deterministic_path(params: &ModelParams) -> Vec<f64> {
    let consts = StepConsts::new(params);
    let mut node = LogNode {
        ln_r: params.r0.ln(),
        ln_m: params.m0.ln(),
    };
    let mut out = Vec::with_capacity(params.n_steps + 1);
    out.push(node.ln_r.exp());
    for _ in 0..params.n_steps {
        node = consts.step(node, 0.0, 0.0);
        out.push(node.ln_r.exp());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub branch_factor: usize,
    /// Steps that branch; later steps continue each node as a single path.
    pub branch_depth: usize,
    pub n_scenarios: usize,
    pub master_seed: u64,
    /// Refuse to build any level with more nodes than this.
    pub max_nodes: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            branch_factor: 4,
            branch_depth: 8,
            n_scenarios: 500,
            master_seed: 20_240_601,
            max_nodes: Some(DEFAULT_MAX_NODES),
        }
    }
}

/// `4^10` nodes, about 42 MB of working memory per scenario.
pub const DEFAULT_MAX_NODES: u64 = 1 << 20;

impl SimConfig {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.branch_factor < 1 || self.branch_factor > MAX_BRANCH_FACTOR {
            return Err(Error::param(
                "branch_factor",
                format!("must lie in 1..={MAX_BRANCH_FACTOR}"),
            ));
        }
        if self.n_scenarios < 1 {
            return Err(Error::param("n_scenarios", "must be >= 1"));
        }
        if params.n_steps >= MAX_STEPS {
            return Err(Error::param("n_steps", "too many steps for the draw counter"));
        }
        if self.branch_depth > params.n_steps {
            return Err(Error::param(
                "branch_depth",
                format!("must not exceed n_steps = {}", params.n_steps),
            ));
        }
        let nodes = self.level_size();
        if nodes > u32::MAX as u128 {
            return Err(Error::TooLarge {
                level: self.branch_depth,
                nodes,
                bytes: nodes * BYTES_PER_NODE,
                cap: u32::MAX as u64,
            });
        }
        if let Some(cap) = self.max_nodes {
            if nodes > cap as u128 {
                return Err(Error::TooLarge {
                    level: self.branch_depth,
                    nodes,
                    bytes: nodes * BYTES_PER_NODE,
                    cap,
                });
            }
        }
        Ok(())
    }

    /// Nodes at the widest level, `branch_factor ^ branch_depth`.
    pub fn level_size(&self) -> u128 {
        let mut n: u128 = 1;
        for _ in 0..self.branch_depth {
            n = n.saturating_mul(self.branch_factor as u128);
        }
        n
    }

    /// Peak working memory of one scenario, in bytes.
    pub fn memory_estimate(&self) -> u128 {
        self.level_size() * BYTES_PER_NODE
    }

    pub fn to_kv(&self, prefix: &str) -> Vec<(String, String)> {
        vec![
            (format!("{prefix}branch_factor"), self.branch_factor.to_string()),
            (format!("{prefix}branch_depth"), self.branch_depth.to_string()),
            (format!("{prefix}n_scenarios"), self.n_scenarios.to_string()),
            (format!("{prefix}master_seed"), self.master_seed.to_string()),
        ]
    }
}

/// Order statistics at ranks `ceil(k n / 200)`, `k = 1..=200`, of `values`.
/// The last entry is the maximum.
pub fn condense_percentiles(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("cannot condense an empty sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(pick_ranks(&sorted))
}

fn pick_ranks(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    (1..=N_QUANTILES)
        .map(|k| {
            let rank = (k * n).div_ceil(N_QUANTILES);
            sorted[rank - 1]
        })
        .collect()
}

fn sort_in_place(exec: Exec, buf: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && buf.len() >= PAR_LEVEL_MIN {
        use rayon::slice::ParallelSliceMut;
        buf.par_sort_unstable_by(f64::total_cmp);
        return;
    }
    let _ = exec;
    buf.sort_unstable_by(f64::total_cmp);
}

/// Runs one tree and returns `n_steps` quantile vectors of `r` for
/// `t = 1..=n_steps`.
pub fn simulate_scenario(
    params: &ModelParams,
    cfg: &SimConfig,
    scenario_id: u64,
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    cfg.validate(params)?;
    let mut out = Vec::with_capacity(params.n_steps);
    simulate_into(params, cfg, scenario_id, exec, |_, sorted| {
        out.push(condense_sorted(sorted));
    });
    Ok(out)
}

/// Count, mean and sum of squared deviations of `ln r` over a whole level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelMoments {
    pub count: usize,
    pub mean: f64,
    pub sum_sq_dev: f64,
}

/// Moments of `ln r` over every node of every level of one scenario, before
/// condensation. Used to check the simulator itself against the closed form.
pub fn level_log_moments(
    params: &ModelParams,
    cfg: &SimConfig,
    scenario_id: u64,
    exec: Exec,
) -> Result<Vec<LevelMoments>> {
    params.validate()?;
    cfg.validate(params)?;
    let mut out = Vec::with_capacity(params.n_steps);
    simulate_into(params, cfg, scenario_id, exec, |_, sorted| {
        let count = sorted.len();
        let mean = sorted.iter().sum::<f64>() / count as f64;
        let sum_sq_dev = sorted.iter().map(|v| (v - mean) * (v - mean)).sum();
        out.push(LevelMoments {
            count,
            mean,
            sum_sq_dev,
        });
    });
    Ok(out)
}

fn condense_sorted(sorted_ln_r: &[f64]) -> Vec<f64> {
    pick_ranks(sorted_ln_r).into_iter().map(f64::exp).collect()
}

/// Builds the tree level by level, handing each level's sorted `ln r` to `emit`.
fn simulate_into<F: FnMut(usize, &[f64])>(
    params: &ModelParams,
    cfg: &SimConfig,
    scenario_id: u64,
    exec: Exec,
    mut emit: F,
) {
    let consts = StepConsts::new(params);
    let stream = ShockStream::new(cfg.master_seed);
    let widest = cfg.level_size() as usize;
    let mut level = Vec::with_capacity(widest);
    level.push(LogNode {
        ln_r: params.r0.ln(),
        ln_m: params.m0.ln(),
    });
    let mut next: Vec<LogNode> = Vec::with_capacity(widest);
    let mut sort_buf: Vec<f64> = Vec::with_capacity(widest);

    for step in 1..=params.n_steps {
        let fan = if step <= cfg.branch_depth {
            cfg.branch_factor
        } else {
            1
        };
        let parents = level.len();
        next.clear();
        next.resize(parents * fan, level[0]);

        let expand = |chunk_idx: usize, children: &mut [LogNode]| {
            let first_parent = chunk_idx * PARENTS_PER_CHUNK;
            for (offset, kids) in children.chunks_mut(fan).enumerate() {
                let parent = first_parent + offset;
                let node = level[parent];
                for (child, slot) in kids.iter_mut().enumerate() {
                    let (z_m, z_r) = stream.normal_pair(scenario_id, step, parent as u32, child);
                    *slot = consts.step(node, z_m, z_r);
                }
            }
        };
        let inner = if next.len() >= PAR_LEVEL_MIN {
            exec
        } else {
            Exec::Sequential
        };
        par::for_each_chunk_mut(inner, &mut next, PARENTS_PER_CHUNK * fan, expand);

        std::mem::swap(&mut level, &mut next);

        sort_buf.clear();
        sort_buf.extend(level.iter().map(|n| n.ln_r));
        sort_in_place(inner, &mut sort_buf);
        emit(step, &sort_buf);
    }
}

/// Runs every scenario with its own draw stream and assembles the dataset.
/// The result depends only on `params` and `cfg`, not on `exec`.
pub fn generate_dataset(
    params: &ModelParams,
    cfg: &SimConfig,
    exec: Exec,
) -> Result<PercentileDataset> {
    params.validate()?;
    cfg.validate(params)?;
    // Wide trees are parallelised inside the scenario to bound memory.
    let (outer, inner) = if cfg.level_size() >= 1 << 20 {
        (Exec::Sequential, exec)
    } else {
        (exec, Exec::Sequential)
    };
    let per_scenario = par::map_indexed(outer, cfg.n_scenarios, |s| {
        let mut flat = Vec::with_capacity(params.n_steps * N_QUANTILES);
        simulate_into(params, cfg, s as u64, inner, |_, sorted| {
            flat.extend(condense_sorted(sorted))
        });
        flat
    });
    let mut values = Vec::with_capacity(cfg.n_scenarios * params.n_steps * N_QUANTILES);
    for (s, flat) in per_scenario.into_iter().enumerate() {
        if let Some(bad) = flat.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Scenario {
                scenario: s as u64,
                source: Box::new(Error::param(
                    "params",
                    format!("simulated rate left (0, inf): {bad}"),
                )),
            });
        }
        values.extend(flat);
    }
    PercentileDataset::new(*params, *cfg, values)
}
