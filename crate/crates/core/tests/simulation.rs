use bk2f::eval::{rmse_by_timestep, MomPredictor, StandardizedData};
use bk2f::sim::level_log_moments;
use bk2f::{derive_g2, generate_dataset, phi, var_s, EtaSource, Exec, ModelParams, SimConfig, Standardizer};

fn config(depth: usize, scenarios: usize, seed: u64) -> SimConfig {
    SimConfig {
        branch_depth: depth,
        n_scenarios: scenarios,
        master_seed: seed,
        ..SimConfig::default()
    }
}

#[test]
fn node_population_variance_tracks_closed_form() {
    let p = ModelParams::training();
    let cfg = config(6, 150, 11);
    let g2 = derive_g2(&p, EtaSource::AsPrinted).unwrap();
    let levels: Vec<_> = (0..cfg.n_scenarios as u64)
        .map(|s| level_log_moments(&p, &cfg, s, Exec::Parallel).unwrap())
        .collect();
    for t in [6usize, 12] {
        let c = phi(p.time(t), &p);
        // per-scenario mean square deviation around phi, one value per cluster
        let per: Vec<f64> = levels
            .iter()
            .map(|l| {
                let m = l[t - 1];
                (m.sum_sq_dev + m.count as f64 * (m.mean - c).powi(2)) / m.count as f64
            })
            .collect();
        let n = per.len() as f64;
        let v = per.iter().sum::<f64>() / n;
        let sd = (per.iter().map(|x| (x - v) * (x - v)).sum::<f64>() / (n - 1.0)).sqrt();
        let theory = var_s(p.time(t), &g2, &p).unwrap();
        let tol = (3.0 * sd / n.sqrt()).max(0.03 * theory);
        assert!((v - theory).abs() <= tol, "t={t}: {v} vs {theory} (tol {tol})");
    }
}

#[test]
fn mom_rmse_is_stable_across_seeds() {
    let p = ModelParams::training();
    let std = Standardizer::new(&p, EtaSource::AsPrinted).unwrap();
    let runs: Vec<Vec<f64>> = (0..5u64)
        .map(|seed| {
            let ds = generate_dataset(&p, &config(4, 120, 1000 + seed), Exec::Parallel).unwrap();
            let z = StandardizedData::new(&ds, &std, Exec::Parallel).unwrap();
            rmse_by_timestep(&MomPredictor, &z, &std, Exec::Parallel).unwrap()
        })
        .collect();
    for (i, t) in (2..=p.n_steps).enumerate() {
        let xs: Vec<f64> = runs.iter().map(|r| r[i]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!(m > 0.0 && sd / m <= 0.20, "t={t}: coefficient of variation {}", sd / m);
    }
}

#[test]
fn execution_mode_does_not_change_the_dataset() {
    let p = ModelParams::validation();
    let cfg = config(5, 12, 3);
    let a = generate_dataset(&p, &cfg, Exec::Sequential).unwrap();
    let b = generate_dataset(&p, &cfg, Exec::Parallel).unwrap();
    for s in 0..cfg.n_scenarios {
        for t in 1..=p.n_steps {
            let (x, y) = (a.quantiles(s, t), b.quantiles(s, t));
            assert!(x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()), "s={s} t={t}");
        }
    }
}
