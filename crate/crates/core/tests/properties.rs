//! Randomized and Monte Carlo checks of estimator-level properties.

use cicmed::cic::{estimate_all, CellModel, Estimand, EstimationOptions, Method};
use cicmed::dataio::{partition_cells, residualize_covariates, Cell, CellPartition, Dataset, Design, ObservationRecord};
use cicmed::diagnostics::{balance_test, pretrend_implication_test};
use cicmed::inference::{cluster_bootstrap, BootstrapConfig, ClusterMode};
use cicmed::simkit::{draw_dgp, run_monte_carlo, true_effects_oracle, Assignment, Coefficients, Link, SimulationDesign};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn partition(seed: u64) -> CellPartition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CellPartition::from_cells(std::array::from_fn(|i| {
        let cell = Cell::all().nth(i).unwrap();
        let n = match (cell.d, cell.m) {
            (true, true) | (false, false) => rng.random_range(15..30),
            (true, false) => rng.random_range(2..15),
            (false, true) => rng.random_range(2..8),
        };
        let loc: f64 = rng.random_range(-3.0..3.0);
        let scale: f64 = rng.random_range(0.2..3.0);
        (0..n)
            .map(|_| loc + scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }))
}

fn opts() -> EstimationOptions {
    EstimationOptions {
        quantiles: vec![0.25, 0.5, 0.75],
        min_share: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decomposition_and_aggregation_hold_for_both_methods(seed in any::<u64>()) {
        let part = partition(seed);
        for method in [Method::ChangesInChanges, Method::MeanShift] {
            let set = estimate_all(&part, method, &opts()).unwrap();
            let a = |e| set.average(e).unwrap();
            let total = a(Estimand::TotalComplier);
            prop_assert!((total - a(Estimand::ThetaComplier1) - a(Estimand::DeltaComplier0)).abs() < 1e-10);
            prop_assert!((total - a(Estimand::ThetaComplier0) - a(Estimand::DeltaComplier1)).abs() < 1e-10);
            let s = set.shares;
            let agg = s.p_n * a(Estimand::ThetaNever) + s.p_a * a(Estimand::ThetaAlways) + s.p_c * total;
            prop_assert!((agg - a(Estimand::Ate)).abs() < 1e-10, "{agg} vs {}", a(Estimand::Ate));
        }
    }
}

#[test]
fn record_order_never_changes_estimates() {
    let design = SimulationDesign::new(Link::Exponential, Assignment::Random, 600, 1, 3).unwrap();
    let data = draw_dgp(&design, 0).unwrap();
    let reference = estimate_all(&partition_cells(&data), Method::ChangesInChanges, &opts()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let mut records = data.records().to_vec();
        records.shuffle(&mut rng);
        let shuffled = Dataset::new(records, data.design()).unwrap();
        let set = estimate_all(&partition_cells(&shuffled), Method::ChangesInChanges, &opts()).unwrap();
        for ((_, a), (_, b)) in reference.effects.iter().zip(&set.effects) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            assert_eq!(a.average.to_bits(), b.average.to_bits());
            assert_eq!(a.quantiles, b.quantiles);
        }
    }
}

#[test]
fn zero_effect_design_gives_zero_estimates() {
    let zero = Coefficients {
        intercept: 0.0,
        d: 0.0,
        m: 0.0,
        dm: 0.0,
    };
    let design = SimulationDesign::new(Link::Identity, Assignment::Random, 2000, 100, 5).unwrap().with_coefficients(zero);
    let truth = true_effects_oracle(&design, 1_000_000).unwrap();
    assert!(truth.effects.iter().all(|&(_, v)| v == 0.0));
    let report = &run_monte_carlo(&design, &truth, &[Method::ChangesInChanges]).unwrap()[0];
    for row in &report.rows {
        let mc_se = row.sd / (row.ok as f64).sqrt();
        assert!(row.bias.abs() < 4.0 * mc_se + 0.01, "{}: bias {} (mc se {mc_se})", row.tag, row.bias);
    }
}

#[test]
fn mc_standard_error_shrinks_with_replications() {
    let base = SimulationDesign::new(Link::Identity, Assignment::Random, 1000, 100, 11).unwrap();
    let truth = true_effects_oracle(&base, 1_000_000).unwrap();
    let se = |reps: usize| {
        let design = SimulationDesign { reps, ..base };
        let report = &run_monte_carlo(&design, &truth, &[Method::ChangesInChanges]).unwrap()[0];
        let row = report.row(Estimand::ThetaNever).unwrap();
        row.sd / (row.ok as f64).sqrt()
    };
    let (small, large) = (se(100), se(400));
    // four times the replications halves the standard error of the bias
    let ratio = small / large;
    assert!((ratio - 2.0).abs() < 0.6, "ratio {ratio}");
}

fn linear_sample(seed: u64, n: usize) -> Dataset {
    let design = SimulationDesign::new(Link::Identity, Assignment::Random, n, 1, seed).unwrap();
    draw_dgp(&design, 0).unwrap()
}

#[test]
fn normal_intervals_cover_never_taker_effect() {
    const RUNS: u64 = 200;
    let hits: usize = (0..RUNS)
        .into_par_iter()
        .map(|run| {
            let data = linear_sample(1000 + run, 1000);
            let estimator = |s: &Dataset| {
                let model = CellModel::new(&partition_cells(s), Method::ChangesInChanges)?;
                Ok(vec![model.never_taker_effects(&[])?.average])
            };
            let cfg = BootstrapConfig::new(199, run, ClusterMode::Cluster).unwrap();
            let r = &cluster_bootstrap(&data, estimator, &cfg).unwrap()[0];
            usize::from((r.point - 1.0).abs() <= 1.959964 * r.se)
        })
        .sum();
    let coverage = hits as f64 / RUNS as f64;
    assert!((0.90..=0.98).contains(&coverage), "coverage {coverage}");
}

#[test]
fn pre_period_diagnostics_hold_their_size() {
    const RUNS: u64 = 500;
    let rejections: Vec<(usize, usize)> = (0..RUNS)
        .into_par_iter()
        .map(|run| {
            let data = linear_sample(50_000 + run, 1000);
            let balance = balance_test(&data, 0).unwrap();
            let pretrend = pretrend_implication_test(&data).unwrap();
            (usize::from(balance.p_value < 0.05), usize::from(pretrend.p_value < 0.05))
        })
        .collect();
    let rate = |f: fn(&(usize, usize)) -> usize| rejections.iter().map(f).sum::<usize>() as f64 / RUNS as f64;
    let (balance, pretrend) = (rate(|r| r.0), rate(|r| r.1));
    assert!((0.03..=0.08).contains(&balance), "balance size {balance}");
    assert!((0.03..=0.08).contains(&pretrend), "pretrend size {pretrend}");
}

#[test]
fn residualizing_on_cell_constant_covariates_keeps_cell_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut records = Vec::new();
    for id in 0..400 {
        let (d, m, t) = (id % 2 == 0, id % 4 < 2, id % 8 < 4);
        let x = 1.5 * d as u8 as f64 - 0.7 * m as u8 as f64 + 0.3 * t as u8 as f64;
        let y = x + rng.sample::<f64, _>(StandardNormal);
        records.push(ObservationRecord::new(id, y, d, m, t).with_covariates(vec![x, (d && t) as u8 as f64]));
    }
    let data = Dataset::new(records, Design::RepeatedCrossSection).unwrap();
    let adjusted = residualize_covariates(&data).unwrap();
    for cell in Cell::all() {
        let rank = |ds: &Dataset| {
            let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.records()[i].cell() == cell).collect();
            idx.sort_by(|&a, &b| ds.records()[a].y.total_cmp(&ds.records()[b].y));
            idx
        };
        assert_eq!(rank(&data), rank(&adjusted));
    }
}

#[test]
fn uncorrelated_covariate_barely_moves_cell_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let records: Vec<ObservationRecord> = (0..40_000)
        .map(|id| {
            let (d, m, t) = (id % 2 == 0, id % 4 < 2, id % 8 < 4);
            let y = d as u8 as f64 + m as u8 as f64 + rng.sample::<f64, _>(StandardNormal);
            let x: f64 = rng.sample(StandardNormal);
            ObservationRecord::new(id, y, d, m, t).with_covariates(vec![x])
        })
        .collect();
    let data = Dataset::new(records, Design::RepeatedCrossSection).unwrap();
    let adjusted = residualize_covariates(&data).unwrap();
    let (before, after) = (partition_cells(&data), partition_cells(&adjusted));
    for cell in Cell::all() {
        let mean = |p: &CellPartition| p.values(cell).iter().sum::<f64>() / p.count(cell) as f64;
        assert!((mean(&before) - mean(&after)).abs() < 0.03, "{cell:?}");
    }
}
