//! Estimators and the simulation oracle checked against independent
//! references: closed-form quantile maps, one-dimensional quadrature of the
//! true effects and exhaustive rank tables.

use cicmed::cic::{estimate_all, CellModel, Estimand, EstimationOptions, Method};
use cicmed::dataio::{partition_cells, Cell, CellPartition};
use cicmed::edist::{EmpiricalDistribution, QqTransform};
use cicmed::simkit::{draw_dgp, true_effects_oracle, Assignment, Link, SimulationDesign, MIN_ORACLE_DRAWS};
use statrs::distribution::{ContinuousCDF, Normal};

fn phi(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Composite Simpson rule on [-1, 1] with U's density 1/2.
fn expect_u(f: impl Fn(f64) -> f64) -> f64 {
    let n = 20_000;
    let h = 2.0 / n as f64;
    let mut s = f(-1.0) + f(1.0);
    for i in 1..n {
        let u = -1.0 + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(u);
    }
    s * h / 3.0 * 0.5
}

fn conditional_mean(effect: impl Fn(f64) -> f64, weight: impl Fn(f64) -> f64) -> f64 {
    expect_u(|u| effect(u) * weight(u)) / expect_u(&weight)
}

fn never(u: f64) -> f64 {
    phi(-1.0 - u)
}
fn always(u: f64) -> f64 {
    phi(u)
}
fn complier(u: f64) -> f64 {
    1.0 - never(u) - always(u)
}
fn y(index: f64, u: f64) -> f64 {
    (index + u).exp()
}

// Reference values computed once with adaptive quadrature in double
// precision and frozen here.
const FROZEN_THETA_N: f64 = 3.492_732_840;
const FROZEN_THETA_A: f64 = 68.065_794_029;
const FROZEN_DELTA_C: f64 = 52.482_987_612;
const FROZEN_THETA_C1: f64 = 47.757_914_156;
const FROZEN_THETA_C0: f64 = 4.725_073_456;
const FROZEN_P_N: f64 = 0.195_225_789;
const FROZEN_SELECTIVE_THETA_10: f64 = 4.402_736_696;
const FROZEN_SELECTIVE_THETA_01: f64 = 54.156_211_115;

#[test]
fn quadrature_reproduces_frozen_truths() {
    let checks = [
        (conditional_mean(|u| y(2.0, u) - y(1.0, u), never), FROZEN_THETA_N),
        (conditional_mean(|u| y(4.0, u) - y(2.0, u), always), FROZEN_THETA_A),
        (conditional_mean(|u| y(4.0, u) - y(1.0, u), complier), FROZEN_DELTA_C),
        (conditional_mean(|u| y(4.0, u) - y(2.0, u), complier), FROZEN_THETA_C1),
        (conditional_mean(|u| y(2.0, u) - y(1.0, u), complier), FROZEN_THETA_C0),
        (expect_u(never), FROZEN_P_N),
        (
            conditional_mean(|u| y(2.0, u) - y(1.0, u), |u| never(u) * phi(u)),
            FROZEN_SELECTIVE_THETA_10,
        ),
        (
            conditional_mean(|u| y(4.0, u) - y(2.0, u), |u| always(u) * phi(-u)),
            FROZEN_SELECTIVE_THETA_01,
        ),
    ];
    for (got, frozen) in checks {
        assert!((got - frozen).abs() < 1e-6 * frozen, "{got} vs {frozen}");
    }
}

#[test]
fn brute_force_oracle_matches_quadrature() {
    let design = SimulationDesign::new(Link::Exponential, Assignment::Random, 1000, 1, 17).unwrap();
    let truth = true_effects_oracle(&design, 4 * MIN_ORACLE_DRAWS).unwrap();
    let expect = [
        (Estimand::ThetaNever, FROZEN_THETA_N),
        (Estimand::ThetaAlways, FROZEN_THETA_A),
        (Estimand::TotalComplier, FROZEN_DELTA_C),
        (Estimand::ThetaComplier1, FROZEN_THETA_C1),
        (Estimand::ThetaComplier0, FROZEN_THETA_C0),
        (Estimand::DeltaComplier1, FROZEN_THETA_C1),
        (Estimand::DeltaComplier0, FROZEN_THETA_C0),
        (Estimand::Theta10, FROZEN_THETA_N),
        (Estimand::Theta01, FROZEN_THETA_A),
    ];
    for (e, v) in expect {
        let got = truth.get(e).unwrap();
        assert!((got - v).abs() < 0.005 * v, "{e}: {got} vs {v}");
    }
    assert!((truth.p_n - FROZEN_P_N).abs() < 2e-3);
    assert!((truth.p_a - 0.5).abs() < 2e-3);
}

#[test]
fn selective_oracle_conditions_on_treatment() {
    let design = SimulationDesign::new(Link::Exponential, Assignment::Selective, 1000, 1, 17).unwrap();
    let truth = true_effects_oracle(&design, 4 * MIN_ORACLE_DRAWS).unwrap();
    let t10 = truth.get(Estimand::Theta10).unwrap();
    let t01 = truth.get(Estimand::Theta01).unwrap();
    assert!((t10 - FROZEN_SELECTIVE_THETA_10).abs() < 0.01 * FROZEN_SELECTIVE_THETA_10, "{t10}");
    assert!((t01 - FROZEN_SELECTIVE_THETA_01).abs() < 0.01 * FROZEN_SELECTIVE_THETA_01, "{t01}");
    // stratum effects do not depend on how treatment is assigned
    let tn = truth.get(Estimand::ThetaNever).unwrap();
    assert!((tn - FROZEN_THETA_N).abs() < 0.005 * FROZEN_THETA_N);
}

#[test]
fn quantile_map_recovers_unit_shift() {
    // identity link, cell (0, 0): Y0 = U and Y1 = 1 + U for the same units
    let design = SimulationDesign::new(Link::Identity, Assignment::Random, 100_000, 1, 3).unwrap();
    let part = partition_cells(&draw_dgp(&design, 0).unwrap());
    let f0 = EmpiricalDistribution::new(part.values(Cell::new(false, false, false)).to_vec()).unwrap();
    let f1 = EmpiricalDistribution::new(part.values(Cell::new(false, false, true)).to_vec()).unwrap();
    let qq = QqTransform::new(&f0, &f1);
    for y in [-0.8, -0.5, -0.1, 0.0, 0.3, 0.7] {
        assert!((qq.apply(y) - (y + 1.0)).abs() < 0.02, "{y} -> {}", qq.apply(y));
    }
}

#[test]
fn identity_design_complier_curves() {
    let design = SimulationDesign::new(Link::Identity, Assignment::Random, 100_000, 1, 5).unwrap();
    let part = partition_cells(&draw_dgp(&design, 0).unwrap());
    let opts = EstimationOptions::default();
    let set = estimate_all(&part, Method::ChangesInChanges, &opts).unwrap();
    let total = set.get(Estimand::TotalComplier).unwrap();
    for &(q, v) in &total.quantiles {
        assert!((v - 3.0).abs() < 0.15, "Delta_c({q}) = {v}");
    }
    // complier U has a closed-form median: solve P(U <= x | complier) = 1/2
    let model = CellModel::new(&part, Method::ChangesInChanges).unwrap();
    let cdf = model.complier_cdf(false, false).unwrap();
    let median = cdf.invert(0.5).unwrap().value - 1.0;
    let mass = |x: f64| {
        let n = 4000;
        let h = (x + 1.0) / n as f64;
        (0..n).map(|i| complier(-1.0 + (i as f64 + 0.5) * h) * h / 2.0).sum::<f64>()
    };
    let total_mass = mass(1.0);
    let (mut lo, mut hi) = (-1.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < 0.5 * total_mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((median - lo).abs() < 0.05, "{median} vs {lo}");
}

/// All multisets of `size` values from `alphabet`, sorted.
fn multisets(alphabet: &[f64], size: usize) -> Vec<Vec<f64>> {
    if size == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for (i, &a) in alphabet.iter().enumerate() {
        for mut rest in multisets(&alphabet[i..], size - 1) {
            rest.insert(0, a);
            out.push(rest);
        }
    }
    out
}

/// Quantile map from rank counts in integer arithmetic: the smallest
/// period-1 order statistic `j` with `j / n1 >= max(k, 1) / n0`.
fn rank_table_map(period0: &[f64], period1: &[f64], y: f64) -> f64 {
    let (n0, n1) = (period0.len(), period1.len());
    let k = period0.iter().filter(|&&x| x <= y).count().max(1);
    let j = (1..=n1).find(|&j| j * n0 >= k * n1).unwrap();
    period1[j - 1]
}

#[test]
fn quantile_map_matches_rank_tables() {
    let alphabet = [0.0, 1.0, 2.5, 4.0];
    let queries = [-1.0, 0.0, 0.5, 1.0, 2.0, 2.5, 3.0, 4.0, 5.0];
    let mut samples = Vec::new();
    for size in 1..=6 {
        samples.extend(multisets(&alphabet, size));
    }
    let mut checked = 0usize;
    for p0 in &samples {
        let f0 = EmpiricalDistribution::new(p0.clone()).unwrap();
        for p1 in &samples {
            let f1 = EmpiricalDistribution::new(p1.iter().map(|v| 10.0 + v).collect()).unwrap();
            let qq = QqTransform::new(&f0, &f1);
            for &y in &queries {
                assert_eq!(qq.apply(y), rank_table_map(f0.values(), f1.values(), y), "{p0:?} {p1:?} {y}");
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 209 * 209 * queries.len());
}

#[test]
fn mean_shift_counterfactual_in_closed_form() {
    let mut cells: [Vec<f64>; 8] = Default::default();
    for cell in Cell::all() {
        cells[cell.index()] = (0..5).map(|i| i as f64 + 10.0 * cell.d as u8 as f64 + 3.0 * cell.t as u8 as f64 * (1.0 + cell.m as u8 as f64)).collect();
    }
    let part = CellPartition::from_cells(cells);
    let model = CellModel::new(&part, Method::MeanShift).unwrap();
    // counterfactual of (1, 1) moves its period-0 sample by the (0, 1) trend of 6
    let cf = model.counterfactual(true, true).unwrap();
    assert_eq!(cf.values(), &[16.0, 17.0, 18.0, 19.0, 20.0]);
}
