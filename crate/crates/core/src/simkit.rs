//! Simulation designs with known effects, a brute-force truth oracle and a
//! Monte Carlo harness.
//!
//! Structural model, for `T, D ~ Bernoulli(0.5)`, `U ~ Unif(-1, 1)` and
//! `V ~ N(0, 1)`:
//!
//! ```text
//! M   = 1{D + U + V > 0}
//! Y_T = link((b0 + bd*D + bm*M + bdm*D*M) * T + U)
//! ```
//!
//! With selective assignment `D = 1{U + Q > 0}`, `Q ~ N(0, 1)`. Compliers
//! have `U + V <= 0 < 1 + U + V`, always-takers `U + V > 0` and never-takers
//! `1 + U + V <= 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::cic::{estimate_all, Estimand, EstimationOptions, Method};
use crate::dataio::{partition_cells, Dataset, Design, ObservationRecord};
use crate::error::{Error, Result};

pub const MIN_SAMPLE_SIZE: usize = 100;
pub const MIN_ORACLE_DRAWS: usize = 1_000_000;

const ORACLE_CHUNK: usize = 1 << 16;
// keeps oracle draws apart from the data draws of the same seed
const ORACLE_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Exponential,
}

impl Link {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Exponential => x.exp(),
        }
    }

    /// `link(a + u) - link(b + u)`; exact for the identity link.
    pub fn contrast(self, a: f64, b: f64, u: f64) -> f64 {
        match self {
            Link::Identity => a - b,
            Link::Exponential => (a + u).exp() - (b + u).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Random,
    Selective,
}

/// Coefficients of the period-1 index `b0 + bd*D + bm*M + bdm*D*M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficients {
    pub intercept: f64,
    pub d: f64,
    pub m: f64,
    pub dm: f64,
}

impl Default for Coefficients {
    fn default() -> Self {
        Coefficients {
            intercept: 1.0,
            d: 1.0,
            m: 1.0,
            dm: 1.0,
        }
    }
}

impl Coefficients {
    pub fn index(&self, d: bool, m: bool) -> f64 {
        let (d, m) = (d as u8 as f64, m as u8 as f64);
        self.intercept + self.d * d + self.m * m + self.dm * d * m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationDesign {
    pub link: Link,
    pub assignment: Assignment,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub coefficients: Coefficients,
}

impl SimulationDesign {
    pub fn new(link: Link, assignment: Assignment, n: usize, reps: usize, seed: u64) -> Result<Self> {
        let design = SimulationDesign {
            link,
            assignment,
            n,
            reps,
            seed,
            coefficients: Coefficients::default(),
        };
        design.validate()?;
        Ok(design)
    }

    pub fn with_coefficients(mut self, coefficients: Coefficients) -> Self {
        self.coefficients = coefficients;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_SAMPLE_SIZE {
            return Err(Error::InvalidConfig(format!("sample size must be at least {MIN_SAMPLE_SIZE}")));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("at least one replication is required".into()));
        }
        let c = &self.coefficients;
        if ![c.intercept, c.d, c.m, c.dm].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig("coefficients must be finite".into()));
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One repeated-cross-section sample: every unit is its own cluster and is
/// observed only in its drawn period. Fails only when a cell is empty,
/// which is possible at small `n`.
pub fn draw_dgp(design: &SimulationDesign, rep: usize) -> Result<Dataset> {
    design.validate()?;
    let mut rng = stream_rng(design.seed, rep as u64);
    let records = (0..design.n)
        .map(|i| {
            let u: f64 = rng.random_range(-1.0..1.0);
            let v: f64 = rng.sample(StandardNormal);
            let t = rng.random_bool(0.5);
            let d = match design.assignment {
                Assignment::Random => rng.random_bool(0.5),
                Assignment::Selective => u + rng.sample::<f64, _>(StandardNormal) > 0.0,
            };
            let m = d as u8 as f64 + u + v > 0.0;
            let index = if t { design.coefficients.index(d, m) } else { 0.0 };
            ObservationRecord::new(i, design.link.apply(index + u), d, m, t)
        })
        .collect();
    Dataset::new(records, Design::RepeatedCrossSection)
}

/// True effects of a design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthTable {
    pub p_a: f64,
    pub p_c: f64,
    pub p_n: f64,
    pub effects: Vec<(Estimand, f64)>,
}

impl TruthTable {
    pub fn get(&self, estimand: Estimand) -> Option<f64> {
        self.effects.iter().find(|(e, _)| *e == estimand).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    sum: f64,
    n: u64,
}

impl Acc {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn merge(&mut self, other: Acc) {
        self.sum += other.sum;
        self.n += other.n;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }
}

// never, always, complier x {total, theta1, theta0, delta1, delta0},
// cells 10, 00, 01, 11, population ATE
const N_ACC: usize = 12;

fn oracle_chunk(design: &SimulationDesign, chunk: usize, draws: usize) -> [Acc; N_ACC] {
    let mut rng = stream_rng(design.seed, ORACLE_STREAM_BASE + chunk as u64);
    let mut acc = [Acc::default(); N_ACC];
    let b = &design.coefficients;
    let link = design.link;
    let c = |dd: bool, md: bool, dn: bool, mn: bool, u: f64| link.contrast(b.index(dd, md), b.index(dn, mn), u);
    for _ in 0..draws {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.sample(StandardNormal);
        let d = match design.assignment {
            Assignment::Random => rng.random_bool(0.5),
            Assignment::Selective => u + rng.sample::<f64, _>(StandardNormal) > 0.0,
        };
        let m0 = u + v > 0.0;
        let m1 = 1.0 + u + v > 0.0;
        let direct_m0 = c(true, m0, false, m0, u);
        let direct_m1 = c(true, m1, false, m1, u);
        match (m0, m1) {
            (false, false) => acc[0].push(direct_m0),
            (true, true) => acc[1].push(direct_m0),
            _ => {
                acc[2].push(c(true, true, false, false, u));
                acc[3].push(c(true, true, false, true, u));
                acc[4].push(c(true, false, false, false, u));
                acc[5].push(c(true, true, true, false, u));
                acc[6].push(c(false, true, false, false, u));
            }
        }
        // realized cell (D, M(D)), direct effect at the realized mediator
        let (m, direct) = if d { (m1, direct_m1) } else { (m0, direct_m0) };
        let slot = match (d, m) {
            (true, false) => 7,
            (false, false) => 8,
            (false, true) => 9,
            (true, true) => 10,
        };
        acc[slot].push(direct);
        acc[11].push(c(true, m1, false, m0, u));
    }
    acc
}

/// Brute-force true effects from `draws` simulated units. Stratum effects
/// are unconditional; the cell-conditional effects condition on the
/// realized treatment, which matters under selective assignment.
pub fn true_effects_oracle(design: &SimulationDesign, draws: usize) -> Result<TruthTable> {
    if draws < MIN_ORACLE_DRAWS {
        return Err(Error::InvalidConfig(format!("oracle needs at least {MIN_ORACLE_DRAWS} draws")));
    }
    let chunks = draws.div_ceil(ORACLE_CHUNK);
    let parts: Vec<[Acc; N_ACC]> = (0..chunks)
        .into_par_iter()
        .map(|k| oracle_chunk(design, k, ORACLE_CHUNK.min(draws - k * ORACLE_CHUNK)))
        .collect();
    let mut acc = [Acc::default(); N_ACC];
    for p in parts {
        for (a, b) in acc.iter_mut().zip(p) {
            a.merge(b);
        }
    }
    let total = draws as f64;
    let order = [
        Estimand::ThetaNever,
        Estimand::ThetaAlways,
        Estimand::TotalComplier,
        Estimand::ThetaComplier1,
        Estimand::ThetaComplier0,
        Estimand::DeltaComplier1,
        Estimand::DeltaComplier0,
        Estimand::Theta10,
        Estimand::Theta00,
        Estimand::Theta01,
        Estimand::Theta11,
        Estimand::Ate,
    ];
    Ok(TruthTable {
        p_n: acc[0].n as f64 / total,
        p_a: acc[1].n as f64 / total,
        p_c: acc[2].n as f64 / total,
        effects: order.iter().zip(&acc).map(|(&e, a)| (e, a.mean())).collect(),
    })
}

/// Estimands tabulated by default.
pub const REPORTED_ESTIMANDS: [Estimand; 9] = [
    Estimand::ThetaNever,
    Estimand::ThetaAlways,
    Estimand::TotalComplier,
    Estimand::ThetaComplier1,
    Estimand::ThetaComplier0,
    Estimand::DeltaComplier1,
    Estimand::DeltaComplier0,
    Estimand::Theta10,
    Estimand::Theta01,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloRow {
    pub estimand: Estimand,
    pub tag: &'static str,
    pub truth: f64,
    pub bias: f64,
    /// Standard deviation across replications (denominator R).
    pub sd: f64,
    pub rmse: f64,
    /// `rmse / |truth|`, absent when the truth is zero.
    pub relr: Option<f64>,
    pub ok: usize,
    pub failures: usize,
    #[serde(skip)]
    pub estimates: Vec<f64>,
}

impl MonteCarloRow {
    fn from_estimates(estimand: Estimand, truth: f64, estimates: Vec<f64>, failures: usize) -> Self {
        let r = estimates.len() as f64;
        let (bias, sd, rmse) = if estimates.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mean = estimates.iter().sum::<f64>() / r;
            let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r;
            let mse = estimates.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / r;
            (mean - truth, var.sqrt(), mse.sqrt())
        };
        MonteCarloRow {
            estimand,
            tag: estimand.tag(),
            truth,
            bias,
            sd,
            rmse,
            relr: (truth != 0.0).then(|| rmse / truth.abs()),
            ok: estimates.len(),
            failures,
            estimates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub method: Method,
    pub design: SimulationDesign,
    pub rows: Vec<MonteCarloRow>,
}

impl MonteCarloReport {
    pub fn row(&self, estimand: Estimand) -> Option<&MonteCarloRow> {
        self.rows.iter().find(|r| r.estimand == estimand)
    }

    pub fn to_tsv(&self) -> String {
        let method = match self.method {
            Method::ChangesInChanges => "cic",
            Method::MeanShift => "did",
        };
        let mut out = String::from("method\testimand\ttrue\tbias\tsd\trmse\trelr\tfailures\n");
        for r in &self.rows {
            let relr = r.relr.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!(
                "{method}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{relr}\t{}\n",
                r.tag, r.truth, r.bias, r.sd, r.rmse, r.failures
            ));
        }
        out
    }
}

/// Runs `design.reps` replications; every method in `methods` is applied to
/// the same simulated samples. A replication whose sample cannot be
/// partitioned counts as a failure for every estimand.
pub fn run_monte_carlo(design: &SimulationDesign, truth: &TruthTable, methods: &[Method]) -> Result<Vec<MonteCarloReport>> {
    design.validate()?;
    if design.reps == 1 {
        log::warn!("a single replication gives zero standard deviations");
    }
    let opts = EstimationOptions {
        quantiles: Vec::new(),
        ..EstimationOptions::default()
    };
    // per replication, per method, per reported estimand
    let results: Vec<Vec<Vec<Option<f64>>>> = (0..design.reps)
        .into_par_iter()
        .map(|rep| {
            let part = match draw_dgp(design, rep) {
                Ok(data) => partition_cells(&data),
                Err(e) => {
                    log::debug!("replication {rep}: {e}");
                    return vec![vec![None; REPORTED_ESTIMANDS.len()]; methods.len()];
                }
            };
            methods
                .iter()
                .map(|&method| match estimate_all(&part, method, &opts) {
                    Ok(set) => REPORTED_ESTIMANDS.iter().map(|&e| set.average(e)).collect(),
                    Err(e) => {
                        log::debug!("replication {rep}: {e}");
                        vec![None; REPORTED_ESTIMANDS.len()]
                    }
                })
                .collect()
        })
        .collect();

    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let rows = REPORTED_ESTIMANDS
                .iter()
                .enumerate()
                .map(|(j, &e)| {
                    let est: Vec<f64> = results.iter().filter_map(|r| r[k][j]).collect();
                    let failures = design.reps - est.len();
                    let t = truth.get(e).expect("oracle covers every estimand");
                    MonteCarloRow::from_estimates(e, t, est, failures)
                })
                .collect();
            MonteCarloReport {
                method,
                design: *design,
                rows,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(link: Link, assignment: Assignment, n: usize, reps: usize) -> SimulationDesign {
        SimulationDesign::new(link, assignment, n, reps, 42).unwrap()
    }

    #[test]
    fn design_validation() {
        assert!(SimulationDesign::new(Link::Identity, Assignment::Random, 99, 1, 0).is_err());
        assert!(SimulationDesign::new(Link::Identity, Assignment::Random, 100, 0, 0).is_err());
        assert!(SimulationDesign::new(Link::Identity, Assignment::Random, 100, 1, 0).is_ok());
    }

    #[test]
    fn draw_marginals() {
        let d = design(Link::Identity, Assignment::Random, 100_000, 1);
        let data = draw_dgp(&d, 0).unwrap();
        let n = data.len() as f64;
        let mean = |f: fn(&ObservationRecord) -> bool| data.records().iter().filter(|r| f(r)).count() as f64 / n;
        assert!((mean(|r| r.d) - 0.5).abs() < 0.01);
        assert!((mean(|r| r.t) - 0.5).abs() < 0.01);
        assert_eq!(data.n_clusters(), 100_000);
        // period 0 outcome is U in every cell
        for r in data.records().iter().filter(|r| !r.t) {
            assert!(r.y > -1.0 && r.y < 1.0);
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let d = design(Link::Exponential, Assignment::Selective, 500, 1);
        let a = draw_dgp(&d, 3).unwrap();
        let b = draw_dgp(&d, 3).unwrap();
        let c = draw_dgp(&d, 4).unwrap();
        assert_eq!(a.records(), b.records());
        assert_ne!(a.records(), c.records());
    }

    #[test]
    fn period_zero_outcome_independent_of_random_treatment() {
        let d = design(Link::Identity, Assignment::Random, 40_000, 1);
        let part = partition_cells(&draw_dgp(&d, 0).unwrap());
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let treated = part.treatment_group(true, false);
        let control = part.treatment_group(false, false);
        assert!((mean(&treated) - mean(&control)).abs() < 0.03);

        let s = design(Link::Identity, Assignment::Selective, 40_000, 1);
        let part = partition_cells(&draw_dgp(&s, 0).unwrap());
        assert!(mean(&part.treatment_group(true, false)) - mean(&part.treatment_group(false, false)) > 0.3);
    }

    #[test]
    fn identity_truths_are_exact() {
        let d = design(Link::Identity, Assignment::Random, 1000, 1);
        let t = true_effects_oracle(&d, MIN_ORACLE_DRAWS).unwrap();
        let expect = [
            (Estimand::ThetaNever, 1.0),
            (Estimand::ThetaAlways, 2.0),
            (Estimand::TotalComplier, 3.0),
            (Estimand::ThetaComplier1, 2.0),
            (Estimand::ThetaComplier0, 1.0),
            (Estimand::DeltaComplier1, 2.0),
            (Estimand::DeltaComplier0, 1.0),
            (Estimand::Theta10, 1.0),
            (Estimand::Theta01, 2.0),
        ];
        for (e, v) in expect {
            assert_eq!(t.get(e), Some(v), "{e}");
        }
        assert!((t.p_a - 0.5).abs() < 0.002);
        assert!((t.p_a + t.p_c + t.p_n - 1.0).abs() < 1e-12);
        assert!(true_effects_oracle(&d, 10).is_err());
    }

    #[test]
    fn oracle_decomposition() {
        let d = design(Link::Exponential, Assignment::Random, 1000, 1);
        let t = true_effects_oracle(&d, MIN_ORACLE_DRAWS).unwrap();
        let g = |e| t.get(e).unwrap();
        let total = g(Estimand::TotalComplier);
        let tol = 1e-9 * total;
        assert!((total - g(Estimand::ThetaComplier1) - g(Estimand::DeltaComplier0)).abs() < tol);
        assert!((total - g(Estimand::ThetaComplier0) - g(Estimand::DeltaComplier1)).abs() < tol);
        let ate = t.p_n * g(Estimand::ThetaNever) + t.p_a * g(Estimand::ThetaAlways) + t.p_c * total;
        assert!((ate - g(Estimand::Ate)).abs() < 1e-9 * ate);
    }

    #[test]
    fn report_rows_satisfy_rmse_identity() {
        let d = design(Link::Identity, Assignment::Random, 400, 12);
        let truth = true_effects_oracle(&d, MIN_ORACLE_DRAWS).unwrap();
        let reports = run_monte_carlo(&d, &truth, &[Method::ChangesInChanges, Method::MeanShift]).unwrap();
        assert_eq!(reports.len(), 2);
        for rep in &reports {
            for r in &rep.rows {
                assert_eq!(r.ok + r.failures, 12);
                if r.ok > 0 {
                    assert!((r.rmse.powi(2) - r.bias.powi(2) - r.sd.powi(2)).abs() < 1e-9);
                }
            }
            assert_eq!(rep.to_tsv().lines().count(), 1 + REPORTED_ESTIMANDS.len());
        }
    }

    #[test]
    fn single_replication_has_zero_sd() {
        let d = design(Link::Identity, Assignment::Random, 400, 1);
        let truth = true_effects_oracle(&d, MIN_ORACLE_DRAWS).unwrap();
        let rep = run_monte_carlo(&d, &truth, &[Method::ChangesInChanges]).unwrap();
        assert!(rep[0].rows.iter().filter(|r| r.ok == 1).all(|r| r.sd == 0.0));
    }
}
