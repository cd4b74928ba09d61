//! Cluster bootstrap standard errors, normal-approximation p-values and
//! percentile intervals.
//!
//! Replicate `b` draws from its own ChaCha stream keyed by `(seed, b)`, and
//! results are gathered in replicate order, so the draws are bit-identical
//! whatever the size of the rayon pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::dataio::Dataset;
use crate::edist::EmpiricalDistribution;
use crate::error::{Error, Result};

pub const DEFAULT_REPLICATIONS: usize = 1999;

/// Share of failed replicates tolerated before the bootstrap is abandoned.
pub const MAX_FAILED_SHARE: f64 = 0.10;

/// Resampling unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Draw whole clusters (all rows sharing a cluster id).
    Cluster,
    /// Draw individual records.
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub seed: u64,
    pub mode: ClusterMode,
}

impl BootstrapConfig {
    pub fn new(replications: usize, seed: u64, mode: ClusterMode) -> Result<Self> {
        if replications < 2 {
            return Err(Error::InvalidConfig("at least 2 bootstrap replications are required".into()));
        }
        Ok(BootstrapConfig {
            replications,
            seed,
            mode,
        })
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: DEFAULT_REPLICATIONS,
            seed: 1,
            mode: ClusterMode::Cluster,
        }
    }
}

/// Bootstrap summary of one statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub point: f64,
    pub se: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    #[serde(skip)]
    pub draws: Vec<f64>,
    pub failed: usize,
}

/// Generator for replicate `index` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Two-sided normal p-value of `point / se`. A zero standard error gives 1
/// for a zero point estimate and 0 otherwise.
pub fn normal_p_value(point: f64, se: f64) -> f64 {
    if se > 0.0 {
        erfc((point / se).abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    } else if point == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Resamples clusters (or records) with replacement, re-runs `estimator` on
/// every replicate and summarizes each returned statistic.
///
/// `estimator` must return the same number of statistics on every input.
/// Replicates on which it fails (for example because a resample left a cell
/// empty) or returns non-finite values are dropped and counted; more than
/// 10% failures is an error.
pub fn cluster_bootstrap<F>(data: &Dataset, estimator: F, cfg: &BootstrapConfig) -> Result<Vec<BootstrapResult>>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    if cfg.replications < 2 {
        return Err(Error::InvalidConfig("at least 2 bootstrap replications are required".into()));
    }
    let point = estimator(data)?;
    let k = point.len();
    let groups: Vec<Vec<usize>> = match cfg.mode {
        ClusterMode::Cluster => data.cluster_rows().into_iter().filter(|g| !g.is_empty()).collect(),
        ClusterMode::Record => (0..data.len()).map(|i| vec![i]).collect(),
    };
    let n_groups = groups.len();

    let replicates: Vec<Option<Vec<f64>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(cfg.seed, b as u64);
            let picks: Vec<usize> = (0..n_groups).map(|_| rng.random_range(0..n_groups)).collect();
            let stats = data
                .resample_clusters(&groups, &picks)
                .and_then(|sample| estimator(&sample));
            match stats {
                Ok(v) if v.len() == k && v.iter().all(|x| x.is_finite()) => Some(v),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("bootstrap replicate {b} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let failed = replicates.iter().filter(|r| r.is_none()).count();
    if failed as f64 > MAX_FAILED_SHARE * cfg.replications as f64 {
        return Err(Error::TooManyFailedReplicates {
            failed,
            total: cfg.replications,
        });
    }
    let ok: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    Ok((0..k)
        .map(|j| {
            let draws: Vec<f64> = ok.iter().map(|v| v[j]).collect();
            let se = sample_sd(&draws);
            let dist = EmpiricalDistribution::new(draws.clone()).expect("finite draws");
            BootstrapResult {
                point: point[j],
                se,
                p_value: normal_p_value(point[j], se),
                ci_lower: dist.quantile(0.025).expect("valid level"),
                ci_upper: dist.quantile(0.975).expect("valid level"),
                draws,
                failed,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub estimand: String,
    pub est: f64,
    pub se: f64,
    pub pval: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub failed: usize,
}

/// est / se / pval table, one row per statistic in input order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("estimand\test\tse\tpval\tci_lower\tci_upper\tfailed\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\n",
                r.estimand, r.est, r.se, r.pval, r.ci_lower, r.ci_upper, r.failed
            ));
        }
        out
    }
}

pub fn summarize_bootstrap<S: AsRef<str>>(results: &[(S, BootstrapResult)]) -> SummaryTable {
    SummaryTable {
        rows: results
            .iter()
            .map(|(name, r)| SummaryRow {
                estimand: name.as_ref().to_string(),
                est: r.point,
                se: r.se,
                pval: r.p_value,
                ci_lower: r.ci_lower,
                ci_upper: r.ci_upper,
                failed: r.failed,
            })
            .collect(),
    }
}
