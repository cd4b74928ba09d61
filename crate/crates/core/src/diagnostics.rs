//! Checks of the identifying assumptions: treatment balance, the
//! pre-period outcome implication, attrition and the exclusion restriction.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cic::{estimate_all, Estimand, EstimationOptions, Method};
use crate::dataio::{partition_cells, Dataset, Design, ObservationRecord};
use crate::error::{Error, Result};
use crate::inference::{cluster_bootstrap, BootstrapConfig};

/// Standardized differences above this are flagged.
pub const SD_THRESHOLD: f64 = 20.0;
pub const NOMINAL_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub name: String,
    pub estimate: f64,
    pub p_value: f64,
    pub std_diff: Option<f64>,
    pub flagged: bool,
    pub verdict: String,
}

struct Moments {
    n: usize,
    mean: f64,
    var: f64,
}

fn moments(ys: &[f64]) -> Moments {
    let n = ys.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Moments { n, mean, var }
}

fn group(records: &[ObservationRecord], d: bool, period: bool) -> Result<Vec<f64>> {
    let ys: Vec<f64> = records.iter().filter(|r| r.d == d && r.t == period).map(|r| r.y).collect();
    if ys.len() < 2 {
        return Err(Error::EmptyGroup {
            d: d as u8,
            period: period as u8,
            n: ys.len(),
        });
    }
    Ok(ys)
}

/// Welch test of equal means, returning (difference, p-value, SD).
fn welch(treated: &[f64], control: &[f64]) -> (f64, f64, f64) {
    let (a, b) = (moments(treated), moments(control));
    let diff = a.mean - b.mean;
    let (ea, eb) = (a.var / a.n as f64, b.var / b.n as f64);
    let se = (ea + eb).sqrt();
    let p = if se > 0.0 {
        let df = (ea + eb).powi(2) / (ea * ea / (a.n - 1) as f64 + eb * eb / (b.n - 1) as f64);
        let t = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * t.sf((diff / se).abs())).clamp(0.0, 1.0)
    } else if diff == 0.0 {
        1.0
    } else {
        0.0
    };
    let pooled = ((a.var + b.var) / 2.0).sqrt();
    let sd = if pooled > 0.0 {
        100.0 * diff.abs() / pooled
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    (diff, p, sd)
}

fn balance_report(name: &str, records: &[ObservationRecord], period: bool) -> Result<DiagnosticReport> {
    let (diff, p, sd) = welch(&group(records, true, period)?, &group(records, false, period)?);
    let flagged = sd > SD_THRESHOLD;
    Ok(DiagnosticReport {
        name: name.to_string(),
        estimate: diff,
        p_value: p,
        std_diff: Some(sd),
        flagged,
        verdict: if flagged { "imbalanced (SD > 20)" } else { "balanced" }.to_string(),
    })
}

/// Mean outcome difference between treatment groups in `period` (0 or 1).
pub fn balance_test(data: &Dataset, period: u8) -> Result<DiagnosticReport> {
    if period > 1 {
        return Err(Error::InvalidConfig(format!("period must be 0 or 1, got {period}")));
    }
    balance_report(&format!("balance_t{period}"), data.records(), period == 1)
}

/// Tests equal pre-period outcome means across treatment groups; a
/// rejection speaks against random treatment assignment.
pub fn pretrend_implication_test(data: &Dataset) -> Result<DiagnosticReport> {
    let mut report = balance_report("pretrend", data.records(), false)?;
    report.flagged = report.p_value < NOMINAL_LEVEL;
    report.verdict = if report.flagged { "rejected" } else { "not rejected" }.to_string();
    Ok(report)
}

/// Period-0 balance among clusters observed in both periods.
pub fn attrition_check(data: &Dataset) -> Result<DiagnosticReport> {
    if data.design() != Design::Panel {
        return Err(Error::NotPanel);
    }
    let mut seen = vec![[false; 2]; data.n_clusters()];
    for r in data.records() {
        seen[r.cluster.0][r.t as usize] = true;
    }
    let stayers: Vec<ObservationRecord> = data
        .records()
        .iter()
        .filter(|r| seen[r.cluster.0] == [true, true])
        .cloned()
        .collect();
    balance_report("attrition", &stayers, false)
}

const CELL_EFFECTS: [Estimand; 4] = [Estimand::Theta10, Estimand::Theta00, Estimand::Theta01, Estimand::Theta11];

/// Bootstrap tests that each cell-conditional direct effect is zero. Cells
/// that cannot be estimated on the full sample (no always-takers) are left
/// out.
pub fn exclusion_restriction_test(data: &Dataset, cfg: &BootstrapConfig) -> Result<Vec<DiagnosticReport>> {
    let opts = EstimationOptions {
        quantiles: Vec::new(),
        min_share: 0.0,
    };
    let full = estimate_all(&partition_cells(data), Method::ChangesInChanges, &opts)?;
    let available: Vec<Estimand> = CELL_EFFECTS.into_iter().filter(|&e| full.get(e).is_some()).collect();
    let results = cluster_bootstrap(
        data,
        |sample| {
            let set = estimate_all(&partition_cells(sample), Method::ChangesInChanges, &opts)?;
            available
                .iter()
                .map(|&e| set.average(e).ok_or(Error::EmptyDistribution))
                .collect()
        },
        cfg,
    )?;
    Ok(available
        .iter()
        .zip(results)
        .map(|(e, r)| {
            let flagged = r.p_value < NOMINAL_LEVEL;
            DiagnosticReport {
                name: format!("exclusion_{}", e.tag()),
                estimate: r.point,
                p_value: r.p_value,
                std_diff: None,
                flagged,
                verdict: if flagged { "rejected" } else { "not rejected" }.to_string(),
            }
        })
        .collect())
}
