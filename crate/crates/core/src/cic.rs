//! Changes-in-changes estimands: cell-conditional direct effects, principal
//! strata shares, stratum (never-taker, always-taker, complier) effects and
//! the population ATE, each as an average and as a quantile curve.
//!
//! Every estimand is assembled from two kinds of period-1 samples per
//! treatment/mediator cell `(d, m)`:
//!
//! * the observed outcomes `Y1 | D=d, M=m`, i.e. draws of `Y1(d, m)`;
//! * the counterfactual outcomes `Y1(1-d, m) | D=d, M=m`, obtained by pushing
//!   the cell's period-0 outcomes through the time transform of the cell
//!   `(1-d, m)` (a quantile-quantile map for changes-in-changes, a mean
//!   shift for the difference-in-differences comparator).
//!
//! Complier distributions are weighted differences of these samples.

use serde::Serialize;

use crate::dataio::{Cell, CellPartition};
use crate::did::MeanShiftTransform;
use crate::edist::{EmpiricalDistribution, MixtureCdf, QqTransform};
use crate::error::{Error, Result};

/// Minimum complier (and always-taker) share accepted by default.
pub const DEFAULT_MIN_SHARE: f64 = 0.01;

/// Quantile levels 0.1, 0.2, ..., 0.9.
pub fn default_quantile_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

pub fn validate_quantile_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::InvalidConfig("quantile levels must lie strictly inside (0, 1)".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("quantile levels must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Estimand {
    /// Direct effect on never-takers.
    ThetaNever,
    /// Direct effect on always-takers.
    ThetaAlways,
    /// Total effect on compliers.
    TotalComplier,
    ThetaComplier1,
    ThetaComplier0,
    DeltaComplier1,
    DeltaComplier0,
    /// Direct effect given D=1, M(1)=0.
    Theta10,
    /// Direct effect given D=0, M(0)=0.
    Theta00,
    /// Direct effect given D=0, M(0)=1.
    Theta01,
    /// Direct effect given D=1, M(1)=1.
    Theta11,
    /// Population average treatment effect.
    Ate,
}

impl Estimand {
    pub const ALL: [Estimand; 12] = [
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

    pub fn tag(self) -> &'static str {
        match self {
            Estimand::ThetaNever => "theta_n",
            Estimand::ThetaAlways => "theta_a",
            Estimand::TotalComplier => "Delta_c",
            Estimand::ThetaComplier1 => "theta_c_1",
            Estimand::ThetaComplier0 => "theta_c_0",
            Estimand::DeltaComplier1 => "delta_c_1",
            Estimand::DeltaComplier0 => "delta_c_0",
            Estimand::Theta10 => "theta_10_1",
            Estimand::Theta00 => "theta_00_0",
            Estimand::Theta01 => "theta_01_0",
            Estimand::Theta11 => "theta_11_1",
            Estimand::Ate => "ATE",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Estimand> {
        Estimand::ALL.into_iter().find(|e| e.tag() == tag)
    }

    /// Whether the estimand is a complier effect and therefore needs a
    /// non-negligible complier share.
    pub fn is_complier(self) -> bool {
        matches!(
            self,
            Estimand::TotalComplier
                | Estimand::ThetaComplier1
                | Estimand::ThetaComplier0
                | Estimand::DeltaComplier1
                | Estimand::DeltaComplier0
        )
    }
}

impl std::fmt::Display for Estimand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Principal strata shares and the conditional mediator probabilities they
/// are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrataShares {
    pub p_a: f64,
    pub p_c: f64,
    pub p_n: f64,
    /// `Pr(M=m | D=d)` indexed `[d][m]`.
    pub p_m_given_d: [[f64; 2]; 2],
}

impl StrataShares {
    /// `Pr(M=m | D=d)`.
    pub fn p(&self, m: bool, d: bool) -> f64 {
        self.p_m_given_d[d as usize][m as usize]
    }

    /// Shares from period-1 cell counts. The complier share is the average
    /// of its two algebraically equal expressions, so the three shares sum
    /// to one.
    pub fn from_partition(part: &CellPartition) -> StrataShares {
        let mut p = [[0.0; 2]; 2];
        for d in [false, true] {
            let n0 = part.count(Cell::new(d, false, true)) as f64;
            let n1 = part.count(Cell::new(d, true, true)) as f64;
            p[d as usize] = [n0 / (n0 + n1), n1 / (n0 + n1)];
        }
        let p_a = p[0][1];
        let p_n = p[1][0];
        let p_c = ((p[1][1] - p[0][1]) + (p[0][0] - p[1][0])) / 2.0;
        StrataShares {
            p_a,
            p_c,
            p_n,
            p_m_given_d: p,
        }
    }
}

/// Strata shares, rejecting designs whose complier share is below `min_share`.
pub fn estimate_strata_shares(part: &CellPartition, min_share: f64) -> Result<StrataShares> {
    let shares = StrataShares::from_partition(part);
    if !(shares.p_c >= min_share) {
        return Err(Error::WeakCompliers {
            p_c: shares.p_c,
            min: min_share,
        });
    }
    Ok(shares)
}

/// Point estimate of one estimand: its average and its quantile curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub estimand: Estimand,
    pub average: f64,
    /// `(q, effect at q)` pairs.
    pub quantiles: Vec<(f64, f64)>,
}

/// How period-0 outcomes are carried into period 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ChangesInChanges,
    MeanShift,
}

/// Sample statistics shared by all estimands of one partition.
#[derive(Debug, Clone)]
pub struct CellModel {
    method: Method,
    period0: [Option<EmpiricalDistribution>; 4],
    period1: [Option<EmpiricalDistribution>; 4],
    counterfactual: [Option<EmpiricalDistribution>; 4],
    shares: StrataShares,
}

fn dm(d: bool, m: bool) -> usize {
    (d as usize) * 2 + m as usize
}

fn unavailable(d: bool, m: bool) -> Error {
    Error::CellUnavailable {
        d: d as u8,
        m: m as u8,
    }
}

impl CellModel {
    pub fn new(part: &CellPartition, method: Method) -> Result<Self> {
        let dist = |cell: Cell| -> Result<Option<EmpiricalDistribution>> {
            match part.values(cell) {
                [] => Ok(None),
                v => EmpiricalDistribution::from_sorted(v.to_vec()).map(Some),
            }
        };
        let mut period0: [Option<EmpiricalDistribution>; 4] = Default::default();
        let mut period1: [Option<EmpiricalDistribution>; 4] = Default::default();
        for d in [false, true] {
            for m in [false, true] {
                period0[dm(d, m)] = dist(Cell::new(d, m, false))?;
                period1[dm(d, m)] = dist(Cell::new(d, m, true))?;
                if period0[dm(d, m)].is_some() != period1[dm(d, m)].is_some() {
                    let t = period0[dm(d, m)].is_some();
                    return Err(Cell::new(d, m, t).empty_error());
                }
            }
        }
        // only the always-taker cells (d=0, m=1) may be missing
        for (d, m) in [(false, false), (true, false), (true, true)] {
            if period0[dm(d, m)].is_none() {
                return Err(Cell::new(d, m, false).empty_error());
            }
        }

        let mut counterfactual: [Option<EmpiricalDistribution>; 4] = Default::default();
        for d in [false, true] {
            for m in [false, true] {
                let (Some(own0), Some(via0), Some(via1)) = (
                    &period0[dm(d, m)],
                    &period0[dm(!d, m)],
                    &period1[dm(!d, m)],
                ) else {
                    continue;
                };
                counterfactual[dm(d, m)] = Some(match method {
                    Method::ChangesInChanges => QqTransform::new(via0, via1).apply_sample(own0),
                    Method::MeanShift => MeanShiftTransform::between(via0, via1).apply_sample(own0),
                });
            }
        }
        Ok(CellModel {
            method,
            period0,
            period1,
            counterfactual,
            shares: StrataShares::from_partition(part),
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn shares(&self) -> &StrataShares {
        &self.shares
    }

    /// Cells whose period-0 or period-1 sample has more than `limit` tied
    /// observations (as a share).
    pub fn heavily_tied_cells(&self, limit: f64) -> Vec<Cell> {
        let mut out = Vec::new();
        for (t, dists) in [(false, &self.period0), (true, &self.period1)] {
            for d in [false, true] {
                for m in [false, true] {
                    if let Some(dist) = &dists[dm(d, m)] {
                        if dist.tied_fraction() > limit {
                            out.push(Cell::new(d, m, t));
                        }
                    }
                }
            }
        }
        out
    }

    /// `Y1 | D=d, M=m`, draws of `Y1(d, m)` for that cell.
    pub fn observed(&self, d: bool, m: bool) -> Result<&EmpiricalDistribution> {
        self.period1[dm(d, m)].as_ref().ok_or_else(|| unavailable(d, m))
    }

    /// Draws of `Y1(1-d, m)` for the units of cell `(d, m)`.
    pub fn counterfactual(&self, d: bool, m: bool) -> Result<&EmpiricalDistribution> {
        self.counterfactual[dm(d, m)]
            .as_ref()
            .ok_or_else(|| unavailable(!d, m))
    }

    /// Samples of `Y1(1, m)` and `Y1(0, m)` within cell `(d, m)`.
    fn cell_potentials(&self, d: bool, m: bool) -> Result<(&EmpiricalDistribution, &EmpiricalDistribution)> {
        let obs = self.observed(d, m)?;
        let cf = self.counterfactual(d, m)?;
        Ok(if d { (obs, cf) } else { (cf, obs) })
    }

    /// Direct effect for the units with `D=d, M=m`, under treatment `d`.
    pub fn direct_effect_cell(&self, d: bool, m: bool, qgrid: &[f64]) -> Result<EffectEstimate> {
        validate_quantile_grid(qgrid)?;
        let (treated, untreated) = self.cell_potentials(d, m)?;
        let quantiles = qgrid
            .iter()
            .map(|&q| Ok((q, treated.quantile(q)? - untreated.quantile(q)?)))
            .collect::<Result<Vec<_>>>()?;
        let estimand = match (d, m) {
            (true, false) => Estimand::Theta10,
            (false, false) => Estimand::Theta00,
            (false, true) => Estimand::Theta01,
            (true, true) => Estimand::Theta11,
        };
        Ok(EffectEstimate {
            estimand,
            average: treated.mean() - untreated.mean(),
            quantiles,
        })
    }

    pub fn never_taker_effects(&self, qgrid: &[f64]) -> Result<EffectEstimate> {
        let mut e = self.direct_effect_cell(true, false, qgrid)?;
        e.estimand = Estimand::ThetaNever;
        Ok(e)
    }

    pub fn always_taker_effects(&self, qgrid: &[f64], min_share: f64) -> Result<EffectEstimate> {
        if !(self.shares.p_a >= min_share) {
            return Err(Error::NoAlwaysTakers {
                p_a: self.shares.p_a,
                min: min_share,
            });
        }
        let mut e = self.direct_effect_cell(false, true, qgrid)?;
        e.estimand = Estimand::ThetaAlways;
        Ok(e)
    }

    fn check_compliers(&self, min_share: f64) -> Result<()> {
        if !(self.shares.p_c >= min_share) {
            return Err(Error::WeakCompliers {
                p_c: self.shares.p_c,
                min: min_share,
            });
        }
        Ok(())
    }

    /// The two cell samples and weights whose difference is the complier
    /// distribution of `Y1(d, m)`. For `m = 0` the positive cell is
    /// `(0, 0)` (compliers and never-takers) and the negative one `(1, 0)`
    /// (never-takers); for `m = 1` they are `(1, 1)` and `(0, 1)`.
    fn complier_components(
        &self,
        d: bool,
        m: bool,
    ) -> Result<(&EmpiricalDistribution, Option<&EmpiricalDistribution>, f64, f64)> {
        let s = &self.shares;
        let w_pos = s.p(m, m) / s.p_c;
        let w_neg = s.p(m, !m) / s.p_c;
        let sample = |cd: bool| {
            if cd == d {
                self.observed(cd, m)
            } else {
                self.counterfactual(cd, m)
            }
        };
        let pos = sample(m)?;
        let neg = match sample(!m) {
            Ok(neg) => Some(neg),
            // a structurally empty neighbour cell carries zero weight
            Err(_) if w_neg == 0.0 => None,
            Err(e) => return Err(e),
        };
        Ok((pos, neg, w_pos, w_neg))
    }

    /// Mean of `Y1(d, m)` among compliers.
    pub fn complier_mean(&self, d: bool, m: bool) -> Result<f64> {
        let (pos, neg, w_pos, w_neg) = self.complier_components(d, m)?;
        Ok(w_pos * pos.mean() - neg.map_or(0.0, |n| w_neg * n.mean()))
    }

    /// Repaired distribution function of `Y1(d, m)` among compliers.
    pub fn complier_cdf(&self, d: bool, m: bool) -> Result<MixtureCdf> {
        let (pos, neg, w_pos, w_neg) = self.complier_components(d, m)?;
        // w_pos - w_neg equals one up to rounding of the pooled share
        MixtureCdf::from_samples(pos, neg, w_pos, w_neg)
    }

    /// Complier effect `Y1(a) - Y1(b)` where `a`, `b` are `(d, m)` pairs.
    fn complier_contrast(
        &self,
        estimand: Estimand,
        a: (bool, bool),
        b: (bool, bool),
        qgrid: &[f64],
        min_share: f64,
    ) -> Result<EffectEstimate> {
        validate_quantile_grid(qgrid)?;
        self.check_compliers(min_share)?;
        let average = self.complier_mean(a.0, a.1)? - self.complier_mean(b.0, b.1)?;
        let quantiles = if qgrid.is_empty() {
            Vec::new()
        } else {
            let fa = self.complier_cdf(a.0, a.1)?;
            let fb = self.complier_cdf(b.0, b.1)?;
            qgrid
                .iter()
                .map(|&q| Ok((q, fa.invert(q)?.value - fb.invert(q)?.value)))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(EffectEstimate {
            estimand,
            average,
            quantiles,
        })
    }

    /// Direct effects on compliers, `(theta_c(0), theta_c(1))`.
    pub fn complier_direct_effects(
        &self,
        qgrid: &[f64],
        min_share: f64,
    ) -> Result<(EffectEstimate, EffectEstimate)> {
        Ok((
            self.complier_effect(Estimand::ThetaComplier0, qgrid, min_share)?,
            self.complier_effect(Estimand::ThetaComplier1, qgrid, min_share)?,
        ))
    }

    /// `(Delta_c, delta_c(0), delta_c(1))`.
    pub fn complier_total_and_indirect(
        &self,
        qgrid: &[f64],
        min_share: f64,
    ) -> Result<(EffectEstimate, EffectEstimate, EffectEstimate)> {
        Ok((
            self.complier_effect(Estimand::TotalComplier, qgrid, min_share)?,
            self.complier_effect(Estimand::DeltaComplier0, qgrid, min_share)?,
            self.complier_effect(Estimand::DeltaComplier1, qgrid, min_share)?,
        ))
    }

    fn complier_effect(&self, estimand: Estimand, qgrid: &[f64], min_share: f64) -> Result<EffectEstimate> {
        let (a, b) = match estimand {
            Estimand::ThetaComplier0 => ((true, false), (false, false)),
            Estimand::ThetaComplier1 => ((true, true), (false, true)),
            Estimand::TotalComplier => ((true, true), (false, false)),
            Estimand::DeltaComplier0 => ((false, true), (false, false)),
            Estimand::DeltaComplier1 => ((true, true), (true, false)),
            other => unreachable!("{other} is not a complier estimand"),
        };
        self.complier_contrast(estimand, a, b, qgrid, min_share)
    }

    /// Period-1 contrast between treatment groups.
    pub fn population_ate_qte(&self, qgrid: &[f64]) -> Result<EffectEstimate> {
        validate_quantile_grid(qgrid)?;
        let group = |d: bool| -> Result<EmpiricalDistribution> {
            let values = [false, true]
                .iter()
                .filter_map(|&m| self.period1[dm(d, m)].as_ref())
                .flat_map(|e| e.values().iter().copied())
                .collect();
            EmpiricalDistribution::new(values)
        };
        let (treated, control) = (group(true)?, group(false)?);
        let quantiles = qgrid
            .iter()
            .map(|&q| Ok((q, treated.quantile(q)? - control.quantile(q)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EffectEstimate {
            estimand: Estimand::Ate,
            average: treated.mean() - control.mean(),
            quantiles,
        })
    }

    pub fn estimate(&self, estimand: Estimand, qgrid: &[f64], min_share: f64) -> Result<EffectEstimate> {
        match estimand {
            Estimand::ThetaNever => self.never_taker_effects(qgrid),
            Estimand::ThetaAlways => self.always_taker_effects(qgrid, min_share),
            Estimand::Theta10 => self.direct_effect_cell(true, false, qgrid),
            Estimand::Theta00 => self.direct_effect_cell(false, false, qgrid),
            Estimand::Theta01 => self.direct_effect_cell(false, true, qgrid),
            Estimand::Theta11 => self.direct_effect_cell(true, true, qgrid),
            Estimand::Ate => self.population_ate_qte(qgrid),
            complier => self.complier_effect(complier, qgrid, min_share),
        }
    }
}

/// Options shared by the full-suite estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOptions {
    pub quantiles: Vec<f64>,
    pub min_share: f64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            quantiles: default_quantile_grid(),
            min_share: DEFAULT_MIN_SHARE,
        }
    }
}

/// All estimands of one method on one partition. Estimands that cannot be
/// computed on this sample keep their error.
#[derive(Debug)]
pub struct EstimateSet {
    pub method: Method,
    pub shares: StrataShares,
    pub effects: Vec<(Estimand, Result<EffectEstimate>)>,
}

impl EstimateSet {
    pub fn get(&self, estimand: Estimand) -> Option<&EffectEstimate> {
        self.effects
            .iter()
            .find(|(e, _)| *e == estimand)
            .and_then(|(_, r)| r.as_ref().ok())
    }

    pub fn average(&self, estimand: Estimand) -> Option<f64> {
        self.get(estimand).map(|e| e.average)
    }
}

pub fn estimate_all(part: &CellPartition, method: Method, opts: &EstimationOptions) -> Result<EstimateSet> {
    validate_quantile_grid(&opts.quantiles)?;
    let model = CellModel::new(part, method)?;
    let effects = Estimand::ALL
        .iter()
        .map(|&e| (e, model.estimate(e, &opts.quantiles, opts.min_share)))
        .collect();
    Ok(EstimateSet {
        method,
        shares: *model.shares(),
        effects,
    })
}

pub fn direct_effect_cell(part: &CellPartition, d: bool, m: bool, qgrid: &[f64]) -> Result<EffectEstimate> {
    CellModel::new(part, Method::ChangesInChanges)?.direct_effect_cell(d, m, qgrid)
}

pub fn never_taker_effects(part: &CellPartition, qgrid: &[f64]) -> Result<EffectEstimate> {
    CellModel::new(part, Method::ChangesInChanges)?.never_taker_effects(qgrid)
}

pub fn always_taker_effects(part: &CellPartition, qgrid: &[f64], min_share: f64) -> Result<EffectEstimate> {
    CellModel::new(part, Method::ChangesInChanges)?.always_taker_effects(qgrid, min_share)
}

pub fn complier_direct_effects(
    part: &CellPartition,
    qgrid: &[f64],
    min_share: f64,
) -> Result<(EffectEstimate, EffectEstimate)> {
    CellModel::new(part, Method::ChangesInChanges)?.complier_direct_effects(qgrid, min_share)
}

pub fn complier_total_and_indirect(
    part: &CellPartition,
    qgrid: &[f64],
    min_share: f64,
) -> Result<(EffectEstimate, EffectEstimate, EffectEstimate)> {
    CellModel::new(part, Method::ChangesInChanges)?.complier_total_and_indirect(qgrid, min_share)
}

pub fn population_ate_qte(part: &CellPartition, qgrid: &[f64]) -> Result<EffectEstimate> {
    CellModel::new(part, Method::ChangesInChanges)?.population_ate_qte(qgrid)
}
