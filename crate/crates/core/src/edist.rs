//! Empirical distribution machinery: step CDFs, left-inverse quantiles,
//! quantile-quantile transforms and weighted-difference (mixture) CDFs.

use crate::error::{Error, Result};

/// Anything that can be evaluated as a distribution function.
pub trait Cdf {
    fn cdf(&self, y: f64) -> f64;
}

/// Sorted finite sample with a right-continuous empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(bad));
        }
        values.sort_by(f64::total_cmp);
        Self::from_sorted(values)
    }

    /// Wraps an already sorted sample.
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        debug_assert!(values.windows(2).all(|w| w[0] <= w[1]), "sample not sorted");
        Ok(EmpiricalDistribution { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn count_le(&self, y: f64) -> usize {
        self.values.partition_point(|&v| v <= y)
    }

    fn fraction(&self, k: usize) -> f64 {
        k as f64 / self.values.len() as f64
    }

    /// `inf{y : F(y) >= q}`, i.e. the order statistic `y_(k)` with
    /// `k = max(1, ceil(q n))`.
    ///
    /// The rank is located with the same `k / n` arithmetic the CDF uses, so
    /// `quantile(cdf(y_i)) == y_i` holds exactly for every sample point.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::QOutOfRange(q));
        }
        let n = self.values.len();
        let mut k = ((q * n as f64).ceil() as usize).clamp(1, n);
        while k > 1 && self.fraction(k - 1) >= q {
            k -= 1;
        }
        while k < n && self.fraction(k) < q {
            k += 1;
        }
        Ok(self.values[k - 1])
    }

    /// Share of observations that duplicate another observation's value.
    pub fn tied_fraction(&self) -> f64 {
        let distinct = 1 + self.values.windows(2).filter(|w| w[0] != w[1]).count();
        (self.values.len() - distinct) as f64 / self.values.len() as f64
    }
}

impl Cdf for EmpiricalDistribution {
    fn cdf(&self, y: f64) -> f64 {
        self.fraction(self.count_le(y))
    }
}

/// Convenience wrapper around [`Cdf::cdf`].
pub fn ecdf_eval(dist: &EmpiricalDistribution, y: f64) -> f64 {
    dist.cdf(y)
}

pub fn quantile_eval(dist: &EmpiricalDistribution, q: f64) -> Result<f64> {
    dist.quantile(q)
}

/// Maps a period-0 outcome to the period-1 outcome of equal rank within a
/// cell: `y -> F1^-1(F0(y))`.
#[derive(Debug, Clone, Copy)]
pub struct QqTransform<'a> {
    pub period0: &'a EmpiricalDistribution,
    pub period1: &'a EmpiricalDistribution,
}

impl<'a> QqTransform<'a> {
    pub fn new(period0: &'a EmpiricalDistribution, period1: &'a EmpiricalDistribution) -> Self {
        QqTransform { period0, period1 }
    }

    /// Ranks are clamped to `[1/n0, 1]` so points below the period-0 minimum
    /// map to the period-1 minimum.
    pub fn apply(&self, y: f64) -> f64 {
        let n0 = self.period0.len();
        let rank = self.period0.fraction(self.period0.count_le(y).max(1));
        debug_assert!(rank >= 1.0 / n0 as f64 && rank <= 1.0);
        // rank is in (0, 1] by construction
        self.period1.quantile(rank).expect("rank within [0, 1]")
    }

    /// Pushes a whole sample through the transform.
    pub fn apply_sample(&self, sample: &EmpiricalDistribution) -> EmpiricalDistribution {
        // nondecreasing map of a sorted sample stays sorted
        let values = sample.values().iter().map(|&y| self.apply(y)).collect();
        EmpiricalDistribution { values }
    }
}

pub fn qq_transform(t: &QqTransform<'_>, y: f64) -> f64 {
    t.apply(y)
}

const WEIGHT_TOL: f64 = 1e-9;

/// `w_pos F_pos - w_neg F_neg` on a grid, together with its repaired,
/// monotone version.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureCdf {
    grid: Vec<f64>,
    raw: Vec<f64>,
    rearranged: Vec<f64>,
    w_pos: f64,
    w_neg: f64,
}

/// Result of inverting a [`MixtureCdf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfInverse {
    pub value: f64,
    /// The repaired CDF never reached the requested level inside the grid;
    /// `value` is then the largest grid point.
    pub degenerate: bool,
}

/// Builds the weighted-difference CDF on `grid`.
///
/// Raw values are clipped to `[0, 1]` and then isotonized with a running
/// maximum, so the stored CDF is nondecreasing and starts from 0 to the left
/// of the grid.
pub fn build_mixture_cdf(
    f_pos: &impl Cdf,
    f_neg: &impl Cdf,
    w_pos: f64,
    w_neg: f64,
    grid: Vec<f64>,
) -> Result<MixtureCdf> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if let Some(&bad) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(bad));
    }
    if !(w_pos > 0.0 && w_neg >= 0.0 && (w_pos - w_neg - 1.0).abs() <= WEIGHT_TOL) {
        return Err(Error::WeightIdentityViolated { w_pos, w_neg });
    }
    let mut grid = grid;
    grid.sort_by(f64::total_cmp);
    let raw: Vec<f64> = grid
        .iter()
        .map(|&y| w_pos * f_pos.cdf(y) - w_neg * f_neg.cdf(y))
        .collect();
    let mut running = 0.0_f64;
    let rearranged = raw
        .iter()
        .map(|&v| {
            running = running.max(v.clamp(0.0, 1.0));
            running
        })
        .collect();
    Ok(MixtureCdf {
        grid,
        raw,
        rearranged,
        w_pos,
        w_neg,
    })
}

fn merged_support(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut grid = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
            i += 1;
            a[i - 1]
        } else {
            j += 1;
            b[j - 1]
        };
        if grid.last() != Some(&next) {
            grid.push(next);
        }
    }
    grid
}

impl MixtureCdf {
    /// Mixture of two empirical distributions evaluated on the union of their
    /// support points, where the raw difference is a step function. With
    /// `neg = None` the weight `w_neg` must be zero.
    pub fn from_samples(
        pos: &EmpiricalDistribution,
        neg: Option<&EmpiricalDistribution>,
        w_pos: f64,
        w_neg: f64,
    ) -> Result<Self> {
        match neg {
            Some(neg) => {
                let grid = merged_support(pos.values(), neg.values());
                build_mixture_cdf(pos, neg, w_pos, w_neg, grid)
            }
            None if w_neg == 0.0 => {
                let grid = merged_support(pos.values(), &[]);
                build_mixture_cdf(pos, pos, w_pos, 0.0, grid)
            }
            None => Err(Error::WeightIdentityViolated { w_pos, w_neg }),
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn rearranged(&self) -> &[f64] {
        &self.rearranged
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.w_pos, self.w_neg)
    }

    /// Smallest grid point whose repaired CDF value is at least `q`.
    pub fn invert(&self, q: f64) -> Result<CdfInverse> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::QOutOfRange(q));
        }
        let idx = self.rearranged.partition_point(|&v| v < q);
        if idx == self.grid.len() {
            log::warn!("mixture CDF never reaches {q}; returning grid maximum");
            return Ok(CdfInverse {
                value: self.grid[self.grid.len() - 1],
                degenerate: true,
            });
        }
        Ok(CdfInverse {
            value: self.grid[idx],
            degenerate: false,
        })
    }
}

impl Cdf for MixtureCdf {
    fn cdf(&self, y: f64) -> f64 {
        match self.grid.partition_point(|&g| g <= y) {
            0 => 0.0,
            k => self.rearranged[k - 1],
        }
    }
}

pub fn invert_cdf(m: &MixtureCdf, q: f64) -> Result<CdfInverse> {
    m.invert(q)
}
