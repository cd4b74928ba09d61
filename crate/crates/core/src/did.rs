//! Mean-shift (common-trend) difference-in-differences comparator.
//!
//! Uses the same estimand algebra as [`crate::cic`], with every
//! quantile-quantile map replaced by `y -> y + (mean(Y1|d,m) - mean(Y0|d,m))`.

use crate::cic::{estimate_all, EstimateSet, EstimationOptions, Method};
use crate::dataio::{Cell, CellPartition};
use crate::edist::EmpiricalDistribution;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShiftTransform {
    pub shift: f64,
}

impl MeanShiftTransform {
    pub fn between(period0: &EmpiricalDistribution, period1: &EmpiricalDistribution) -> Self {
        MeanShiftTransform {
            shift: period1.mean() - period0.mean(),
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        y + self.shift
    }

    pub fn apply_sample(&self, sample: &EmpiricalDistribution) -> EmpiricalDistribution {
        let values = sample.values().iter().map(|&y| self.apply(y)).collect();
        EmpiricalDistribution::from_sorted(values).expect("non-empty sample")
    }
}

/// Period-0 to period-1 mean shift of cell `(d, m)`.
pub fn did_transform(part: &CellPartition, d: bool, m: bool) -> Result<MeanShiftTransform> {
    let dist = |t: bool| {
        let cell = Cell::new(d, m, t);
        EmpiricalDistribution::from_sorted(part.values(cell).to_vec()).map_err(|_| cell.empty_error())
    };
    Ok(MeanShiftTransform::between(&dist(false)?, &dist(true)?))
}

/// Full estimand set under the common-trend counterfactual.
pub fn did_effects(part: &CellPartition, opts: &EstimationOptions) -> Result<EstimateSet> {
    estimate_all(part, Method::MeanShift, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cic::Estimand;

    #[test]
    fn equal_means_give_identity() {
        let mut cells: [Vec<f64>; 8] = Default::default();
        for cell in Cell::all() {
            cells[cell.index()] = if cell.t { vec![3.0, 1.0, 2.0] } else { vec![0.0, 4.0, 2.0] };
        }
        let part = CellPartition::from_cells(cells);
        let t = did_transform(&part, false, false).unwrap();
        assert_eq!(t.shift, 0.0);
        assert_eq!(t.apply(1.5), 1.5);
    }

    #[test]
    fn empty_cell_reported() {
        let part = CellPartition::from_cells(Default::default());
        assert!(did_transform(&part, true, true).is_err());
    }

    #[test]
    fn location_shift_cells_match_cic() {
        // common support up to small offsets; period 1 is period 0 shifted
        let base: Vec<f64> = (0..40).map(|i| ((i * 37) % 40) as f64 * 0.25).collect();
        let shifts = [0.5, 1.5, 2.0, 4.0];
        let reps = [1, 3, 2, 4];
        let mut cells: [Vec<f64>; 8] = Default::default();
        for (k, cell) in Cell::all().enumerate() {
            let g = k / 2;
            let own: Vec<f64> = base.iter().cycle().take(40 * reps[g]).map(|y| y + g as f64 * 0.1).collect();
            cells[cell.index()] = if cell.t {
                own.iter().map(|y| y + shifts[g]).collect()
            } else {
                own
            };
        }
        let part = CellPartition::from_cells(cells);
        let opts = EstimationOptions {
            quantiles: vec![0.25, 0.5, 0.75],
            min_share: 0.0,
        };
        let did = did_effects(&part, &opts).unwrap();
        let cic = estimate_all(&part, Method::ChangesInChanges, &opts).unwrap();
        for e in [Estimand::Theta10, Estimand::Theta00, Estimand::Theta01, Estimand::Theta11] {
            let (a, b) = (did.get(e).unwrap(), cic.get(e).unwrap());
            assert!((a.average - b.average).abs() < 0.3, "{e}: {} vs {}", a.average, b.average);
        }
    }
}
