use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataio::{Cell, CellPartition};

/// Eight non-empty cells with uneven sizes, per-cell locations and a
/// complier share comfortably above zero.
pub(crate) fn random_partition(seed: u64, n: usize) -> CellPartition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n.max(4);
    let mut cells: [Vec<f64>; 8] = Default::default();
    for cell in Cell::all() {
        let size = match (cell.d, cell.m) {
            (true, true) => rng.random_range(n..=2 * n),
            (true, false) => rng.random_range(2..=n),
            (false, true) => rng.random_range(2..=n / 2),
            (false, false) => rng.random_range(n..=2 * n),
        };
        let loc: f64 = rng.random_range(-2.0..2.0);
        let scale: f64 = rng.random_range(0.5..2.0);
        cells[cell.index()] = (0..size)
            .map(|_| loc + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
    }
    CellPartition::from_cells(cells)
}
