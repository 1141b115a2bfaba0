use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::phase::PlasmaEnsemble;

/// `(sum_cells rho^(5/3) V_cell)^(3/5)` for the weight histogram on a cubic grid anchored
/// at the ensemble's bounding-box corner.
pub fn density_norm_estimate(ensemble: &PlasmaEnsemble, cell_size: f64) -> Result<f64> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidParameter(format!("cell_size must be > 0, got {cell_size}")));
    }
    let Some((lo, _)) = ensemble.bounding_box() else {
        return Ok(0.0);
    };
    // sparse grid; BTreeMap keeps the summation order deterministic
    let mut cells: BTreeMap<[i64; 3], f64> = BTreeMap::new();
    for p in ensemble.particles() {
        let d = p.position - lo;
        let key = [
            (d.x / cell_size).floor() as i64,
            (d.y / cell_size).floor() as i64,
            (d.z / cell_size).floor() as i64,
        ];
        *cells.entry(key).or_insert(0.0) += p.weight;
    }
    let volume = cell_size.powi(3);
    let sum: f64 = cells.values().map(|w| (w / volume).powf(5.0 / 3.0) * volume).sum();
    Ok(sum.powf(0.6))
}
