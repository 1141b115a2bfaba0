//! Growth of the velocity-cut static field with the cut radius.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::oracle::log_log_slope;
use crate::phase::PlasmaEnsemble;
use crate::vec3::Vec3;

/// `n^3` cell-centred points filling the box `[lo, hi]`.
pub fn probe_grid(lo: Vec3, hi: Vec3, n: usize) -> Vec<Vec3> {
    let c = |a: f64, b: f64, i: usize| a + (b - a) * (i as f64 + 0.5) / n as f64;
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push(Vec3::new(c(lo.x, hi.x, i), c(lo.y, hi.y, j), c(lo.z, hi.z, k)));
            }
        }
    }
    out
}

/// The decade `[v_top / 10, v_top]` below the largest particle speed `v_top`: for every
/// `R` in it the velocity cut removes at least one particle.
pub fn active_cut_decade(ensemble: &PlasmaEnsemble) -> Option<(f64, f64)> {
    let top = ensemble.particles().iter().map(|p| p.velocity.norm()).fold(0.0, f64::max);
    (top > 0.0).then_some((top / 10.0, top))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticScaling {
    pub r_values: Vec<f64>,
    /// `sup_x static_field_bound(x, R)` over the probes, per `R`.
    pub sup_bound: Vec<f64>,
    /// Weight fraction with `|v| < R`, per `R`.
    pub retained_fraction: Vec<f64>,
    /// Least-squares slope of `ln sup_bound` against `ln R`.
    pub slope: Option<f64>,
}

/// [`static_field_bound`](crate::field::static_field_bound) at every probe and every
/// cut in `r_values` (increasing), in one pass over the particles per probe.
pub fn static_scaling(
    ensemble: &PlasmaEnsemble,
    probes: &[Vec3],
    r_values: &[f64],
    spec: &KernelSpec,
) -> Result<StaticScaling> {
    if r_values.is_empty() || probes.is_empty() {
        return Err(Error::Empty("cut radii or probes"));
    }
    if r_values.iter().any(|&r| !(r > 0.0)) || r_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("cut radii must be positive and increasing".into()));
    }
    let nr = r_values.len();
    // bucket b holds speeds in [R_{b-1}, R_b); the bound at R_b sums buckets 0..=b
    let bucket: Vec<usize> = ensemble
        .particles()
        .iter()
        .map(|p| r_values.partition_point(|&r| r <= p.velocity.norm()))
        .collect();
    let total = ensemble.total_weight();
    let mut retained = vec![0.0; nr];
    for (p, &b) in ensemble.particles().iter().zip(&bucket) {
        if b < nr {
            retained[b] += p.weight;
        }
    }
    for b in 1..nr {
        retained[b] += retained[b - 1];
    }
    let eps2 = spec.epsilon_plasma * spec.epsilon_plasma;
    let per_probe: Vec<Vec<f64>> = probes
        .par_iter()
        .map(|&x| {
            let mut sums = vec![0.0; nr + 1];
            for (p, &b) in ensemble.particles().iter().zip(&bucket) {
                sums[b] += p.weight / ((x - p.position).norm_squared() + eps2);
            }
            let mut acc = 0.0;
            sums[..nr]
                .iter()
                .map(|s| {
                    acc += s;
                    acc
                })
                .collect()
        })
        .collect();
    let sup_bound: Vec<f64> = (0..nr)
        .map(|b| per_probe.iter().map(|v| v[b]).fold(0.0, f64::max))
        .collect();
    let points: Vec<(f64, f64)> = r_values
        .iter()
        .zip(&sup_bound)
        .filter(|(_, &s)| s > 0.0)
        .map(|(&r, &s)| (r, s))
        .collect();
    Ok(StaticScaling {
        r_values: r_values.to_vec(),
        sup_bound,
        retained_fraction: retained.iter().map(|w| if total > 0.0 { w / total } else { 0.0 }).collect(),
        slope: log_log_slope(&points),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::static_field_bound;
    use crate::phase::Macroparticle;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ensemble(m: usize, seed: u64) -> PlasmaEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        PlasmaEnsemble::new((0..m).map(|_| Macroparticle::new(r(), r(), 1.0 / m as f64).unwrap()).collect()).unwrap()
    }

    #[test]
    fn agrees_with_the_filtered_sum() {
        let e = ensemble(500, 1);
        let spec = KernelSpec::regularized(0.1, 0.05).unwrap();
        let probes = probe_grid(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0), 3);
        let rs = [0.2, 0.5, 1.0, 2.0];
        let s = static_scaling(&e, &probes, &rs, &spec).unwrap();
        for (b, &r) in rs.iter().enumerate() {
            let sup = probes.iter().map(|&x| static_field_bound(&e, x, r, &spec)).fold(0.0, f64::max);
            assert_relative_eq!(s.sup_bound[b], sup, max_relative = 1e-12);
        }
        assert!(s.sup_bound.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(s.retained_fraction[3], 1.0);
    }

    #[test]
    fn uniform_velocity_ball_grows_like_r_cubed() {
        // velocities uniform in a ball of radius 1: retained fraction R^3 below the edge
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ps = (0..20_000)
            .map(|_| {
                let v = loop {
                    let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    if v.norm() < 1.0 {
                        break v;
                    }
                };
                let x = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                Macroparticle::new(x, v, 5e-5).unwrap()
            })
            .collect();
        let e = PlasmaEnsemble::new(ps).unwrap();
        let spec = KernelSpec::regularized(0.1, 0.1).unwrap();
        let s = static_scaling(&e, &[Vec3::ZERO], &[0.4, 0.5, 0.6, 0.7, 0.8], &spec).unwrap();
        assert!((s.slope.unwrap() - 3.0).abs() < 0.15, "{:?}", s.slope);
    }

    #[test]
    fn grid_and_decade() {
        let g = probe_grid(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0), 10);
        assert_eq!(g.len(), 1000);
        assert_eq!(g[0], Vec3::new(0.05, 0.05, 0.05));
        let e = ensemble(10, 2);
        let (lo, hi) = active_cut_decade(&e).unwrap();
        assert_relative_eq!(hi, 10.0 * lo);
        assert!(e.particles().iter().all(|p| p.velocity.norm() <= hi));
        assert!(static_scaling(&e, &g, &[1.0, 0.5], &KernelSpec::regularized(0.1, 0.0).unwrap()).is_err());
    }
}
