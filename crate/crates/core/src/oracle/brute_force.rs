//! Naive double-loop field sums, written independently of the field solver.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::phase::PlasmaEnsemble;
use crate::vec3::Vec3;

fn plummer(target: Vec3, source: Vec3, weight: f64, eps_p: f64) -> Result<[f64; 3]> {
    let dx = target.x - source.x;
    let dy = target.y - source.y;
    let dz = target.z - source.z;
    let s2 = dx * dx + dy * dy + dz * dz + eps_p * eps_p;
    if s2 == 0.0 {
        return Err(Error::Domain("target coincides with an unsoftened source".into()));
    }
    let f = weight / (s2 * s2.sqrt());
    Ok([f * dx, f * dy, f * dz])
}

/// `E(x_i) = sum_j w_j (x_i - x_j) / (|x_i - x_j|^2 + eps_p^2)^(3/2)`, one term at a time.
pub fn field_brute_force(targets: &[Vec3], ensemble: &PlasmaEnsemble, spec: &KernelSpec) -> Result<Vec<Vec3>> {
    let mut out = Vec::with_capacity(targets.len());
    for &t in targets {
        let mut e = [0.0; 3];
        for p in ensemble.particles() {
            let f = plummer(t, p.position, p.weight, spec.epsilon_plasma)?;
            for k in 0..3 {
                e[k] += f[k];
            }
        }
        out.push(Vec3::from(e));
    }
    Ok(out)
}

/// Field at every particle with its own contribution left out.
pub fn self_field_brute_force(ensemble: &PlasmaEnsemble, spec: &KernelSpec) -> Result<Vec<Vec3>> {
    let ps = ensemble.particles();
    let mut out = Vec::with_capacity(ps.len());
    for (i, pi) in ps.iter().enumerate() {
        let mut e = [0.0; 3];
        for (j, pj) in ps.iter().enumerate() {
            if i == j {
                continue;
            }
            let f = plummer(pi.position, pj.position, pj.weight, spec.epsilon_plasma)?;
            for k in 0..3 {
                e[k] += f[k];
            }
        }
        out.push(Vec3::from(e));
    }
    Ok(out)
}
