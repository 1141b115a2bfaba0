//! Plasma self-field and charge field evaluation.
//!
//! The plasma field is the softened discrete convolution
//! `E(x) = sum_j w_j (x - x_j) / (|x - x_j|^2 + eps_p^2)^(3/2)`, evaluated either by
//! direct summation or by a monopole Barnes-Hut octree. When the targets are the
//! ensemble itself the self term is excluded by index.
//!
//! Direct sums run in fixed index order per target, so results do not depend on
//! the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{coulomb_force, KernelSpec};
use crate::phase::{ChargeState, PlasmaEnsemble, SimState};
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMethod {
    Direct,
    BarnesHut,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSolverConfig {
    pub method: FieldMethod,
    /// Opening angle: a cell of half-width `s` at centroid distance `d` is accepted when `2s/d < theta`.
    pub theta: f64,
    pub leaf_capacity: usize,
    pub kernel: KernelSpec,
}

impl FieldSolverConfig {
    pub const DEFAULT_THETA: f64 = 0.5;
    pub const DEFAULT_LEAF_CAPACITY: usize = 8;

    pub fn direct(kernel: KernelSpec) -> Self {
        FieldSolverConfig {
            method: FieldMethod::Direct,
            theta: Self::DEFAULT_THETA,
            leaf_capacity: Self::DEFAULT_LEAF_CAPACITY,
            kernel,
        }
    }

    pub fn barnes_hut(kernel: KernelSpec, theta: f64) -> Self {
        FieldSolverConfig {
            method: FieldMethod::BarnesHut,
            theta,
            leaf_capacity: Self::DEFAULT_LEAF_CAPACITY,
            kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "theta must be >= 0, got {}",
                self.theta
            )));
        }
        if self.leaf_capacity == 0 {
            return Err(Error::InvalidParameter("leaf_capacity must be >= 1".into()));
        }
        self.kernel.validate()
    }
}

/// Structure-of-arrays copy of the ensemble used by the summation loops.
struct Sources {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
}

impl Sources {
    fn new(ensemble: &PlasmaEnsemble) -> Self {
        let n = ensemble.len();
        let mut s = Sources {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
        };
        for p in ensemble.particles() {
            s.x.push(p.position.x);
            s.y.push(p.position.y);
            s.z.push(p.position.z);
            s.w.push(p.weight);
        }
        s
    }

    fn len(&self) -> usize {
        self.x.len()
    }

    /// Softened field at `p` from sources `lo..hi`.
    #[inline]
    fn field_range(&self, p: Vec3, lo: usize, hi: usize, eps2: f64) -> Vec3 {
        const LANES: usize = 4;
        let (xs, ys, zs, ws) = (
            &self.x[lo..hi],
            &self.y[lo..hi],
            &self.z[lo..hi],
            &self.w[lo..hi],
        );
        let mut ax = [0.0; LANES];
        let mut ay = [0.0; LANES];
        let mut az = [0.0; LANES];
        let mut cx = xs.chunks_exact(LANES);
        let mut cy = ys.chunks_exact(LANES);
        let mut cz = zs.chunks_exact(LANES);
        let mut cw = ws.chunks_exact(LANES);
        for (((bx, by), bz), bw) in (&mut cx).zip(&mut cy).zip(&mut cz).zip(&mut cw) {
            for l in 0..LANES {
                let dx = p.x - bx[l];
                let dy = p.y - by[l];
                let dz = p.z - bz[l];
                let s2 = dx * dx + dy * dy + dz * dz + eps2;
                let f = bw[l] / (s2 * s2.sqrt());
                ax[l] += dx * f;
                ay[l] += dy * f;
                az[l] += dz * f;
            }
        }
        let mut rest = Vec3::ZERO;
        for (((&sx, &sy), &sz), &sw) in cx
            .remainder()
            .iter()
            .zip(cy.remainder())
            .zip(cz.remainder())
            .zip(cw.remainder())
        {
            let d = Vec3::new(p.x - sx, p.y - sy, p.z - sz);
            let s2 = d.norm_squared() + eps2;
            rest += d * (sw / (s2 * s2.sqrt()));
        }
        Vec3::new(
            (ax[0] + ax[1]) + (ax[2] + ax[3]) + rest.x,
            (ay[0] + ay[1]) + (ay[2] + ay[3]) + rest.y,
            (az[0] + az[1]) + (az[2] + az[3]) + rest.z,
        )
    }

    fn field_excluding(&self, p: Vec3, skip: Option<usize>, eps2: f64) -> Vec3 {
        match skip {
            Some(i) => self.field_range(p, 0, i, eps2) + self.field_range(p, i + 1, self.len(), eps2),
            None => self.field_range(p, 0, self.len(), eps2),
        }
    }

    /// Row `i` of the symmetric pair sum: adds the field of every source `j > i` at
    /// `x_i` to `acc[i]` and the reaction of `i` at `x_j` to `acc[j]`.
    ///
    /// The kernel values are computed in an elementwise pass (which vectorizes) into
    /// scratch buffers, then reduced with a fixed four-lane order.
    #[inline(always)]
    fn field_row_body(&self, i: usize, eps2: f64, acc: &mut Accumulator) {
        const LANES: usize = 4;
        let (px, py, pz, wi) = (self.x[i], self.y[i], self.z[i], self.w[i]);
        let lo = i + 1;
        let len = self.len() - lo;
        let (xs, ys, zs, ws) = (&self.x[lo..], &self.y[lo..], &self.z[lo..], &self.w[lo..]);
        let (xs, ys, zs, ws) = (&xs[..len], &ys[..len], &zs[..len], &ws[..len]);
        let (ox, oy, oz) = (&mut acc.x[lo..], &mut acc.y[lo..], &mut acc.z[lo..]);
        let (ox, oy, oz) = (&mut ox[..len], &mut oy[..len], &mut oz[..len]);
        let (tx, ty, tz) = (&mut acc.tx[..len], &mut acc.ty[..len], &mut acc.tz[..len]);
        for k in 0..len {
            let dx = px - xs[k];
            let dy = py - ys[k];
            let dz = pz - zs[k];
            let s2 = dx * dx + dy * dy + dz * dz + eps2;
            let f = 1.0 / (s2 * s2.sqrt());
            let (gx, gy, gz) = (dx * f, dy * f, dz * f);
            tx[k] = gx;
            ty[k] = gy;
            tz[k] = gz;
            ox[k] -= wi * gx;
            oy[k] -= wi * gy;
            oz[k] -= wi * gz;
        }
        let mut sx = [0.0; LANES];
        let mut sy = [0.0; LANES];
        let mut sz = [0.0; LANES];
        let full = len - len % LANES;
        for c in (0..full).step_by(LANES) {
            for l in 0..LANES {
                let k = c + l;
                sx[l] += ws[k] * tx[k];
                sy[l] += ws[k] * ty[k];
                sz[l] += ws[k] * tz[k];
            }
        }
        let (mut rx, mut ry, mut rz) = (0.0, 0.0, 0.0);
        for k in full..len {
            rx += ws[k] * tx[k];
            ry += ws[k] * ty[k];
            rz += ws[k] * tz[k];
        }
        acc.x[i] += (sx[0] + sx[1]) + (sx[2] + sx[3]) + rx;
        acc.y[i] += (sy[0] + sy[1]) + (sy[2] + sy[3]) + ry;
        acc.z[i] += (sz[0] + sz[1]) + (sz[2] + sz[3]) + rz;
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn field_row_avx2(&self, i: usize, eps2: f64, acc: &mut Accumulator) {
        self.field_row_body(i, eps2, acc)
    }

    fn field_row(&self, i: usize, eps2: f64, acc: &mut Accumulator) {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2. Without FMA contraction the wider code
            // performs the same IEEE operations, so results are identical.
            return unsafe { self.field_row_avx2(i, eps2, acc) };
        }
        self.field_row_body(i, eps2, acc)
    }

    /// `w_i * sum_{j > i} w_j / sqrt(|x_i - x_j|^2 + eps_p^2)`; `scratch` holds at least
    /// `n - i - 1` values.
    #[inline(always)]
    fn pair_potential_row_body(&self, i: usize, eps2: f64, scratch: &mut [f64]) -> f64 {
        const LANES: usize = 4;
        let (px, py, pz) = (self.x[i], self.y[i], self.z[i]);
        let lo = i + 1;
        let len = self.len() - lo;
        let (xs, ys, zs, ws) = (&self.x[lo..], &self.y[lo..], &self.z[lo..], &self.w[lo..]);
        let (xs, ys, zs, ws) = (&xs[..len], &ys[..len], &zs[..len], &ws[..len]);
        let t = &mut scratch[..len];
        for k in 0..len {
            let dx = px - xs[k];
            let dy = py - ys[k];
            let dz = pz - zs[k];
            t[k] = ws[k] / (dx * dx + dy * dy + dz * dz + eps2).sqrt();
        }
        let mut acc = [0.0; LANES];
        let full = len - len % LANES;
        for c in (0..full).step_by(LANES) {
            for l in 0..LANES {
                acc[l] += t[c + l];
            }
        }
        let rest: f64 = t[full..].iter().sum();
        self.w[i] * ((acc[0] + acc[1]) + (acc[2] + acc[3]) + rest)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn pair_potential_row_avx2(&self, i: usize, eps2: f64, scratch: &mut [f64]) -> f64 {
        self.pair_potential_row_body(i, eps2, scratch)
    }

    fn pair_potential_row(&self, i: usize, eps2: f64, scratch: &mut [f64]) -> f64 {
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: see `field_row`.
            return unsafe { self.pair_potential_row_avx2(i, eps2, scratch) };
        }
        self.pair_potential_row_body(i, eps2, scratch)
    }

    /// Index of a source coinciding with `p`, other than `skip`.
    fn coincident_source(&self, p: Vec3, skip: Option<usize>) -> Option<usize> {
        (0..self.len()).find(|&k| {
            Some(k) != skip && self.x[k] == p.x && self.y[k] == p.y && self.z[k] == p.z
        })
    }
}

fn coincidence_error(target: usize, source: usize) -> Error {
    Error::Domain(format!(
        "target {target} coincides with source particle {source} and epsilon_plasma = 0"
    ))
}

fn check_field(
    sources: &Sources,
    target_index: usize,
    p: Vec3,
    skip: Option<usize>,
    value: Vec3,
) -> Result<Vec3> {
    if !value.is_finite() {
        if let Some(k) = sources.coincident_source(p, skip) {
            return Err(coincidence_error(target_index, k));
        }
    }
    Ok(value)
}

/// Direct-sum plasma field at arbitrary target points (no self-exclusion).
pub fn plasma_field_direct(
    targets: &[Vec3],
    ensemble: &PlasmaEnsemble,
    spec: &KernelSpec,
) -> Result<Vec<Vec3>> {
    let sources = Sources::new(ensemble);
    let eps2 = spec.epsilon_plasma * spec.epsilon_plasma;
    targets
        .par_iter()
        .enumerate()
        .map(|(i, &p)| check_field(&sources, i, p, None, sources.field_excluding(p, None, eps2)))
        .collect()
}

/// Per-block partial sums of the symmetric pair loops.
struct Accumulator {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    // per-row kernel values
    tx: Vec<f64>,
    ty: Vec<f64>,
    tz: Vec<f64>,
}

/// Rows of the pair loops are dealt round-robin to this many blocks. The count is
/// fixed, and partial sums are combined in block order, so results do not depend
/// on the number of threads.
const PAIR_BLOCKS: usize = 16;

/// Direct-sum plasma field at every particle of the ensemble, excluding self terms by index.
///
/// Each pair is evaluated once and applied to both particles.
pub fn plasma_self_field_direct(ensemble: &PlasmaEnsemble, spec: &KernelSpec) -> Result<Vec<Vec3>> {
    let sources = Sources::new(ensemble);
    let n = sources.len();
    let eps2 = spec.epsilon_plasma * spec.epsilon_plasma;
    let blocks = PAIR_BLOCKS.min(n.max(1));
    let partials: Vec<Accumulator> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = Accumulator {
                x: vec![0.0; n],
                y: vec![0.0; n],
                z: vec![0.0; n],
                tx: vec![0.0; n],
                ty: vec![0.0; n],
                tz: vec![0.0; n],
            };
            for i in (b..n).step_by(blocks) {
                sources.field_row(i, eps2, &mut acc);
            }
            acc
        })
        .collect();
    let mut out = vec![Vec3::ZERO; n];
    for acc in &partials {
        for (k, o) in out.iter_mut().enumerate() {
            *o += Vec3::new(acc.x[k], acc.y[k], acc.z[k]);
        }
    }
    for (i, f) in out.iter().enumerate() {
        let p = Vec3::new(sources.x[i], sources.y[i], sources.z[i]);
        check_field(&sources, i, p, Some(i), *f)?;
    }
    Ok(out)
}

/// Softened plasma-plasma interaction energy `sum_{i < j} w_i w_j / sqrt(|x_i - x_j|^2 + eps_p^2)`.
pub(crate) fn plasma_pair_energy_direct(ensemble: &PlasmaEnsemble, spec: &KernelSpec) -> Result<f64> {
    let sources = Sources::new(ensemble);
    let n = sources.len();
    let eps2 = spec.epsilon_plasma * spec.epsilon_plasma;
    let blocks = PAIR_BLOCKS.min(n.max(1));
    let partials: Vec<f64> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut scratch = vec![0.0; n];
            (b..n).step_by(blocks).map(|i| sources.pair_potential_row(i, eps2, &mut scratch)).sum()
        })
        .collect();
    let total: f64 = partials.iter().sum();
    if !total.is_finite() {
        for i in 0..n {
            let p = Vec3::new(sources.x[i], sources.y[i], sources.z[i]);
            if let Some(k) = sources.coincident_source(p, Some(i)) {
                return Err(coincidence_error(i, k));
            }
        }
    }
    Ok(total)
}

/// One cell of the Barnes-Hut octree.
#[derive(Clone, Debug)]
pub struct OctreeNode {
    pub center: Vec3,
    pub half_width: f64,
    pub weight: f64,
    pub centroid: Vec3,
    children: [u32; 8],
    start: usize,
    end: usize,
}

const NO_CHILD: u32 = u32::MAX;
const MAX_DEPTH: usize = 48;

impl OctreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(|&c| c == NO_CHILD)
    }

    pub fn children(&self) -> impl Iterator<Item = usize> + '_ {
        self.children
            .iter()
            .filter(|&&c| c != NO_CHILD)
            .map(|&c| c as usize)
    }

    /// Number of particles contained in this cell.
    pub fn count(&self) -> usize {
        self.end - self.start
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let d = p - self.center;
        d.x.abs() <= self.half_width && d.y.abs() <= self.half_width && d.z.abs() <= self.half_width
    }
}

/// Immutable monopole octree over an ensemble.
pub struct Octree {
    nodes: Vec<OctreeNode>,
    /// Particle indices, grouped so that each node owns a contiguous range.
    order: Vec<usize>,
    positions: Vec<Vec3>,
    weights: Vec<f64>,
    leaf_capacity: usize,
}

impl Octree {
    pub fn build(ensemble: &PlasmaEnsemble, leaf_capacity: usize) -> Self {
        let leaf_capacity = leaf_capacity.max(1);
        let positions: Vec<Vec3> = ensemble.positions().collect();
        let weights: Vec<f64> = ensemble.particles().iter().map(|p| p.weight).collect();
        let mut tree = Octree {
            nodes: Vec::new(),
            order: (0..positions.len()).collect(),
            positions,
            weights,
            leaf_capacity,
        };
        if let Some((lo, hi)) = ensemble.bounding_box() {
            let center = (lo + hi) * 0.5;
            let ext = hi - lo;
            let half = 0.5 * ext.x.max(ext.y).max(ext.z);
            // pad so boundary particles sit strictly inside
            let half = half * (1.0 + 1e-12) + f64::MIN_POSITIVE.max(1e-300);
            let n = tree.order.len();
            tree.build_node(center, half, 0, n, 0);
        }
        tree
    }

    fn build_node(&mut self, center: Vec3, half: f64, start: usize, end: usize, depth: usize) -> u32 {
        let id = self.nodes.len();
        let mut weight = 0.0;
        let mut moment = Vec3::ZERO;
        for &k in &self.order[start..end] {
            weight += self.weights[k];
            moment += self.positions[k] * self.weights[k];
        }
        let centroid = if weight > 0.0 { moment / weight } else { center };
        self.nodes.push(OctreeNode {
            center,
            half_width: half,
            weight,
            centroid,
            children: [NO_CHILD; 8],
            start,
            end,
        });
        if end - start <= self.leaf_capacity || depth >= MAX_DEPTH {
            return id as u32;
        }
        let octant = |p: Vec3| -> usize {
            (p.x >= center.x) as usize | ((p.y >= center.y) as usize) << 1 | ((p.z >= center.z) as usize) << 2
        };
        let positions = &self.positions;
        self.order[start..end].sort_by_key(|&k| octant(positions[k]));
        let child_half = 0.5 * half;
        let mut s = start;
        for oct in 0..8 {
            let mut e = s;
            while e < end && octant(self.positions[self.order[e]]) == oct {
                e += 1;
            }
            if e > s {
                let offset = Vec3::new(
                    if oct & 1 != 0 { child_half } else { -child_half },
                    if oct & 2 != 0 { child_half } else { -child_half },
                    if oct & 4 != 0 { child_half } else { -child_half },
                );
                let child = self.build_node(center + offset, child_half, s, e, depth + 1);
                self.nodes[id].children[oct] = child;
            }
            s = e;
        }
        id as u32
    }

    pub fn nodes(&self) -> &[OctreeNode] {
        &self.nodes
    }

    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    /// Particle indices contained in `node`.
    pub fn members(&self, node: &OctreeNode) -> &[usize] {
        &self.order[node.start..node.end]
    }

    /// Approximate softened field at `p`, skipping particle `skip`.
    pub fn field_at(&self, p: Vec3, skip: Option<usize>, theta: f64, spec: &KernelSpec) -> Result<Vec3> {
        let mut acc = Vec3::ZERO;
        if self.nodes.is_empty() {
            return Ok(acc);
        }
        let eps2 = spec.epsilon_plasma * spec.epsilon_plasma;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.weight == 0.0 {
                continue;
            }
            if node.is_leaf() {
                for &k in &self.order[node.start..node.end] {
                    if Some(k) == skip {
                        continue;
                    }
                    let d = p - self.positions[k];
                    let s2 = d.norm_squared() + eps2;
                    if s2 == 0.0 {
                        return Err(Error::Domain(format!(
                            "field point coincides with source particle {k} and epsilon_plasma = 0"
                        )));
                    }
                    acc += d * (self.weights[k] / (s2 * s2.sqrt()));
                }
                continue;
            }
            let d = p - node.centroid;
            let dist = d.norm();
            if !node.contains(p) && 2.0 * node.half_width < theta * dist {
                let s2 = dist * dist + eps2;
                acc += d * (node.weight / (s2 * s2.sqrt()));
            } else {
                stack.extend(node.children());
            }
        }
        Ok(acc)
    }
}

/// Barnes-Hut plasma field at arbitrary targets.
pub fn plasma_field_tree(
    targets: &[Vec3],
    ensemble: &PlasmaEnsemble,
    config: &FieldSolverConfig,
) -> Result<Vec<Vec3>> {
    require_tree(config)?;
    let tree = Octree::build(ensemble, config.leaf_capacity);
    targets
        .par_iter()
        .map(|&p| tree.field_at(p, None, config.theta, &config.kernel))
        .collect()
}

/// Barnes-Hut plasma field at every particle of the ensemble, self-excluded.
pub fn plasma_self_field_tree(
    ensemble: &PlasmaEnsemble,
    config: &FieldSolverConfig,
) -> Result<Vec<Vec3>> {
    require_tree(config)?;
    let tree = Octree::build(ensemble, config.leaf_capacity);
    ensemble
        .particles()
        .par_iter()
        .enumerate()
        .map(|(i, p)| tree.field_at(p.position, Some(i), config.theta, &config.kernel))
        .collect()
}

fn require_tree(config: &FieldSolverConfig) -> Result<()> {
    config.validate()?;
    if config.method != FieldMethod::BarnesHut {
        return Err(Error::InvalidParameter(
            "tree evaluation requested with method = direct".into(),
        ));
    }
    Ok(())
}

/// Plasma self-field with the configured method.
pub fn plasma_self_field(ensemble: &PlasmaEnsemble, config: &FieldSolverConfig) -> Result<Vec<Vec3>> {
    match config.method {
        FieldMethod::Direct => plasma_self_field_direct(ensemble, &config.kernel),
        FieldMethod::BarnesHut => plasma_self_field_tree(ensemble, config),
    }
}

/// Accuracy of an approximate field against a reference, point by point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    /// `max_j |F_j - G_j| / max_j |G_j|`: worst error relative to the field scale.
    pub max_relative: f64,
    /// `max_j |F_j - G_j| / |G_j|`; dominated by points where the field nearly cancels.
    pub max_pointwise_relative: f64,
    /// `sqrt(sum |F_j - G_j|^2 / sum |G_j|^2)`.
    pub rms_relative: f64,
}

/// Compare `approx` with `exact` (same length).
pub fn field_error(approx: &[Vec3], exact: &[Vec3]) -> Result<FieldError> {
    if approx.len() != exact.len() {
        return Err(Error::InvalidParameter(format!(
            "field lengths differ: {} vs {}",
            approx.len(),
            exact.len()
        )));
    }
    if exact.is_empty() {
        return Err(Error::Empty("reference field"));
    }
    let scale = exact.iter().map(|g| g.norm()).fold(0.0, f64::max);
    let mut max_abs = 0.0f64;
    let mut pointwise = 0.0f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (f, g) in approx.iter().zip(exact) {
        let e = (*f - *g).norm();
        max_abs = max_abs.max(e);
        let gn = g.norm();
        pointwise = pointwise.max(if gn > 0.0 { e / gn } else if e > 0.0 { f64::INFINITY } else { 0.0 });
        num += e * e;
        den += gn * gn;
    }
    let rel = |a: f64, b: f64| if b > 0.0 { a / b } else if a > 0.0 { f64::INFINITY } else { 0.0 };
    Ok(FieldError {
        max_relative: rel(max_abs, scale),
        max_pointwise_relative: pointwise,
        rms_relative: rel(num.sqrt(), den.sqrt()),
    })
}

/// Regularized field of all point charges at `x`.
pub fn charge_field(x: Vec3, charges: &[ChargeState], spec: &KernelSpec) -> Vec3 {
    charges
        .iter()
        .fold(Vec3::ZERO, |acc, c| acc + spec.charge_force(x - c.position))
}

/// Field exerted by the plasma on a unit charge at `xi`.
///
/// Uses the same regularized kernel as the plasma-charge force on particles, so the
/// coupling is exactly action-reaction symmetric.
pub fn plasma_field_on_charge(xi: Vec3, ensemble: &PlasmaEnsemble, spec: &KernelSpec) -> Vec3 {
    ensemble
        .particles()
        .iter()
        .fold(Vec3::ZERO, |acc, p| acc + spec.charge_force(xi - p.position) * p.weight)
}

/// Bare Coulomb field of all charges other than `alpha`, at charge `alpha`.
pub fn charge_charge_field(alpha: usize, charges: &[ChargeState]) -> Result<Vec3> {
    let xi = charges[alpha].position;
    let mut acc = Vec3::ZERO;
    for (beta, c) in charges.iter().enumerate() {
        if beta == alpha {
            continue;
        }
        acc += coulomb_force(xi - c.position).map_err(|_| {
            Error::Domain(format!("charges {alpha} and {beta} coincide"))
        })?;
    }
    Ok(acc)
}

/// Total field felt by charge `alpha`: plasma field plus the other charges.
pub fn field_on_charge(alpha: usize, state: &SimState, config: &FieldSolverConfig) -> Result<Vec3> {
    if alpha >= state.charges.len() {
        return Err(Error::InvalidParameter(format!(
            "charge index {alpha} out of range ({} charges)",
            state.charges.len()
        )));
    }
    let xi = state.charges[alpha].position;
    Ok(plasma_field_on_charge(xi, &state.ensemble, &config.kernel)
        + charge_charge_field(alpha, &state.charges)?)
}

/// Discrete `int rho_R(x') / |x - x'|^2 dx'` over particles with speed below `r_cut`.
pub fn static_field_bound(ensemble: &PlasmaEnsemble, x: Vec3, r_cut: f64, spec: &KernelSpec) -> f64 {
    let eps2 = spec.epsilon_plasma * spec.epsilon_plasma;
    ensemble
        .particles()
        .iter()
        .filter(|p| p.velocity.norm() < r_cut)
        .map(|p| p.weight / ((x - p.position).norm_squared() + eps2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::Macroparticle;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(eps_p: f64) -> KernelSpec {
        KernelSpec::regularized(0.1, eps_p).unwrap()
    }

    fn ensemble(points: &[([f64; 3], f64)]) -> PlasmaEnsemble {
        PlasmaEnsemble::new(
            points
                .iter()
                .map(|&(x, w)| Macroparticle::new(x.into(), Vec3::ZERO, w).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn random_ensemble(n: usize, seed: u64) -> PlasmaEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = 1.0 / n as f64;
        PlasmaEnsemble::new(
            (0..n)
                .map(|_| {
                    let x = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let v = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    Macroparticle::new(x, v, w).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn direct_point_source() {
        let e = ensemble(&[([0.0; 3], 1.0)]);
        let f = plasma_field_direct(&[Vec3::new(2.0, 0.0, 0.0)], &e, &spec(0.0)).unwrap();
        assert_eq!(f[0], Vec3::new(0.25, 0.0, 0.0));
    }

    #[test]
    fn direct_symmetric_pair_cancels() {
        let e = ensemble(&[([1.0, 0.0, 0.0], 0.5), ([-1.0, 0.0, 0.0], 0.5)]);
        let f = plasma_field_direct(&[Vec3::ZERO], &e, &spec(0.0)).unwrap();
        assert_eq!(f[0], Vec3::ZERO);
    }

    #[test]
    fn direct_coincidence_without_softening_is_error() {
        let e = ensemble(&[([1.0, 0.0, 0.0], 0.5), ([1.0, 0.0, 0.0], 0.5)]);
        assert!(matches!(plasma_self_field_direct(&e, &spec(0.0)), Err(Error::Domain(_))));
        assert!(plasma_self_field_direct(&e, &spec(0.1)).is_ok());
    }

    #[test]
    fn self_field_momentum_balance() {
        let e = random_ensemble(300, 21);
        let f = plasma_self_field_direct(&e, &spec(0.05)).unwrap();
        let mut total = Vec3::ZERO;
        let mut scale = 0.0;
        for (p, fj) in e.particles().iter().zip(&f) {
            total += *fj * p.weight;
            scale += fj.norm() * p.weight;
        }
        assert!(total.norm() <= 1e-10 * scale, "{total:?} vs {scale}");
    }

    #[test]
    fn tree_invariants() {
        let e = random_ensemble(2000, 4);
        let tree = Octree::build(&e, 8);
        for node in tree.nodes() {
            assert!(node.contains(node.centroid) || node.weight == 0.0);
            if node.is_leaf() {
                assert!(node.count() <= 8);
            } else {
                let sum: f64 = node.children().map(|c| tree.nodes()[c].weight).sum();
                assert_relative_eq!(node.weight, sum, max_relative = 1e-12);
                let count: usize = node.children().map(|c| tree.nodes()[c].count()).sum();
                assert_eq!(count, node.count());
            }
            for &k in tree.members(node) {
                assert!(node.contains(e.particles()[k].position));
            }
        }
        assert_relative_eq!(tree.nodes()[0].weight, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn tree_theta_zero_is_exact() {
        let e = random_ensemble(1500, 8);
        let cfg = FieldSolverConfig::barnes_hut(spec(0.02), 0.0);
        let tree = plasma_self_field_tree(&e, &cfg).unwrap();
        let direct = plasma_self_field_direct(&e, &cfg.kernel).unwrap();
        for (a, b) in tree.iter().zip(&direct) {
            assert!((*a - *b).norm() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn field_error_metrics() {
        let exact = [Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0)];
        let approx = [Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.01)];
        let e = field_error(&approx, &exact).unwrap();
        assert_relative_eq!(e.max_relative, 0.01 / 2.0, max_relative = 1e-12);
        assert_relative_eq!(e.max_pointwise_relative, 0.1, max_relative = 1e-12);
        assert_relative_eq!(e.rms_relative, 0.01 / 4.01f64.sqrt(), max_relative = 1e-12);
        assert_eq!(field_error(&exact, &exact).unwrap().max_relative, 0.0);
        assert!(field_error(&exact[..1], &exact).is_err());
        assert!(field_error(&[], &[]).is_err());
    }

    #[test]
    fn tree_single_particle_exact_for_any_theta() {
        let e = ensemble(&[([0.3, -0.2, 0.1], 1.0)]);
        let targets = [Vec3::new(2.0, 1.0, 0.0), Vec3::new(-0.5, 0.0, 3.0)];
        for theta in [0.1, 0.5, 1.0, 2.0] {
            let cfg = FieldSolverConfig::barnes_hut(spec(0.0), theta);
            let t = plasma_field_tree(&targets, &e, &cfg).unwrap();
            let d = plasma_field_direct(&targets, &e, &cfg.kernel).unwrap();
            assert_eq!(t, d);
        }
    }

    #[test]
    fn tree_requires_barnes_hut_method() {
        let e = random_ensemble(10, 1);
        assert!(plasma_field_tree(&[Vec3::ZERO], &e, &FieldSolverConfig::direct(spec(0.1))).is_err());
    }

    #[test]
    fn charge_field_examples() {
        let s = spec(0.0);
        let c = [ChargeState::at_rest(Vec3::ZERO)];
        assert_eq!(charge_field(Vec3::new(1.0, 0.0, 0.0), &c, &s), Vec3::new(1.0, 0.0, 0.0));
        let pair = [
            ChargeState::at_rest(Vec3::new(1.0, 0.0, 0.0)),
            ChargeState::at_rest(Vec3::new(-1.0, 0.0, 0.0)),
        ];
        assert_eq!(charge_field(Vec3::ZERO, &pair, &s), Vec3::ZERO);

        // inside the core of the first charge, far from the second
        let mixed = [
            ChargeState::at_rest(Vec3::ZERO),
            ChargeState::at_rest(Vec3::new(0.0, 3.0, 0.0)),
        ];
        let x = Vec3::new(0.04, 0.0, 0.03);
        let interior = x / (0.1 * 0.1 * 0.1);
        let r = x - Vec3::new(0.0, 3.0, 0.0);
        let exterior = r / r.norm().powi(3);
        let f = charge_field(x, &mixed, &s);
        for i in 0..3 {
            assert_relative_eq!(f[i], interior[i] + exterior[i], max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn field_on_charge_examples() {
        let cfg = FieldSolverConfig::direct(spec(0.0));
        let two = SimState::new(
            0.0,
            PlasmaEnsemble::empty(),
            vec![
                ChargeState::at_rest(Vec3::new(1.0, 0.0, 0.0)),
                ChargeState::at_rest(Vec3::new(-1.0, 0.0, 0.0)),
            ],
        );
        assert_eq!(field_on_charge(0, &two, &cfg).unwrap(), Vec3::new(0.25, 0.0, 0.0));
        assert_eq!(field_on_charge(1, &two, &cfg).unwrap(), Vec3::new(-0.25, 0.0, 0.0));

        let three = SimState::new(
            0.0,
            PlasmaEnsemble::empty(),
            vec![
                ChargeState::at_rest(Vec3::new(-0.7, 0.0, 0.0)),
                ChargeState::at_rest(Vec3::ZERO),
                ChargeState::at_rest(Vec3::new(0.7, 0.0, 0.0)),
            ],
        );
        assert_eq!(field_on_charge(1, &three, &cfg).unwrap(), Vec3::ZERO);

        let same = SimState::new(
            0.0,
            PlasmaEnsemble::empty(),
            vec![ChargeState::at_rest(Vec3::ZERO), ChargeState::at_rest(Vec3::ZERO)],
        );
        assert!(field_on_charge(0, &same, &cfg).is_err());
        assert!(field_on_charge(5, &same, &cfg).is_err());
    }

    #[test]
    fn field_on_charge_in_symmetric_shell_is_small() {
        // Antipodal pairs on a sphere: the discrete sum cancels to roundoff, far below
        // the 3-sigma Monte Carlo bound of an independent shell sample.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = 2000;
        let mut ps = Vec::with_capacity(m);
        for _ in 0..m / 2 {
            let v = loop {
                let v = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                let n = v.norm();
                if n > 0.1 && n <= 1.0 {
                    break v / n;
                }
            };
            ps.push(Macroparticle::new(v, Vec3::ZERO, 1.0 / m as f64).unwrap());
            ps.push(Macroparticle::new(-v, Vec3::ZERO, 1.0 / m as f64).unwrap());
        }
        let state = SimState::new(
            0.0,
            PlasmaEnsemble::new(ps).unwrap(),
            vec![ChargeState::at_rest(Vec3::ZERO)],
        );
        let f = field_on_charge(0, &state, &FieldSolverConfig::direct(spec(0.0))).unwrap();
        // each term has magnitude w; 3 sigma of a random sum of m unit-vector terms of size w
        let sigma = (m as f64).sqrt() / m as f64;
        assert!(f.norm() < 3.0 * sigma, "{f:?}");
        assert!(f.norm() < 1e-12);
    }

    #[test]
    fn static_bound_examples() {
        let s = spec(0.0);
        let fast = PlasmaEnsemble::new(vec![
            Macroparticle::new(Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0), 1.0).unwrap(),
        ])
        .unwrap();
        assert_eq!(static_field_bound(&fast, Vec3::new(1.0, 0.0, 0.0), 2.0, &s), 0.0);
        let slow = ensemble(&[([0.0; 3], 1.0)]);
        assert_eq!(static_field_bound(&slow, Vec3::new(2.0, 0.0, 0.0), 1e-3, &s), 0.25);

        let e = random_ensemble(1000, 31);
        let x = Vec3::new(0.2, 0.1, -0.4);
        for r in [0.3, 0.8, 1.5] {
            let mut oracle = 0.0;
            for p in e.particles() {
                let v = p.velocity;
                if (v.x * v.x + v.y * v.y + v.z * v.z).sqrt() < r {
                    let d = x - p.position;
                    oracle += p.weight / (d.x * d.x + d.y * d.y + d.z * d.z);
                }
            }
            assert_relative_eq!(static_field_bound(&e, x, r, &s), oracle, max_relative = 1e-12);
        }
        let mut last = 0.0;
        for k in 0..30 {
            let v = static_field_bound(&e, x, 0.1 * k as f64, &s);
            assert!(v >= last);
            last = v;
        }
    }
}
