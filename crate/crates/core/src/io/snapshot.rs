//! Binary snapshot files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 8    | magic `VPCSNAP\0`             |
//! | 8      | 4    | format version (u32, = 1)     |
//! | 12     | 8    | time (f64)                    |
//! | 20     | 8    | M, particle count (u64)       |
//! | 28     | 8    | N, charge count (u64)         |
//! | 36     | 8    | epsilon (f64)                 |
//! | 44     | 8    | epsilon_plasma (f64)          |
//! | 52     | 8    | seed (u64)                    |
//! | 60     | 8    | config hash (u64)             |
//! | 68     | 56 M | particles: x y z vx vy vz w   |
//! | ...    | 48 N | charges: xi_x xi_y xi_z eta_x eta_y eta_z |
//!
//! Floats are stored with `to_le_bytes`, so a round trip is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::phase::{ChargeState, Macroparticle, PlasmaEnsemble, SimState};
use crate::vec3::Vec3;

pub const MAGIC: &[u8; 8] = b"VPCSNAP\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 68;

/// Metadata stored alongside the state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub epsilon: f64,
    pub epsilon_plasma: f64,
    pub seed: u64,
    pub config_hash: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub state: SimState,
}

impl Snapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.state;
        let mut out = Vec::with_capacity(HEADER_LEN + 56 * s.particle_count() + 48 * s.charge_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&s.time.to_le_bytes());
        out.extend_from_slice(&(s.particle_count() as u64).to_le_bytes());
        out.extend_from_slice(&(s.charge_count() as u64).to_le_bytes());
        out.extend_from_slice(&self.header.epsilon.to_le_bytes());
        out.extend_from_slice(&self.header.epsilon_plasma.to_le_bytes());
        out.extend_from_slice(&self.header.seed.to_le_bytes());
        out.extend_from_slice(&self.header.config_hash.to_le_bytes());
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        for p in s.ensemble.particles() {
            for v in [p.position.x, p.position.y, p.position.z, p.velocity.x, p.velocity.y, p.velocity.z, p.weight] {
                put(v);
            }
        }
        for c in &s.charges {
            for v in [c.position.x, c.position.y, c.position.z, c.velocity.x, c.velocity.y, c.velocity.z] {
                put(v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Snapshot(m);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let f64_at = |o: usize| f64::from_bits(u64_at(o));
        let version = u32_at(8);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let time = f64_at(12);
        let m = u64_at(20) as usize;
        let n = u64_at(28) as usize;
        let expected = m
            .checked_mul(56)
            .and_then(|a| n.checked_mul(48).and_then(|b| a.checked_add(b)))
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| bad("row counts overflow".into()))?;
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes for M = {m}, N = {n}, found {}", bytes.len())));
        }
        let header = SnapshotHeader {
            epsilon: f64_at(36),
            epsilon_plasma: f64_at(44),
            seed: u64_at(52),
            config_hash: u64_at(60),
        };
        let mut o = HEADER_LEN;
        let mut next = || {
            let v = f64_at(o);
            o += 8;
            v
        };
        let mut particles = Vec::with_capacity(m);
        for j in 0..m {
            let x = Vec3::new(next(), next(), next());
            let v = Vec3::new(next(), next(), next());
            let w = next();
            particles.push(Macroparticle::new(x, v, w).map_err(|e| bad(format!("particle {j}: {e}")))?);
        }
        let mut charges = Vec::with_capacity(n);
        for a in 0..n {
            let c = ChargeState::new(Vec3::new(next(), next(), next()), Vec3::new(next(), next(), next()));
            if !(c.position.is_finite() && c.velocity.is_finite()) {
                return Err(bad(format!("charge {a} has non-finite coordinates")));
            }
            charges.push(c);
        }
        let ensemble = PlasmaEnsemble::new(particles).map_err(|e| bad(e.to_string()))?;
        Ok(Snapshot {
            header,
            state: SimState::new(time, ensemble, charges),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Snapshot::from_bytes(&fs::read(path)?)
    }
}
