use crate::error::{Error, Result};

/// Smallest `C >= 0` with `Q(t) <= (Q0 + C) exp(C (1 + t))` at every sample `(t, Q)`.
///
/// The right-hand side is increasing in `C`, so the answer is found by bracketing and
/// bisection to relative precision ~1e-12.
pub fn fit_growth_envelope(q0: f64, samples: &[(f64, f64)]) -> Result<f64> {
    if !(q0.is_finite() && q0 >= 0.0) {
        return Err(Error::InvalidParameter(format!("Q0 must be finite and >= 0, got {q0}")));
    }
    if samples.iter().any(|&(t, q)| !(t >= 0.0 && t.is_finite() && q.is_finite())) {
        return Err(Error::InvalidParameter("envelope samples must be finite with t >= 0".into()));
    }
    let ok = |c: f64| samples.iter().all(|&(t, q)| q <= (q0 + c) * (c * (1.0 + t)).exp());
    if ok(0.0) {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while !ok(hi) {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidParameter("no finite envelope constant found".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
