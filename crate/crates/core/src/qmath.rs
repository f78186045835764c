//! q-deformed logarithm and exponential, Tsallis entropy and Tsallis
//! relative entropy.
//!
//! All formulas are evaluated through `ln_1p`/`exp_m1` so that they stay
//! accurate when `q` is close to 1. Exactly at `|q - 1| < Q_ONE_TOL` the
//! classical (Shannon / KL) formulas are used instead.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Width of the band around `q = 1` that is routed to the classical formulas.
pub const Q_ONE_TOL: f64 = 1e-9;

#[inline]
pub fn is_classical(q: f64) -> bool {
    (q - 1.0).abs() < Q_ONE_TOL
}

/// Result of an exponential that may overflow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QExp {
    pub value: f64,
    /// Set when the true value exceeds `f64::MAX` (or is unbounded); `value`
    /// is then `f64::MAX`.
    pub saturated: bool,
}

impl QExp {
    fn finite(value: f64) -> Self {
        if value.is_finite() {
            QExp { value, saturated: false }
        } else {
            QExp { value: f64::MAX, saturated: true }
        }
    }
}

/// `log_q(x) = (x^{1-q} - 1) / (1 - q)`, `ln x` at q = 1.
pub fn q_log(x: f64, q: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("q_log needs a finite x > 0, got {x}")));
    }
    if !q.is_finite() {
        return Err(Error::Domain(format!("q must be finite, got {q}")));
    }
    Ok(q_log_unchecked(x, q))
}

/// [`q_log`] without argument validation. `x` must be positive.
#[inline]
pub fn q_log_unchecked(x: f64, q: f64) -> f64 {
    if is_classical(q) {
        x.ln()
    } else {
        let k = 1.0 - q;
        (k * x.ln()).exp_m1() / k
    }
}

/// `exp_q(x) = (1 + (1-q) x)^{1/(1-q)}` with the cutoff convention.
///
/// For `q < 1` a non-positive base gives 0. For `q > 1` the value blows up as
/// the base reaches 0; anything past the pole is reported as saturated.
pub fn q_exp_checked(x: f64, q: f64) -> QExp {
    if is_classical(q) {
        return QExp::finite(x.exp());
    }
    let k = 1.0 - q;
    let t = k * x;
    if t <= -1.0 {
        if k > 0.0 {
            return QExp { value: 0.0, saturated: false };
        }
        return QExp { value: f64::MAX, saturated: true };
    }
    QExp::finite((t.ln_1p() / k).exp())
}

/// Value part of [`q_exp_checked`].
#[inline]
pub fn q_exp(x: f64, q: f64) -> f64 {
    q_exp_checked(x, q).value
}

/// `exp_q(x)^{-1} = (1 + (1-q) x)^{-1/(1-q)}`, the reciprocal q-exponential
/// appearing in regularized plans.
///
/// For `q > 1` a non-positive base gives 0 (the plan entry is cut off). For
/// `q < 1` the value is unbounded there and `f64::MAX` is returned.
#[inline]
pub fn q_exp_recip(x: f64, q: f64) -> f64 {
    if is_classical(q) {
        return (-x).exp().min(f64::MAX);
    }
    let k = 1.0 - q;
    let t = k * x;
    if t <= -1.0 {
        return if k < 0.0 { 0.0 } else { f64::MAX };
    }
    (-t.ln_1p() / k).exp().min(f64::MAX)
}

/// `p^q` with `0^q = 0` for every `q`, including `q = 0`.
#[inline]
pub fn pow0(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p.powf(q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyReport {
    pub h_q: f64,
    pub q: f64,
}

/// Single-cell contribution `(p^q - p)/(1-q)` to the Tsallis entropy.
#[inline]
pub fn entropy_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    if is_classical(q) {
        -p * p.ln()
    } else {
        let k = q - 1.0;
        -p * (k * p.ln()).exp_m1() / k
    }
}

/// Tsallis entropy of a vector or (flattened) matrix.
pub fn tsallis_entropy<'a, I>(p: I, q: f64) -> Result<EntropyReport>
where
    I: IntoIterator<Item = &'a f64>,
{
    if !q.is_finite() {
        return Err(Error::Domain(format!("q must be finite, got {q}")));
    }
    let mut h = 0.0;
    for &x in p {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!("entropy needs nonnegative entries, got {x}")));
        }
        h += entropy_term(x, q);
    }
    Ok(EntropyReport { h_q: h, q })
}

/// Single-cell contribution to `K_q(P, R)`. May be `+inf`.
///
/// A zero `p` contributes `r`. A positive `p` against a zero `r` is infinite
/// for `q >= 1` and finite (`q p / (1-q)`) for `q < 1`.
#[inline]
pub fn relative_entropy_term(p: f64, r: f64, q: f64) -> f64 {
    if p == 0.0 {
        return r;
    }
    let classical = is_classical(q);
    if r == 0.0 {
        if classical || q > 1.0 {
            return f64::INFINITY;
        }
        return q * p / (1.0 - q);
    }
    if classical {
        p * (p / r).ln() + r - p
    } else {
        let k = 1.0 - q;
        -p * (k * (r / p).ln()).exp_m1() / k + (r - p)
    }
}

/// Tsallis relative q-entropy `K_q(P, R)`. Returns `+inf` on an
/// absolute-continuity violation.
pub fn tsallis_relative_entropy(p: ArrayView2<f64>, r: ArrayView2<f64>, q: f64) -> Result<f64> {
    if p.dim() != r.dim() {
        return Err(Error::Shape(format!(
            "relative entropy of {:?} against {:?}",
            p.dim(),
            r.dim()
        )));
    }
    if !q.is_finite() {
        return Err(Error::Domain(format!("q must be finite, got {q}")));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(r.iter()) {
        if !(a >= 0.0 && b >= 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Domain(format!(
                "relative entropy needs nonnegative entries, got ({a}, {b})"
            )));
        }
        total += relative_entropy_term(a, b, q);
    }
    Ok(total)
}

/// Element-wise `p^q` with `0^q = 0`.
pub fn escort_power(p: ArrayView2<f64>, q: f64) -> Array2<f64> {
    p.mapv(|x| pow0(x, q))
}
