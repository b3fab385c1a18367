//! Value distortion `u = (u+, u-)` and probability distortion `w = (w+, w-)`
//! with grid-based validity certificates.
//!
//! Shape constraints are checked by finite differences on a uniform grid
//! (1024 knots by default) with tolerance `1e-8`:
//!
//! * `u+` non-decreasing and concave on `[0, r_max]`, `u+(0) = 0`, right slope
//!   at 0 at most 1;
//! * `u-` non-decreasing and convex on `[-r_max, 0]`, `u-(0) = 0`, left slope
//!   at 0 strictly above 1;
//! * `w+` and `w-` map `[0, 1]` onto `[0, 1]` monotonically, with an interior
//!   fixed point; the derivative of `w+` falls then rises (inverse-S) and the
//!   derivative of `w-` rises then falls (S-shape, so small cumulative loss
//!   probabilities are under-weighted).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GRID: usize = 1024;
pub const SHAPE_TOL: f64 = 1e-8;
/// Step for the one-sided slope estimates at the origin.
pub const SLOPE_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistortionError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("distortion fails validation: {0}")]
    CertificateFailed(String),
    #[error("function is not evaluable at {at}: got {value}")]
    NonEvaluable { at: f64, value: f64 },
    #[error("flat region {p_flat} must lie below the fixed point {fixed_point} of w-")]
    FlatRegionTooLarge { p_flat: f64, fixed_point: f64 },
    #[error("invalid table: {0}")]
    InvalidTable(String),
}

/// Monotone piecewise-linear interpolant through strictly increasing knots.
/// Outside the knot range the end segments are extended linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, DistortionError> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(DistortionError::InvalidTable("need at least two (x, y) knots of equal length".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DistortionError::InvalidTable("x-grid must be strictly increasing".into()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(DistortionError::InvalidTable("knots must be finite".into()));
        }
        Ok(PiecewiseLinear { x, y })
    }

    /// Samples `f` on `n` evenly spaced knots of `[lo, hi]`.
    pub fn sample(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        let x = grid(lo, hi, n);
        let y = x.iter().map(|&v| f(v)).collect();
        PiecewiseLinear { x, y }
    }

    pub fn eval(&self, v: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.binary_search_by(|k| k.total_cmp(&v)) {
            Ok(i) => return self.y[i],
            Err(i) => i.clamp(1, n - 1),
        };
        let (x0, x1, y0, y1) = (self.x[i - 1], self.x[i], self.y[i - 1], self.y[i]);
        y0 + (y1 - y0) * (v - x0) / (x1 - x0)
    }
}

/// One branch of the value distortion, evaluated on its own half-line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ValueCurve {
    /// `slope * x`.
    Linear {
        slope: f64,
    },
    /// Gains: `min(x, x^exponent)`, concave with unit slope at 0.
    CappedPower {
        exponent: f64,
    },
    /// Raw power `coef * sign(x) |x|^exponent`.
    Power {
        coef: f64,
        exponent: f64,
    },
    /// Losses: `-lambda (-x)^exponent`.
    LossPower {
        lambda: f64,
        exponent: f64,
    },
    Table(PiecewiseLinear),
}

impl ValueCurve {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ValueCurve::Linear { slope } => slope * x,
            ValueCurve::CappedPower { exponent } => {
                let ax = x.abs();
                x.signum() * ax.min(ax.powf(*exponent))
            }
            ValueCurve::Power { coef, exponent } => coef * x.signum() * x.abs().powf(*exponent),
            ValueCurve::LossPower { lambda, exponent } => -lambda * (-x).max(0.0).powf(*exponent),
            ValueCurve::Table(t) => t.eval(x),
        }
    }
}

/// One branch of the probability distortion on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum WeightCurve {
    Identity,
    /// `p^g / (p^g + (1-p)^g)^(1/g)`: inverse-S for `g < 1`.
    TverskyKahneman {
        gamma: f64,
    },
    /// Functional inverse of the Tversky-Kahneman curve: S-shaped, same
    /// fixed point.
    InverseTverskyKahneman {
        gamma: f64,
    },
    /// `p^exponent`.
    Power {
        exponent: f64,
    },
    Table(PiecewiseLinear),
    /// Exactly zero on `[0, p_flat]`, then the base curve rescaled onto
    /// `(p_flat, 1]`.
    Flat {
        p_flat: f64,
        base: Box<WeightCurve>,
    },
}

pub fn tversky_kahneman(p: f64, gamma: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let a = p.powf(gamma);
    let b = (1.0 - p).powf(gamma);
    a / (a + b).powf(1.0 / gamma)
}

fn inverse_tversky_kahneman(x: f64, gamma: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if tversky_kahneman(mid, gamma) < x {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * 0.5 {
            break;
        }
    }
    0.5 * (lo + hi)
}

impl WeightCurve {
    pub fn eval(&self, p: f64) -> f64 {
        match self {
            WeightCurve::Identity => p.clamp(0.0, 1.0),
            WeightCurve::TverskyKahneman { gamma } => tversky_kahneman(p, *gamma),
            WeightCurve::InverseTverskyKahneman { gamma } => inverse_tversky_kahneman(p, *gamma),
            WeightCurve::Power { exponent } => p.clamp(0.0, 1.0).powf(*exponent),
            WeightCurve::Table(t) => t.eval(p),
            WeightCurve::Flat { p_flat, base } => {
                if p <= *p_flat {
                    0.0
                } else {
                    base.eval(((p - p_flat) / (1.0 - p_flat)).min(1.0))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueDistortion {
    pub plus: ValueCurve,
    pub minus: ValueCurve,
    pub r_max: f64,
}

impl ValueDistortion {
    pub fn u_plus(&self, x: f64) -> f64 {
        self.plus.eval(x)
    }

    pub fn u_minus(&self, x: f64) -> f64 {
        self.minus.eval(x)
    }

    /// Branch by sign: `u+` for `x >= 0`, `u-` otherwise.
    pub fn eval(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.u_plus(x)
        } else {
            self.u_minus(x)
        }
    }

    pub fn identity(r_max: f64) -> Self {
        ValueDistortion { plus: ValueCurve::Linear { slope: 1.0 }, minus: ValueCurve::Linear { slope: 1.0 }, r_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDistortion {
    pub plus: WeightCurve,
    pub minus: WeightCurve,
}

impl ProbabilityDistortion {
    pub fn w_plus(&self, p: f64) -> f64 {
        self.plus.eval(p)
    }

    pub fn w_minus(&self, p: f64) -> f64 {
        self.minus.eval(p)
    }

    pub fn identity() -> Self {
        ProbabilityDistortion { plus: WeightCurve::Identity, minus: WeightCurve::Identity }
    }

    /// Largest finite-difference slope of `w+` and `w-` over a `knots` grid.
    pub fn lipschitz(&self, knots: usize) -> (f64, f64) {
        let slope = |c: &WeightCurve| {
            let xs = grid(0.0, 1.0, knots);
            xs.windows(2).map(|w| (c.eval(w[1]) - c.eval(w[0])) / (w[1] - w[0])).fold(0.0f64, f64::max)
        };
        (slope(&self.plus), slope(&self.minus))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Waived,
}

/// Outcome of one constraint, with the first violating grid point when it
/// failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint: String,
    pub status: CheckStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<f64>,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Certificate {
    pub checks: Vec<ConstraintCheck>,
}

impl Certificate {
    fn push(&mut self, constraint: &str, ok: bool, witness: Option<f64>, detail: impl Into<String>) {
        self.checks.push(ConstraintCheck {
            constraint: constraint.to_string(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            witness: if ok { None } else { witness },
            detail: detail.into(),
        });
    }

    fn waive(&mut self, constraint: &str, detail: impl Into<String>) {
        for c in self.checks.iter_mut().filter(|c| c.constraint == constraint) {
            c.status = CheckStatus::Waived;
        }
        if !self.checks.iter().any(|c| c.constraint == constraint) {
            self.checks.push(ConstraintCheck {
                constraint: constraint.to_string(),
                status: CheckStatus::Waived,
                witness: None,
                detail: String::new(),
            });
        }
        let detail = detail.into();
        for c in self.checks.iter_mut().filter(|c| c.constraint == constraint) {
            c.detail = detail.clone();
        }
    }

    /// No constraint failed (waived constraints are allowed).
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> Vec<&ConstraintCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail).collect()
    }

    pub fn status(&self, constraint: &str) -> Option<CheckStatus> {
        self.checks.iter().find(|c| c.constraint == constraint).map(|c| c.status)
    }

    pub fn merge(mut self, other: Certificate) -> Certificate {
        self.checks.extend(other.checks);
        self
    }
}

pub(crate) fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
}

fn evaluate_on(xs: &[f64], f: impl Fn(f64) -> f64) -> Result<Vec<f64>, DistortionError> {
    xs.iter()
        .map(|&x| {
            let v = f(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(DistortionError::NonEvaluable { at: x, value: v })
            }
        })
        .collect()
}

fn first_index(mut pred: impl FnMut(usize) -> bool, n: usize) -> Option<usize> {
    (0..n).find(|&i| pred(i))
}

/// Checks `u` against the value-distortion constraints on a `knots` grid.
pub fn validate_value_distortion_on(u: &ValueDistortion, knots: usize) -> Result<Certificate, DistortionError> {
    let mut cert = Certificate::default();
    let r = u.r_max;
    let xp = grid(0.0, r, knots);
    let xm = grid(-r, 0.0, knots);
    let yp = evaluate_on(&xp, |x| u.u_plus(x))?;
    let ym = evaluate_on(&xm, |x| u.u_minus(x))?;
    let scale_p = yp.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let scale_m = ym.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol_p = SHAPE_TOL * scale_p;
    let tol_m = SHAPE_TOL * scale_m;

    let u0p = u.u_plus(0.0);
    cert.push("u_plus_zero", u0p.abs() <= SHAPE_TOL, Some(0.0), format!("u+(0) = {u0p}"));
    let u0m = u.u_minus(0.0);
    cert.push("u_minus_zero", u0m.abs() <= SHAPE_TOL, Some(0.0), format!("u-(0) = {u0m}"));

    let bad = first_index(|i| yp[i + 1] - yp[i] < -tol_p, knots - 1);
    cert.push("u_plus_monotone", bad.is_none(), bad.map(|i| xp[i]), "");
    let bad = first_index(|i| yp[i + 2] - 2.0 * yp[i + 1] + yp[i] > tol_p, knots - 2);
    cert.push("u_plus_concave", bad.is_none(), bad.map(|i| xp[i + 1]), "");
    let bad = first_index(|i| ym[i + 1] - ym[i] < -tol_m, knots - 1);
    cert.push("u_minus_monotone", bad.is_none(), bad.map(|i| xm[i]), "");
    let bad = first_index(|i| ym[i + 2] - 2.0 * ym[i + 1] + ym[i] < -tol_m, knots - 2);
    cert.push("u_minus_convex", bad.is_none(), bad.map(|i| xm[i + 1]), "");

    let h = SLOPE_STEP.min(r);
    let right = (u.u_plus(h) - u0p) / h;
    cert.push("u_plus_slope_at_zero", right.is_finite() && right <= 1.0 + SHAPE_TOL, Some(h), format!("right slope {right}"));
    let left = (u0m - u.u_minus(-h)) / h;
    cert.push("u_minus_slope_at_zero", left.is_nan() || left > 1.0 + SHAPE_TOL, Some(-h), format!("left slope {left}"));
    Ok(cert)
}

pub fn validate_value_distortion(u: &ValueDistortion) -> Result<Certificate, DistortionError> {
    validate_value_distortion_on(u, DEFAULT_GRID)
}

/// Which derivative profile a weighting branch must have.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightShape {
    /// Derivative decreasing then increasing (gains).
    InverseS,
    /// Derivative increasing then decreasing (losses).
    S,
}

/// Interior fixed point `w(a) = a` located by grid scan and bisection.
pub fn fixed_point(w: &WeightCurve, knots: usize) -> Option<f64> {
    let xs = grid(0.0, 1.0, knots);
    let g = |x: f64| w.eval(x) - x;
    let interior = &xs[1..xs.len() - 1];
    if let Some(&x) = interior.iter().find(|&&x| g(x).abs() <= SHAPE_TOL) {
        // Touching or identically zero: refine only if there is a sign change nearby.
        return Some(x);
    }
    for pair in interior.windows(2) {
        let (mut lo, mut hi) = (pair[0], pair[1]);
        if g(lo).signum() == g(hi).signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid).signum() == g(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Some(0.5 * (lo + hi));
    }
    None
}

fn validate_weight(cert: &mut Certificate, name: &str, w: &WeightCurve, shape: WeightShape, knots: usize) -> Result<(), DistortionError> {
    let xs = grid(0.0, 1.0, knots);
    let ys = evaluate_on(&xs, |p| w.eval(p))?;
    let w0 = w.eval(0.0);
    let w1 = w.eval(1.0);
    cert.push(
        &format!("{name}_endpoints"),
        w0.abs() <= SHAPE_TOL && (w1 - 1.0).abs() <= SHAPE_TOL,
        Some(if w0.abs() > SHAPE_TOL { 0.0 } else { 1.0 }),
        format!("w(0) = {w0}, w(1) = {w1}"),
    );
    let bad = first_index(|i| !(-SHAPE_TOL..=1.0 + SHAPE_TOL).contains(&ys[i]), knots);
    cert.push(&format!("{name}_range"), bad.is_none(), bad.map(|i| xs[i]), "");
    let bad = first_index(|i| ys[i + 1] - ys[i] < -SHAPE_TOL, knots - 1);
    cert.push(&format!("{name}_monotone"), bad.is_none(), bad.map(|i| xs[i]), "");

    let fp = fixed_point(w, knots);
    let fp_ok = fp.map(|a| (w.eval(a) - a).abs() <= SHAPE_TOL).unwrap_or(false);
    cert.push(
        &format!("{name}_fixed_point"),
        fp_ok,
        None,
        fp.map(|a| format!("fixed point {a}")).unwrap_or_else(|| "no interior fixed point".into()),
    );

    // Finite-difference derivative at cell midpoints; it must be unimodal
    // around its own turning point and vary on both sides of it.
    let d: Vec<f64> = (0..knots - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
    let sign = match shape {
        WeightShape::InverseS => 1.0,
        WeightShape::S => -1.0,
    };
    // For InverseS the turning point is the minimum of d; for S the maximum.
    let turn = (0..d.len()).min_by(|&i, &j| (sign * d[i]).total_cmp(&(sign * d[j]))).unwrap_or(0);
    let scale = d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = SHAPE_TOL * scale;
    let before = first_index(|i| i < turn && sign * (d[i + 1] - d[i]) > tol, d.len() - 1);
    let after = first_index(|i| i >= turn && sign * (d[i + 1] - d[i]) < -tol, d.len() - 1);
    let varies = sign * (d[0] - d[turn]) > tol && sign * (d[d.len() - 1] - d[turn]) > tol;
    let witness = before.or(after).map(|i| 0.5 * (xs[i + 1] + xs[i + 2]));
    let label = match shape {
        WeightShape::InverseS => "derivative must fall then rise",
        WeightShape::S => "derivative must rise then fall",
    };
    cert.push(
        &format!("{name}_derivative_shape"),
        before.is_none() && after.is_none() && varies,
        witness.or(Some(xs[turn])),
        format!("{label}; turning point near {}", 0.5 * (xs[turn] + xs[turn + 1])),
    );
    Ok(())
}

pub fn validate_probability_distortion_on(w: &ProbabilityDistortion, knots: usize) -> Result<Certificate, DistortionError> {
    let mut cert = Certificate::default();
    validate_weight(&mut cert, "w_plus", &w.plus, WeightShape::InverseS, knots)?;
    validate_weight(&mut cert, "w_minus", &w.minus, WeightShape::S, knots)?;
    // The inverse family is only well defined where the forward curve is monotone.
    if let Some(gamma) = inverse_gamma(&w.minus) {
        let xs = grid(0.0, 1.0, knots);
        let bad = xs.windows(2).position(|p| tversky_kahneman(p[1], gamma) < tversky_kahneman(p[0], gamma) - SHAPE_TOL);
        cert.push("w_minus_invertible", bad.is_none(), bad.map(|i| xs[i]), format!("forward curve with gamma {gamma}"));
    }
    Ok(cert)
}

pub fn validate_probability_distortion(w: &ProbabilityDistortion) -> Result<Certificate, DistortionError> {
    validate_probability_distortion_on(w, DEFAULT_GRID)
}

fn inverse_gamma(c: &WeightCurve) -> Option<f64> {
    match c {
        WeightCurve::InverseTverskyKahneman { gamma } => Some(*gamma),
        WeightCurve::Flat { base, .. } => inverse_gamma(base),
        _ => None,
    }
}

fn describe_failures(cert: &Certificate) -> String {
    cert.failures()
        .iter()
        .map(|c| match c.witness {
            Some(x) => format!("{} (at {x})", c.constraint),
            None => c.constraint.clone(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// A value distortion and a probability distortion together with the
/// certificate produced by validating both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionModel {
    pub value: ValueDistortion,
    pub prob: ProbabilityDistortion,
    pub certificate: Certificate,
}

impl DistortionModel {
    /// Validates both parts; fails unless the certificate has no failures.
    pub fn new(value: ValueDistortion, prob: ProbabilityDistortion) -> Result<Self, DistortionError> {
        let model = Self::unchecked(value, prob)?;
        if !model.certificate.all_pass() {
            return Err(DistortionError::CertificateFailed(describe_failures(&model.certificate)));
        }
        Ok(model)
    }

    /// Validates both parts but keeps the model even if constraints fail.
    /// Consumers that require validity reject it later.
    pub fn unchecked(value: ValueDistortion, prob: ProbabilityDistortion) -> Result<Self, DistortionError> {
        if !(value.r_max > 0.0 && value.r_max.is_finite()) {
            return Err(DistortionError::InvalidParameter(format!("r_max must be positive, got {}", value.r_max)));
        }
        let certificate = validate_value_distortion(&value)?.merge(validate_probability_distortion(&prob)?);
        Ok(DistortionModel { value, prob, certificate })
    }

    /// Unbiased perception `u(x) = x`, `w(p) = p`, as knot tables. The strict
    /// shape constraints cannot hold for the identity, so they are waived.
    pub fn identity_limit(r_max: f64) -> Self {
        let line = |lo: f64, hi: f64| PiecewiseLinear { x: vec![lo, hi], y: vec![lo, hi] };
        let value = ValueDistortion { plus: ValueCurve::Table(line(0.0, r_max)), minus: ValueCurve::Table(line(-r_max, 0.0)), r_max };
        let prob = ProbabilityDistortion { plus: WeightCurve::Table(line(0.0, 1.0)), minus: WeightCurve::Table(line(0.0, 1.0)) };
        let mut model = Self::unchecked(value, prob).expect("identity tables evaluate everywhere");
        for c in ["u_minus_slope_at_zero", "w_plus_derivative_shape", "w_minus_derivative_shape"] {
            model.certificate.waive(c, "identity limit of unbiased perception");
        }
        model
    }

    pub fn is_valid(&self) -> bool {
        self.certificate.all_pass()
    }

    pub fn require_valid(&self) -> Result<(), DistortionError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(DistortionError::CertificateFailed(describe_failures(&self.certificate)))
        }
    }

    pub fn r_max(&self) -> f64 {
        self.value.r_max
    }

    /// `u(x)`, branch by sign.
    pub fn u(&self, x: f64) -> f64 {
        self.value.eval(x)
    }

    pub fn u_plus(&self, x: f64) -> f64 {
        self.value.u_plus(x)
    }

    pub fn u_minus(&self, x: f64) -> f64 {
        self.value.u_minus(x)
    }

    pub fn w_plus(&self, p: f64) -> f64 {
        self.prob.w_plus(p)
    }

    pub fn w_minus(&self, p: f64) -> f64 {
        self.prob.w_minus(p)
    }

    /// `w+` for rewards `>= 0`, `w-` for negative rewards.
    pub fn w_for(&self, reward: f64, p: f64) -> f64 {
        if reward >= 0.0 {
            self.w_plus(p)
        } else {
            self.w_minus(p)
        }
    }

    /// Interior fixed points `(a, b)` of `w+` and `w-`.
    pub fn fixed_points(&self) -> (Option<f64>, Option<f64>) {
        (fixed_point(&self.prob.plus, DEFAULT_GRID), fixed_point(&self.prob.minus, DEFAULT_GRID))
    }
}

/// Tversky-Kahneman style model: `u+(x) = min(x, x^alpha)`,
/// `u-(x) = -lambda (-x)^beta`, `w+` the TK curve with `gamma_plus` and `w-`
/// the inverse of the TK curve with `gamma_minus`.
pub fn tversky_kahneman_model(
    alpha: f64,
    beta: f64,
    lambda: f64,
    gamma_plus: f64,
    gamma_minus: f64,
    r_max: f64,
) -> Result<DistortionModel, DistortionError> {
    let unit = |name: &str, v: f64| {
        if v > 0.0 && v <= 1.0 {
            Ok(())
        } else {
            Err(DistortionError::InvalidParameter(format!("{name} must lie in (0, 1], got {v}")))
        }
    };
    unit("alpha", alpha)?;
    unit("beta", beta)?;
    unit("gamma_plus", gamma_plus)?;
    unit("gamma_minus", gamma_minus)?;
    if !(lambda > 1.0 && lambda.is_finite()) {
        return Err(DistortionError::InvalidParameter(format!("loss aversion lambda must exceed 1, got {lambda}")));
    }
    DistortionModel::new(
        ValueDistortion {
            plus: ValueCurve::CappedPower { exponent: alpha },
            minus: ValueCurve::LossPower { lambda, exponent: beta },
            r_max,
        },
        ProbabilityDistortion {
            plus: WeightCurve::TverskyKahneman { gamma: gamma_plus },
            minus: WeightCurve::InverseTverskyKahneman { gamma: gamma_minus },
        },
    )
}

/// Replaces `w-` by a curve that is exactly zero on `[0, p_flat]`: losses
/// whose cumulative probability stays below `p_flat` are perceived as
/// impossible.
pub fn flat_region_model(p_flat: f64, base: &DistortionModel) -> Result<DistortionModel, DistortionError> {
    if p_flat == 0.0 {
        return Ok(base.clone());
    }
    if !(p_flat > 0.0 && p_flat < 1.0) {
        return Err(DistortionError::InvalidParameter(format!("p_flat must lie in [0, 1), got {p_flat}")));
    }
    let b = fixed_point(&base.prob.minus, DEFAULT_GRID).unwrap_or(0.0);
    if p_flat >= b {
        return Err(DistortionError::FlatRegionTooLarge { p_flat, fixed_point: b });
    }
    let prob = ProbabilityDistortion {
        plus: base.prob.plus.clone(),
        minus: WeightCurve::Flat { p_flat, base: Box::new(base.prob.minus.clone()) },
    };
    let mut model = DistortionModel::unchecked(base.value.clone(), prob)?;
    // Carry over waivers granted to the base model.
    for c in base.certificate.checks.iter().filter(|c| c.status == CheckStatus::Waived) {
        model.certificate.waive(&c.constraint, c.detail.clone());
    }
    model.certificate.waive("w_minus_flat_region", format!("w- is constant on [0, {p_flat}]; strict derivative checks exempt there"));
    model.require_valid()?;
    Ok(model)
}

/// True iff no reward atom of `dist` is an s-black swan under `model`.
pub fn is_safe_perception(model: &DistortionModel, dist: &crate::perception::RewardDistribution, c_bs: f64, eps_bs: f64) -> bool {
    crate::blackswan::detect_in_distribution(dist, model, c_bs, eps_bs, crate::blackswan::DEFAULT_ETA_FLAT).is_empty()
}

/// On-disk description of a distortion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionSpec {
    TverskyKahneman {
        alpha: f64,
        beta: f64,
        lambda: f64,
        gamma_plus: f64,
        gamma_minus: f64,
        r_max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flat_region: Option<f64>,
    },
    Table {
        r_max: f64,
        u_plus: PiecewiseLinear,
        u_minus: PiecewiseLinear,
        w_plus: PiecewiseLinear,
        w_minus: PiecewiseLinear,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flat_region: Option<f64>,
    },
    Identity {
        r_max: f64,
    },
}

impl DistortionSpec {
    pub fn build(&self) -> Result<DistortionModel, DistortionError> {
        let (model, flat) = match self {
            DistortionSpec::TverskyKahneman { alpha, beta, lambda, gamma_plus, gamma_minus, r_max, flat_region } => {
                (tversky_kahneman_model(*alpha, *beta, *lambda, *gamma_plus, *gamma_minus, *r_max)?, *flat_region)
            }
            DistortionSpec::Table { r_max, u_plus, u_minus, w_plus, w_minus, flat_region } => {
                let t = |k: &PiecewiseLinear| PiecewiseLinear::new(k.x.clone(), k.y.clone());
                let model = DistortionModel::new(
                    ValueDistortion { plus: ValueCurve::Table(t(u_plus)?), minus: ValueCurve::Table(t(u_minus)?), r_max: *r_max },
                    ProbabilityDistortion { plus: WeightCurve::Table(t(w_plus)?), minus: WeightCurve::Table(t(w_minus)?) },
                )?;
                (model, *flat_region)
            }
            DistortionSpec::Identity { r_max } => (DistortionModel::identity_limit(*r_max), None),
        };
        match flat {
            Some(p) => flat_region_model(p, &model),
            None => Ok(model),
        }
    }
}
