//! Closed-form laws of h-slopes, hitting times and scale functions for
//! Brownian motion with drift `-mu`.
//!
//! Every function checks its finiteness condition and returns
//! [`Error::Domain`] naming the violated inequality instead of a NaN.
//! Down-slope quantities are evaluated as the up-slope quantity at `-mu`, so
//! the reflection symmetry holds bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::extrema::Direction;
use crate::model::{AlphaHat, ModelSpec};
use crate::numeric::{bisect, expm1_over, ln_cosh, sinh_ratio, x_coth};
use crate::scalar::Scalar;

/// Means of the slope functionals and the covering probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeMoments<T> {
    pub mean_minus_beta: T,
    pub mean_excess_up: T,
    pub mean_excess_down: T,
    pub mean_len_up: T,
    pub mean_len_down: T,
    pub mean_cycle: T,
    pub prob_cover_up: T,
    pub prob_cover_down: T,
}

impl<T: Scalar> SlopeMoments<T> {
    pub fn mean_excess(&self, dir: Direction) -> T {
        match dir {
            Direction::Up => self.mean_excess_up,
            Direction::Down => self.mean_excess_down,
        }
    }

    pub fn mean_len(&self, dir: Direction) -> T {
        match dir {
            Direction::Up => self.mean_len_up,
            Direction::Down => self.mean_len_down,
        }
    }

    pub fn prob_cover(&self, dir: Direction) -> T {
        match dir {
            Direction::Up => self.prob_cover_up,
            Direction::Down => self.prob_cover_down,
        }
    }
}

/// `x - (1 - e^{-2x}) / 2`, accurate for small `x`.
fn len_kernel<T: Scalar>(x: T) -> T {
    if x.abs() < T::lit(1e-3) {
        let x2 = x * x;
        x2 * (T::one() - x * (T::lit(2.0 / 3.0) - x * (T::lit(1.0 / 3.0) - x * T::lit(2.0 / 15.0))))
    } else {
        x + (-(T::two() * x)).exp_m1() * T::half()
    }
}

fn excess_up<T: Scalar>(mu: T, h: T) -> T {
    expm1_over(-(T::two() * mu), h)
}

fn len_up<T: Scalar>(mu: T, h: T) -> T {
    let x = mu * h;
    len_kernel(x) / (mu * mu)
}

pub fn slope_moments<T: Scalar>(spec: ModelSpec<T>) -> Result<SlopeMoments<T>> {
    spec.require_drift()?;
    let (mu, h) = (spec.mu, spec.h);
    let sh = (mu * h).sinh();
    let mean_cycle = T::two() * sh * sh / (mu * mu);
    let mean_len_up = len_up(mu, h);
    let mean_len_down = len_up(-mu, h);
    Ok(SlopeMoments {
        mean_minus_beta: excess_up(-mu, h),
        mean_excess_up: excess_up(mu, h),
        mean_excess_down: excess_up(-mu, h),
        mean_len_up,
        mean_len_down,
        mean_cycle,
        prob_cover_up: mean_len_up / mean_cycle,
        prob_cover_down: mean_len_down / mean_cycle,
    })
}

/// Laplace transforms of the extremum position `sigma` and of the rise
/// time `tau - sigma` for a sweep started at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingBlocks<T> {
    /// Rate in `E[exp(-alpha sigma) | beta = -x] = exp(-x * rate)`.
    pub exponent_sigma: T,
    /// `E exp(-alpha sigma)`, present only where it is finite.
    pub laplace_sigma: Result<T>,
    pub laplace_tau_minus_sigma: T,
}

fn exponent_sigma<T: Scalar>(s: T, spec: ModelSpec<T>) -> T {
    x_coth(s, spec.h) - x_coth(spec.mu, spec.h)
}

fn tau_minus_sigma<T: Scalar>(s: T, spec: ModelSpec<T>) -> T {
    s / spec.mu * sinh_ratio(spec.mu * spec.h, s * spec.h)
}

pub fn laplace_building_blocks<T: Scalar>(
    alpha: T,
    spec: ModelSpec<T>,
) -> Result<BuildingBlocks<T>> {
    spec.require_drift()?;
    let s = AlphaHat::new(alpha, spec.mu).root()?;
    let rate = x_coth(s, spec.h);
    let laplace_sigma = if rate > spec.mu {
        Ok(excursion_rate_up(spec) / (rate - spec.mu))
    } else {
        Err(domain(
            "sqrt(2 hat_alpha) coth(sqrt(2 hat_alpha) h) > mu",
            format!("alpha = {alpha}, mu = {}, h = {}", spec.mu, spec.h),
        ))
    };
    Ok(BuildingBlocks {
        exponent_sigma: exponent_sigma(s, spec),
        laplace_sigma,
        laplace_tau_minus_sigma: tau_minus_sigma(s, spec),
    })
}

/// `E[exp(-alpha sigma) | -beta = x]`.
pub fn laplace_sigma_given_depth<T: Scalar>(alpha: T, spec: ModelSpec<T>, x: T) -> Result<T> {
    let b = laplace_building_blocks(alpha, spec)?;
    Ok((-(x * b.exponent_sigma)).exp())
}

/// `E[exp(-alpha l) | zeta = x]` for a slope of either direction.
pub fn laplace_length_given_excess<T: Scalar>(alpha: T, spec: ModelSpec<T>, x: T) -> Result<T> {
    let b = laplace_building_blocks(alpha, spec)?;
    Ok(b.laplace_tau_minus_sigma * (-(x * b.exponent_sigma)).exp())
}

fn slope_up<T: Scalar>(s: T, lambda: T, mu: T, h: T) -> Option<T> {
    // s cosh(sh) + c sinh(sh), scaled by 2 e^{-sh}.
    let c = lambda + mu;
    let e = (-(T::two() * s * h)).exp();
    let den = s * (T::one() + e) - c * (-(T::two() * s * h)).exp_m1();
    if den > T::zero() {
        Some(T::two() * s * (mu * h - s * h).exp() / den)
    } else {
        None
    }
}

/// `E exp(-alpha l - lambda zeta)` for a slope of the given direction.
pub fn laplace_slope<T: Scalar>(
    alpha: T,
    lambda: T,
    direction: Direction,
    spec: ModelSpec<T>,
) -> Result<T> {
    spec.require_drift()?;
    let s = AlphaHat::new(alpha, spec.mu).root()?;
    let mu = match direction {
        Direction::Up => spec.mu,
        Direction::Down => -spec.mu,
    };
    slope_up(s, lambda, mu, spec.h).ok_or_else(|| {
        domain(
            "sqrt(2 hat_alpha) coth(sqrt(2 hat_alpha) h) + lambda ± mu > 0",
            format!(
                "alpha = {alpha}, lambda = {lambda}, direction = {}, mu = {}, h = {}",
                direction.as_str(),
                spec.mu,
                spec.h
            ),
        )
    })
}

/// Finiteness of `E exp(-alpha l)` for the full cycle `l = l_+ + l_-`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainCondition<T> {
    pub satisfied: bool,
    pub boundary_alpha: Option<T>,
}

/// Critical `alpha` below which `E exp(-alpha l)` is infinite.
pub fn cycle_boundary_alpha<T: Scalar>(spec: ModelSpec<T>) -> Result<T> {
    spec.require_drift()?;
    let mu = spec.mu.to_f64_lossy().abs();
    let h = spec.h.to_f64_lossy();
    let a = mu * h;
    if a <= 1.0 {
        return Ok(T::lit(-mu * mu / 2.0));
    }
    let y = bisect(|y| y - a * y.tanh(), 1e-12f64.min(a), 10.0 * a, 1e-12)?;
    Ok(T::lit(-mu * mu / 2.0 + y * y / (2.0 * h * h)))
}

pub fn cycle_domain<T: Scalar>(alpha: T, spec: ModelSpec<T>) -> Result<DomainCondition<T>> {
    spec.require_drift()?;
    let satisfied = cycle_core(alpha, spec).is_some();
    Ok(DomainCondition {
        satisfied,
        boundary_alpha: cycle_boundary_alpha(spec).ok(),
    })
}

/// `2 alpha cosh^2(sqrt(2 hat_alpha) h) + mu^2`, scaled by `cosh^{-2}`, and
/// the resulting transform when positive.
fn cycle_core<T: Scalar>(alpha: T, spec: ModelSpec<T>) -> Option<T> {
    let a = AlphaHat::new(alpha, spec.mu);
    let s = a.root().ok()?;
    let c = (-(T::two() * ln_cosh(s * spec.h))).exp();
    let den = T::two() * alpha + spec.mu * spec.mu * c;
    if den > T::zero() {
        Some(T::two() * a.hat_alpha * c / den)
    } else {
        None
    }
}

/// `E exp(-alpha l)` for the cycle length `l = l_+ + l_-`.
pub fn laplace_cycle<T: Scalar>(alpha: T, spec: ModelSpec<T>) -> Result<T> {
    spec.require_drift()?;
    let a = AlphaHat::new(alpha, spec.mu);
    a.root()?;
    cycle_core(alpha, spec).ok_or_else(|| {
        domain(
            "2 alpha cosh^2(sqrt(2 hat_alpha) h) + mu^2 > 0",
            format!("alpha = {alpha}, mu = {}, h = {}", spec.mu, spec.h),
        )
    })
}

/// Hitting-time identities for the drifted motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HittingKind {
    /// `E_0[exp(-alpha T_x); T_x < T_y]`, `x < 0 < y`.
    ExitBelow,
    /// `E_0[exp(-alpha T_y); T_y < T_x]`, `x < 0 < y`.
    ExitAbove,
    /// `E_y[exp(-alpha T_0); T_0 < T_h]`, `0 < y < h`.
    FromYTo0BeforeH,
    /// `E_y[exp(-alpha T_h); T_h < T_0]`, `0 < y < h`.
    FromYToHBefore0,
    /// `P_y(T_0 < T_h)`, `0 < y < h`.
    Prob0First,
    /// `P_y(T_h < T_0)`, `0 < y < h`.
    ProbHFirst,
    /// `E_y[exp(-alpha T_0); T_0 < inf]`, `y > 0`.
    RuinTransform,
    /// `E_y[T_0; T_0 < inf]`, `y > 0`.
    RuinMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingParams<T> {
    pub alpha: T,
    pub x: T,
    pub y: T,
}

pub fn hitting_laplace<T: Scalar>(
    kind: HittingKind,
    spec: ModelSpec<T>,
    p: HittingParams<T>,
) -> Result<T> {
    use HittingKind::*;
    let (mu, h) = (spec.mu, spec.h);
    let zero = T::zero();
    let root = || AlphaHat::new(p.alpha, mu).root();
    let in_strip = || {
        if p.y > zero && p.y < h {
            Ok(())
        } else {
            Err(domain("0 < y < h", format!("y = {}, h = {h}", p.y)))
        }
    };
    let positive_y = || {
        if p.y > zero {
            Ok(())
        } else {
            Err(domain("y > 0", format!("y = {}", p.y)))
        }
    };
    match kind {
        ExitBelow | ExitAbove => {
            if !(p.x < zero && zero < p.y) {
                return Err(domain("x < 0 < y", format!("x = {}, y = {}", p.x, p.y)));
            }
            let s = root()?;
            let width = (p.y - p.x) * s;
            Ok(match kind {
                ExitBelow => (-(mu * p.x)).exp() * sinh_ratio(p.y * s, width),
                _ => (-(mu * p.y)).exp() * sinh_ratio(-p.x * s, width),
            })
        }
        FromYTo0BeforeH => {
            in_strip()?;
            let s = root()?;
            Ok((mu * p.y).exp() * sinh_ratio((h - p.y) * s, h * s))
        }
        FromYToHBefore0 => {
            in_strip()?;
            let s = root()?;
            Ok((mu * (p.y - h)).exp() * sinh_ratio(p.y * s, h * s))
        }
        Prob0First => {
            spec.require_drift()?;
            in_strip()?;
            Ok((mu * p.y).exp() * sinh_ratio(mu * (h - p.y), mu * h))
        }
        ProbHFirst => {
            spec.require_drift()?;
            in_strip()?;
            Ok((mu * (p.y - h)).exp() * sinh_ratio(mu * p.y, mu * h))
        }
        RuinTransform => {
            positive_y()?;
            let s = root()?;
            Ok((mu * p.y - p.y * s).exp())
        }
        RuinMean => {
            spec.require_drift()?;
            positive_y()?;
            Ok((p.y * (mu - mu.abs())).exp() * p.y / mu.abs())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFunctions<T> {
    pub w: T,
    pub w_alpha: T,
    pub z_alpha: T,
}

/// `W(x) = (e^{2 mu x} - 1) / mu`.
pub fn scale_w<T: Scalar>(spec: ModelSpec<T>, x: T) -> Result<T> {
    spec.require_drift()?;
    if !(x >= T::zero()) {
        return Err(domain("x >= 0", format!("x = {x}")));
    }
    Ok(T::two() * expm1_over(T::two() * spec.mu, x))
}

/// `W^(alpha)(x) = 2 e^{mu x} sinh(x s) / s` with `s = sqrt(2 hat_alpha)`.
pub fn scale_w_alpha<T: Scalar>(alpha: T, spec: ModelSpec<T>, x: T) -> Result<T> {
    if !(x >= T::zero()) {
        return Err(domain("x >= 0", format!("x = {x}")));
    }
    let s = AlphaHat::new(alpha, spec.mu).root()?;
    Ok(T::two() * (spec.mu * x).exp() * (x * s).sinh() / s)
}

/// `Z^(alpha)(x) = 1 + alpha * int_0^x W^(alpha)`.
pub fn scale_z_alpha<T: Scalar>(alpha: T, spec: ModelSpec<T>, x: T) -> Result<T> {
    if !(x >= T::zero()) {
        return Err(domain("x >= 0", format!("x = {x}")));
    }
    let s = AlphaHat::new(alpha, spec.mu).root()?;
    let integral = (expm1_over(spec.mu + s, x) - expm1_over(spec.mu - s, x)) / s;
    Ok(T::one() + alpha * integral)
}

pub fn scale_functions<T: Scalar>(alpha: T, spec: ModelSpec<T>, x: T) -> Result<ScaleFunctions<T>> {
    Ok(ScaleFunctions {
        w: scale_w(spec, x)?,
        w_alpha: scale_w_alpha(alpha, spec, x)?,
        z_alpha: scale_z_alpha(alpha, spec, x)?,
    })
}

/// `E_0[exp(-alpha T_y); T_y < T_{-x}]` as the ratio `W^(alpha)(x) / W^(alpha)(x + y)`.
pub fn exit_above_by_scale<T: Scalar>(alpha: T, spec: ModelSpec<T>, x: T, y: T) -> Result<T> {
    if !(x > T::zero() && y > T::zero()) {
        return Err(domain("x > 0, y > 0", format!("x = {x}, y = {y}")));
    }
    Ok(scale_w_alpha(alpha, spec, x)? / scale_w_alpha(alpha, spec, x + y)?)
}

/// Excursion-measure quantities: the rate of excursions rising by `h`, the
/// exponent of `sigma` given the depth, and the Laplace transform of the
/// conditioned rise time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoRates<T> {
    pub n_up: T,
    pub excursion_exponent: T,
    pub conditional_hit_laplace: T,
}

fn excursion_rate_up<T: Scalar>(spec: ModelSpec<T>) -> T {
    T::one() / expm1_over(T::two() * spec.mu, spec.h)
}

pub fn ito_rates<T: Scalar>(alpha: T, spec: ModelSpec<T>) -> Result<ItoRates<T>> {
    spec.require_drift()?;
    let s = AlphaHat::new(alpha, spec.mu).root()?;
    Ok(ItoRates {
        n_up: excursion_rate_up(spec),
        excursion_exponent: exponent_sigma(s, spec),
        conditional_hit_laplace: tau_minus_sigma(s, spec),
    })
}

/// Transition density of the diffusion `dX = dB + mu coth(mu X) dt` on
/// `(0, inf)`. At `mu = 0` this is the three-dimensional Bessel kernel.
pub fn qt_density<T: Scalar>(t: T, x: T, y: T, spec: ModelSpec<T>) -> Result<T> {
    let zero = T::zero();
    if !(t > zero && x > zero && y > zero) {
        return Err(domain(
            "t > 0, x > 0, y > 0",
            format!("t = {t}, x = {x}, y = {y}"),
        ));
    }
    let mu = spec.mu;
    let ratio = if mu == zero {
        y / x
    } else {
        sinh_ratio(mu * y, mu * x)
    };
    let d = y - x;
    let gauss = (-(mu * mu * t * T::half()) - d * d / (T::two() * t)).exp()
        / (T::two() * T::PI() * t).sqrt();
    let kill = -(-(T::two() * x * y / t)).exp_m1();
    Ok(ratio * gauss * kill)
}

/// Names accepted by [`evaluate`].
pub const FORMULA_NAMES: &[&str] = &[
    "mean-minus-beta",
    "mean-excess-up",
    "mean-excess-down",
    "mean-length-up",
    "mean-length-down",
    "mean-cycle",
    "prob-cover-up",
    "prob-cover-down",
    "sigma-exponent",
    "sigma-laplace",
    "tau-minus-sigma-laplace",
    "slope-laplace-up",
    "slope-laplace-down",
    "cycle-laplace",
    "cycle-boundary-alpha",
    "exit-below",
    "exit-above",
    "hit-zero-before-h",
    "hit-h-before-zero",
    "prob-zero-first",
    "prob-h-first",
    "ruin-laplace",
    "ruin-mean",
    "scale-w",
    "scale-w-alpha",
    "scale-z-alpha",
    "excursion-rate-up",
    "excursion-exponent",
    "conditional-hit-laplace",
    "qt-density",
];

/// Arguments for [`evaluate`]; unused fields are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FormulaParams {
    pub mu: f64,
    pub h: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

/// Evaluates a formula by name in double precision.
pub fn evaluate(name: &str, p: &FormulaParams) -> Result<f64> {
    let spec = ModelSpec::new(p.mu, p.h)?;
    let hit = |kind| {
        hitting_laplace(
            kind,
            spec,
            HittingParams {
                alpha: p.alpha,
                x: p.x,
                y: p.y,
            },
        )
    };
    let moments = || slope_moments(spec);
    match name {
        "mean-minus-beta" => Ok(moments()?.mean_minus_beta),
        "mean-excess-up" => Ok(moments()?.mean_excess_up),
        "mean-excess-down" => Ok(moments()?.mean_excess_down),
        "mean-length-up" => Ok(moments()?.mean_len_up),
        "mean-length-down" => Ok(moments()?.mean_len_down),
        "mean-cycle" => Ok(moments()?.mean_cycle),
        "prob-cover-up" => Ok(moments()?.prob_cover_up),
        "prob-cover-down" => Ok(moments()?.prob_cover_down),
        "sigma-exponent" => Ok(laplace_building_blocks(p.alpha, spec)?.exponent_sigma),
        "sigma-laplace" => laplace_building_blocks(p.alpha, spec)?.laplace_sigma,
        "tau-minus-sigma-laplace" => {
            Ok(laplace_building_blocks(p.alpha, spec)?.laplace_tau_minus_sigma)
        }
        "slope-laplace-up" => laplace_slope(p.alpha, p.lambda, Direction::Up, spec),
        "slope-laplace-down" => laplace_slope(p.alpha, p.lambda, Direction::Down, spec),
        "cycle-laplace" => laplace_cycle(p.alpha, spec),
        "cycle-boundary-alpha" => cycle_boundary_alpha(spec),
        "exit-below" => hit(HittingKind::ExitBelow),
        "exit-above" => hit(HittingKind::ExitAbove),
        "hit-zero-before-h" => hit(HittingKind::FromYTo0BeforeH),
        "hit-h-before-zero" => hit(HittingKind::FromYToHBefore0),
        "prob-zero-first" => hit(HittingKind::Prob0First),
        "prob-h-first" => hit(HittingKind::ProbHFirst),
        "ruin-laplace" => hit(HittingKind::RuinTransform),
        "ruin-mean" => hit(HittingKind::RuinMean),
        "scale-w" => scale_w(spec, p.x),
        "scale-w-alpha" => scale_w_alpha(p.alpha, spec, p.x),
        "scale-z-alpha" => scale_z_alpha(p.alpha, spec, p.x),
        "excursion-rate-up" => Ok(ito_rates(p.alpha, spec)?.n_up),
        "excursion-exponent" => Ok(ito_rates(p.alpha, spec)?.excursion_exponent),
        "conditional-hit-laplace" => Ok(ito_rates(p.alpha, spec)?.conditional_hit_laplace),
        "qt-density" => qt_density(p.t, p.x, p.y, spec),
        other => Err(invalid(format!(
            "unknown formula {other:?}; expected one of {}",
            FORMULA_NAMES.join(", ")
        ))),
    }
}

/// Whether an error came from a violated finiteness condition rather than
/// from malformed input.
pub fn is_domain_error(e: &Error) -> bool {
    matches!(e, Error::Domain { .. } | Error::Unsupported(_))
}
