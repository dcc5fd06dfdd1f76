//! The diffusion `dX = dB + mu coth(mu X) dt`, drifted Brownian motion
//! conditioned by rejection to hit `h` before 0, and the path sections next
//! to h-extrema that share their law.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::extrema::{center, Direction, SlopeSequence};
use crate::formulas::{qt_density, scale_w};
use crate::model::ModelSpec;
use crate::numeric::{bisect, integrate};
use crate::paths::{generate_two_sided, TwoSidedPath};
use crate::rng::{spawn_stream, RngStream};
use crate::stats::{
    chi_square_gof, estimate_mean, estimate_proportion, ks_two_sample, ChiSquareResult,
    EstimatorReport, KsResult,
};

/// Knobs shared by the two samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    /// Paths still alive at this time are returned censored.
    pub max_time: f64,
    /// Also count a crossing of `h` (and, for the rejection sampler, of 0)
    /// between grid points, using the Brownian-bridge crossing probability.
    pub bridge_crossings: bool,
    /// Keep the trajectory, not only the hitting time.
    pub record_path: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            max_time: 1e3,
            bridge_crossings: true,
            record_path: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedPath {
    pub dt: f64,
    pub eps0: f64,
    /// Empty unless the path was recorded.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub hit_time: Option<f64>,
    pub censored: bool,
}

/// `mu coth(mu x)` for `x > 0`, equal to `1 / x` at `mu = 0`.
#[inline]
pub fn coth_drift(mu: f64, x: f64) -> f64 {
    let a = mu * x;
    if a.abs() < 1e-6 {
        1.0 / x + mu * a / 3.0
    } else {
        let e = (-2.0 * a.abs()).exp();
        mu.abs() * (1.0 + e) / (1.0 - e)
    }
}

/// Probability that a Brownian bridge between `a` and `b` (both on the same
/// side of `level`) over time `dt` touches `level`.
#[inline]
fn bridge_cross(a: f64, b: f64, level: f64, dt: f64) -> f64 {
    (-2.0 * (a - level) * (b - level) / dt).exp()
}

/// One Euler–Maruyama step of the coth diffusion with the positivity guard:
/// the effective step is `min(dt, (x/4)^2)`; a non-positive proposal is
/// redrawn once, after which the step is halved until the proposal is
/// positive. Returns the new level and the time advanced.
#[inline]
pub fn coth_step<R: Rng>(rng: &mut R, mu: f64, x: f64, dt: f64) -> (f64, f64) {
    let mut step = dt.min(0.0625 * x * x);
    let drift = coth_drift(mu, x);
    let mut redrawn = false;
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let y = x + drift * step + step.sqrt() * z;
        if y > 0.0 {
            return (y, step);
        }
        if redrawn {
            step *= 0.5;
        }
        redrawn = true;
    }
}

fn check_start(spec: ModelSpec<f64>, dt: f64, x0: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    if !(x0 > 0.0 && x0 < spec.h) {
        return Err(invalid(format!(
            "start level must lie in (0, h) = (0, {}), got {x0}",
            spec.h
        )));
    }
    Ok(())
}

/// Runs the coth diffusion from `eps0` until it reaches `h`.
pub fn integrate_coth_sde(
    stream: RngStream,
    spec: ModelSpec<f64>,
    dt: f64,
    eps0: f64,
    opts: SamplerOptions,
) -> Result<ConditionedPath> {
    check_start(spec, dt, eps0)?;
    let mut rng = stream.rng();
    Ok(coth_until_h(&mut rng, spec, dt, eps0, opts))
}

fn coth_until_h(
    rng: &mut ChaCha8Rng,
    spec: ModelSpec<f64>,
    dt: f64,
    eps0: f64,
    opts: SamplerOptions,
) -> ConditionedPath {
    let h = spec.h;
    let (mut t, mut x) = (0.0, eps0);
    let mut times = Vec::new();
    let mut values = Vec::new();
    if opts.record_path {
        times.push(t);
        values.push(x);
    }
    let mut hit = None;
    while t < opts.max_time {
        let (y, step) = coth_step(rng, spec.mu, x, dt);
        t += step;
        let crossed =
            y >= h || (opts.bridge_crossings && rng.random::<f64>() < bridge_cross(x, y, h, step));
        x = if crossed { y.max(h) } else { y };
        if opts.record_path {
            times.push(t);
            values.push(x);
        }
        if crossed {
            hit = Some(t);
            break;
        }
    }
    ConditionedPath {
        dt,
        eps0,
        times,
        values,
        hit_time: hit,
        censored: hit.is_none(),
    }
}

/// Level of the coth diffusion at time `t` from `x0`, with no barrier at `h`.
pub fn coth_sde_marginal(
    stream: RngStream,
    spec: ModelSpec<f64>,
    dt: f64,
    x0: f64,
    t: f64,
) -> Result<f64> {
    if !(dt > 0.0 && x0 > 0.0 && t > 0.0) {
        return Err(invalid("dt, x0 and t must be positive"));
    }
    let mut rng = stream.rng();
    let (mut s, mut x) = (0.0, x0);
    while s < t {
        let (y, step) = coth_step(&mut rng, spec.mu, x, dt.min(t - s));
        s += step;
        x = y;
    }
    Ok(x)
}

/// `n` independent marginal draws, replica `i` on stream `(master_seed, i)`.
pub fn sample_marginal(
    master_seed: u64,
    spec: ModelSpec<f64>,
    dt: f64,
    x0: f64,
    t: f64,
    n: usize,
) -> Result<Vec<f64>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| coth_sde_marginal(spawn_stream(master_seed, i), spec, dt, x0, t))
        .collect()
}

/// `n` coth-diffusion paths from `eps0` to `h`.
pub fn sample_coth_paths(
    master_seed: u64,
    spec: ModelSpec<f64>,
    dt: f64,
    eps0: f64,
    n: usize,
    opts: SamplerOptions,
) -> Result<Vec<ConditionedPath>> {
    check_start(spec, dt, eps0)?;
    let out: Vec<ConditionedPath> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            coth_until_h(
                &mut spawn_stream(master_seed, i).rng(),
                spec,
                dt,
                eps0,
                opts,
            )
        })
        .collect();
    if let Some(p) = out.iter().find(|p| p.censored) {
        return Err(Error::Config(format!(
            "a coth path from {} was censored at max_time = {}",
            p.eps0, opts.max_time
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFit {
    /// Bin edges, equiprobable under the transition density.
    pub edges: Vec<f64>,
    pub observed: Vec<u64>,
    pub chi_square: ChiSquareResult,
}

/// Chi-square test of marginal draws at time `t` from `x0` against the
/// transition density, on `bins` equiprobable bins.
pub fn marginal_goodness_of_fit(
    sample: &[f64],
    spec: ModelSpec<f64>,
    x0: f64,
    t: f64,
    bins: usize,
) -> Result<MarginalFit> {
    if bins < 2 {
        return Err(invalid("need at least 2 bins"));
    }
    qt_density(t, x0, x0, spec)?;
    let density = |y: f64| {
        if y > 0.0 {
            qt_density(t, x0, y, spec).unwrap_or(0.0)
        } else {
            0.0
        }
    };
    let hi = x0 + 40.0 * t.sqrt() + 4.0 * spec.mu.abs() * t;
    let cdf = |y: f64| integrate(density, 0.0, y, 1e-13);
    let mut edges = vec![0.0];
    for k in 1..bins {
        let p = k as f64 / bins as f64;
        let lo = *edges.last().unwrap();
        edges.push(bisect(|y| cdf(y) - p, lo, hi, 1e-12)?);
    }
    edges.push(f64::INFINITY);
    let mut observed = vec![0u64; bins];
    for &x in sample {
        let i = edges.partition_point(|&e| e <= x).clamp(1, bins) - 1;
        observed[i] += 1;
    }
    let expected = vec![1.0 / bins as f64; bins];
    Ok(MarginalFit {
        chi_square: chi_square_gof(&observed, &expected)?,
        edges,
        observed,
    })
}

/// Whether a drifted path started at `eps` leaves `(0, h)` through `h`.
enum Exit {
    Top(ConditionedPath),
    Bottom,
    Censored,
}

fn drifted_exit(
    rng: &mut ChaCha8Rng,
    spec: ModelSpec<f64>,
    dt: f64,
    eps: f64,
    opts: SamplerOptions,
) -> Exit {
    let h = spec.h;
    let sd = dt.sqrt();
    let drift = -spec.mu * dt;
    let (mut t, mut x) = (0.0, eps);
    let mut times = Vec::new();
    let mut values = Vec::new();
    if opts.record_path {
        times.push(t);
        values.push(x);
    }
    let mut k = 0u64;
    while t < opts.max_time {
        let z: f64 = StandardNormal.sample(rng);
        let y = x + drift + sd * z;
        k += 1;
        t = k as f64 * dt;
        if y <= 0.0 {
            return Exit::Bottom;
        }
        if opts.bridge_crossings && y < h {
            let u: f64 = rng.random();
            // Both crossing events are checked with one uniform; the chance
            // of touching both barriers within one step is negligible.
            let p0 = bridge_cross(x, y, 0.0, dt);
            if u < p0 {
                return Exit::Bottom;
            }
            if u < p0 + bridge_cross(x, y, h, dt) {
                if opts.record_path {
                    times.push(t);
                    values.push(h);
                }
                return Exit::Top(ConditionedPath {
                    dt,
                    eps0: eps,
                    times,
                    values,
                    hit_time: Some(t),
                    censored: false,
                });
            }
        }
        x = y;
        if opts.record_path {
            times.push(t);
            values.push(x);
        }
        if x >= h {
            return Exit::Top(ConditionedPath {
                dt,
                eps0: eps,
                times,
                values,
                hit_time: Some(t),
                censored: false,
            });
        }
    }
    Exit::Censored
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionOutcome {
    pub path: ConditionedPath,
    /// Attempts used, including the accepted one.
    pub attempts: u64,
}

/// Simulates drifted Brownian motion from `eps` until it leaves `(0, h)`
/// and returns the first trajectory that leaves through `h`.
pub fn doob_rejection(
    stream: RngStream,
    spec: ModelSpec<f64>,
    dt: f64,
    eps: f64,
    opts: SamplerOptions,
) -> Result<RejectionOutcome> {
    check_start(spec, dt, eps)?;
    let mut rng = stream.rng();
    rejection_with(&mut rng, spec, dt, eps, opts)
}

fn rejection_with(
    rng: &mut ChaCha8Rng,
    spec: ModelSpec<f64>,
    dt: f64,
    eps: f64,
    opts: SamplerOptions,
) -> Result<RejectionOutcome> {
    let mut attempts = 0u64;
    loop {
        attempts += 1;
        match drifted_exit(rng, spec, dt, eps, opts) {
            Exit::Top(path) => return Ok(RejectionOutcome { path, attempts }),
            Exit::Bottom => {}
            Exit::Censored => {
                return Err(Error::Config(format!(
                    "a drifted path from {eps} stayed in (0, h) past max_time = {}",
                    opts.max_time
                )))
            }
        }
    }
}

pub fn sample_rejection_paths(
    master_seed: u64,
    spec: ModelSpec<f64>,
    dt: f64,
    eps: f64,
    n: usize,
    opts: SamplerOptions,
) -> Result<Vec<RejectionOutcome>> {
    check_start(spec, dt, eps)?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| rejection_with(&mut spawn_stream(master_seed, i).rng(), spec, dt, eps, opts))
        .collect()
}

/// Fraction of `attempts` drifted paths from `eps` that reach `h` before 0,
/// against `W(eps) / W(h)`.
pub fn acceptance_rate(
    master_seed: u64,
    spec: ModelSpec<f64>,
    dt: f64,
    eps: f64,
    attempts: usize,
    opts: SamplerOptions,
) -> Result<EstimatorReport> {
    check_start(spec, dt, eps)?;
    let oracle = scale_w(spec, eps)? / scale_w(spec, spec.h)?;
    let opts = SamplerOptions {
        record_path: false,
        ..opts
    };
    let hits = (0..attempts as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = spawn_stream(master_seed, i).rng();
            match drifted_exit(&mut rng, spec, dt, eps, opts) {
                Exit::Top(_) => Ok(true),
                Exit::Bottom => Ok(false),
                Exit::Censored => Err(Error::Config(format!(
                    "a drifted path from {eps} stayed in (0, h) past max_time = {}",
                    opts.max_time
                ))),
            }
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(estimate_proportion(&hits)?.with_oracle(oracle))
}

/// The four windows next to an h-extremum whose laws are the conditioned
/// diffusion: up-slope windows with drift `-mu`, reflected down-slope
/// windows with drift `+mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    /// Forward from the minimum opening an up-slope.
    ForwardFromMin,
    /// Backward from the maximum closing an up-slope.
    BackwardFromMax,
    /// Forward from the maximum opening a down-slope, reflected.
    ForwardFromMax,
    /// Backward from the minimum closing a down-slope, reflected.
    BackwardFromMin,
}

impl SectionKind {
    pub const ALL: [SectionKind; 4] = [
        Self::ForwardFromMin,
        Self::BackwardFromMax,
        Self::ForwardFromMax,
        Self::BackwardFromMin,
    ];

    pub fn slope_direction(self) -> Direction {
        match self {
            Self::ForwardFromMin | Self::BackwardFromMax => Direction::Up,
            Self::ForwardFromMax | Self::BackwardFromMin => Direction::Down,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ForwardFromMin => "forward_from_min",
            Self::BackwardFromMax => "backward_from_max",
            Self::ForwardFromMax => "forward_from_max",
            Self::BackwardFromMin => "backward_from_min",
        }
    }
}

/// A recentred window: starts at 0 at time 0, ends at the first grid point
/// where the displacement reaches `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathWindow {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl PathWindow {
    pub fn duration(&self) -> f64 {
        *self.times.last().expect("windows are never empty")
    }

    pub fn max_level(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Level at time `t` by linear interpolation; `None` after the window.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        if t > self.duration() || t < 0.0 {
            return None;
        }
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return Some(self.values[0]);
        }
        if i == self.times.len() {
            return self.values.last().copied();
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        Some(self.values[i - 1] * (1.0 - w) + self.values[i] * w)
    }
}

impl From<&ConditionedPath> for PathWindow {
    fn from(p: &ConditionedPath) -> Self {
        Self {
            times: p.times.clone(),
            values: p.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionSample {
    pub kind: SectionKind,
    pub paths: Vec<PathWindow>,
}

impl SectionSample {
    pub fn durations(&self) -> Vec<f64> {
        self.paths.iter().map(PathWindow::duration).collect()
    }
}

/// Cuts the section of `kind` out of every eligible slope of `seq`.
///
/// A slope is eligible when it does not cover the origin and lies at least
/// `margin_slopes` slopes away from the covering slope and from both ends
/// of the sequence.
pub fn near_extremum_sections(
    seq: &SlopeSequence<f64>,
    path: &TwoSidedPath<f64>,
    kind: SectionKind,
    margin_slopes: usize,
) -> Result<SectionSample> {
    let n_slopes = seq.extrema.len().saturating_sub(1);
    let cover = seq.covering_index();
    let dt = path.dt();
    let h = seq.h;
    let last = path.full_len() - 1;
    let mut paths = Vec::new();
    for i in 0..n_slopes {
        if i.abs_diff(cover) <= margin_slopes || i < margin_slopes || i + margin_slopes >= n_slopes
        {
            continue;
        }
        let (a, b) = (&seq.extrema[i], &seq.extrema[i + 1]);
        let dir = match a.kind {
            crate::extrema::ExtremumKind::Min => Direction::Up,
            crate::extrema::ExtremumKind::Max => Direction::Down,
        };
        if dir != kind.slope_direction() {
            continue;
        }
        let (anchor, forward, sign) = match kind {
            SectionKind::ForwardFromMin => (a.grid_index, true, 1.0),
            SectionKind::BackwardFromMax => (b.grid_index, false, -1.0),
            SectionKind::ForwardFromMax => (a.grid_index, true, -1.0),
            SectionKind::BackwardFromMin => (b.grid_index, false, 1.0),
        };
        let base = path.value_at(anchor);
        let mut times = vec![0.0];
        let mut values = vec![0.0];
        let mut j = 0usize;
        loop {
            j += 1;
            let idx = if forward {
                anchor + j
            } else {
                match anchor.checked_sub(j) {
                    Some(v) => v,
                    None => break,
                }
            };
            if idx > last {
                break;
            }
            let d = sign * (path.value_at(idx) - base);
            times.push(j as f64 * dt);
            values.push(d);
            if d.abs() >= h {
                paths.push(PathWindow { times, values });
                break;
            }
        }
    }
    Ok(SectionSample { kind, paths })
}

/// Sections of all four kinds from `n_paths` independent two-sided paths
/// of half-length `horizon`, indexed as [`SectionKind::ALL`].
pub fn collect_sections(
    master_seed: u64,
    spec: ModelSpec<f64>,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    margin_slopes: usize,
) -> Result<Vec<SectionSample>> {
    let per_path = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = generate_two_sided(spawn_stream(master_seed, i), spec, dt, horizon)?;
            let seq = center(&path, spec.h)?;
            SectionKind::ALL
                .iter()
                .map(|&k| near_extremum_sections(&seq, &path, k, margin_slopes))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SectionKind::ALL
        .iter()
        .enumerate()
        .map(|(j, &kind)| SectionSample {
            kind,
            paths: per_path
                .iter()
                .flat_map(|v| v[j].paths.iter().cloned())
                .collect(),
        })
        .collect())
}

/// Statistic compared between two samples of windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Functional {
    Duration,
    MarginalAt { t: f64 },
    MaxLevel,
}

impl Functional {
    fn evaluate(&self, w: &PathWindow) -> Option<f64> {
        match *self {
            Functional::Duration => Some(w.duration()),
            Functional::MarginalAt { t } => w.value_at(t),
            Functional::MaxLevel => Some(w.max_level()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Functional::Duration => "duration".into(),
            Functional::MarginalAt { t } => format!("marginal_at_{t}"),
            Functional::MaxLevel => "max_level".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalComparison {
    pub functional: Functional,
    pub mean_a: EstimatorReport,
    pub mean_b: EstimatorReport,
    pub ks: KsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawComparison {
    pub n_a: usize,
    pub n_b: usize,
    pub rows: Vec<FunctionalComparison>,
}

/// Two-sample KS and mean comparison of each functional.
pub fn compare_laws(
    a: &[PathWindow],
    b: &[PathWindow],
    functionals: &[Functional],
) -> Result<LawComparison> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::SampleTooSmall {
            needed: 1,
            got: a.len().min(b.len()),
        });
    }
    let mut rows = Vec::new();
    for f in functionals {
        let xa: Vec<f64> = a.iter().filter_map(|w| f.evaluate(w)).collect();
        let xb: Vec<f64> = b.iter().filter_map(|w| f.evaluate(w)).collect();
        rows.push(FunctionalComparison {
            functional: *f,
            mean_a: estimate_mean(&xa)?,
            mean_b: estimate_mean(&xb)?,
            ks: ks_two_sample(&xa, &xb)?,
        });
    }
    Ok(LawComparison {
        n_a: a.len(),
        n_b: b.len(),
        rows,
    })
}

/// Mean hitting time of `h` for coth paths from `eps` and from `eps / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsHalving {
    pub eps: f64,
    pub mean_at_eps: EstimatorReport,
    pub mean_at_half: EstimatorReport,
    /// Difference of the two means over its standard error.
    pub z: f64,
}

pub fn eps_halving(
    master_seed: u64,
    spec: ModelSpec<f64>,
    dt: f64,
    eps: f64,
    n: usize,
) -> Result<EpsHalving> {
    let opts = SamplerOptions {
        record_path: false,
        ..SamplerOptions::default()
    };
    let times = |seed, e| -> Result<Vec<f64>> {
        Ok(sample_coth_paths(seed, spec, dt, e, n, opts)?
            .iter()
            .filter_map(|p| p.hit_time)
            .collect())
    };
    let a = estimate_mean(&times(master_seed, eps)?)?;
    let b = estimate_mean(&times(master_seed.wrapping_add(1), 0.5 * eps)?)?;
    Ok(EpsHalving {
        eps,
        mean_at_eps: a,
        mean_at_half: b,
        z: (a.estimate - b.estimate) / a.stderr.hypot(b.stderr),
    })
}
