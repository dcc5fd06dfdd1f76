//! The alternating marked point process of h-extrema: Palm sampling from
//! independently built slopes, the stationary version by length-biased
//! resampling, and the covering-slope statistics of both constructions.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::extrema::Direction;
use crate::formulas::slope_moments;
use crate::model::ModelSpec;
use crate::montecarlo::harvest_replica;
use crate::paths::DriftedWalk;
use crate::rng::{spawn_stream, RngStream};
use crate::stats::{
    estimate_mean, estimate_proportion, ks_one_sample, ks_two_sample, two_proportion_z,
    EstimatorReport, KsResult,
};

/// Direction, length and height of one slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeMark {
    pub direction: Direction,
    pub length: f64,
    pub height: f64,
}

/// Points `x_i` with marks `gamma_i`, where `x_{i+1} - x_i` is the length of
/// `gamma_i`. `points[origin]` is `x_0 <= 0` and `points[origin + 1]` is
/// `x_1 > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedSequence {
    pub points: Vec<f64>,
    pub marks: Vec<SlopeMark>,
    pub origin: usize,
}

impl MarkedSequence {
    /// Lays `marks` out so that `marks[origin]` starts at `x0`.
    pub fn from_marks(marks: Vec<SlopeMark>, origin: usize, x0: f64) -> Result<Self> {
        if origin >= marks.len() {
            return Err(invalid("origin index outside the mark list"));
        }
        let mut points = vec![0.0; marks.len() + 1];
        points[origin] = x0;
        for i in origin..marks.len() {
            points[i + 1] = points[i] + marks[i].length;
        }
        for i in (0..origin).rev() {
            points[i] = points[i + 1] - marks[i].length;
        }
        let seq = Self {
            points,
            marks,
            origin,
        };
        if !(seq.x0() <= 0.0 && seq.x1() > 0.0) {
            return Err(invalid(format!(
                "origin slope [{}, {}] does not cover 0",
                seq.x0(),
                seq.x1()
            )));
        }
        Ok(seq)
    }

    pub fn x0(&self) -> f64 {
        self.points[self.origin]
    }

    pub fn x1(&self) -> f64 {
        self.points[self.origin + 1]
    }

    pub fn gamma0(&self) -> &SlopeMark {
        &self.marks[self.origin]
    }

    pub fn origin_kind(&self) -> Direction {
        self.gamma0().direction
    }

    pub fn alternates(&self) -> bool {
        self.marks
            .windows(2)
            .all(|w| w[0].direction != w[1].direction)
    }
}

/// Grid indices and depth of the first rise of `h` above the running
/// minimum of a drifted walk started at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RiseRun {
    /// Last index of the running minimum.
    sigma: u64,
    /// First index at least `h` above the running minimum.
    tau: u64,
    /// Minus the running minimum at `tau`.
    depth: f64,
}

fn rise_run<R: Rng>(rng: &mut R, mu: f64, dt: f64, h: f64, max_steps: u64) -> Result<RiseRun> {
    let mut walk = DriftedWalk::new(rng, mu, dt, 0.0);
    let (mut min, mut sigma) = (0.0, 0u64);
    for k in 1..=max_steps {
        let x = walk.step();
        if x <= min {
            min = x;
            sigma = k;
        } else if x >= min + h {
            return Ok(RiseRun {
                sigma,
                tau: k,
                depth: -min,
            });
        }
    }
    Err(Error::Config(format!(
        "no rise of {h} within {max_steps} steps"
    )))
}

/// Builds one up-slope from two independent walks: the stretch from the
/// last minimum to the first rise of `h` of a walk with drift `-mu`, then
/// the stretch up to the last maximum before the first fall of `h` of an
/// independent walk, lifted by `h`. A down-slope is the reflection of an
/// up-slope built at `-mu`.
pub fn sample_slope<R: Rng>(
    rng: &mut R,
    spec: ModelSpec<f64>,
    dt: f64,
    direction: Direction,
    max_steps: u64,
) -> Result<SlopeMark> {
    let mu = match direction {
        Direction::Up => spec.mu,
        Direction::Down => -spec.mu,
    };
    let first = rise_run(rng, mu, dt, spec.h, max_steps)?;
    // Falls of the second walk are rises of its reflection, drift +mu.
    let second = rise_run(rng, -mu, dt, spec.h, max_steps)?;
    Ok(SlopeMark {
        direction,
        length: (first.tau - first.sigma + second.sigma) as f64 * dt,
        height: spec.h + second.depth,
    })
}

fn slope_budget(spec: ModelSpec<f64>, dt: f64) -> Result<u64> {
    let m = slope_moments(spec)?;
    let steps = 1e4 * m.mean_cycle.max(spec.h * spec.h) / dt;
    Ok(if steps < u64::MAX as f64 {
        steps as u64
    } else {
        u64::MAX
    })
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("dt must be positive, got {dt}")))
    }
}

/// A Palm sample: `x_0 = 0`, a fair coin for the direction of `gamma_0`,
/// then `n_slopes` alternating independent slopes.
pub fn sample_palm(
    stream: RngStream,
    spec: ModelSpec<f64>,
    dt: f64,
    n_slopes: usize,
) -> Result<MarkedSequence> {
    spec.require_drift()?;
    check_dt(dt)?;
    if n_slopes < 2 {
        return Err(invalid(format!("need at least 2 slopes, got {n_slopes}")));
    }
    let budget = slope_budget(spec, dt)?;
    let mut rng = stream.rng();
    let mut dir = if rng.random::<bool>() {
        Direction::Up
    } else {
        Direction::Down
    };
    let mut marks = Vec::with_capacity(n_slopes);
    for _ in 0..n_slopes {
        marks.push(sample_slope(&mut rng, spec, dt, dir, budget)?);
        dir = dir.opposite();
    }
    MarkedSequence::from_marks(marks, 0, 0.0)
}

/// Independent slopes of each direction, built as in [`sample_slope`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopePool {
    pub spec: ModelSpec<f64>,
    pub dt: f64,
    pub up: Vec<SlopeMark>,
    pub down: Vec<SlopeMark>,
}

impl SlopePool {
    pub fn build(master_seed: u64, spec: ModelSpec<f64>, dt: f64, size: usize) -> Result<Self> {
        spec.require_drift()?;
        check_dt(dt)?;
        if size < 2 {
            return Err(invalid(format!("pool size must be at least 2, got {size}")));
        }
        let budget = slope_budget(spec, dt)?;
        let draw = |dir: Direction, tag: u64| -> Result<Vec<SlopeMark>> {
            (0..size as u64)
                .into_par_iter()
                .map(|i| {
                    sample_slope(
                        &mut spawn_stream(master_seed, i).child(tag).rng(),
                        spec,
                        dt,
                        dir,
                        budget,
                    )
                })
                .collect()
        };
        Ok(Self {
            spec,
            dt,
            up: draw(Direction::Up, 0)?,
            down: draw(Direction::Down, 1)?,
        })
    }

    pub fn marks(&self, dir: Direction) -> &[SlopeMark] {
        match dir {
            Direction::Up => &self.up,
            Direction::Down => &self.down,
        }
    }

    pub fn lengths(&self, dir: Direction) -> Vec<f64> {
        self.marks(dir).iter().map(|m| m.length).collect()
    }

    pub fn excesses(&self, dir: Direction) -> Vec<f64> {
        self.marks(dir)
            .iter()
            .map(|m| m.height - self.spec.h)
            .collect()
    }

    /// Pool estimate of `P(gamma_0 upward) = E l+ / (E l+ + E l-)`, with a
    /// delta-method standard error.
    pub fn cover_up_probability(&self) -> Result<EstimatorReport> {
        let a = estimate_mean(&self.lengths(Direction::Up))?;
        let b = estimate_mean(&self.lengths(Direction::Down))?;
        let s = a.estimate + b.estimate;
        let var = (b.estimate * a.stderr).powi(2) + (a.estimate * b.stderr).powi(2);
        Ok(EstimatorReport {
            estimate: a.estimate / s,
            stderr: var.sqrt() / (s * s),
            n: a.n + b.n,
            oracle: None,
            z: None,
        })
    }

    /// CDF of the residual length `x_1` of a covering slope of direction
    /// `dir`, `G(x) = E min(l, x) / E l`, with the pool's empirical law of `l`.
    pub fn residual_cdf(&self, dir: Direction) -> impl Fn(f64) -> f64 {
        let mut l = self.lengths(dir);
        l.sort_by(f64::total_cmp);
        let n = l.len() as f64;
        let mut prefix = Vec::with_capacity(l.len() + 1);
        prefix.push(0.0);
        for &x in &l {
            prefix.push(prefix.last().unwrap() + x);
        }
        let total = *prefix.last().unwrap();
        move |x: f64| {
            if x <= 0.0 {
                return 0.0;
            }
            let k = l.partition_point(|&v| v <= x);
            ((prefix[k] + (n - k as f64) * x) / total).min(1.0)
        }
    }
}

/// Draws stationary sequences from a pool: direction of `gamma_0` with
/// probability proportional to the pool mean length, `gamma_0` by
/// length-weighted resampling, the origin uniform inside it, and the other
/// slopes uniformly from the pool.
#[derive(Debug, Clone)]
pub struct StationarySampler<'a> {
    pool: &'a SlopePool,
    p_up: f64,
    weighted_up: WeightedIndex<f64>,
    weighted_down: WeightedIndex<f64>,
}

impl<'a> StationarySampler<'a> {
    pub fn new(pool: &'a SlopePool) -> Result<Self> {
        let weights = |dir| {
            WeightedIndex::new(pool.lengths(dir))
                .map_err(|e| invalid(format!("pool lengths unusable as weights: {e}")))
        };
        Ok(Self {
            pool,
            p_up: pool.cover_up_probability()?.estimate,
            weighted_up: weights(Direction::Up)?,
            weighted_down: weights(Direction::Down)?,
        })
    }

    /// A sequence with `n_side` slopes on each side of `gamma_0`.
    pub fn sample<R: Rng>(&self, rng: &mut R, n_side: usize) -> MarkedSequence {
        let dir0 = if rng.random::<f64>() < self.p_up {
            Direction::Up
        } else {
            Direction::Down
        };
        let g0 = match dir0 {
            Direction::Up => self.pool.up[self.weighted_up.sample(rng)],
            Direction::Down => self.pool.down[self.weighted_down.sample(rng)],
        };
        let mut uniform = |dir: Direction| {
            let m = self.pool.marks(dir);
            m[rng.random_range(0..m.len())]
        };
        let mut marks = Vec::with_capacity(2 * n_side + 1);
        let mut dir = dir0;
        for _ in 0..n_side {
            dir = dir.opposite();
            marks.push(uniform(dir));
        }
        marks.reverse();
        marks.push(g0);
        dir = dir0;
        for _ in 0..n_side {
            dir = dir.opposite();
            marks.push(uniform(dir));
        }
        let u: f64 = rng.random();
        // x_1 = l (1 - u) lies in (0, l] since u is in [0, 1).
        let x1 = g0.length * (1.0 - u);
        MarkedSequence::from_marks(marks, n_side, x1 - g0.length)
            .expect("a uniform origin lies inside the covering slope")
    }
}

/// Builds a pool of `pool_size` slopes per direction and draws one
/// stationary sequence from it.
pub fn sample_stationary(
    stream: RngStream,
    spec: ModelSpec<f64>,
    dt: f64,
    pool_size: usize,
    n_side: usize,
) -> Result<MarkedSequence> {
    if pool_size < 1000 {
        return Err(invalid(format!(
            "pool size must be at least 1000, got {pool_size}"
        )));
    }
    let pool = SlopePool::build(stream.child(0).master_seed, spec, dt, pool_size)?;
    let mut rng: ChaCha8Rng = stream.child(1).rng();
    Ok(StationarySampler::new(&pool)?.sample(&mut rng, n_side))
}

/// Covering slopes of long simulated paths, one per replica, as
/// one-slope sequences.
pub fn direct_covering(
    master_seed: u64,
    spec: ModelSpec<f64>,
    dt: f64,
    horizon_cycles: usize,
    replicas: usize,
) -> Result<Vec<MarkedSequence>> {
    check_dt(dt)?;
    let m = slope_moments(spec)?;
    let burn = (horizon_cycles as f64 * m.mean_cycle / dt).ceil() as usize;
    let budget = burn.saturating_mul(1000).max(1 << 20);
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let c = harvest_replica(spawn_stream(master_seed, r), r, spec, dt, burn, 0, budget)?
                .covering;
            let mark = SlopeMark {
                direction: c.direction,
                length: c.length,
                height: c.height,
            };
            MarkedSequence::from_marks(vec![mark], 0, c.start_time)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `bins` equal-width bins on `[0, max]`; larger values go to the last bin.
    pub fn of(sample: &[f64], bins: usize) -> Self {
        let max = sample.iter().copied().fold(0.0, f64::max);
        let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &x in sample {
            let i = ((x / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringStats {
    pub n: usize,
    pub freq_up: EstimatorReport,
    pub freq_down: f64,
    pub len_gamma0: EstimatorReport,
    pub len_gamma0_up: Option<EstimatorReport>,
    pub len_gamma0_down: Option<EstimatorReport>,
    pub x1: EstimatorReport,
    pub x1_up: Option<EstimatorReport>,
    pub x1_down: Option<EstimatorReport>,
    pub x1_histogram: Histogram,
}

fn mean_if_enough(v: &[f64]) -> Option<EstimatorReport> {
    estimate_mean(v).ok()
}

pub fn covering_statistics(sequences: &[MarkedSequence]) -> Result<CoveringStats> {
    if sequences.len() < 2 {
        return Err(Error::SampleTooSmall {
            needed: 2,
            got: sequences.len(),
        });
    }
    let up: Vec<bool> = sequences
        .iter()
        .map(|s| s.origin_kind() == Direction::Up)
        .collect();
    let freq_up = estimate_proportion(&up)?;
    let pick = |f: &dyn Fn(&MarkedSequence) -> f64, dir: Option<Direction>| -> Vec<f64> {
        sequences
            .iter()
            .filter(|s| dir.is_none_or(|d| s.origin_kind() == d))
            .map(f)
            .collect()
    };
    let len = |s: &MarkedSequence| s.gamma0().length;
    let x1 = |s: &MarkedSequence| s.x1();
    let all_x1 = pick(&x1, None);
    Ok(CoveringStats {
        n: sequences.len(),
        freq_down: 1.0 - freq_up.estimate,
        freq_up,
        len_gamma0: estimate_mean(&pick(&len, None))?,
        len_gamma0_up: mean_if_enough(&pick(&len, Some(Direction::Up))),
        len_gamma0_down: mean_if_enough(&pick(&len, Some(Direction::Down))),
        x1: estimate_mean(&all_x1)?,
        x1_up: mean_if_enough(&pick(&x1, Some(Direction::Up))),
        x1_down: mean_if_enough(&pick(&x1, Some(Direction::Down))),
        x1_histogram: Histogram::of(&all_x1, 40),
    })
}

pub fn x1_values(sequences: &[MarkedSequence], dir: Option<Direction>) -> Vec<f64> {
    sequences
        .iter()
        .filter(|s| dir.is_none_or(|d| s.origin_kind() == d))
        .map(MarkedSequence::x1)
        .collect()
}

/// Side-by-side covering statistics of direct simulation and of the Palm
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringComparison {
    pub oracle_freq_up: f64,
    pub direct: CoveringStats,
    pub stationary: CoveringStats,
    /// Stationary `freq_up` with the pool's uncertainty added to its stderr.
    pub stationary_freq_up: EstimatorReport,
    pub freq_up_two_sample_z: f64,
    pub x1_ks: KsResult,
    /// `x_1 | up` of the direct sample against `(1 - F+(x)) / E l+`.
    pub direct_x1_up_vs_residual: KsResult,
    pub pool_len_up: EstimatorReport,
    /// `(mean l(gamma_0 | up) - mean l+) / stderr`.
    pub length_bias_z: f64,
}

pub fn compare_covering(
    spec: ModelSpec<f64>,
    pool: &SlopePool,
    direct: &[MarkedSequence],
    stationary: &[MarkedSequence],
) -> Result<CoveringComparison> {
    let oracle = slope_moments(spec)?.prob_cover_up;
    let d = covering_statistics(direct)?;
    let s = covering_statistics(stationary)?;
    let pool_p = pool.cover_up_probability()?;
    let stationary_freq_up = EstimatorReport {
        stderr: s.freq_up.stderr.hypot(pool_p.stderr),
        ..s.freq_up
    }
    .with_oracle(oracle);
    let hits = |v: &[MarkedSequence]| {
        v.iter()
            .filter(|q| q.origin_kind() == Direction::Up)
            .count()
    };
    let pool_len_up = estimate_mean(&pool.lengths(Direction::Up))?;
    let biased = s
        .len_gamma0_up
        .ok_or(Error::SampleTooSmall { needed: 2, got: 0 })?;
    Ok(CoveringComparison {
        oracle_freq_up: oracle,
        freq_up_two_sample_z: two_proportion_z(
            hits(direct),
            direct.len(),
            hits(stationary),
            stationary.len(),
        )?,
        x1_ks: ks_two_sample(&x1_values(direct, None), &x1_values(stationary, None))?,
        direct_x1_up_vs_residual: ks_one_sample(
            &x1_values(direct, Some(Direction::Up)),
            pool.residual_cdf(Direction::Up),
        )?,
        length_bias_z: (biased.estimate - pool_len_up.estimate)
            / biased.stderr.hypot(pool_len_up.stderr),
        pool_len_up,
        direct: CoveringStats {
            freq_up: d.freq_up.with_oracle(oracle),
            ..d
        },
        stationary: s,
        stationary_freq_up,
    })
}
