//! h-extrema and h-slopes of sampled paths.
//!
//! [`sweep`] is a literal transcription of the inductive definition of the
//! stopping times `tau_n` and the extremal points `sigma_n`.
//! [`ExtremaDetector`] produces the same records in a single pass with
//! constant memory and is what the Monte Carlo harvesters run on.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::paths::{SampledPath, TwoSidedPath};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtremumKind {
    Min,
    Max,
}

impl ExtremumKind {
    pub fn opposite(self) -> Self {
        match self {
            ExtremumKind::Min => ExtremumKind::Max,
            ExtremumKind::Max => ExtremumKind::Min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// Which crossing the first sweep waits for.
///
/// `SeekMax` tracks the running minimum and stops at the first rise of `h`,
/// so its first record is a minimum; `SeekMin` is the mirror image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    SeekMax,
    SeekMin,
}

impl SweepMode {
    fn record_kind(self) -> ExtremumKind {
        match self {
            SweepMode::SeekMax => ExtremumKind::Min,
            SweepMode::SeekMin => ExtremumKind::Max,
        }
    }

    fn flip(self) -> Self {
        match self {
            SweepMode::SeekMax => SweepMode::SeekMin,
            SweepMode::SeekMin => SweepMode::SeekMax,
        }
    }
}

/// One completed sweep: the crossing index `tau`, the extremal level `beta`
/// reached since the previous crossing and the last index `sigma` at which
/// it is attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord<T> {
    pub tau: usize,
    pub beta: T,
    pub sigma: usize,
    pub kind: ExtremumKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HExtremum<T> {
    pub grid_index: usize,
    pub time: T,
    pub level: T,
    pub kind: ExtremumKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope<T> {
    pub start: HExtremum<T>,
    pub end: HExtremum<T>,
    pub direction: Direction,
    pub length: T,
    pub height: T,
    pub excess: T,
}

impl<T: Scalar> Slope<T> {
    pub fn between(start: HExtremum<T>, end: HExtremum<T>, h: T) -> Self {
        let height = (end.level - start.level).abs();
        Self {
            start,
            end,
            direction: match start.kind {
                ExtremumKind::Min => Direction::Up,
                ExtremumKind::Max => Direction::Down,
            },
            length: end.time - start.time,
            height,
            excess: height - h,
        }
    }

    /// Grid values of the slope, both endpoints included.
    pub fn window<'a>(&self, values: &'a [T]) -> &'a [T] {
        &values[self.start.grid_index..=self.end.grid_index]
    }
}

/// The recursive sweep, started at index 0 of `path`.
///
/// For a rise sweep, `tau` is the first index whose value is at least the
/// running minimum (taken since the previous `tau`) plus `h`; `beta` is that
/// minimum and `sigma` the last index attaining it. Fall sweeps are the
/// mirror image. An incomplete trailing sweep is dropped.
pub fn sweep<T: Scalar>(
    path: &SampledPath<T>,
    h: T,
    initial_mode: SweepMode,
) -> Result<Vec<SweepRecord<T>>> {
    if !(h > T::zero()) {
        return Err(invalid(format!("threshold must be positive, got {h}")));
    }
    let v = &path.values;
    let mut records = Vec::new();
    let mut start = 0usize;
    let mut mode = initial_mode;
    loop {
        let tau = match mode {
            SweepMode::SeekMax => first_rise(v, start, h),
            SweepMode::SeekMin => first_fall(v, start, h),
        };
        let Some(tau) = tau else { break };
        let window = &v[start..=tau];
        let beta = match mode {
            SweepMode::SeekMax => window.iter().copied().fold(T::infinity(), T::min),
            SweepMode::SeekMin => window.iter().copied().fold(T::neg_infinity(), T::max),
        };
        let sigma = start + window.iter().rposition(|&x| x == beta).unwrap();
        records.push(SweepRecord {
            tau,
            beta,
            sigma,
            kind: mode.record_kind(),
        });
        start = tau;
        mode = mode.flip();
    }
    Ok(records)
}

fn first_rise<T: Scalar>(v: &[T], start: usize, h: T) -> Option<usize> {
    let mut running = v[start];
    for (t, &x) in v.iter().enumerate().skip(start) {
        running = running.min(x);
        if x >= running + h {
            return Some(t);
        }
    }
    None
}

fn first_fall<T: Scalar>(v: &[T], start: usize, h: T) -> Option<usize> {
    let mut running = v[start];
    for (t, &x) in v.iter().enumerate().skip(start) {
        running = running.max(x);
        if x <= running - h {
            return Some(t);
        }
    }
    None
}

/// Alternating extrema with the convention `m_0 <= 0 < m_1`.
///
/// `extrema[origin]` is `m_0`; slope `i` joins `extrema[i]` and
/// `extrema[i + 1]`, so the covering slope has index `origin` as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSequence<T> {
    pub extrema: Vec<HExtremum<T>>,
    pub origin: usize,
    pub h: T,
}

impl<T: Scalar> SlopeSequence<T> {
    /// `m_i` in the centred labelling.
    pub fn m(&self, i: isize) -> Option<&HExtremum<T>> {
        let k = self.origin as isize + i;
        if k < 0 {
            None
        } else {
            self.extrema.get(k as usize)
        }
    }

    pub fn covering_index(&self) -> usize {
        self.origin
    }

    pub fn covering_slope(&self) -> Slope<T> {
        Slope::between(
            self.extrema[self.origin],
            self.extrema[self.origin + 1],
            self.h,
        )
    }

    /// Checks the h-extremum property of every interior extremum against
    /// the grid values it was extracted from: each one is the extremal value
    /// on the window spanned by its two neighbours, and both neighbours sit
    /// at least `h` away.
    pub fn verify_definition(&self, values: &[T]) -> std::result::Result<(), String> {
        for w in self.extrema.windows(2) {
            if w[0].kind == w[1].kind || w[0].grid_index >= w[1].grid_index {
                return Err(format!(
                    "extrema at {} and {} do not alternate",
                    w[0].grid_index, w[1].grid_index
                ));
            }
        }
        for w in self.extrema.windows(3) {
            let (prev, x, next) = (w[0], w[1], w[2]);
            if values[x.grid_index] != x.level {
                return Err(format!("level mismatch at {}", x.grid_index));
            }
            let span = &values[prev.grid_index..=next.grid_index];
            let ok = match x.kind {
                ExtremumKind::Min => {
                    span.iter().all(|&y| y >= x.level)
                        && prev.level >= x.level + self.h
                        && next.level >= x.level + self.h
                }
                ExtremumKind::Max => {
                    span.iter().all(|&y| y <= x.level)
                        && prev.level <= x.level - self.h
                        && next.level <= x.level - self.h
                }
            };
            if !ok {
                return Err(format!(
                    "{:?} at index {} fails the h-extremum property",
                    x.kind, x.grid_index
                ));
            }
        }
        Ok(())
    }
}

fn to_extrema<T: Scalar>(path: &SampledPath<T>, records: &[SweepRecord<T>]) -> Vec<HExtremum<T>> {
    records
        .iter()
        .map(|r| HExtremum {
            grid_index: r.sigma,
            time: path.time(r.sigma),
            level: r.beta,
            kind: r.kind,
        })
        .collect()
}

/// Confirmed h-extrema of a one-sided path: every sweep record except the
/// first, whose left flank is not observed.
pub fn confirmed_extrema<T: Scalar>(path: &SampledPath<T>, h: T) -> Result<Vec<HExtremum<T>>> {
    let a = sweep(path, h, SweepMode::SeekMax)?;
    let b = sweep(path, h, SweepMode::SeekMin)?;
    // Each confirmed list is a suffix of the same alternating sequence; keep
    // the longer one.
    let pick = match (a.get(1), b.get(1)) {
        (Some(x), Some(y)) if y.sigma < x.sigma => &b,
        (None, Some(_)) => &b,
        _ => &a,
    };
    let ext = to_extrema(path, pick);
    Ok(ext.into_iter().skip(1).collect())
}

/// Extrema of a two-sided path, labelled so that `m_0 <= 0 < m_1`.
pub fn center<T: Scalar>(two_sided: &TwoSidedPath<T>, h: T) -> Result<SlopeSequence<T>> {
    let full = two_sided.concatenated();
    let zero = two_sided.origin_index();
    let extrema = confirmed_extrema(&full, h)?;
    let left = extrema.iter().filter(|e| e.grid_index <= zero).count();
    let right = extrema.len() - left;
    if left < 2 || right < 2 {
        return Err(Error::HorizonTooShort(format!(
            "need two h-extrema on each side of 0, found {left} left and {right} right"
        )));
    }
    Ok(SlopeSequence {
        extrema,
        origin: left - 1,
        h,
    })
}

pub fn slopes<T: Scalar>(seq: &SlopeSequence<T>) -> Vec<Slope<T>> {
    slopes_between(&seq.extrema, seq.h)
}

pub fn slopes_between<T: Scalar>(extrema: &[HExtremum<T>], h: T) -> Vec<Slope<T>> {
    extrema
        .windows(2)
        .map(|w| Slope::between(w[0], w[1], h))
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Phase<T> {
    /// Before the first crossing both running extremes are tracked.
    Undetermined {
        min: (T, T, usize),
        max: (T, T, usize),
    },
    /// Tracking the running minimum, waiting for a rise of `h`.
    Rising { min: (T, T, usize) },
    /// Tracking the running maximum, waiting for a fall of `h`.
    Falling { max: (T, T, usize) },
}

/// Single-pass h-extrema detector over `(t, value)` points.
///
/// Emits the sweep records' extremal points in order; the mode of the first
/// sweep is fixed by whichever threshold is crossed first. The first emitted
/// extremum has no observed left flank.
#[derive(Debug, Clone)]
pub struct ExtremaDetector<T> {
    h: T,
    phase: Option<Phase<T>>,
    index: usize,
    last_time: Option<T>,
}

impl<T: Scalar> ExtremaDetector<T> {
    pub fn new(h: T) -> Result<Self> {
        if !(h > T::zero()) {
            return Err(invalid(format!("threshold must be positive, got {h}")));
        }
        Ok(Self {
            h,
            phase: None,
            index: 0,
            last_time: None,
        })
    }

    /// Number of points consumed so far.
    pub fn consumed(&self) -> usize {
        self.index
    }

    pub fn push(&mut self, t: T, value: T) -> Result<Option<HExtremum<T>>> {
        if let Some(prev) = self.last_time {
            if !(t > prev) {
                return Err(invalid(format!(
                    "time must be strictly increasing: {t} after {prev}"
                )));
            }
        }
        self.last_time = Some(t);
        Ok(self.push_unchecked(t, value))
    }

    /// As [`Self::push`] without the monotonicity check.
    #[inline]
    pub fn push_unchecked(&mut self, t: T, x: T) -> Option<HExtremum<T>> {
        let k = self.index;
        self.index += 1;
        let h = self.h;
        let here = (x, t, k);
        let (next, out) = match self.phase {
            None => (
                Phase::Undetermined {
                    min: here,
                    max: here,
                },
                None,
            ),
            Some(Phase::Undetermined { mut min, mut max }) => {
                if x <= min.0 {
                    min = here;
                }
                if x >= max.0 {
                    max = here;
                }
                if x >= min.0 + h {
                    (
                        Phase::Falling { max: here },
                        Some(emit(min, ExtremumKind::Min)),
                    )
                } else if x <= max.0 - h {
                    (
                        Phase::Rising { min: here },
                        Some(emit(max, ExtremumKind::Max)),
                    )
                } else {
                    (Phase::Undetermined { min, max }, None)
                }
            }
            Some(Phase::Rising { min }) => {
                if x <= min.0 {
                    (Phase::Rising { min: here }, None)
                } else if x >= min.0 + h {
                    (
                        Phase::Falling { max: here },
                        Some(emit(min, ExtremumKind::Min)),
                    )
                } else {
                    (Phase::Rising { min }, None)
                }
            }
            Some(Phase::Falling { max }) => {
                if x >= max.0 {
                    (Phase::Falling { max: here }, None)
                } else if x <= max.0 - h {
                    (
                        Phase::Rising { min: here },
                        Some(emit(max, ExtremumKind::Max)),
                    )
                } else {
                    (Phase::Falling { max }, None)
                }
            }
        };
        self.phase = Some(next);
        out
    }
}

#[inline]
fn emit<T: Copy>(p: (T, T, usize), kind: ExtremumKind) -> HExtremum<T> {
    HExtremum {
        grid_index: p.2,
        time: p.1,
        level: p.0,
        kind,
    }
}

/// Streams h-extrema out of `(t, value)` points.
pub fn detect_stream<T, I>(series: I, h: T) -> Result<impl Iterator<Item = Result<HExtremum<T>>>>
where
    T: Scalar,
    I: IntoIterator<Item = (T, T)>,
{
    let mut det = ExtremaDetector::new(h)?;
    let mut failed = false;
    Ok(series.into_iter().filter_map(move |(t, x)| {
        if failed {
            return None;
        }
        match det.push(t, x) {
            Ok(e) => e.map(Ok),
            Err(e) => {
                failed = true;
                Some(Err(e))
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::paths::{generate_one_sided, generate_two_sided};
    use crate::rng::spawn_stream;

    fn path(values: Vec<f64>) -> SampledPath<f64> {
        SampledPath::new(0.0, 1.0, values).unwrap()
    }

    /// 0 -> 2 -> 0.5 -> 3 in steps of 0.25.
    fn four_knots() -> Vec<f64> {
        let mut v: Vec<f64> = (0..=8).map(|i| 0.25 * i as f64).collect();
        v.extend((1..=6).map(|i| 2.0 - 0.25 * i as f64));
        v.extend((1..=10).map(|i| 0.5 + 0.25 * i as f64));
        v
    }

    #[test]
    fn hand_traced_four_knot_path() {
        let v = four_knots();
        assert_eq!(v[8], 2.0);
        assert_eq!(v[14], 0.5);
        assert_eq!(v[24], 3.0);
        let recs = sweep(&path(v), 1.0, SweepMode::SeekMax).unwrap();
        let got: Vec<(usize, f64, usize, ExtremumKind)> = recs
            .iter()
            .map(|r| (r.tau, r.beta, r.sigma, r.kind))
            .collect();
        assert_eq!(
            got,
            vec![
                (4, 0.0, 0, ExtremumKind::Min),
                (12, 2.0, 8, ExtremumKind::Max),
                (18, 0.5, 14, ExtremumKind::Min),
            ]
        );
    }

    #[test]
    fn ties_resolve_to_last_index() {
        let v = vec![0.0, -1.0, -0.5, -1.0, -0.5, 0.5];
        let recs = sweep(&path(v), 1.0, SweepMode::SeekMax).unwrap();
        assert_eq!(recs[0].sigma, 3);
        assert_eq!(recs[0].tau, 5);
    }

    #[test]
    fn small_drop_gives_nothing() {
        let spec = ModelSpec::new(1.0, 1.0).unwrap();
        let v: Vec<f64> = (0..100).map(|k| -spec.mu * 0.005 * k as f64).collect();
        let p = path(v);
        assert!(sweep(&p, 1.0, SweepMode::SeekMax).unwrap().is_empty());
        assert!(sweep(&p, 1.0, SweepMode::SeekMin).unwrap().is_empty());
    }

    #[test]
    fn nonpositive_threshold_rejected() {
        assert!(sweep(&path(vec![0.0, 1.0]), 0.0, SweepMode::SeekMax).is_err());
        assert!(ExtremaDetector::<f64>::new(-1.0).is_err());
    }

    #[test]
    fn negation_swaps_modes() {
        let spec = ModelSpec::new(0.4, 1.0).unwrap();
        let p = generate_one_sided(spawn_stream(9, 0), spec, 1e-3, 50_000, 0.0).unwrap();
        let a = sweep(&p, 0.5, SweepMode::SeekMax).unwrap();
        let b = sweep(&p.negated(), 0.5, SweepMode::SeekMin).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.tau, y.tau);
            assert_eq!(x.sigma, y.sigma);
            assert_eq!(x.beta, -y.beta);
            assert_eq!(x.kind, y.kind.opposite());
        }
    }

    #[test]
    fn stream_on_zigzag() {
        let series = [0.0, 2.0, 0.0, 2.0, 0.0]
            .iter()
            .enumerate()
            .map(|(k, &v)| (k as f64, v));
        let out: Vec<HExtremum<f64>> = detect_stream(series, 1.0)
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        let kinds: Vec<_> = out.iter().map(|e| (e.grid_index, e.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (0, ExtremumKind::Min),
                (1, ExtremumKind::Max),
                (2, ExtremumKind::Min),
                (3, ExtremumKind::Max)
            ]
        );
    }

    #[test]
    fn stream_constant_series_is_empty() {
        let series = (0..1000).map(|k| (k as f64, 3.0));
        assert_eq!(detect_stream(series, 0.1).unwrap().count(), 0);
    }

    #[test]
    fn stream_rejects_non_monotone_time() {
        let series = vec![(0.0, 0.0), (1.0, 0.5), (1.0, 2.0)];
        let out: Vec<_> = detect_stream(series, 1.0).unwrap().collect();
        assert_eq!(out.len(), 1);
        assert!(out[0].is_err());
    }

    #[test]
    fn centred_sequence_satisfies_definition() {
        let spec = ModelSpec::new(1.0, 1.0).unwrap();
        let p = generate_two_sided(spawn_stream(31, 0), spec, 1e-3, 60.0).unwrap();
        let seq = center(&p, 1.0).unwrap();
        let full = p.concatenated();
        seq.verify_definition(&full.values).unwrap();
        let m0 = seq.m(0).unwrap();
        let m1 = seq.m(1).unwrap();
        assert!(m0.time <= 0.0 && m1.time > 0.0);
        let cov = seq.covering_slope();
        assert!(cov.start.time <= 0.0 && cov.end.time > 0.0);
        let all = slopes(&seq);
        assert_eq!(all.len(), seq.extrema.len() - 1);
        let covering: Vec<_> = all
            .iter()
            .filter(|s| s.start.time <= 0.0 && s.end.time > 0.0)
            .collect();
        assert_eq!(covering.len(), 1);
        for w in all.windows(2) {
            assert_eq!(w[0].direction, w[1].direction.opposite());
        }
        assert!(all.iter().all(|s| s.height >= 1.0 && s.length > 0.0));
    }

    #[test]
    fn centring_commutes_with_reflection() {
        let spec = ModelSpec::new(1.0, 1.0).unwrap();
        let p = generate_two_sided(spawn_stream(32, 0), spec, 1e-3, 40.0).unwrap();
        let a = center(&p, 1.0).unwrap();
        let b = center(&p.negated(), 1.0).unwrap();
        assert_eq!(a.origin, b.origin);
        assert_eq!(a.extrema.len(), b.extrema.len());
        for (x, y) in a.extrema.iter().zip(&b.extrema) {
            assert_eq!(x.grid_index, y.grid_index);
            assert_eq!(x.kind, y.kind.opposite());
        }
    }

    #[test]
    fn short_horizon_is_reported() {
        let spec = ModelSpec::new(1.0, 1.0).unwrap();
        let p = generate_two_sided(spawn_stream(33, 0), spec, 1e-2, 0.5).unwrap();
        assert!(matches!(center(&p, 1.0), Err(Error::HorizonTooShort(_))));
    }
}
