//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#![allow(clippy::excessive_precision)]

use std::time::Instant;

use hslope::conditioned::{
    acceptance_rate, collect_sections, marginal_goodness_of_fit, sample_coth_paths,
    sample_marginal, sample_rejection_paths, SamplerOptions, SectionKind,
};
use hslope::extrema::confirmed_extrema;
use hslope::formulas::*;
use hslope::montecarlo::{battery_from_harvest, harvest_slopes, BatteryConfig, HarvestConfig};
use hslope::numeric::integrate_to_infinity;
use hslope::palm::{compare_covering, direct_covering, SlopePool, StationarySampler};
use hslope::sinai::{gamma_doubling, sinai_experiment, OmegaLaw, SinaiConfig};
use hslope::stats::{estimate_laplace, ks_two_sample};
use hslope::*;

/// Standard errors allowed between an estimate and its oracle.
const Z_MAX: f64 = 4.0;
/// Significance level of the KS and chi-square checks.
const LEVEL: f64 = 0.01;
/// Relative tolerance of the closed-form identities.
const EXACT: f64 = 1e-12;
/// Tolerance of the numerically integrated transition density.
const QUADRATURE: f64 = 1e-6;
/// Relative tolerance of the rescaled random-environment means.
const SINAI_REL: f64 = 0.10;

struct Criterion {
    id: usize,
    lines: Vec<(Option<bool>, String)>,
}

impl Criterion {
    fn new(id: usize) -> Self {
        Self {
            id,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, pass: bool, detail: impl Into<String>) {
        self.lines.push((Some(pass), detail.into()));
    }

    fn info(&mut self, detail: impl Into<String>) {
        self.lines.push((None, detail.into()));
    }

    fn finish(self, title: &str, started: Instant) -> bool {
        let pass = self.lines.iter().all(|(p, _)| p.unwrap_or(true));
        println!(
            "criterion {}: {} {title} ({:.1} s)",
            self.id,
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        for (p, d) in &self.lines {
            let tag = match p {
                Some(true) => "ok",
                Some(false) => "FAIL",
                None => "info",
            };
            println!("    [{tag}] {d}");
        }
        pass
    }
}

fn unit() -> ModelSpec<f64> {
    ModelSpec::new(1.0, 1.0).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

fn identities() -> bool {
    let t0 = Instant::now();
    let mut c = Criterion::new(1);
    let mut worst = [0.0f64; 6];
    let mut track = |k: usize, a: f64, b: f64| {
        let r = (a - b).abs() / b.abs().max(1e-300);
        worst[k] = worst[k].max(r);
    };
    let mut qt_worst: f64 = 0.0;
    for &mu in &[-2.0, -1.0, -0.25, 0.25, 1.0, 2.0] {
        for &h in &[0.5, 1.0, 2.0] {
            let spec = ModelSpec::new(mu, h).unwrap();
            let m = slope_moments(spec).unwrap();
            track(0, m.mean_len_up + m.mean_len_down, m.mean_cycle);
            track(
                1,
                ito_rates(0.5, spec).unwrap().n_up * m.mean_minus_beta,
                1.0,
            );
            for &alpha in &[0.1, 0.5, 2.0] {
                let up = laplace_slope(alpha, 0.0, Direction::Up, spec).unwrap();
                let down = laplace_slope(alpha, 0.0, Direction::Down, spec).unwrap();
                track(2, up * down, laplace_cycle(alpha, spec).unwrap());
                for &(x, y) in &[(0.3, 0.7), (1.0, 1.0), (2.0, 0.5)] {
                    let direct = hitting_laplace(
                        HittingKind::ExitAbove,
                        spec,
                        HittingParams { alpha, x: -x, y },
                    )
                    .unwrap();
                    track(3, exit_above_by_scale(alpha, spec, x, y).unwrap(), direct);
                }
            }
            for frac in [0.1, 0.5, 0.9] {
                let p = HittingParams {
                    alpha: 0.0,
                    x: 0.0,
                    y: frac * h,
                };
                let a = hitting_laplace(HittingKind::Prob0First, spec, p).unwrap();
                let b = hitting_laplace(HittingKind::ProbHFirst, spec, p).unwrap();
                track(4, a + b, 1.0);
            }
            let r = spec.reflected();
            let mr = slope_moments(r).unwrap();
            track(5, mr.mean_len_down, m.mean_len_up);
            track(5, mr.mean_excess_up, m.mean_excess_down);
            for &(t, x) in &[(0.1, 0.25), (1.0, 1.0)] {
                let total = integrate_to_infinity(
                    |y| qt_density(t, x, y.max(1e-300), spec).unwrap(),
                    0.0,
                    1e-10,
                );
                qt_worst = qt_worst.max((total - 1.0).abs());
            }
        }
    }
    let names = [
        "E l+ + E l- = E l",
        "n_up * E(-beta) = 1",
        "slope transforms multiply to the cycle transform",
        "exit-above transform = scale-function ratio",
        "P(0 first) + P(h first) = 1",
        "reflection swaps up and down",
    ];
    for (name, w) in names.iter().zip(worst) {
        c.check(
            w <= EXACT,
            format!("{name}: max rel err {w:.2e} (tol {EXACT:.0e})"),
        );
    }
    c.check(
        qt_worst <= QUADRATURE,
        format!("transition density mass: max |1 - mass| {qt_worst:.2e} (tol {QUADRATURE:.0e})"),
    );
    let m = slope_moments(unit()).unwrap();
    c.check(
        rel_close(
            laplace_cycle(0.5, unit()).unwrap(),
            0.348160102295977894,
            EXACT,
        ),
        "cycle transform at alpha 0.5 = 0.348160102296",
    );
    c.check(
        rel_close(m.prob_cover_up, 0.205513187733489581, EXACT),
        "P(covering slope up) = 0.205513187733",
    );
    let elapsed = t0.elapsed().as_secs_f64();
    c.check(elapsed < 1.0, format!("runtime {elapsed:.3} s (< 1 s)"));
    c.finish("closed-form identities", t0)
}

fn slope_battery() -> bool {
    let t0 = Instant::now();
    let mut c = Criterion::new(2);
    let mut config = BatteryConfig::new(unit(), 20_241);
    config.harvest.replicas = 100;
    let harvest = harvest_slopes(config.harvest).unwrap();
    let report = battery_from_harvest(&harvest, config).unwrap();
    let n = report.n_up + report.n_down;
    c.check(
        n >= 20_000,
        format!("{n} non-covering slopes at dt = {}", config.harvest.dt),
    );
    for name in [
        "mean_excess_up",
        "mean_excess_down",
        "mean_len_up",
        "mean_len_down",
    ] {
        let k = report.check(name).unwrap();
        c.check(
            k.passed,
            format!(
                "{name}: {:.5} +- {:.5} vs {:.5} (z {:+.2}, grid allowance {:.5})",
                k.report.estimate,
                k.report.stderr,
                k.report.oracle.unwrap(),
                k.report.z.unwrap_or(f64::NAN),
                k.allowance
            ),
        );
    }
    for name in ["ks_excess_up", "ks_excess_down"] {
        let k = report.ks_check(name).unwrap();
        c.check(
            k.passed,
            format!(
                "{name}: exponential KS p = {:.4} (n {}, level {LEVEL})",
                k.p_value, k.n
            ),
        );
    }
    c.finish("slope statistics battery", t0)
}

fn laplace_checks() -> bool {
    let t0 = Instant::now();
    let mut c = Criterion::new(3);
    // A finer grid than the battery so the discretisation bias of the
    // transforms stays well under the Monte Carlo error with no allowance.
    let config = HarvestConfig {
        spec: unit(),
        dt: 2.5e-5,
        horizon_cycles: 250,
        replicas: 40,
        master_seed: 31_337,
    };
    let harvest = harvest_slopes(config).unwrap();
    let cycles = harvest.cycle_lengths();
    let r = estimate_laplace(&cycles, 0.5)
        .unwrap()
        .with_oracle(laplace_cycle(0.5, unit()).unwrap());
    c.check(
        r.within(Z_MAX, 0.0),
        format!(
            "E exp(-l/2): {:.5} +- {:.5} vs {:.5} (z {:+.2}, {} cycles)",
            r.estimate,
            r.stderr,
            r.oracle.unwrap(),
            r.z.unwrap(),
            r.n
        ),
    );
    let ups = harvest.lengths(Direction::Up);
    let oracle = laplace_slope(0.5, 0.0, Direction::Up, unit()).unwrap();
    let r = estimate_laplace(&ups, 0.5).unwrap().with_oracle(oracle);
    c.check(
        r.within(Z_MAX, 0.0),
        format!(
            "E exp(-l+/2): {:.5} +- {:.5} vs {:.5} (z {:+.2}, {} slopes)",
            r.estimate,
            r.stderr,
            r.oracle.unwrap(),
            r.z.unwrap(),
            r.n
        ),
    );
    c.finish("Laplace transforms at dt = 2.5e-5", t0)
}

fn covering() -> bool {
    let t0 = Instant::now();
    let mut c = Criterion::new(4);
    let spec = unit();
    let dt = 1e-4;
    let pool = SlopePool::build(4_401, spec, dt, 10_000).unwrap();
    let direct = direct_covering(4_402, spec, dt, 50, 2_000).unwrap();
    let sampler = StationarySampler::new(&pool).unwrap();
    let mut rng = spawn_stream(4_403, 0).rng();
    let stationary: Vec<_> = (0..10_000).map(|_| sampler.sample(&mut rng, 2)).collect();
    let cmp = compare_covering(spec, &pool, &direct, &stationary).unwrap();
    let d = cmp.direct.freq_up;
    c.check(
        d.within(Z_MAX, 0.0),
        format!(
            "direct P(up): {:.4} +- {:.4} vs {:.5} (z {:+.2}, n {})",
            d.estimate,
            d.stderr,
            cmp.oracle_freq_up,
            d.z.unwrap(),
            d.n
        ),
    );
    let s = cmp.stationary_freq_up;
    c.check(
        s.within(Z_MAX, 0.0),
        format!(
            "Palm P(up): {:.4} +- {:.4} vs {:.5} (z {:+.2}, n {})",
            s.estimate,
            s.stderr,
            cmp.oracle_freq_up,
            s.z.unwrap(),
            s.n
        ),
    );
    c.check(
        cmp.x1_ks.p_value > LEVEL,
        format!(
            "x1 two-sample KS p = {:.4} (D {:.4})",
            cmp.x1_ks.p_value, cmp.x1_ks.statistic
        ),
    );
    let biased = cmp.stationary.len_gamma0_up.unwrap();
    c.check(
        cmp.length_bias_z > Z_MAX,
        format!(
            "mean l(gamma0 | up) {:.4} > mean l+ {:.4} (z {:.1})",
            biased.estimate, cmp.pool_len_up.estimate, cmp.length_bias_z
        ),
    );
    c.info(format!(
        "direct x1 | up against the pool residual-life law: KS p = {:.4}; direct vs Palm frequency z = {:+.2}",
        cmp.direct_x1_up_vs_residual.p_value, cmp.freq_up_two_sample_z
    ));
    c.finish("covering slope and Palm construction", t0)
}

fn conditioned() -> bool {
    let t0 = Instant::now();
    let mut c = Criterion::new(5);
    let spec = unit();
    let draws = sample_marginal(5_501, spec, 1e-5, 0.5, 0.1, 100_000).unwrap();
    let fit = marginal_goodness_of_fit(&draws, spec, 0.5, 0.1, 30).unwrap();
    c.check(
        fit.chi_square.p_value > LEVEL,
        format!(
            "coth SDE marginal at t 0.1 from 0.5: chi-square {:.1} on {} df, p = {:.4}",
            fit.chi_square.statistic, fit.chi_square.df, fit.chi_square.p_value
        ),
    );
    let opts = SamplerOptions::default();
    for (k, eps) in [0.05, 0.1, 0.2].into_iter().enumerate() {
        let r = acceptance_rate(5_510 + k as u64, spec, 1e-4, eps, 20_000, opts).unwrap();
        c.check(
            r.within(Z_MAX, 0.0),
            format!(
                "acceptance from {eps}: {:.5} +- {:.5} vs W(eps)/W(h) {:.5} (z {:+.2})",
                r.estimate,
                r.stderr,
                r.oracle.unwrap(),
                r.z.unwrap()
            ),
        );
    }
    let sections = collect_sections(5_520, spec, 2.5e-5, 60.0, 100, 10).unwrap();
    let fwd = &sections[0];
    assert_eq!(fwd.kind, SectionKind::ForwardFromMin);
    let oracle = laplace_building_blocks(0.5, spec)
        .unwrap()
        .laplace_tau_minus_sigma;
    let r = estimate_laplace(&fwd.durations(), 0.5)
        .unwrap()
        .with_oracle(oracle);
    c.check(
        r.within(Z_MAX, 0.0),
        format!(
            "section duration E exp(-T/2): {:.5} +- {:.5} vs {:.5} (z {:+.2}, {} sections)",
            r.estimate,
            r.stderr,
            oracle,
            r.z.unwrap(),
            r.n
        ),
    );
    let mirror = ks_two_sample(&fwd.durations(), &sections[1].durations()).unwrap();
    c.info(format!(
        "forward-from-min vs backward-from-max durations: KS p = {:.4}",
        mirror.p_value
    ));
    let quiet = SamplerOptions {
        record_path: false,
        ..opts
    };
    let dt = 2e-5;
    let rejected: Vec<f64> = sample_rejection_paths(5_530, spec, dt, 0.1, 5_000, quiet)
        .unwrap()
        .iter()
        .map(|o| o.path.hit_time.unwrap())
        .collect();
    let sde: Vec<f64> = sample_coth_paths(5_531, spec, dt, 0.1, 5_000, quiet)
        .unwrap()
        .iter()
        .map(|p| p.hit_time.unwrap())
        .collect();
    let ks = ks_two_sample(&rejected, &sde).unwrap();
    c.check(
        ks.p_value > LEVEL,
        format!(
            "rejection vs coth SDE hitting times from 0.1: KS p = {:.4}",
            ks.p_value
        ),
    );
    c.finish("conditioned process", t0)
}

fn sinai() -> bool {
    let t0 = Instant::now();
    let mut c = Criterion::new(6);
    let config = SinaiConfig {
        delta: 0.05,
        gamma: 10.0,
        n_sites: 10_000_000,
        seed: 6_601,
        law: OmegaLaw::Uniform,
    };
    let record = sinai_experiment(config).unwrap();
    for (name, r) in record.reports() {
        let rel = (r.estimate / r.oracle.unwrap() - 1.0).abs();
        c.check(
            rel <= SINAI_REL,
            format!(
                "rescaled {name}: {:.4} +- {:.4} vs {:.4} (rel err {:.1}%)",
                r.estimate,
                r.stderr,
                r.oracle.unwrap(),
                100.0 * rel
            ),
        );
    }
    c.info("Gamma-doubling study at fixed drift (delta halves, sites x4):");
    for row in gamma_doubling(
        SinaiConfig {
            seed: 6_602,
            ..config
        },
        3,
    )
    .unwrap()
    {
        c.info(format!(
            "  Gamma {:>4}  delta {:.4}  sites {:>10}  max rel err {:.1}%",
            row.gamma,
            row.delta,
            row.n_sites,
            100.0 * row.max_relative_error
        ));
    }
    c.finish("random-environment rescaling", t0)
}

fn structural() -> bool {
    let t0 = Instant::now();
    let mut c = Criterion::new(7);
    let (mut alt, mut height, mut stream_eq, mut repro) = (true, true, true, true);
    for seed in 0..1_000u64 {
        let mu = [-1.0, -0.3, 0.3, 1.0][(seed % 4) as usize];
        let h = 0.25 + 0.25 * (seed % 5) as f64;
        let spec = ModelSpec::new(mu, h).unwrap();
        let path = generate_one_sided(spawn_stream(seed, 7), spec, 1e-2, 3_000, 0.0).unwrap();
        let ext = confirmed_extrema(&path, h).unwrap();
        for w in ext.windows(2) {
            alt &= w[0].kind != w[1].kind && w[0].grid_index < w[1].grid_index;
            height &= (w[1].level - w[0].level).abs() >= h;
        }
        let streamed: Vec<_> = detect_stream(path.points(), h)
            .unwrap()
            .skip(1)
            .collect::<hslope::Result<_>>()
            .unwrap();
        stream_eq &= streamed == ext;
        let again = generate_one_sided(spawn_stream(seed, 7), spec, 1e-2, 3_000, 0.0).unwrap();
        repro &= path
            .values
            .iter()
            .zip(&again.values)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    c.check(
        alt,
        "extrema alternate in kind and time on 1000 random paths",
    );
    c.check(height, "consecutive extrema differ by at least h");
    c.check(stream_eq, "streaming detector equals the batch sweep");
    c.check(repro, "paths reproduce bit for bit from their seeds");
    c.finish("structural properties", t0)
}

fn main() {
    let results = [
        identities(),
        slope_battery(),
        laplace_checks(),
        covering(),
        conditioned(),
        sinai(),
        structural(),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(i, _)| i + 1)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!(
            "acceptance: {} of {} criteria fail: {failed:?}",
            failed.len(),
            results.len()
        );
        std::process::exit(1);
    }
}
