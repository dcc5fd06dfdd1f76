//! One function per subcommand. Each resolves its settings, runs the
//! experiment, writes the report and returns whether its checks passed.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use hslope::conditioned::{
    acceptance_rate, compare_laws, eps_halving, sample_coth_paths, sample_rejection_paths,
    Functional, PathWindow, SamplerOptions,
};
use hslope::formulas::{evaluate, FormulaParams, FORMULA_NAMES};
use hslope::montecarlo::{
    battery_from_harvest, calibrate_bias, harvest_slopes, BatteryConfig, BiasCoefficients,
    HarvestConfig, TolerancePolicy,
};
use hslope::palm::{
    compare_covering, direct_covering, MarkedSequence, SlopePool, StationarySampler,
};
use hslope::sinai::{gamma_doubling, sinai_experiment, OmegaLaw, SinaiConfig};
use hslope::{spawn_stream, ExtremaDetector, ModelSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::write_report;
use crate::Globals;

const SEED_ENV: &str = "HSLOPE_SEED";

fn spec(mu: f64, h: f64) -> anyhow::Result<ModelSpec<f64>> {
    Ok(ModelSpec::new(mu, h)?)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FormulasArgs {
    /// Formula to evaluate; repeat for several, omit for all.
    #[arg(long = "name")]
    pub names: Vec<String>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub x: f64,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub y: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Print the accepted names and exit.
    #[arg(long)]
    pub list: bool,
}

pub fn formulas(a: FormulasArgs, g: &Globals) -> anyhow::Result<bool> {
    if a.list {
        for n in FORMULA_NAMES {
            println!("{n}");
        }
        return Ok(true);
    }
    let p = FormulaParams {
        mu: a.mu,
        h: a.h,
        alpha: a.alpha,
        lambda: a.lambda,
        x: a.x,
        y: a.y,
        t: a.t,
    };
    let requested: Vec<&str> = if a.names.is_empty() {
        FORMULA_NAMES.to_vec()
    } else {
        a.names.iter().map(String::as_str).collect()
    };
    let mut values = Vec::new();
    for name in &requested {
        match evaluate(name, &p) {
            Ok(v) => values.push(json!({ "name": name, "value": v })),
            // Explicitly requested formulas must evaluate.
            Err(e) if !a.names.is_empty() => bail!("{name}: {e}"),
            Err(e) => values.push(json!({ "name": name, "value": null, "error": e.to_string() })),
        }
    }
    write_report(g, "formulas", &a, true, &json!({ "values": values }))?;
    Ok(true)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    /// CSV of `t,x` rows or of bare values (`-` for stdin). A non-numeric
    /// first row is taken as a header.
    #[arg(long, default_value = "-")]
    pub input: String,
    /// CSV of confirmed extrema (`-` for stdout).
    #[arg(long, default_value = "-")]
    pub output: String,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    /// Grid step for single-column input.
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
}

#[derive(Serialize)]
struct ExtremumRow {
    time: f64,
    level: f64,
    kind: &'static str,
    index: usize,
}

pub fn extract(a: ExtractArgs, g: &Globals) -> anyhow::Result<bool> {
    let input: Box<dyn Read> = if a.input == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(File::open(&a.input).with_context(|| format!("opening {}", a.input))?)
    };
    let output: Box<dyn Write> = if a.output == "-" {
        Box::new(io::stdout().lock())
    } else {
        Box::new(File::create(&a.output).with_context(|| format!("creating {}", a.output))?)
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(output);
    writer.write_record(["time", "level", "kind", "index"])?;
    let mut detector = ExtremaDetector::new(a.h)?;
    let (mut points, mut emitted, mut written) = (0usize, 0usize, 0usize);
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let fields: Vec<&str> = record.iter().map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let (t, x) = match (parsed, fields.len()) {
            (Ok(v), 1) => (points as f64 * a.dt, v[0]),
            (Ok(v), 2) => (v[0], v[1]),
            (Err(_), _) if line == 0 => continue,
            _ => bail!(
                "line {}: expected `t,x` or a single value, got {:?}",
                line + 1,
                fields
            ),
        };
        points += 1;
        if let Some(e) = detector.push(t, x)? {
            emitted += 1;
            // The first extremum has no observed left flank.
            if emitted > 1 {
                writer.serialize(ExtremumRow {
                    time: e.time,
                    level: e.level,
                    kind: match e.kind {
                        hslope::ExtremumKind::Min => "min",
                        hslope::ExtremumKind::Max => "max",
                    },
                    index: e.grid_index,
                })?;
                written += 1;
            }
        }
    }
    writer.flush()?;
    if g.report.is_some() {
        write_report(
            g,
            "extract",
            &a,
            true,
            &json!({ "points": points, "extrema": written }),
        )?;
    }
    Ok(true)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    #[arg(long, default_value_t = 100)]
    pub horizon_cycles: usize,
    #[arg(long, default_value_t = 20)]
    pub replicas: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4.0)]
    pub z_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub ks_level: f64,
    /// Grid-bias coefficients; settable from the settings file only.
    #[arg(skip)]
    pub bias: Option<BiasCoefficients>,
    /// Also fit the grid-bias coefficients over these steps.
    #[arg(long, value_delimiter = ',')]
    pub calibrate: Vec<f64>,
    /// CSV of every harvested slope.
    #[arg(long)]
    pub slopes_csv: Option<PathBuf>,
}

pub fn verify(mut a: VerifyArgs, g: &Globals) -> anyhow::Result<bool> {
    let harvest_config = HarvestConfig {
        spec: spec(a.mu, a.h)?,
        dt: a.dt,
        horizon_cycles: a.horizon_cycles,
        replicas: a.replicas,
        master_seed: a.seed,
    };
    a.bias.get_or_insert_with(BiasCoefficients::default);
    let config = BatteryConfig {
        harvest: harvest_config,
        alpha: a.alpha,
        policy: TolerancePolicy {
            z_max: a.z_max,
            ks_level: a.ks_level,
            bias: a.bias.unwrap(),
        },
    };
    let harvest = harvest_slopes(harvest_config)?;
    let report = battery_from_harvest(&harvest, config)?;
    if let Some(path) = &a.slopes_csv {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        for s in harvest.slopes() {
            w.serialize(s)?;
        }
        w.flush()?;
    }
    let calibration = if a.calibrate.is_empty() {
        None
    } else {
        Some(calibrate_bias(harvest_config, &a.calibrate, a.alpha)?)
    };
    let passed = report.passed;
    write_report(
        g,
        "verify",
        &a,
        passed,
        &json!({ "battery": report, "calibration": calibration }),
    )?;
    Ok(passed)
}

fn parse_functional(s: &str) -> anyhow::Result<Functional> {
    Ok(match s {
        "duration" => Functional::Duration,
        "max_level" => Functional::MaxLevel,
        _ => match s.strip_prefix("marginal:") {
            Some(t) => Functional::MarginalAt {
                t: t.parse().with_context(|| format!("bad time in {s:?}"))?,
            },
            None => bail!("unknown functional {s:?}; use duration, max_level or marginal:<t>"),
        },
    })
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SdeArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    /// Start levels for the acceptance-rate checks.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2])]
    pub eps: Vec<f64>,
    /// Attempts per acceptance-rate check.
    #[arg(long, default_value_t = 20_000)]
    pub attempts: usize,
    /// Start level of the sampler comparison.
    #[arg(long, default_value_t = 0.1)]
    pub compare_eps: f64,
    /// Paths per sampler in the comparison.
    #[arg(long, default_value_t = 5_000)]
    pub n_paths: usize,
    /// Compared functionals: duration, max_level, marginal:<t>.
    #[arg(long, value_delimiter = ',', default_values_t = ["duration".to_string(), "marginal:0.2".to_string()])]
    pub functionals: Vec<String>,
    #[arg(long, env = SEED_ENV, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub z_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub ks_level: f64,
    /// CSV of `sampler,duration` rows.
    #[arg(long)]
    pub durations_csv: Option<PathBuf>,
}

pub fn sde(a: SdeArgs, g: &Globals) -> anyhow::Result<bool> {
    let spec = spec(a.mu, a.h)?;
    let functionals = a
        .functionals
        .iter()
        .map(|s| parse_functional(s))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if !functionals.contains(&Functional::Duration) {
        bail!("the functional list must include duration");
    }
    let opts = SamplerOptions::default();
    let mut passed = true;
    let mut rates = Vec::new();
    for (k, &eps) in a.eps.iter().enumerate() {
        let r = acceptance_rate(
            a.seed.wrapping_add(10 + k as u64),
            spec,
            a.dt,
            eps,
            a.attempts,
            opts,
        )?;
        let ok = r.within(a.z_max, 0.0);
        passed &= ok;
        rates.push(json!({ "eps": eps, "rate": r, "passed": ok }));
    }
    let rejected: Vec<PathWindow> =
        sample_rejection_paths(a.seed, spec, a.dt, a.compare_eps, a.n_paths, opts)?
            .iter()
            .map(|o| PathWindow::from(&o.path))
            .collect();
    let sde: Vec<PathWindow> = sample_coth_paths(
        a.seed.wrapping_add(1),
        spec,
        a.dt,
        a.compare_eps,
        a.n_paths,
        opts,
    )?
    .iter()
    .map(PathWindow::from)
    .collect();
    let comparison = compare_laws(&rejected, &sde, &functionals)?;
    let duration_ok = comparison
        .rows
        .iter()
        .filter(|r| r.functional == Functional::Duration)
        .all(|r| r.ks.p_value > a.ks_level);
    passed &= duration_ok;
    let halving = eps_halving(a.seed.wrapping_add(2), spec, a.dt, a.compare_eps, a.n_paths)?;
    if let Some(path) = &a.durations_csv {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["sampler", "duration"])?;
        for (name, set) in [("rejection", &rejected), ("sde", &sde)] {
            for p in set {
                w.write_record([name, &p.duration().to_string()])?;
            }
        }
        w.flush()?;
    }
    let result = json!({
        "acceptance": rates,
        "comparison": comparison,
        "duration_ks_passed": duration_ok,
        "eps_halving": halving,
    });
    write_report(g, "sde", &a, passed, &result)?;
    Ok(passed)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PalmArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    /// Slopes per direction in the resampling pool.
    #[arg(long, default_value_t = 10_000)]
    pub pool_size: usize,
    /// Long paths simulated for the direct covering statistics.
    #[arg(long, default_value_t = 2_000)]
    pub replicas: usize,
    #[arg(long, default_value_t = 50)]
    pub horizon_cycles: usize,
    /// Stationary sequences drawn from the pool.
    #[arg(long, default_value_t = 10_000)]
    pub sequences: usize,
    /// Slopes on each side of the covering one in each sequence.
    #[arg(long, default_value_t = 2)]
    pub side: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub z_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub ks_level: f64,
    /// CSV of `construction,origin_kind,x1,len_gamma0` rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn palm(a: PalmArgs, g: &Globals) -> anyhow::Result<bool> {
    let spec = spec(a.mu, a.h)?;
    if a.pool_size < 1000 {
        bail!("pool size must be at least 1000, got {}", a.pool_size);
    }
    let pool = SlopePool::build(a.seed, spec, a.dt, a.pool_size)?;
    let direct = direct_covering(
        a.seed.wrapping_add(1),
        spec,
        a.dt,
        a.horizon_cycles,
        a.replicas,
    )?;
    let sampler = StationarySampler::new(&pool)?;
    let mut rng = spawn_stream(a.seed.wrapping_add(2), 0).rng();
    let stationary: Vec<MarkedSequence> = (0..a.sequences)
        .map(|_| sampler.sample(&mut rng, a.side))
        .collect();
    let cmp = compare_covering(spec, &pool, &direct, &stationary)?;
    let checks = json!({
        "direct_freq_up": cmp.direct.freq_up.within(a.z_max, 0.0),
        "stationary_freq_up": cmp.stationary_freq_up.within(a.z_max, 0.0),
        "x1_ks": cmp.x1_ks.p_value > a.ks_level,
        "length_bias": cmp.length_bias_z > a.z_max,
    });
    let passed = checks
        .as_object()
        .unwrap()
        .values()
        .all(|v| v == &json!(true));
    if let Some(path) = &a.csv {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["construction", "origin_kind", "x1", "len_gamma0"])?;
        for (name, set) in [("direct", &direct), ("palm", &stationary)] {
            for s in set.iter() {
                w.write_record([
                    name,
                    s.origin_kind().as_str(),
                    &s.x1().to_string(),
                    &s.gamma0().length.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    write_report(
        g,
        "palm",
        &a,
        passed,
        &json!({ "checks": checks, "comparison": cmp }),
    )?;
    Ok(passed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawArg {
    Uniform,
    TwoPoint,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SinaiArgs {
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 10.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10_000_000)]
    pub n_sites: u64,
    #[arg(long, value_enum, default_value_t = LawArg::Uniform)]
    pub law: LawArg,
    #[arg(long, env = SEED_ENV, default_value_t = 1)]
    pub seed: u64,
    /// Extra levels of the Gamma-doubling study (0 for none).
    #[arg(long, default_value_t = 0)]
    pub doubling: usize,
    /// Largest accepted relative error of the rescaled means.
    #[arg(long, default_value_t = 0.10)]
    pub tolerance: f64,
}

pub fn sinai(a: SinaiArgs, g: &Globals) -> anyhow::Result<bool> {
    let config = SinaiConfig {
        delta: a.delta,
        gamma: a.gamma,
        n_sites: a.n_sites,
        seed: a.seed,
        law: match a.law {
            LawArg::Uniform => OmegaLaw::Uniform,
            LawArg::TwoPoint => OmegaLaw::TwoPoint,
        },
    };
    let record = sinai_experiment(config)?;
    let passed = record.max_relative_error() <= a.tolerance;
    let study = if a.doubling > 0 {
        Some(gamma_doubling(
            SinaiConfig {
                seed: a.seed.wrapping_add(1),
                ..config
            },
            a.doubling + 1,
        )?)
    } else {
        None
    };
    let result = json!({
        "record": record,
        "max_relative_error": record.max_relative_error(),
        "gamma_doubling": study,
    });
    write_report(g, "sinai", &a, passed, &result)?;
    Ok(passed)
}
