//! Command-line front end: verification suites, micro-benchmarks, FLOPs
//! tables and contour grids, PQ evaluation, and an end-to-end demo.

pub mod config;
pub mod error;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use kernlab::aggregator::{aggregate_cfa, aggregate_ifa, reparameterize, AggregatorWeights, PyramidFeatures, LEVELS};
use kernlab::attention::AttentionVariant;
use kernlab::bench::{bench_module, to_csv, BenchModule};
use kernlab::decoder::{decode, DecoderConfig, DecoderWeights, KernelSet};
use kernlab::flops::{
    contour_csv, contour_grid, count_aggregator, count_attention, flops_attention, flops_cfa, flops_ifa,
    AggregatorCostConfig, AxisRange, ContourKind,
};
use kernlab::panoptic::{decode_seg, encode_seg, merge, ClassTable};
use kernlab::pq::pq_evaluate;
use kernlab::verify::{run_suite, Suite, Tolerances, VerifyReport};
use kernlab::{fixture, DType, Element, Rng};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "kernlab", version, about = "Aggregation and attention kernel lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded property suites and report each check.
    Verify(VerifyArgs),
    /// Time aggregators or attention variants at a configured size.
    Bench(BenchArgs),
    /// Emit analytic (and optionally counted) op counts or a contour grid.
    Flops(FlopsArgs),
    /// Score a predicted `.seg` map against a ground-truth `.seg` map.
    EvalPq(EvalPqArgs),
    /// Aggregate, decode and merge a pyramid into a `.seg` map.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// One of: all, aggregator, decoder, flops, panoptic.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a tolerance, e.g. `--tol equivalence_f32=2e-5`. Repeatable.
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    pub tol: Vec<String>,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Module(s) to time: ifa, cfa, mhca, dca, sdca, pdca, ddca.
    #[arg(long, required = true, value_delimiter = ',')]
    pub module: Vec<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Emit a contour grid of this ratio (cfa or sdca) instead of a table.
    #[arg(long)]
    pub grid: Option<String>,
    /// Grid x axis as `lo:hi:steps`.
    #[arg(long, default_value = "8:256:20")]
    pub x: String,
    /// Grid y axis as `lo:hi:steps`.
    #[arg(long, default_value = "16:512:20")]
    pub y: String,
    /// Also run every module under the op counter and add a `counted` column.
    #[arg(long)]
    pub counted: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalPqArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// JSON destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Run config; a small built-in setting is used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding `p2.tns` … `p5.tns`; a random pyramid is drawn
    /// when omitted.
    #[arg(long)]
    pub pyramid: Option<PathBuf>,
    /// Base height and width of the random pyramid.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Verify(a) => cmd_verify(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Flops(a) => cmd_flops(&a),
        Command::EvalPq(a) => cmd_eval_pq(&a),
        Command::Demo(a) => cmd_demo(&a),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io("<stdout>", e)),
    }
}

fn apply_tolerance_overrides(base: Tolerances, overrides: &[String]) -> Result<Tolerances, CliError> {
    let mut value = serde_json::to_value(base).map_err(|e| CliError::Config(e.to_string()))?;
    for item in overrides {
        let (name, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--tol expects NAME=VALUE, got `{item}`")))?;
        let v: f64 = raw
            .parse()
            .map_err(|_| CliError::Usage(format!("tolerance `{name}` value `{raw}` is not a number")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("tolerance `{name}` must be finite and non-negative")));
        }
        value[name] = serde_json::json!(v);
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("--tol: {e}")))
}

pub fn verify_report(args: &VerifyArgs) -> Result<VerifyReport, CliError> {
    let suite: Suite = args.suite.parse().map_err(|_| {
        CliError::Usage(format!(
            "unknown suite `{}`; expected one of: {}",
            args.suite,
            Suite::NAMES.join(", ")
        ))
    })?;
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let seed = cfg.resolve_seed(args.seed)?;
    let tol = apply_tolerance_overrides(cfg.tolerances, &args.tol)?;
    Ok(run_suite(suite, seed, &tol))
}

pub fn render_report(report: &VerifyReport) -> String {
    let mut out = String::new();
    for c in &report.checks {
        out.push_str(&format!(
            "{}  {:<10} {}  max_error={:e} tol={:e} cases={}{}\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.max_error,
            c.tolerance,
            c.cases,
            if c.detail.is_empty() { String::new() } else { format!("  ({})", c.detail) }
        ));
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    out.push_str(&format!(
        "{} of {} checks passed (suite {}, seed {})\n",
        report.checks.len() - failed,
        report.checks.len(),
        report.suite,
        report.seed
    ));
    out
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let report = verify_report(args)?;
    let text = if args.json {
        let mut s = serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
        s.push('\n');
        s
    } else {
        render_report(&report)
    };
    write_output(None, &text)?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::CheckFailed("one or more checks failed".into()))
    }
}

fn parse_modules(names: &[String]) -> Result<Vec<BenchModule>, CliError> {
    names
        .iter()
        .map(|n| {
            n.parse().map_err(|_| {
                CliError::Usage(format!(
                    "unknown module `{n}`; expected one of: {}",
                    BenchModule::NAMES.join(", ")
                ))
            })
        })
        .collect()
}

fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let modules = parse_modules(&args.module)?;
    if args.iters == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let seed = cfg.resolve_seed(args.seed)?;
    let attn = cfg.attention();
    let mut results = Vec::with_capacity(modules.len());
    for m in modules {
        let r = match cfg.dtype {
            DType::F32 => bench_module::<f32>(m, &cfg.aggregator, &attn, seed, args.warmup, args.iters),
            DType::F64 => bench_module::<f64>(m, &cfg.aggregator, &attn, seed, args.warmup, args.iters),
        }?;
        results.push(r);
    }
    write_output(args.out.as_deref(), &to_csv(&results))
}

fn parse_axis(flag: &str, spec: &str) -> Result<AxisRange, CliError> {
    let bad = || CliError::Usage(format!("--{flag} expects lo:hi:steps, got `{spec}`"));
    let parts: Vec<usize> = spec
        .split(':')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [lo, hi, steps] = parts[..] else { return Err(bad()) };
    AxisRange::new(lo, hi, steps).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

/// Analytic counts for every module at the configured sizes, one CSV row
/// each, with an optional counted column.
pub fn flops_table(cfg: &RunConfig, counted: bool, seed: u64) -> Result<(String, bool), CliError> {
    let agg = &cfg.aggregator;
    let attn = cfg.attention();
    let mut out = String::from(if counted { "module,analytic,counted\n" } else { "module,analytic\n" });
    let mut all_match = true;
    let mut row = |name: &str, analytic: u128, count: Option<u128>| {
        match count {
            Some(c) => {
                all_match &= c == analytic;
                out.push_str(&format!("{name},{analytic},{c}\n"));
            }
            None => out.push_str(&format!("{name},{analytic}\n")),
        }
    };
    for name in ["ifa", "cfa"] {
        let analytic = if name == "ifa" { flops_ifa(agg)? } else { flops_cfa(agg)? };
        let c = if counted { Some(count_aggregator::<f32>(name, agg, seed)?.counted) } else { None };
        row(name, analytic, c);
    }
    for v in AttentionVariant::ALL {
        let c = if counted { Some(count_attention::<f32>(v, &attn, seed)?.counted) } else { None };
        row(v.name(), flops_attention(&attn, v), c);
    }
    Ok((out, all_match))
}

fn cmd_flops(args: &FlopsArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    if let Some(kind) = &args.grid {
        if args.counted {
            return Err(CliError::Usage("--counted applies to the module table, not to --grid".into()));
        }
        let kind: ContourKind = kind
            .parse()
            .map_err(|_| CliError::Usage(format!("unknown grid `{kind}`; expected cfa or sdca")))?;
        let x = parse_axis("x", &args.x)?;
        let y = parse_axis("y", &args.y)?;
        let cells = contour_grid(kind, x, y)?;
        return write_output(args.out.as_deref(), &contour_csv(&cells));
    }
    let seed = cfg.resolve_seed(args.seed)?;
    let (table, all_match) = flops_table(&cfg, args.counted, seed)?;
    write_output(args.out.as_deref(), &table)?;
    if all_match {
        Ok(())
    } else {
        Err(CliError::CheckFailed("counted ops differ from the analytic formula".into()))
    }
}

fn read_seg(path: &Path) -> Result<(kernlab::panoptic::PanopticMap, ClassTable), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_seg(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn cmd_eval_pq(args: &EvalPqArgs) -> Result<(), CliError> {
    let (pred, pred_classes) = read_seg(&args.pred)?;
    let (gt, gt_classes) = read_seg(&args.gt)?;
    if pred_classes != gt_classes {
        return Err(CliError::Config("prediction and ground truth declare different class tables".into()));
    }
    let report = pq_evaluate(&pred, &gt, &gt_classes)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_output(args.out.as_deref(), &text)
}

/// Settings used by `demo` when no config file is given.
pub fn demo_preset() -> RunConfig {
    RunConfig {
        aggregator: AggregatorCostConfig {
            c2: 8,
            c3: 16,
            c4: 32,
            c5: 64,
            d: 32,
            h: 32,
            w: 32,
        },
        decoder: DecoderConfig {
            n: 10,
            d: 32,
            t: 3,
            blocks: 2,
            stages: 2,
            heads: 4,
            ffn_hidden: 64,
            classes: 5,
            variants: vec![AttentionVariant::Sdca; 2],
        },
        // Untrained weights give near-uniform class probabilities, so the
        // default 0.5 cut would discard every prediction.
        threshold: 0.25,
        ..RunConfig::default()
    }
}

/// Summary of a demo run.
#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub seg: Vec<u8>,
    pub reparam_error: f64,
    pub reparam_tolerance: f64,
    pub segments: usize,
    pub timings_ms: Vec<(&'static str, f64)>,
}

fn load_pyramid<T: Element>(dir: &Path) -> Result<PyramidFeatures<T>, CliError> {
    let mut levels = Vec::with_capacity(4);
    for name in LEVELS {
        let path = dir.join(format!("{name}.tns"));
        if !path.exists() {
            return Err(CliError::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        levels.push(fixture::load::<T>(&path)?);
    }
    let [p2, p3, p4, p5]: [_; 4] = levels.try_into().expect("four levels");
    Ok(PyramidFeatures::new(p2, p3, p4, p5)?)
}

fn run_demo_typed<T: Element>(
    cfg: &RunConfig,
    pyramid_dir: Option<&Path>,
    seed: u64,
) -> Result<DemoOutcome, CliError> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, f64)>| {
        timings.push((name, clock.elapsed().as_secs_f64() * 1e3));
        clock = Instant::now();
    };

    let mut rng = Rng::new(seed);
    let agg = &cfg.aggregator;
    let pyramid = match pyramid_dir {
        Some(dir) => load_pyramid::<T>(dir)?,
        None => PyramidFeatures::random(&mut rng, agg.widths(), agg.h, agg.w)?,
    };
    let (h, w) = (pyramid.height(), pyramid.width());
    let ifa = AggregatorWeights::<T>::random_ifa(&mut rng, pyramid.widths(), agg.d, true)?;
    let cfa = reparameterize(&ifa)?;
    lap("setup", &mut timings);

    let reference = aggregate_ifa(&pyramid, &ifa)?;
    let features = aggregate_cfa(&pyramid, &cfa)?;
    let reparam_error = reference.max_abs_diff(&features)?.to_f64().unwrap_or(f64::INFINITY);
    let reparam_tolerance = match T::DTYPE {
        DType::F32 => cfg.tolerances.equivalence_f32,
        DType::F64 => cfg.tolerances.equivalence_f64,
    };
    if !(reparam_error <= reparam_tolerance) {
        return Err(CliError::CheckFailed(format!(
            "re-parameterized aggregation differs by {reparam_error:e} (tolerance {reparam_tolerance:e})"
        )));
    }
    lap("aggregate", &mut timings);

    let dec = &cfg.decoder;
    if dec.d != agg.d {
        return Err(CliError::Config(format!(
            "decoder width {} does not match aggregator output width {}",
            dec.d, agg.d
        )));
    }
    let weights = DecoderWeights::<T>::random(dec, &mut rng)?;
    let proposals = KernelSet::<T>::random(&mut rng, dec.n, dec.d)?;
    let out = decode(&features, &proposals, dec, &weights)?;
    lap("decode", &mut timings);

    let classes = ClassTable::new(dec.classes, &cfg.stuff_ids())?;
    let map = merge(&out, &classes, cfg.threshold)?;
    map.validate(&classes)?;
    debug_assert_eq!((map.height(), map.width()), (h, w));
    let seg = encode_seg(&map, &classes)?;
    lap("merge", &mut timings);

    Ok(DemoOutcome {
        seg,
        reparam_error,
        reparam_tolerance,
        segments: map.segments().len(),
        timings_ms: timings,
    })
}

/// Runs the demo pipeline and returns the encoded map without writing it.
pub fn run_demo(args: &DemoArgs) -> Result<DemoOutcome, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => demo_preset(),
    };
    if let Some(size) = args.size {
        cfg.aggregator.h = size;
        cfg.aggregator.w = size;
    }
    if args.pyramid.is_none() && (cfg.aggregator.h % 8 != 0 || cfg.aggregator.w % 8 != 0) {
        return Err(CliError::Config(format!(
            "pyramid base {}x{} must be divisible by 8",
            cfg.aggregator.h, cfg.aggregator.w
        )));
    }
    let seed = cfg.resolve_seed(args.seed)?;
    match cfg.dtype {
        DType::F32 => run_demo_typed::<f32>(&cfg, args.pyramid.as_deref(), seed),
        DType::F64 => run_demo_typed::<f64>(&cfg, args.pyramid.as_deref(), seed),
    }
}

fn cmd_demo(args: &DemoArgs) -> Result<(), CliError> {
    let outcome = run_demo(args)?;
    std::fs::write(&args.out, &outcome.seg).map_err(|e| CliError::io(&args.out, e))?;
    println!(
        "re-parameterization check: max|Δ| = {:e} ≤ {:e}",
        outcome.reparam_error, outcome.reparam_tolerance
    );
    println!("segments: {}", outcome.segments);
    println!("wrote {}", args.out.display());
    for (stage, ms) in &outcome.timings_ms {
        eprintln!("{stage:>10}: {ms:.3} ms");
    }
    Ok(())
}
