//! `pie`: command-line front end for curve-based low-light enhancement.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 failed
//! gradient check.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pie_core::batch::run_batch;
use pie_core::boc::generate_pool_with;
use pie_core::features::extract_features;
use pie_core::gradcheck::{gradcheck_with, GradcheckOptions};
use pie_core::image::histogram;
use pie_core::losses::SampleStats;
use pie_core::metrics::compare;
use pie_core::pipeline::{enhance, segmentation_view, Exemplars};
use pie_core::{
    load_image, parse_config, save_image, segment, total_loss, Config, CurveFamily, CurveParamMaps, Image, LossContext,
    Polarity,
};

#[derive(Parser)]
#[command(
    name = "pie",
    version,
    about = "Low-light image enhancement by per-image curve optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance one image.
    Enhance(EnhanceArgs),
    /// Write the bag-of-curves negatives of an image.
    Boc(BocArgs),
    /// Segment an image into regions.
    Segment(SegmentArgs),
    /// Print the loss breakdown of an anchor against a positive and a negative.
    Losses(LossesArgs),
    /// Print `psnr_db,ssim` for two images.
    Metrics(MetricsArgs),
    /// Compare analytic and finite-difference gradients on a random instance.
    Gradcheck(GradcheckArgs),
    /// Enhance every image in a directory.
    Batch(BatchArgs),
    /// Write the 256-bin brightness histogram as `bin,count` CSV.
    Histogram(HistogramArgs),
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of normal-light exemplars. Without it the input, tone mapped
    /// to mid brightness, stands in as the positive.
    #[arg(long)]
    positives: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Writes the per-update loss trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gamma,
    Sigmoid,
    Log,
}

impl From<FamilyArg> for CurveFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gamma => CurveFamily::Gamma,
            FamilyArg::Sigmoid => CurveFamily::Sigmoid,
            FamilyArg::Log => CurveFamily::Logarithmic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    Under,
    Over,
}

impl From<PolarityArg> for Polarity {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::Under => Polarity::Under,
            PolarityArg::Over => Polarity::Over,
        }
    }
}

#[derive(Args)]
struct BocArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long, value_enum)]
    polarity: Option<PolarityArg>,
    /// JSON config whose `boc` section overrides the presets.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    /// 16-bit label PNG; a `label,size,mean_brightness` CSV is written next to it.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    connectivity: Option<u8>,
}

#[derive(Args)]
struct LossesArgs {
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    positive: PathBuf,
    #[arg(long)]
    negative: PathBuf,
    /// Low-light input for the retention term; the anchor itself when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Adds this offset to one analytic derivative.
    #[arg(long, hide = true)]
    perturb: Option<f64>,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    input_dir: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    positives: Option<PathBuf>,
    /// Overrides the config worker count; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct HistogramArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Runtime(String),
    Verification(String),
}

impl From<pie_core::Error> for Failure {
    fn from(e: pie_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Enhance(a) => cmd_enhance(a),
        Command::Boc(a) => cmd_boc(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Losses(a) => cmd_losses(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Histogram(a) => cmd_histogram(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        Some(p) => Ok(parse_config(p)?),
        None => Ok(Config::default()),
    }
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_enhance(a: EnhanceArgs) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let low = load_image(&a.input)?;
    let exemplars = Exemplars::load(&cfg, a.positives.as_deref())?;
    let result = enhance(&low, &exemplars, &cfg, cfg.seed)?;
    save_image(&result.image, &a.output)?;
    if let Some(path) = &a.trace {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Failure::Runtime(e.to_string());
        w.write_record(["iter", "L_cG", "L_cE", "L_rc", "L_fr", "L_cc", "total"])
            .map_err(io)?;
        for (i, b) in result.trace.iter().enumerate() {
            let row = [b.l_cg, b.l_ce, b.l_rc, b.l_fr, b.l_cc, b.total].map(|v| v.to_string());
            w.write_record(std::iter::once(i.to_string()).chain(row)).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))?;
        write_file(path, &String::from_utf8_lossy(&bytes))?;
    }
    eprintln!(
        "{} updates, total loss {:.6} -> {:.6}, mean brightness {:.3} -> {:.3}",
        result.updates(),
        result.trace[0].total,
        result.trace.last().expect("non-empty trace").total,
        low.mean_brightness(),
        result.image.mean_brightness()
    );
    Ok(())
}

fn cmd_boc(a: BocArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let img = load_image(&a.input)?;
    let pool = generate_pool_with(&img, &cfg.boc)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", a.out_dir.display())))?;
    let stem = a.input.file_stem().unwrap_or_default().to_string_lossy();
    let family = a.family.map(CurveFamily::from);
    let polarity = a.polarity.map(Polarity::from);
    for neg in pool.entries() {
        if family.is_some_and(|f| f != neg.spec.family()) || polarity.is_some_and(|p| p != neg.spec.polarity()) {
            continue;
        }
        let name = format!(
            "{stem}_{}_{}.png",
            neg.spec.family().as_str(),
            neg.spec.polarity().as_str()
        );
        let path = a.out_dir.join(name);
        save_image(&neg.image, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_segment(a: SegmentArgs) -> CmdResult {
    let mut params = pie_core::SegParams::default();
    params.k = a.k.unwrap_or(params.k);
    params.min_size = a.min_size.unwrap_or(params.min_size);
    params.sigma = a.sigma.unwrap_or(params.sigma);
    params.connectivity = a.connectivity.unwrap_or(params.connectivity);
    let img = load_image(&a.input)?;
    let map = segment(&img, &params)?;
    map.write_label_png(&a.labels)?;
    write_file(&a.labels.with_extension("csv"), &map.summary_csv(&img)?)?;
    println!("{} regions", map.region_count());
    Ok(())
}

fn cmd_losses(a: LossesArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let anchor = load_image(&a.anchor)?;
    let positive = load_image(&a.positive)?;
    let negative = load_image(&a.negative)?;
    let input = match &a.input {
        Some(p) => load_image(p)?,
        None => anchor.clone(),
    };
    let polarity = if negative.mean_brightness() < positive.mean_brightness() {
        Polarity::Under
    } else {
        Polarity::Over
    };
    let w = cfg.loss_weights;
    let mut ctx = LossContext::new(w);
    if w.w_c > 0.0 {
        ctx = ctx
            .with_positive(SampleStats::from_image(&positive)?)
            .with_negative(polarity, SampleStats::from_image(&negative)?);
    }
    if w.w_rc > 0.0 {
        ctx = ctx.with_regions(segment(&segmentation_view(&input), &cfg.segmentation)?);
    }
    if w.w_fp > 0.0 {
        ctx = ctx.with_input(extract_features(&input)?);
    }
    let identity = CurveParamMaps::zeros(cfg.optimizer.curve_iterations, anchor.height(), anchor.width());
    let breakdown = total_loss(&anchor, &identity, &ctx)?;
    println!(
        "{}",
        serde_json::to_string(&breakdown).map_err(|e| Failure::Runtime(e.to_string()))?
    );
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> CmdResult {
    let report = compare(&load_image(&a.a)?, &load_image(&a.b)?)?;
    println!("{:.6},{:.6}", report.psnr_db, report.ssim);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let opts = GradcheckOptions {
        perturb: a.perturb,
        ..GradcheckOptions::default()
    };
    let report = gradcheck_with(a.seed, a.size, opts)?;
    println!(
        "seed={} size={} checked={} skipped={} max_abs_error={:.3e} max_rel_error={:.3e}",
        report.seed, report.size, report.checked, report.skipped, report.max_abs_error, report.max_rel_error
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "max relative error {:.3e} >= 1e-4",
            report.max_rel_error
        )))
    }
}

fn cmd_batch(a: BatchArgs) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(workers) = a.workers {
        cfg.workers = workers;
    }
    let exemplars = Exemplars::load(&cfg, a.positives.as_deref())?;
    let report = run_batch(&a.input_dir, &a.output_dir, &cfg, &exemplars)?;
    let failures = report.failures();
    eprintln!(
        "{} images, {failures} failed; summary in {}",
        report.rows.len(),
        a.output_dir.join(pie_core::batch::SUMMARY_FILE).display()
    );
    if failures == report.rows.len() {
        return Err(Failure::Runtime("every image failed".into()));
    }
    Ok(())
}

fn cmd_histogram(a: HistogramArgs) -> CmdResult {
    let img: Image = load_image(&a.input)?;
    let csv = histogram(&img).to_csv();
    match &a.output {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
