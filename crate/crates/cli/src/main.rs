//! `stegclean` command-line front end.
//!
//! Every subcommand starts from the default [`PipelineConfig`], applies the
//! `--config` file, then its own flags, so one file can drive all of them.
//! Exit status: 0 on success, 1 for invalid input or configuration, 2 when a
//! processing stage fails.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stegclean::config::PipelineConfig;
use stegclean::dct;
use stegclean::io::{self, BitDepth};
use stegclean::metrics::{self, MatchResult};
use stegclean::pipeline::{self, Stage};
use stegclean::postproc;
use stegclean::raster;
use stegclean::stego;
use stegclean::synth::{self, SynthesisOptions};
use stegclean::{seed, Error, ImageGrid, ValueRange};

#[derive(Debug, Parser)]
#[command(
    name = "stegclean",
    version,
    about = "Remove hidden high-frequency signals from generated images and evaluate synthetic nuclei masks"
)]
struct Cli {
    /// Base seed; per-image seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// `key=value` configuration file, applied before flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize instance masks and write them as 16-bit label PNGs.
    Synth(SynthArgs),
    /// Low-pass filter an image in the DCT domain, or add Gaussian noise.
    Filter(FilterArgs),
    /// Hide a mask in a carrier image, filter, and report what survives.
    StegoDemo(StegoDemoArgs),
    /// Turn a near-binary mask image into an instance label PNG.
    Postproc(PostprocArgs),
    /// Match predicted against ground-truth label PNGs.
    Eval(EvalArgs),
    /// Run synth → stego → filter → postproc → eval end to end.
    Pipeline(Box<PipelineArgs>),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Built-in preset (`dsb`, `bbbc039`) or preset file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    count: Option<String>,
    #[arg(long)]
    size: Option<String>,
    /// `touching` or `separated`.
    #[arg(long)]
    placement: Option<String>,
    #[arg(long)]
    max_attempts: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FilterMethod {
    Dct,
    Noise,
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "dct")]
    method: FilterMethod,
    #[arg(long)]
    keep_fraction: Option<String>,
    /// `radial` or `diagonal`.
    #[arg(long)]
    ordering: Option<String>,
    /// Noise standard deviation on the [-1, 1] scale.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Also write the frequency mask (255 = kept, 0 = zeroed).
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StegoDemoArgs {
    #[arg(long)]
    carrier: PathBuf,
    #[arg(long)]
    payload: PathBuf,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    payload_side: Option<String>,
    #[arg(long)]
    band_fraction: Option<String>,
    #[arg(long)]
    keep_fraction: Option<String>,
    #[arg(long)]
    ordering: Option<String>,
}

#[derive(Debug, Args)]
struct PostprocArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long)]
    min_marker_distance: Option<String>,
    #[arg(long)]
    min_marker_height: Option<String>,
    #[arg(long)]
    min_marker_dynamic: Option<String>,
    #[arg(long)]
    max_hole_area: Option<String>,
    /// Binarization threshold, or `auto` for the range midpoint.
    #[arg(long)]
    threshold: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    /// Comma-separated IoU thresholds.
    #[arg(long)]
    tau: Option<String>,
    /// TSV destination; stdout when omitted.
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

/// One flag per configuration key.
#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    count: Option<String>,
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    keep_fraction: Option<String>,
    #[arg(long)]
    ordering: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    payload_side: Option<String>,
    #[arg(long)]
    band_fraction: Option<String>,
    #[arg(long)]
    max_hole_area: Option<String>,
    #[arg(long)]
    min_marker_distance: Option<String>,
    #[arg(long)]
    min_marker_height: Option<String>,
    #[arg(long)]
    min_marker_dynamic: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    max_attempts: Option<String>,
    #[arg(long)]
    placement: Option<String>,
}

impl PipelineArgs {
    fn settings(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("preset", &self.preset),
            ("count", &self.count),
            ("size", &self.size),
            ("keep_fraction", &self.keep_fraction),
            ("ordering", &self.ordering),
            ("epsilon", &self.epsilon),
            ("payload_side", &self.payload_side),
            ("band_fraction", &self.band_fraction),
            ("max_hole_area", &self.max_hole_area),
            ("min_marker_distance", &self.min_marker_distance),
            ("min_marker_height", &self.min_marker_height),
            ("min_marker_dynamic", &self.min_marker_dynamic),
            ("threshold", &self.threshold),
            ("tau", &self.tau),
            ("max_attempts", &self.max_attempts),
            ("placement", &self.placement),
        ]
    }
}

enum Failure {
    Invalid(anyhow::Error),
    Stage(anyhow::Error),
}

impl Failure {
    /// Bad inputs and parameters are the caller's to fix; anything else
    /// happened while processing.
    fn from_core(err: Error) -> Self {
        match err {
            Error::Io { .. } | Error::Encode { .. } => Failure::Stage(err.into()),
            _ => Failure::Invalid(err.into()),
        }
    }

    fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            Failure::Invalid(e) => Failure::Invalid(e.context(what.to_string())),
            Failure::Stage(e) => Failure::Stage(e.context(what.to_string())),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure::from_core(err)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        cfg = PipelineConfig::from_file(path).map_err(|e| Failure::Invalid(e.into()))?;
    }
    let mut settings: Vec<(&str, Option<String>)> = vec![
        ("seed", cli.seed.clone()),
        ("out_dir", cli.out_dir.as_ref().map(|p| p.display().to_string())),
        ("jobs", cli.jobs.clone()),
    ];
    let owned = |pairs: Vec<(&'static str, &Option<String>)>| -> Vec<(&'static str, Option<String>)> {
        pairs.into_iter().map(|(k, v)| (k, v.clone())).collect()
    };
    match &cli.command {
        Command::Synth(a) => settings.extend(owned(vec![
            ("preset", &a.preset),
            ("count", &a.count),
            ("size", &a.size),
            ("placement", &a.placement),
            ("max_attempts", &a.max_attempts),
        ])),
        Command::Filter(a) => settings.extend(owned(vec![
            ("keep_fraction", &a.keep_fraction),
            ("ordering", &a.ordering),
        ])),
        Command::StegoDemo(a) => settings.extend(owned(vec![
            ("epsilon", &a.epsilon),
            ("payload_side", &a.payload_side),
            ("band_fraction", &a.band_fraction),
            ("keep_fraction", &a.keep_fraction),
            ("ordering", &a.ordering),
        ])),
        Command::Postproc(a) => settings.extend(owned(vec![
            ("min_marker_distance", &a.min_marker_distance),
            ("min_marker_height", &a.min_marker_height),
            ("min_marker_dynamic", &a.min_marker_dynamic),
            ("max_hole_area", &a.max_hole_area),
            ("threshold", &a.threshold),
        ])),
        Command::Eval(a) => settings.push(("tau", a.tau.clone())),
        Command::Pipeline(a) => settings.extend(owned(a.settings())),
    }
    for (key, value) in settings {
        if let Some(value) = value {
            cfg.set(key, &value).map_err(|e| Failure::Invalid(e.into()))?;
        }
    }

    match &cli.command {
        Command::Synth(_) => synth_cmd(&cfg),
        Command::Filter(a) => filter_cmd(&cfg, a),
        Command::StegoDemo(a) => stego_demo_cmd(&cfg, a),
        Command::Postproc(a) => postproc_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a),
        Command::Pipeline(_) => pipeline_cmd(&cfg),
    }
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::Stage)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Stage)
}

fn synth_cmd(cfg: &PipelineConfig) -> CmdResult {
    let preset = synth::load_preset(&cfg.preset).and_then(|p| p.with_canvas(cfg.size, cfg.size))?;
    let opts = SynthesisOptions {
        max_attempts: cfg.max_attempts,
        placement: cfg.placement,
    };
    create_dir(&cfg.out_dir)?;
    let mut manifest = format!("stegclean-synth v1\npreset {}\nseed {}\n", cfg.preset, cfg.seed);
    let mut warnings = 0;
    for index in 0..cfg.count {
        let image_seed = seed::derive_seed(cfg.seed, index as u64);
        let s = synth::synthesize_mask_with(&preset, &opts, &mut seed::rng(image_seed));
        let name = format!("mask_{index:04}.png");
        io::save_labels(&s.mask, cfg.out_dir.join(&name)).map_err(|e| Failure::from_core(e).context(&name))?;
        manifest.push_str(&format!(
            "image index={index} seed={image_seed} file={name} row={} requested={} placed={}\n",
            s.row_index,
            s.requested,
            s.mask.instance_count()
        ));
        for w in &s.warnings {
            manifest.push_str(&format!("warning image={index} {w}\n"));
        }
        warnings += s.warnings.len();
    }
    write_text(&cfg.out_dir.join("manifest.txt"), &manifest)?;
    println!(
        "wrote {} masks to {} ({warnings} warnings)",
        cfg.count,
        cfg.out_dir.display()
    );
    Ok(())
}

fn depth_of(img: &ImageGrid) -> BitDepth {
    if img.range() == ValueRange::U16 {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    }
}

/// Clamps back into `range` so saving keeps the input's intensity scale.
fn clamp_to(img: &ImageGrid, range: ValueRange) -> Result<ImageGrid, Error> {
    let values = img.values().iter().map(|v| v.clamp(range.lo, range.hi)).collect();
    ImageGrid::new(img.height(), img.width(), values, range)
}

fn filter_cmd(cfg: &PipelineConfig, a: &FilterArgs) -> CmdResult {
    let input = io::load_image(&a.input)?;
    let unit = raster::normalize(&input, ValueRange::UNIT_SIGNED)?;
    let (h, w) = unit.dims();
    let processed = match a.method {
        FilterMethod::Dct => {
            let mask = dct::build_frequency_mask(h, w, cfg.keep_fraction, cfg.ordering)?;
            if let Some(path) = &a.mask_out {
                io::save_image(&mask.to_image(), path, BitDepth::Eight)?;
            }
            dct::lowpass_filter(&unit, &mask)?
        }
        FilterMethod::Noise => {
            if a.mask_out.is_some() {
                return Err(Failure::Invalid(anyhow!("--mask-out only applies to --method dct")));
            }
            dct::inject_gaussian_noise(&unit, a.sigma, &mut seed::rng(cfg.seed))?
        }
    };
    let back = raster::normalize(&clamp_to(&processed, ValueRange::UNIT_SIGNED)?, input.range())?;
    io::save_image(&back, &a.output, depth_of(&input))?;
    println!("wrote {}", a.output.display());
    Ok(())
}

fn stego_demo_cmd(cfg: &PipelineConfig, a: &StegoDemoArgs) -> CmdResult {
    let carrier = raster::normalize(&io::load_image(&a.carrier)?, ValueRange::UNIT_SIGNED)?;
    let payload = postproc::binarize(&io::load_image(&a.payload)?, None);
    let (h, w) = carrier.dims();
    let filter = dct::build_frequency_mask(h, w, cfg.keep_fraction, cfg.ordering)?;
    let run = stego::run_stego(&carrier, &payload, &cfg.stego(), &filter)?;
    create_dir(&cfg.out_dir)?;
    let save = |name: &str, img: &ImageGrid| -> CmdResult {
        io::save_image(img, cfg.out_dir.join(name), BitDepth::Sixteen).map_err(|e| Failure::from_core(e).context(name))
    };
    save("stego.png", &clamp_to(&run.stego, ValueRange::UNIT_SIGNED)?)?;
    save("filtered.png", &clamp_to(&run.filtered, ValueRange::UNIT_SIGNED)?)?;
    save("difference.png", &stego::abs_difference(&carrier, &run.stego)?)?;
    let report = format!("{}\n", run.report);
    write_text(&cfg.out_dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn postproc_cmd(cfg: &PipelineConfig, a: &PostprocArgs) -> CmdResult {
    let img = io::load_image(&a.input)?;
    let instances = postproc::instances_from_image(&img, &cfg.postproc()).map_err(|e| Failure::Stage(e.into()))?;
    io::save_labels(&instances, &a.output)?;
    println!(
        "{} instances written to {}",
        instances.instance_count(),
        a.output.display()
    );
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>, Failure> {
    let entries = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))
        .map_err(Failure::Invalid)?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn eval_cmd(cfg: &PipelineConfig, a: &EvalArgs) -> CmdResult {
    let names = png_names(&a.gt_dir)?;
    if names.is_empty() {
        return Err(Failure::Invalid(anyhow!("no PNG files in {}", a.gt_dir.display())));
    }
    let mut per_tau: Vec<Vec<MatchResult>> = vec![Vec::new(); cfg.tau.len()];
    let mut rows = vec![pipeline::EVAL_TSV_HEADER.to_string()];
    for name in &names {
        let pred_path = a.pred_dir.join(name);
        if !pred_path.exists() {
            return Err(Failure::Invalid(anyhow!(
                "no prediction for {name} in {}",
                a.pred_dir.display()
            )));
        }
        let gt = io::load_labels(a.gt_dir.join(name)).map_err(|e| Failure::from_core(e).context(name))?;
        let pred = io::load_labels(&pred_path).map_err(|e| Failure::from_core(e).context(name))?;
        let stem = name.rsplit_once('.').map_or(name.as_str(), |(s, _)| s);
        for (k, &tau) in cfg.tau.iter().enumerate() {
            let r = metrics::match_instances(&pred, &gt, tau).map_err(|e| Failure::from_core(e).context(name))?;
            rows.push(pipeline::eval_tsv_row(stem, &r));
            per_tau[k].push(r);
        }
    }
    for (k, &tau) in cfg.tau.iter().enumerate() {
        rows.extend(pipeline::aggregate_tsv_rows(tau, &metrics::aggregate(&per_tau[k])));
    }
    let table = rows.join("\n") + "\n";
    match &a.output {
        Some(path) => write_text(path, &table),
        None => std::io::stdout()
            .write_all(table.as_bytes())
            .context("cannot write to stdout")
            .map_err(Failure::Stage),
    }
}

fn pipeline_cmd(cfg: &PipelineConfig) -> CmdResult {
    cfg.validate().map_err(|e| Failure::Invalid(e.into()))?;
    match pipeline::run_pipeline(cfg) {
        Ok(summary) => {
            println!(
                "{} images, {} warnings, psnr {:.2} dB, ber pre/post {:.4}/{:.4}",
                summary.images,
                summary.warnings,
                summary.psnr_mean,
                summary.ber_prefilter_mean,
                summary.ber_postfilter_mean
            );
            for (tau, agg) in &summary.aggregates {
                println!(
                    "tau {tau}: precision {:.4} recall {:.4} f1 {:.4} (pooled)",
                    agg.pooled.precision, agg.pooled.recall, agg.pooled.f1
                );
            }
            println!("manifest {}", summary.manifest.display());
            Ok(())
        }
        Err(e) if e.stage == Stage::Setup && !matches!(e.source, Error::Io { .. }) => Err(Failure::Invalid(e.into())),
        Err(e) => Err(Failure::Stage(e.into())),
    }
}
