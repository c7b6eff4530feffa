//! End-to-end run: synthesize masks, hide each mask in a textured carrier,
//! filter, recover instances from the filtered image, and score them
//! against the synthesized ground truth.
//!
//! The textured carrier is a procedural stand-in for a generated nuclei
//! image: a dim noisy background with brighter domed ellipse interiors.
//!
//! Every image gets its own seed up front, so results do not depend on the
//! worker count. The manifest is written in image order, stage by stage per
//! batch, and flushed as it goes.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::dct::{self, FrequencyMask};
use crate::error::Error;
use crate::io::{self, BitDepth};
use crate::metrics::{self, Aggregate, MatchResult};
use crate::postproc;
use crate::raster::{ImageGrid, InstanceMask, ValueRange};
use crate::seed;
use crate::stego::{self, StegoReport};
use crate::synth::{self, SynthesisOptions, SynthesizedMask};

const BACKGROUND_LEVEL: f64 = -0.7;
const BACKGROUND_NOISE: f64 = 0.05;
const INTERIOR_LEVEL: f64 = 0.3;
const INTERIOR_DOME: f64 = 0.3;
const INTERIOR_NOISE: f64 = 0.06;

/// Renders an instance mask as a `[-1, 1]` fluorescence-like image.
///
/// Pixels of an instance that are 8-adjacent to a different instance are
/// drawn at background level, so touching nuclei show a dark seam.
pub fn textured_carrier<R: Rng + ?Sized>(synth: &SynthesizedMask, rng: &mut R) -> ImageGrid {
    let mask = &synth.mask;
    let (h, w) = mask.dims();
    let bg = Normal::new(0.0, BACKGROUND_NOISE).expect("positive sigma");
    let fg = Normal::new(0.0, INTERIOR_NOISE).expect("positive sigma");
    let mut values = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let label = mask.get(r, c);
            // Draw both samples so the noise field does not depend on labels.
            let (nb, nf) = (bg.sample(rng), fg.sample(rng));
            let v = if label == 0 || on_seam(mask, r, c) {
                BACKGROUND_LEVEL + nb
            } else {
                let e = &synth.ellipses[label as usize - 1];
                let rho2 = normalized_radius_sq(e, r, c);
                INTERIOR_LEVEL + INTERIOR_DOME * (1.0 - rho2).max(0.0) + nf
            };
            values.push(v.clamp(-1.0, 1.0));
        }
    }
    ImageGrid::new(h, w, values, ValueRange::UNIT_SIGNED).expect("values clamped to range")
}

fn on_seam(mask: &InstanceMask, r: usize, c: usize) -> bool {
    let label = mask.get(r, c);
    let (h, w) = mask.dims();
    (r.saturating_sub(1)..=(r + 1).min(h - 1)).any(|rr| {
        (c.saturating_sub(1)..=(c + 1).min(w - 1)).any(|cc| {
            let other = mask.get(rr, cc);
            other != 0 && other != label
        })
    })
}

fn normalized_radius_sq(e: &synth::EllipseParams, r: usize, c: usize) -> f64 {
    let (sin, cos) = e.rotation_deg.to_radians().sin_cos();
    let (dx, dy) = (c as f64 - e.center_col, r as f64 - e.center_row);
    let x = dx * cos + dy * sin;
    let y = -dx * sin + dy * cos;
    (x / e.semi_major).powi(2) + (y / e.semi_minor).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Setup,
    Synth,
    Stego,
    Filter,
    Postproc,
    Eval,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Setup => "setup",
            Stage::Synth => "synth",
            Stage::Stego => "stego",
            Stage::Filter => "filter",
            Stage::Postproc => "postproc",
            Stage::Eval => "eval",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed{}: {source}", image.map(|i| format!(" on image {i}")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Stage,
    pub image: Option<usize>,
    #[source]
    pub source: Error,
}

fn at(stage: Stage, image: Option<usize>) -> impl FnOnce(Error) -> PipelineError {
    move |source| PipelineError { stage, image, source }
}

#[derive(Debug, Clone, Copy, Default)]
struct StageTimes {
    synth: Duration,
    stego: Duration,
    filter: Duration,
    postproc: Duration,
    eval: Duration,
    write: Duration,
}

impl StageTimes {
    fn add(&mut self, o: &StageTimes) {
        self.synth += o.synth;
        self.stego += o.stego;
        self.filter += o.filter;
        self.postproc += o.postproc;
        self.eval += o.eval;
        self.write += o.write;
    }
}

struct ImageOutcome {
    index: usize,
    seed: u64,
    synth: SynthesizedMask,
    report: StegoReport,
    matches: Vec<MatchResult>,
    files: Vec<(String, String)>,
    times: StageTimes,
}

/// What a finished run reports back.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: PathBuf,
    pub images: usize,
    pub warnings: usize,
    pub ber_prefilter_mean: f64,
    pub ber_postfilter_mean: f64,
    pub psnr_mean: f64,
    /// One aggregate per configured tau, in configuration order.
    pub aggregates: Vec<(f64, Aggregate)>,
}

struct Manifest {
    out: BufWriter<File>,
    path: PathBuf,
}

impl Manifest {
    fn create(path: PathBuf) -> Result<Self, Error> {
        let file = File::create(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        Ok(Manifest {
            out: BufWriter::new(file),
            path,
        })
    }

    fn line(&mut self, text: impl AsRef<str>) -> Result<(), Error> {
        writeln!(self.out, "{}", text.as_ref()).map_err(|source| Error::Io {
            path: self.path.clone(),
            source,
        })
    }

    fn flush(&mut self) -> Result<(), Error> {
        self.out.flush().map_err(|source| Error::Io {
            path: self.path.clone(),
            source,
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Shared<'a> {
    cfg: &'a PipelineConfig,
    preset: synth::SynthesisPreset,
    filter: FrequencyMask,
    out_dir: &'a Path,
}

fn process_image(index: usize, shared: &Shared<'_>) -> Result<ImageOutcome, PipelineError> {
    let cfg = shared.cfg;
    let image_seed = seed::derive_seed(cfg.seed, index as u64);
    let mut times = StageTimes::default();
    let some = Some(index);

    let t = Instant::now();
    let opts = SynthesisOptions {
        max_attempts: cfg.max_attempts,
        placement: cfg.placement,
    };
    let synth = synth::synthesize_mask_with(&shared.preset, &opts, &mut seed::sub_rng(image_seed, 0));
    times.synth = t.elapsed();

    let t = Instant::now();
    let carrier = textured_carrier(&synth, &mut seed::sub_rng(image_seed, 1));
    let stego_cfg = cfg.stego();
    let stego_err = at(Stage::Stego, some);
    let payload = synth.mask.foreground();
    let truth = stego::downsample_payload(&payload, stego_cfg.payload_side);
    let stego_img = stego::embed(&carrier, &payload, &stego_cfg)
        .and_then(|s| Ok((stego::extract(&s, &stego_cfg)?, s)))
        .and_then(|(bits, s)| Ok((stego::bit_error_rate(&truth, &bits)?, stego::psnr(&carrier, &s)?, s)));
    let (ber_prefilter, psnr, stego_img) = stego_img.map_err(stego_err)?;
    times.stego = t.elapsed();

    let t = Instant::now();
    let filtered = dct::lowpass_filter(&stego_img, &shared.filter).map_err(at(Stage::Filter, some))?;
    let ber_postfilter = stego::extract(&filtered, &stego_cfg)
        .and_then(|bits| stego::bit_error_rate(&truth, &bits))
        .map_err(at(Stage::Filter, some))?;
    let report = StegoReport {
        psnr_carrier_vs_stego: psnr,
        ber_prefilter,
        ber_postfilter,
    };
    times.filter = t.elapsed();

    let t = Instant::now();
    let recovered = postproc::instances_from_image(&filtered, &cfg.postproc()).map_err(at(Stage::Postproc, some))?;
    times.postproc = t.elapsed();

    let t = Instant::now();
    let matches = cfg
        .tau
        .iter()
        .map(|&tau| metrics::match_instances(&recovered, &synth.mask, tau))
        .collect::<Result<Vec<_>, _>>()
        .map_err(at(Stage::Eval, some))?;
    times.eval = t.elapsed();

    let t = Instant::now();
    let name = |dir: &str, kind: &str| format!("{dir}/{kind}_{index:04}.png");
    let mut files = Vec::new();
    let mut write = |rel: String, f: &dyn Fn(&Path) -> Result<(), Error>| -> Result<(), PipelineError> {
        let path = shared.out_dir.join(&rel);
        f(&path).map_err(at(Stage::Write, some))?;
        let hash = sha256_file(&path).map_err(at(Stage::Write, some))?;
        files.push((rel, hash));
        Ok(())
    };
    write(name("masks", "gt"), &|p| io::save_labels(&synth.mask, p))?;
    write(name("images", "carrier"), &|p| {
        io::save_image(&carrier, p, BitDepth::Sixteen)
    })?;
    write(name("images", "stego"), &|p| save_signed(&stego_img, p))?;
    write(name("images", "filtered"), &|p| save_signed(&filtered, p))?;
    write(name("recovered", "pred"), &|p| io::save_labels(&recovered, p))?;
    times.write = t.elapsed();

    Ok(ImageOutcome {
        index,
        seed: image_seed,
        synth,
        report,
        matches,
        files,
        times,
    })
}

/// Stores an image whose range may exceed `[-1, 1]` by clamping into it.
fn save_signed(img: &ImageGrid, path: &Path) -> Result<(), Error> {
    let clamped: Vec<f64> = img.values().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let img = ImageGrid::new(img.height(), img.width(), clamped, ValueRange::UNIT_SIGNED)?;
    io::save_image(&img, path, BitDepth::Sixteen)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn write_image_entries(m: &mut Manifest, o: &ImageOutcome) -> Result<(), Error> {
    let s = &o.synth;
    m.line(format!(
        "image index={} seed={} preset_row={} requested={} placed={} warnings={}",
        o.index,
        o.seed,
        s.row_index,
        s.requested,
        s.mask.instance_count(),
        s.warnings.len()
    ))?;
    for w in &s.warnings {
        m.line(format!("warning image={} {}", o.index, w))?;
    }
    for stage in [
        Stage::Synth,
        Stage::Stego,
        Stage::Filter,
        Stage::Postproc,
        Stage::Eval,
        Stage::Write,
    ] {
        m.line(format!("stage {stage} image={} status=OK", o.index))?;
    }
    m.line(format!(
        "stego image={} psnr_db={} ber_prefilter={} ber_postfilter={}",
        o.index,
        fmt_f(o.report.psnr_carrier_vs_stego),
        fmt_f(o.report.ber_prefilter),
        fmt_f(o.report.ber_postfilter)
    ))?;
    for r in &o.matches {
        let sc = metrics::prf_scores(r);
        m.line(format!(
            "eval image={} tau={} tp={} fp={} fn={} precision={} recall={} f1={}",
            o.index,
            r.tau,
            r.tp,
            r.fp,
            r.fn_,
            fmt_f(sc.precision),
            fmt_f(sc.recall),
            fmt_f(sc.f1)
        ))?;
    }
    for (rel, hash) in &o.files {
        m.line(format!("file path={rel} sha256={hash}"))?;
    }
    Ok(())
}

/// Header row of the evaluation table.
pub const EVAL_TSV_HEADER: &str = "image\ttau\ttp\tfp\tfn\tprecision\trecall\tf1";

pub fn eval_tsv_row(image: &str, r: &MatchResult) -> String {
    let s = metrics::prf_scores(r);
    format!(
        "{image}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.tau,
        r.tp,
        r.fp,
        r.fn_,
        fmt_f(s.precision),
        fmt_f(s.recall),
        fmt_f(s.f1)
    )
}

/// Aggregate rows: `pooled` sums counts over images, `image_mean` averages
/// per-image scores (its count columns are the pooled totals).
pub fn aggregate_tsv_rows(tau: f64, a: &Aggregate) -> [String; 2] {
    let row = |label: &str, s: &metrics::Scores| {
        format!(
            "{label}\t{tau}\t{}\t{}\t{}\t{}\t{}\t{}",
            a.counts.tp,
            a.counts.fp,
            a.counts.fn_,
            fmt_f(s.precision),
            fmt_f(s.recall),
            fmt_f(s.f1)
        )
    };
    [row("ALL_pooled", &a.pooled), row("ALL_image_mean", &a.image_mean)]
}

/// Runs the whole pipeline into `cfg.out_dir`.
///
/// On a stage failure the manifest keeps everything written so far and
/// ends with a `FAILED` line naming the stage and image.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let setup = at(Stage::Setup, None);
    cfg.validate()
        .map_err(|e| setup(Error::param("config", e.to_string())))?;
    let out_dir = cfg.out_dir.as_path();
    for sub in ["", "masks", "images", "recovered"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|source| at(Stage::Setup, None)(Error::Io { path: dir, source }))?;
    }
    let mut manifest = Manifest::create(out_dir.join("manifest.txt")).map_err(at(Stage::Setup, None))?;

    let mut run = || -> Result<RunSummary, PipelineError> {
        let w = |r: Result<(), Error>| r.map_err(at(Stage::Write, None));
        w(manifest.line("stegclean-manifest v1"))?;
        for line in cfg.to_text().lines() {
            w(manifest.line(format!("config {line}")))?;
        }
        w(manifest.flush())?;

        let preset = synth::load_preset(&cfg.preset)
            .and_then(|p| p.with_canvas(cfg.size, cfg.size))
            .map_err(at(Stage::Synth, None))?;
        let filter = dct::build_frequency_mask(cfg.size, cfg.size, cfg.keep_fraction, cfg.ordering)
            .map_err(at(Stage::Filter, None))?;
        let shared = Shared {
            cfg,
            preset,
            filter,
            out_dir,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| at(Stage::Setup, None)(Error::param("jobs", e.to_string())))?;

        let batch = pool.current_num_threads().max(1) * 4;
        let mut per_tau: Vec<Vec<MatchResult>> = vec![Vec::new(); cfg.tau.len()];
        let mut tsv = vec![EVAL_TSV_HEADER.to_string()];
        let (mut ber_pre, mut ber_post, mut psnr, mut warnings) = (0.0, 0.0, 0.0, 0usize);
        let mut times = StageTimes::default();
        let mut start = 0;
        while start < cfg.count {
            let end = (start + batch).min(cfg.count);
            let outcomes: Vec<Result<ImageOutcome, PipelineError>> = pool.install(|| {
                (start..end)
                    .into_par_iter()
                    .map(|i| process_image(i, &shared))
                    .collect()
            });
            for outcome in outcomes {
                let o = outcome?;
                w(write_image_entries(&mut manifest, &o))?;
                ber_pre += o.report.ber_prefilter;
                ber_post += o.report.ber_postfilter;
                psnr += o.report.psnr_carrier_vs_stego;
                warnings += o.synth.warnings.len();
                times.add(&o.times);
                for (k, r) in o.matches.into_iter().enumerate() {
                    tsv.push(eval_tsv_row(&format!("{:04}", o.index), &r));
                    per_tau[k].push(r);
                }
            }
            w(manifest.flush())?;
            start = end;
        }

        let n = cfg.count as f64;
        let mut aggregates = Vec::new();
        for (k, &tau) in cfg.tau.iter().enumerate() {
            let agg = metrics::aggregate(&per_tau[k]);
            for (kind, s) in [("pooled", agg.pooled), ("image_mean", agg.image_mean)] {
                w(manifest.line(format!(
                    "aggregate tau={tau} kind={kind} tp={} fp={} fn={} precision={} recall={} f1={}",
                    agg.counts.tp,
                    agg.counts.fp,
                    agg.counts.fn_,
                    fmt_f(s.precision),
                    fmt_f(s.recall),
                    fmt_f(s.f1)
                )))?;
            }
            tsv.extend(aggregate_tsv_rows(tau, &agg));
            aggregates.push((tau, agg));
        }
        let summary = RunSummary {
            manifest: manifest.path.clone(),
            images: cfg.count,
            warnings,
            ber_prefilter_mean: ber_pre / n,
            ber_postfilter_mean: ber_post / n,
            psnr_mean: psnr / n,
            aggregates,
        };
        w(manifest.line(format!(
            "summary images={} warnings={} ber_prefilter_mean={} ber_postfilter_mean={} psnr_mean_db={}",
            summary.images,
            summary.warnings,
            fmt_f(summary.ber_prefilter_mean),
            fmt_f(summary.ber_postfilter_mean),
            fmt_f(summary.psnr_mean)
        )))?;

        let tsv_path = out_dir.join("eval.tsv");
        fs::write(&tsv_path, tsv.join("\n") + "\n").map_err(|source| {
            at(Stage::Write, None)(Error::Io {
                path: tsv_path.clone(),
                source,
            })
        })?;
        let hash = sha256_file(&tsv_path).map_err(at(Stage::Write, None))?;
        w(manifest.line(format!("file path=eval.tsv sha256={hash}")))?;

        for (stage, d) in [
            (Stage::Synth, times.synth),
            (Stage::Stego, times.stego),
            (Stage::Filter, times.filter),
            (Stage::Postproc, times.postproc),
            (Stage::Eval, times.eval),
            (Stage::Write, times.write),
        ] {
            w(manifest.line(format!("timing stage={stage} ms={}", d.as_millis())))?;
        }
        w(manifest.line("status OK"))?;
        w(manifest.flush())?;
        Ok(summary)
    };

    let result = run();
    if let Err(e) = &result {
        let image = e.image.map(|i| i.to_string()).unwrap_or_else(|| "-".into());
        let _ = manifest.line(format!("FAILED stage={} image={image} error={}", e.stage, e.source));
        let _ = manifest.line("status FAILED");
        let _ = manifest.flush();
    }
    result
}

/// Manifest text without `timing` lines, for comparing runs.
pub fn manifest_without_timings(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("timing "))
        .map(|l| format!("{l}\n"))
        .collect()
}
