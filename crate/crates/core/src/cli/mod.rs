//! `spcgan` command line: data generation, training, inference, level-set
//! baseline, evaluation, sweeps and plots, all driven by one JSON config.

mod config;

pub use config::{DataSection, EvalMethod, EvalSection, LevelSetSection, RunConfig, SegmentSection};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalstat::{
    build_report, emit_report, emit_sweep, parse_records_csv, parse_sweep_csv, run_sweep, DiceRecord,
};
use crate::gac::{self, fit_params, LevelSetParams};
use crate::phantom::{
    generate_phantom, load_samples, read_image_png, save_dataset, write_mask_png, PairedSample, PhantomSpec,
    SegMask, Split,
};
use crate::trainer::{segment, train, Checkpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LEVELSET_PARAMS_FILE: &str = "levelset_params.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Parser)]
#[command(name = "spcgan", version, about = "Semi-pixel-wise cycle-GAN lesion segmentation")]
pub struct Cli {
    /// JSON run configuration; defaults apply to missing sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Concurrent sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/val/test phantom manifests.
    GenData,
    /// Train a segmentation network.
    Train {
        /// Continue from an earlier run (not supported).
        #[arg(long)]
        resume: bool,
    },
    /// Segment an image or every sample of a manifest with a checkpoint.
    Segment,
    /// Fit (or load) level-set parameters and segment with them.
    Levelset,
    /// Score predicted masks and run paired tests.
    Eval,
    /// Train and test over a grid of training-set sizes, regimes and seeds.
    Sweep,
    /// Redraw figures from an existing report directory.
    Plot {
        /// Directory holding `records.csv` and/or `sweep.csv`.
        dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train { .. } => "train",
            Command::Segment => "segment",
            Command::Levelset => "levelset",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Plot { .. } => "plot",
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                log::info!("wrote {}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Command::Plot { dir } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| dir.clone());
        return cmd_plot(dir, &out);
    }
    let out = match (&cli.out, &cli.command) {
        (Some(o), _) => o.clone(),
        (None, Command::GenData) => cfg.data.dir.clone(),
        (None, c) => cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(c.name())),
    };
    if let Command::Train { resume: true } = cli.command {
        return Err(Error::validation(
            "resume",
            "resuming is not supported; start a new run instead",
        ));
    }
    prepare_out(&out, cli.force)?;
    let mut written = match &cli.command {
        Command::GenData => cmd_gen_data(&cfg, &out)?,
        Command::Train { .. } => cmd_train(&cfg, &out)?,
        Command::Segment => cmd_segment(&cfg, &out)?,
        Command::Levelset => cmd_levelset(&cfg, &out)?,
        Command::Eval => cmd_eval(&cfg, &out)?,
        Command::Sweep => cmd_sweep(&cfg, &out, cli.jobs)?,
        Command::Plot { .. } => unreachable!("handled above"),
    };
    let resolved = out.join(RESOLVED_CONFIG_FILE);
    cfg.save(&resolved)?;
    written.push(resolved);
    Ok(written)
}

fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if !force && entries.next().is_some() {
            return Err(Error::validation(
                "out",
                format!("{} is not empty; pass --force to overwrite", dir.display()),
            ));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Deterministic phantom splits. Sample `i` (counted over all splits) is
/// drawn from its own seed, so ids are unique across splits.
pub fn generate_splits(spec: &PhantomSpec, seed: u64, sizes: [usize; 3]) -> Result<[Vec<PairedSample>; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: [Vec<PairedSample>; 3] = Default::default();
    for (k, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            out[k].push(generate_phantom(spec, rng.random())?);
        }
    }
    Ok(out)
}

fn manifest_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.json", split.as_str()))
}

fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.data.validate()?;
    let splits = generate_splits(&cfg.data.phantom, cfg.seed, cfg.data.split)?;
    let mut written = Vec::new();
    for (split, samples) in [Split::Train, Split::Val, Split::Test].into_iter().zip(&splits) {
        let (m, path) = save_dataset(out, split, cfg.seed, samples)?;
        log::info!("{} split: {} samples", split.as_str(), m.len());
        written.push(path);
    }
    Ok(written)
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<PairedSample>> {
    let path = manifest_path(&cfg.data.dir, split);
    Ok(load_samples(&path)
        .map_err(|e| e.context(format!("loading {} manifest", split.as_str())))?
        .1)
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.train.validate()?;
    let train_set = load_split(cfg, Split::Train)?;
    let val_set = load_split(cfg, Split::Val)?;
    let (ckpt, log) = train(&train_set, &val_set, &cfg.train)?;
    let path = out.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    log.write(out)?;
    log::info!(
        "selected epoch {} (val loss {:?}, val dice {:?})",
        ckpt.epoch,
        ckpt.val_loss,
        ckpt.val_dice
    );
    Ok(vec![path, out.join("train_log.csv"), out.join("val_log.csv")])
}

fn is_manifest(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "json")
}

/// Inputs for inference: `(id, image, reference mask if known)`.
fn inputs(input: &Path, spacing: f64) -> Result<Vec<(String, PairedSampleOrImage)>> {
    if is_manifest(input) {
        let (_, samples) = load_samples(input)?;
        Ok(samples.into_iter().map(|s| (s.id.clone(), PairedSampleOrImage::Sample(s))).collect())
    } else {
        let img = read_image_png(input, spacing)?;
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .trim_end_matches("_image")
            .to_string();
        Ok(vec![(stem, PairedSampleOrImage::Image(img))])
    }
}

enum PairedSampleOrImage {
    Sample(PairedSample),
    Image(crate::phantom::GrayImage),
}

impl PairedSampleOrImage {
    fn image(&self) -> &crate::phantom::GrayImage {
        match self {
            Self::Sample(s) => &s.image,
            Self::Image(i) => i,
        }
    }

    fn mask(&self) -> Option<&SegMask> {
        match self {
            Self::Sample(s) => Some(&s.mask),
            Self::Image(_) => None,
        }
    }
}

fn write_masks(out: &Path, masks: &[(String, SegMask)]) -> Result<Vec<PathBuf>> {
    let dir = out.join("masks");
    masks
        .iter()
        .map(|(id, m)| {
            let p = dir.join(format!("{id}_mask.png"));
            write_mask_png(m, &p)?;
            Ok(p)
        })
        .collect()
}

fn cmd_segment(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.segment;
    let ckpt = Checkpoint::load(&sec.checkpoint)?;
    let input = sec.input.clone().unwrap_or_else(|| manifest_path(&cfg.data.dir, Split::Test));
    let mut masks = Vec::new();
    for (id, item) in inputs(&input, cfg.data.phantom.spacing)? {
        masks.push((id, segment(item.image(), &ckpt, sec.threshold)?));
    }
    write_masks(out, &masks)
}

fn cmd_levelset(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.levelset;
    let params: LevelSetParams = match &sec.params {
        Some(p) => LevelSetParams::load(p)?,
        None => {
            let train_set = load_split(cfg, Split::Train)?;
            let fit = fit_params(&train_set, &sec.grid)?;
            log::info!("fitted level-set params {:?}, train dice {:.4}", fit.params, fit.mean_dsc);
            fit.params
        }
    };
    let params_path = out.join(LEVELSET_PARAMS_FILE);
    params.save(&params_path)?;
    let input = sec.input.clone().unwrap_or_else(|| manifest_path(&cfg.data.dir, Split::Test));
    let mut masks = Vec::new();
    for (id, item) in inputs(&input, cfg.data.phantom.spacing)? {
        let seed = item.mask().map(gac::seed_point);
        masks.push((id, gac::segment(item.image(), &params, seed)?));
    }
    let mut written = write_masks(out, &masks)?;
    written.insert(0, params_path);
    Ok(written)
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.eval;
    sec.validate()?;
    let manifest = sec.manifest.clone().unwrap_or_else(|| manifest_path(&cfg.data.dir, Split::Test));
    let (_, samples) = load_samples(&manifest)?;
    let mut records = Vec::new();
    for m in &sec.methods {
        for s in &samples {
            let path = m.masks.join(format!("{}_mask.png", s.id));
            if !path.exists() {
                return Err(Error::MissingFile {
                    id: s.id.clone(),
                    path,
                });
            }
            let pred = crate::phantom::read_mask_png(&path)?;
            records.push(DiceRecord::score(&s.id, &m.name, s.lesion_class, &pred, &s.mask)?);
        }
    }
    let pairs: Vec<(String, String)> = sec.comparisons.iter().map(|[a, b]| (a.clone(), b.clone())).collect();
    let report = build_report(records, &pairs, sec.alpha)?;
    for g in report.groups.iter().filter(|g| g.group == "all") {
        log::info!("{}: dice {:.4} ± {:.4} (n={})", g.method, g.mean, g.std, g.n);
    }
    emit_report(&report, out)
}

fn cmd_sweep(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Vec<PathBuf>> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::validation("sweep", "config has no `sweep` section"))?;
    let pool = load_split(cfg, Split::Train)?;
    let val = load_split(cfg, Split::Val)?;
    let test = load_split(cfg, Split::Test)?;
    let rows = run_sweep(&pool, &val, &test, spec, jobs)?;
    emit_sweep(&rows, out)
}

fn cmd_plot(dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let records = dir.join("records.csv");
    let sweep = dir.join("sweep.csv");
    if !records.exists() && !sweep.exists() {
        return Err(Error::validation(
            "dir",
            format!("{} has neither records.csv nor sweep.csv", dir.display()),
        ));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    if records.exists() {
        let text = fs::read_to_string(&records).map_err(|e| Error::io(&records, e))?;
        let rows = parse_records_csv(&text)?;
        if rows.is_empty() {
            return Err(Error::validation("records.csv", "no rows"));
        }
        let p = out.join("boxplot.svg");
        fs::write(&p, crate::evalstat::records_boxplot(&rows)).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    if sweep.exists() {
        let text = fs::read_to_string(&sweep).map_err(|e| Error::io(&sweep, e))?;
        let rows = parse_sweep_csv(&text)?;
        if rows.is_empty() {
            return Err(Error::validation("sweep.csv", "no rows"));
        }
        written.extend(
            emit_sweep(&rows, out)?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e == "svg")),
        );
    }
    Ok(written)
}
