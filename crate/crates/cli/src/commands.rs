//! Subcommand definitions and their implementations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pcdiff_core::data::{
    container::encode_dataset, make_record, pgm::write_pgm, read_dataset, render::render_views, DatasetRecord,
    ShapeKind, ShapeSpec, Split,
};
use pcdiff_core::geometry::sampling::fps;
use pcdiff_core::{Aggregation, MetricConfig, PointCloud, SeededRng};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::evaluate::{category_name, reconstruct, report, score, Predictor};
use crate::gradcheck::{gradcheck, worst_failure, GradcheckOptions};
use crate::train::Trainer;

#[derive(Debug, Parser)]
#[command(
    name = "pcdiff",
    version,
    about = "Point-cloud reconstruction from images with a transformer diffusion model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of posed primitives and their renders.
    GenData(GenDataArgs),
    /// Build a dataset from "x y z" point-cloud files.
    Import(ImportArgs),
    /// Write a record's renders as PGM images and its cloud as text.
    Export(ExportArgs),
    /// Train a model, writing checkpoints and a JSON-lines metrics log.
    Train(TrainArgs),
    /// Reconstruct one record and score it against its ground truth.
    Sample(SampleArgs),
    /// Reconstruct every record of a split and report CD and F-score.
    Eval(EvalArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Comma-separated shape kinds, cycled over records.
    #[arg(long, default_value = "sphere,box,cylinder,torus,composite")]
    pub spec: String,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2048)]
    pub points: usize,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Input cloud; repeat for several records.
    #[arg(long = "xyz", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Clouds with more points are reduced by farthest point sampling.
    #[arg(long, default_value_t = 2048)]
    pub points: usize,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub first_id: u64,
    #[arg(long, default_value_t = u16::MAX)]
    pub category: u16,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub record_id: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Flags shared by commands that build or modify a run configuration.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Number of views per example.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// View aggregation: mfa or avg.
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    #[arg(long)]
    pub no_positional_embedding: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.views {
            cfg.views = v;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.aggregation {
            cfg.model.vision.aggregation = a;
        }
        if self.no_positional_embedding {
            cfg.model.backbone.use_positional_embedding = false;
        }
    }

    fn any(&self) -> bool {
        self.views.is_some() || self.seed.is_some() || self.aggregation.is_some() || self.no_positional_embedding
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preset name (diffpoint-s, diffpoint-m, toy) or config file.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target global step count.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub log_interval: Option<u64>,
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    /// Continue from a checkpoint; its configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// train, val, test or all.
    #[arg(long, default_value = "train")]
    pub split: String,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub record_id: u64,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub tau: f64,
    /// Configuration used with --oracle when no checkpoint is given.
    #[arg(long)]
    pub config: Option<String>,
    /// Test hook: predict the ground truth at every step.
    #[arg(long, hide = true)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 1e-3)]
    pub tau: f64,
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, hide = true)]
    pub oracle: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "toy")]
    pub config: String,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Defaults to 1e-3, or 1e-6 with --f64.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Backpropagate in f64 instead of f32.
    #[arg(long)]
    pub f64: bool,
    /// Coordinates sampled per tensor.
    #[arg(long, default_value_t = 3)]
    pub samples: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    #[arg(long)]
    pub no_positional_embedding: bool,
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Import(a) => import(a, out),
        Command::Export(a) => export(a, out),
        Command::Train(a) => train(a, out),
        Command::Sample(a) => sample_cmd(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
    }
}

fn parse_split(s: &str) -> CliResult<Split> {
    Split::parse(s).ok_or_else(|| CliError::usage(format!("unknown split `{s}` (expected train, val, test or all)")))
}

fn load_data(path: &Path) -> CliResult<Vec<DatasetRecord>> {
    read_dataset(path).map_err(CliError::at(path))
}

fn write_data(path: &Path, records: &[DatasetRecord]) -> CliResult<String> {
    let bytes = encode_dataset(records)?;
    std::fs::write(path, &bytes).map_err(|e| CliError::at(path)(e.into()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn category_summary(records: &[DatasetRecord]) -> String {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(category_name(r.category)).or_default() += 1;
    }
    counts
        .iter()
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    if a.points == 0 || a.resolution == 0 {
        return Err(CliError::usage("--points and --resolution must be positive"));
    }
    let kinds: Vec<ShapeKind> = a
        .spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<ShapeKind>()
                .map_err(|e| CliError::usage(e.to_string()))
        })
        .collect::<CliResult<_>>()?;
    let records = (0..a.count as u64)
        .map(|id| {
            let mut rng = SeededRng::for_stream(a.seed, id);
            let spec = ShapeSpec::random(kinds[id as usize % kinds.len()], &mut rng);
            Ok(make_record(id, &spec, a.points, a.resolution, &mut rng)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let digest = write_data(&a.out, &records)?;
    writeln!(
        out,
        "wrote {} records ({}) to {} sha256 {digest}",
        records.len(),
        category_summary(&records),
        a.out.display()
    )?;
    Ok(())
}

fn import(a: ImportArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut records = Vec::new();
    for (i, path) in a.inputs.iter().enumerate() {
        let file = File::open(path).map_err(|e| CliError::at(path)(e.into()))?;
        let cloud: PointCloud<f32> = PointCloud::read_xyz(BufReader::new(file)).map_err(CliError::at(path))?;
        if cloud.len() < a.points {
            return Err(CliError::usage(format!(
                "{} has {} points, fewer than --points {}",
                path.display(),
                cloud.len(),
                a.points
            )));
        }
        let cloud = if cloud.len() > a.points {
            let idx = fps(&cloud, a.points, 0)?;
            PointCloud::new(idx.iter().map(|&j| cloud.points()[j]).collect())?
        } else {
            cloud
        };
        let (cloud, _, _) = cloud.normalize();
        let views = render_views(&cloud, a.resolution)?;
        records.push(DatasetRecord {
            id: a.first_id + i as u64,
            category: a.category,
            cloud,
            views,
        });
    }
    let digest = write_data(&a.out, &records)?;
    writeln!(
        out,
        "wrote {} records to {} sha256 {digest}",
        records.len(),
        a.out.display()
    )?;
    Ok(())
}

fn find_record(records: &[DatasetRecord], id: u64) -> CliResult<&DatasetRecord> {
    records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| CliError::usage(format!("no record with id {id}")))
}

fn export(a: ExportArgs, out: &mut dyn Write) -> CliResult<()> {
    let records = load_data(&a.data)?;
    let rec = find_record(&records, a.record_id)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::at(&a.out_dir)(e.into()))?;
    for (i, v) in rec.views.iter().enumerate() {
        let path = a.out_dir.join(format!("view-{i:02}.pgm"));
        let f = File::create(&path).map_err(|e| CliError::at(&path)(e.into()))?;
        write_pgm(v, BufWriter::new(f)).map_err(CliError::at(&path))?;
    }
    let path = a.out_dir.join("cloud.xyz");
    let f = File::create(&path).map_err(|e| CliError::at(&path)(e.into()))?;
    rec.cloud.write_xyz(BufWriter::new(f)).map_err(CliError::at(&path))?;
    writeln!(
        out,
        "wrote {} views and cloud.xyz to {}",
        rec.views.len(),
        a.out_dir.display()
    )?;
    Ok(())
}

/// Writes every line to both sinks.
struct Tee<'a>(&'a mut dyn Write, File);

impl Write for Tee<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.write_all(buf)?;
        self.1.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()?;
        self.1.flush()
    }
}

fn train(a: TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let split = parse_split(&a.split)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            if a.config.is_some() || a.overrides.any() || a.batch_size.is_some() || a.lr.is_some() {
                return Err(CliError::usage(
                    "--resume takes its configuration from the checkpoint; only --steps and intervals may be given",
                ));
            }
            Trainer::from_checkpoint(Checkpoint::load(path)?)?
        }
        None => {
            let mut cfg = RunConfig::load(a.config.as_deref().unwrap_or("toy"))?;
            a.overrides.apply(&mut cfg);
            if let Some(b) = a.batch_size {
                cfg.batch_size = b;
            }
            if let Some(lr) = a.lr {
                cfg.optimizer.lr = lr;
            }
            if let Some(s) = a.steps {
                cfg.steps = s;
            }
            Trainer::new(cfg)?
        }
    };
    if let Some(s) = a.steps {
        trainer.config.steps = s;
    }
    if let Some(k) = a.log_interval {
        trainer.config.log_interval = k;
    }
    if let Some(k) = a.checkpoint_interval {
        trainer.config.checkpoint_interval = k;
    }
    trainer.config.validate()?;

    let records = load_data(&a.data)?;
    let data: Vec<&DatasetRecord> = records.iter().filter(|r| split.contains(r.id)).collect();
    if data.is_empty() {
        return Err(CliError::usage(format!(
            "split `{}` of {} is empty",
            a.split,
            a.data.display()
        )));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::at(&a.out)(e.into()))?;
    let cfg_path = a.out.join("config.txt");
    std::fs::write(&cfg_path, trainer.config.to_text()).map_err(|e| CliError::at(&cfg_path)(e.into()))?;
    log::info!("{}", trainer.config.describe());
    let log_path = a.out.join("train.jsonl");
    let log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(a.resume.is_some())
        .write(true)
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| CliError::at(&log_path)(e.into()))?;
    let mut tee = Tee(out, log_file);
    trainer.run(&data, &a.out, &mut tee)?;
    Ok(())
}

/// Configuration and predictor for sampling commands.
fn predictor_setup(
    ckpt: &Option<PathBuf>,
    config: &Option<String>,
    oracle: bool,
) -> CliResult<(RunConfig, Option<Checkpoint>)> {
    match (ckpt, oracle) {
        (Some(path), _) => {
            if config.is_some() {
                return Err(CliError::usage(
                    "--config conflicts with --ckpt, which carries its own configuration",
                ));
            }
            let c = Checkpoint::load(path)?;
            Ok((c.config.clone(), Some(c)))
        }
        (None, true) => Ok((RunConfig::load(config.as_deref().unwrap_or("toy"))?, None)),
        (None, false) => Err(CliError::usage("--ckpt is required")),
    }
}

fn sample_cmd(a: SampleArgs, out: &mut dyn Write) -> CliResult<()> {
    let (mut cfg, ckpt) = predictor_setup(&a.ckpt, &a.config, a.oracle)?;
    if let Some(v) = a.views {
        cfg.views = v;
    }
    cfg.validate()?;
    let metric = MetricConfig::new(a.tau).map_err(|e| CliError::usage(e.to_string()))?;
    let records = load_data(&a.data)?;
    let rec = find_record(&records, a.record_id)?;
    let predictor = match (&ckpt, a.oracle) {
        (_, true) => Predictor::Oracle,
        (Some(c), false) => Predictor::Model(&c.params),
        (None, false) => unreachable!(),
    };
    let cloud = reconstruct(&cfg, &predictor, rec, a.seed)?;
    let f = File::create(&a.out).map_err(|e| CliError::at(&a.out)(e.into()))?;
    let mut w = BufWriter::new(f);
    cloud.write_xyz(&mut w).map_err(CliError::at(&a.out))?;
    w.flush()?;
    let m = score(rec, &cloud, metric)?;
    writeln!(
        out,
        "record {} ({}): CD {:.6} (x1e2 {:.4}) F-score {:.1}",
        m.id, m.category, m.cd, m.cd_x100, m.fscore
    )?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let split = parse_split(&a.split)?;
    let (mut cfg, ckpt) = predictor_setup(&a.ckpt, &a.config, a.oracle)?;
    a.overrides.apply(&mut cfg);
    cfg.validate()?;
    let seed = cfg.seed;
    let metric = MetricConfig::new(a.tau).map_err(|e| CliError::usage(e.to_string()))?;
    let records = load_data(&a.data)?;
    let chosen: Vec<&DatasetRecord> = records.iter().filter(|r| split.contains(r.id)).collect();
    if chosen.is_empty() {
        return Err(CliError::usage(format!(
            "split `{}` of {} is empty",
            a.split,
            a.data.display()
        )));
    }
    let predictor = match (&ckpt, a.oracle) {
        (_, true) => Predictor::Oracle,
        (Some(c), false) => Predictor::Model(&c.params),
        (None, false) => unreachable!(),
    };
    let rows = chosen
        .iter()
        .map(|r| score(r, &reconstruct(&cfg, &predictor, r, seed)?, metric))
        .collect::<CliResult<Vec<_>>>()?;
    let header = vec![
        "pcdiff eval".to_string(),
        format!("config: {}", cfg.describe()),
        format!(
            "predictor={} step={} split={} records={} tau={} seed={seed}",
            if a.oracle { "oracle" } else { "checkpoint" },
            ckpt.as_ref().map_or(0, |c| c.step),
            a.split,
            rows.len(),
            a.tau
        ),
    ];
    out.write_all(report(&header, &rows).as_bytes())?;
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut config = RunConfig::load(&a.config)?;
    config.views = a.views.unwrap_or(2);
    if let Some(agg) = a.aggregation {
        config.model.vision.aggregation = agg;
    }
    if a.no_positional_embedding {
        config.model.backbone.use_positional_embedding = false;
    }
    let tolerance = a.tolerance.unwrap_or(if a.f64 { 1e-6 } else { 1e-3 });
    let opts = GradcheckOptions {
        config,
        eps: a.eps,
        tolerance,
        wide: a.f64,
        samples: a.samples,
        batch: a.batch,
        seed: a.seed,
        corrupt_backward: a.corrupt_backward,
    };
    let reports = gradcheck(&opts)?;
    writeln!(
        out,
        "gradcheck: {} backward, eps {:e}, tolerance {:e}",
        if a.f64 { "f64" } else { "f32" },
        a.eps,
        tolerance
    )?;
    writeln!(
        out,
        "{:<8} {:>7} {:>12}  {:<8} worst parameter",
        "group", "coords", "rel error", "status"
    )?;
    for r in &reports {
        match r.error {
            Some(e) => writeln!(
                out,
                "{:<8} {:>7} {:>12.3e}  {:<8} {}",
                r.group,
                r.coordinates,
                e,
                if e < tolerance { "ok" } else { "FAIL" },
                r.worst_param
            )?,
            None => writeln!(out, "{:<8} {:>7} {:>12}  {:<8} -", r.group, 0, "-", "skipped")?,
        }
    }
    match worst_failure(&reports, tolerance) {
        Some(r) => Err(CliError::Gradcheck {
            param: r.worst_param.clone(),
            error: r.error.unwrap(),
            tolerance,
        }),
        None => Ok(()),
    }
}
