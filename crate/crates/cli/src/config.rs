//! Run configuration: named presets, flat `key = value` files, and the text
//! snapshot embedded in checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use pcdiff_core::{AdamWConfig, Aggregation, BackboneConfig, DiffusionConfig, ModelConfig, VisionConfig};

use crate::error::{CliError, CliResult};

pub const PRESETS: [&str; 3] = ["diffpoint-s", "diffpoint-m", "toy"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub views: usize,
    pub seed: u64,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
}

fn vision(embed_dim: usize, patch_size: usize, width: usize) -> VisionConfig {
    VisionConfig {
        image_size: 32,
        channels: 1,
        patch_size,
        width,
        depth: 4,
        heads: 4,
        embed_dim,
        aggregation: Aggregation::Mfa,
        mfa_heads: 1,
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> CliResult<RunConfig> {
        let single = |embed_dim, depth, t, beta_t, wd, views| RunConfig {
            preset: name.to_string(),
            model: ModelConfig {
                backbone: BackboneConfig {
                    embed_dim,
                    depth,
                    num_heads: 16,
                    groups: 64,
                    group_size: 32,
                    drop_path_rate: 0.1,
                    use_positional_embedding: true,
                    add_centers: false,
                    pointnet_dims: [128, 256, 512],
                    pos_hidden: 128,
                    mlp_ratio: 4,
                },
                vision: vision(embed_dim, 4, 192),
                diffusion: DiffusionConfig {
                    steps: t,
                    beta_1: 1e-4,
                    beta_t,
                },
            },
            optimizer: AdamWConfig {
                lr: 2e-4,
                weight_decay: wd,
                ..AdamWConfig::default()
            },
            batch_size: 128,
            steps: 100_000,
            views,
            seed: 0,
            log_interval: 100,
            checkpoint_interval: 5000,
        };
        match name {
            "diffpoint-s" => Ok(single(384, 16, 200, 0.05, 0.03, 1)),
            "diffpoint-m" => Ok(single(512, 18, 1000, 0.02, 0.05, 5)),
            "toy" => Ok(RunConfig {
                preset: name.to_string(),
                model: ModelConfig {
                    backbone: BackboneConfig {
                        embed_dim: 64,
                        depth: 4,
                        num_heads: 4,
                        groups: 16,
                        group_size: 16,
                        drop_path_rate: 0.1,
                        use_positional_embedding: true,
                        add_centers: false,
                        pointnet_dims: [32, 64, 128],
                        pos_hidden: 32,
                        mlp_ratio: 4,
                    },
                    vision: vision(64, 8, 32),
                    diffusion: DiffusionConfig {
                        steps: 50,
                        beta_1: 1e-4,
                        beta_t: 0.2,
                    },
                },
                optimizer: AdamWConfig {
                    lr: 1e-3,
                    weight_decay: 0.0,
                    ..AdamWConfig::default()
                },
                batch_size: 8,
                steps: 2000,
                views: 1,
                seed: 0,
                log_interval: 1,
                checkpoint_interval: 500,
            }),
            other => Err(CliError::usage(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// `--config` argument: a preset name or a path to a config file.
    pub fn load(arg: &str) -> CliResult<RunConfig> {
        if PRESETS.contains(&arg) {
            return RunConfig::preset(arg);
        }
        let text = std::fs::read_to_string(arg).map_err(|e| CliError::at(arg)(e.into()))?;
        RunConfig::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", Path::new(arg).display())),
            e => e,
        })
    }

    /// Parses `key = value` lines. A `preset` key selects the base values
    /// (default `toy`); every other key overrides one field.
    pub fn parse(text: &str) -> CliResult<RunConfig> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if entries.iter().any(|(_, key, _)| *key == k) {
                return Err(CliError::usage(format!("line {}: `{k}` set twice", i + 1)));
            }
            entries.push((i + 1, k, v));
        }
        let base = entries
            .iter()
            .find(|(_, k, _)| *k == "preset")
            .map(|(_, _, v)| *v)
            .unwrap_or("toy");
        let mut cfg = RunConfig::preset(base)?;
        for (line, k, v) in entries {
            if k != "preset" {
                cfg.set(k, v)
                    .map_err(|m| CliError::usage(format!("line {line}: {m}")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
        }
        let m = &mut self.model;
        match key {
            "seed" => self.seed = p(key, value)?,
            "steps" => self.steps = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "views" => self.views = p(key, value)?,
            "log_interval" => self.log_interval = p(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = p(key, value)?,
            "lr" => self.optimizer.lr = p(key, value)?,
            "weight_decay" => self.optimizer.weight_decay = p(key, value)?,
            "adam_beta1" => self.optimizer.beta1 = p(key, value)?,
            "adam_beta2" => self.optimizer.beta2 = p(key, value)?,
            "adam_eps" => self.optimizer.eps = p(key, value)?,
            "diffusion_steps" => m.diffusion.steps = p(key, value)?,
            "beta_1" => m.diffusion.beta_1 = p(key, value)?,
            "beta_t" => m.diffusion.beta_t = p(key, value)?,
            "embed_dim" => {
                m.backbone.embed_dim = p(key, value)?;
                m.vision.embed_dim = m.backbone.embed_dim;
            }
            "depth" => m.backbone.depth = p(key, value)?,
            "num_heads" => m.backbone.num_heads = p(key, value)?,
            "groups" => m.backbone.groups = p(key, value)?,
            "group_size" => m.backbone.group_size = p(key, value)?,
            "drop_path_rate" => m.backbone.drop_path_rate = p(key, value)?,
            "positional_embedding" => m.backbone.use_positional_embedding = p(key, value)?,
            "add_centers" => m.backbone.add_centers = p(key, value)?,
            "pointnet_dims" => {
                let dims: Vec<usize> = value.split(',').map(|s| p(key, s.trim())).collect::<Result<_, _>>()?;
                m.backbone.pointnet_dims = dims
                    .try_into()
                    .map_err(|_| format!("`{key}` needs three comma-separated widths"))?;
            }
            "pos_hidden" => m.backbone.pos_hidden = p(key, value)?,
            "mlp_ratio" => m.backbone.mlp_ratio = p(key, value)?,
            "image_size" => m.vision.image_size = p(key, value)?,
            "image_patch" => m.vision.patch_size = p(key, value)?,
            "image_width" => m.vision.width = p(key, value)?,
            "image_depth" => m.vision.depth = p(key, value)?,
            "image_heads" => m.vision.heads = p(key, value)?,
            "aggregation" => m.vision.aggregation = value.parse().map_err(|e: pcdiff_core::Error| e.to_string())?,
            "mfa_heads" => m.vision.mfa_heads = p(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate().map_err(|e| CliError::usage(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(CliError::usage("batch_size must be positive"));
        }
        if self.views == 0 || self.views > pcdiff_core::data::NUM_VIEWS {
            return Err(CliError::usage(format!(
                "views must be in 1..={}, got {}",
                pcdiff_core::data::NUM_VIEWS,
                self.views
            )));
        }
        if self.log_interval == 0 || self.checkpoint_interval == 0 {
            return Err(CliError::usage("log and checkpoint intervals must be positive"));
        }
        Ok(())
    }

    /// Full snapshot in the config-file format; `parse(to_text())` is the
    /// identity.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let (b, v, d, o) = (&m.backbone, &m.vision, &m.diffusion, &self.optimizer);
        let [h1, h2, h3] = b.pointnet_dims;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").unwrap();
        kv("preset", &self.preset);
        kv("seed", &self.seed);
        kv("steps", &self.steps);
        kv("batch_size", &self.batch_size);
        kv("views", &self.views);
        kv("log_interval", &self.log_interval);
        kv("checkpoint_interval", &self.checkpoint_interval);
        kv("lr", &o.lr);
        kv("weight_decay", &o.weight_decay);
        kv("adam_beta1", &o.beta1);
        kv("adam_beta2", &o.beta2);
        kv("adam_eps", &o.eps);
        kv("diffusion_steps", &d.steps);
        kv("beta_1", &d.beta_1);
        kv("beta_t", &d.beta_t);
        kv("embed_dim", &b.embed_dim);
        kv("depth", &b.depth);
        kv("num_heads", &b.num_heads);
        kv("groups", &b.groups);
        kv("group_size", &b.group_size);
        kv("drop_path_rate", &b.drop_path_rate);
        kv("positional_embedding", &b.use_positional_embedding);
        kv("add_centers", &b.add_centers);
        kv("pointnet_dims", &format!("{h1},{h2},{h3}"));
        kv("pos_hidden", &b.pos_hidden);
        kv("mlp_ratio", &b.mlp_ratio);
        kv("image_size", &v.image_size);
        kv("image_patch", &v.patch_size);
        kv("image_width", &v.width);
        kv("image_depth", &v.depth);
        kv("image_heads", &v.heads);
        kv("aggregation", &v.aggregation);
        kv("mfa_heads", &v.mfa_heads);
        s
    }

    /// One-line summary of the fields that distinguish ablation runs.
    pub fn describe(&self) -> String {
        let b = &self.model.backbone;
        format!(
            "preset={} aggregation={} positional_embedding={} views={} embed_dim={} depth={} T={}",
            self.preset,
            self.model.vision.aggregation,
            b.use_positional_embedding,
            self.views,
            b.embed_dim,
            b.depth,
            self.model.diffusion.steps
        )
    }
}
