//! Minibatch training with per-example tapes and gradient accumulation in a
//! fixed order, so a run is a deterministic function of its seed.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use pcdiff_core::data::DatasetRecord;
use pcdiff_core::{AdamW, Model, NoiseSchedule, ParamStore, SeededRng, Tape};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// One metrics-log line.
#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f32,
    pub wallclock: f64,
}

pub struct Trainer {
    pub config: RunConfig,
    pub params: ParamStore<f32>,
    pub optimizer: AdamW<f32>,
    pub rng: SeededRng,
    pub step: u64,
    schedule: NoiseSchedule,
}

impl Trainer {
    pub fn new(config: RunConfig) -> CliResult<Trainer> {
        config.validate()?;
        let mut rng = SeededRng::new(config.seed);
        let params = config.model.init_params(&mut rng)?;
        let schedule = NoiseSchedule::new(&config.model.diffusion)?;
        Ok(Trainer {
            optimizer: AdamW::new(config.optimizer),
            config,
            params,
            rng,
            step: 0,
            schedule,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> CliResult<Trainer> {
        let schedule = NoiseSchedule::new(&ckpt.config.model.diffusion)?;
        Ok(Trainer {
            config: ckpt.config,
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            rng: SeededRng::restore(ckpt.rng),
            step: ckpt.step,
            schedule,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.snapshot(),
        }
    }

    /// Rejects datasets the configured model cannot consume.
    pub fn check_data(&self, data: &[&DatasetRecord]) -> CliResult<()> {
        if data.is_empty() {
            return Err(CliError::usage("training split is empty"));
        }
        let n = self.config.model.backbone.n_points();
        let size = self.config.model.vision.image_size;
        for r in data {
            if r.cloud.len() != n {
                return Err(CliError::usage(format!(
                    "record {} has {} points; the model expects {n}",
                    r.id,
                    r.cloud.len()
                )));
            }
            if r.views.len() < self.config.views {
                return Err(CliError::usage(format!(
                    "record {} has {} views; {} requested",
                    r.id,
                    r.views.len(),
                    self.config.views
                )));
            }
            if r.views.iter().any(|v| v.height != size || v.width != size) {
                return Err(CliError::usage(format!(
                    "record {} has views that are not {size}×{size}",
                    r.id
                )));
            }
        }
        Ok(())
    }

    /// One optimizer step over a batch drawn with replacement. Each example
    /// gets a random view subset, step `t ∈ 1..=T` and noise. Returns the
    /// mean loss.
    pub fn train_step(&mut self, data: &[&DatasetRecord]) -> CliResult<f32> {
        let cfg = &self.config;
        let batch = cfg.batch_size;
        let scale = 1.0 / batch as f32;
        let n_points = cfg.model.backbone.n_points();
        self.params.zero_grad();
        let mut total = 0.0f32;
        for _ in 0..batch {
            let rec = data[self.rng.below(data.len())];
            let picks = self.rng.choose_distinct(rec.views.len(), cfg.views);
            let views: Vec<_> = picks.iter().map(|&i| &rec.views[i]).collect();
            let t = 1 + self.rng.below(self.schedule.steps());
            let eps = self.rng.normal_vec::<f32>(n_points * 3);
            let mut tape = Tape::new();
            let model = Model::new(&cfg.model, &self.params);
            let loss = model.loss(&mut tape, &rec.cloud, &views, t, &eps, &self.schedule, &mut self.rng)?;
            total += tape.value(loss).data()[0];
            let scaled = tape.scale(loss, scale);
            tape.backward(scaled, &mut self.params)?;
        }
        let mean = total * scale;
        let step = self.step + 1;
        if !mean.is_finite() {
            return Err(CliError::NonFiniteLoss { step, loss: mean });
        }
        self.optimizer.step(&mut self.params)?;
        self.step = step;
        Ok(mean)
    }

    /// Trains until the global step reaches `config.steps`, logging to `log`
    /// and writing periodic checkpoints plus `checkpoint.dfck` in `out`.
    pub fn run(&mut self, data: &[&DatasetRecord], out: &Path, log: &mut dyn Write) -> CliResult<Vec<StepRecord>> {
        self.check_data(data)?;
        std::fs::create_dir_all(out).map_err(|e| CliError::at(out)(e.into()))?;
        let start = Instant::now();
        let mut history = Vec::new();
        while self.step < self.config.steps {
            let loss = self.train_step(data)?;
            let rec = StepRecord {
                step: self.step,
                loss,
                wallclock: start.elapsed().as_secs_f64(),
            };
            if self.step.is_multiple_of(self.config.log_interval) || self.step == self.config.steps {
                writeln!(log, "{}", serde_json::to_string(&rec).expect("plain struct"))?;
            }
            log::debug!("step {} loss {loss}", self.step);
            history.push(rec);
            if self.step.is_multiple_of(self.config.checkpoint_interval) && self.step < self.config.steps {
                self.checkpoint()
                    .save(&out.join(format!("checkpoint-{}.dfck", self.step)))?;
            }
        }
        self.checkpoint().save(&out.join("checkpoint.dfck"))?;
        Ok(history)
    }
}
