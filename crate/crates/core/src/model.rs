//! The full conditional model: image encoder and view aggregation feeding the
//! point-cloud denoiser, plus the noise schedule it is trained against.

use crate::backbone::{init_params, Backbone};
use crate::diffusion::{sample, training_loss, ConditionEmbedding};
use crate::error::{contract, Result};
use crate::vision::{encode_views, Aggregation};
use crate::{
    BackboneConfig, DiffusionConfig, ImageTensor, NoiseSchedule, ParamStore, PointCloud, Scalar, SeededRng, Tape, Var,
    VisionConfig,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub vision: VisionConfig,
    pub diffusion: DiffusionConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.vision.validate()?;
        self.diffusion.validate()?;
        if self.vision.embed_dim != self.backbone.embed_dim {
            return Err(contract(format!(
                "image embedding width {} differs from token width {}",
                self.vision.embed_dim, self.backbone.embed_dim
            )));
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = self.backbone.param_shapes();
        v.extend(self.vision.param_shapes());
        v
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn init_params<T: Scalar>(&self, rng: &mut SeededRng) -> Result<ParamStore<T>> {
        self.validate()?;
        init_params(&self.param_shapes(), rng)
    }

    /// Parameter groups that receive no gradient under the current ablation
    /// flags.
    pub fn gated_groups(&self) -> Vec<&'static str> {
        let mut g = Vec::new();
        if !self.backbone.use_positional_embedding {
            g.push("pos");
        }
        if self.vision.aggregation == Aggregation::Avg {
            g.push("mfa");
        }
        g
    }
}

/// A configuration bound to its parameters.
pub struct Model<'a, T> {
    pub cfg: &'a ModelConfig,
    pub params: &'a ParamStore<T>,
}

impl<'a, T: Scalar> Model<'a, T> {
    pub fn new(cfg: &'a ModelConfig, params: &'a ParamStore<T>) -> Self {
        Model { cfg, params }
    }

    fn backbone(&self) -> Backbone<'a, T> {
        Backbone {
            cfg: &self.cfg.backbone,
            params: self.params,
        }
    }

    /// `[1, embed_dim]` condition from one or more views.
    pub fn condition(&self, tape: &mut Tape<T>, views: &[&ImageTensor<T>], rng: &mut SeededRng) -> Result<Var> {
        encode_views(tape, self.params, &self.cfg.vision, views, rng)
    }

    /// Condition vector evaluated outside any training graph.
    pub fn condition_value(&self, views: &[&ImageTensor<T>], rng: &mut SeededRng) -> Result<ConditionEmbedding<T>> {
        let mut tape = Tape::new();
        let c = self.condition(&mut tape, views, rng)?;
        Ok(ConditionEmbedding(tape.value(c).data().to_vec()))
    }

    /// Chamfer loss of one example, recorded on `tape`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        x0: &PointCloud<T>,
        views: &[&ImageTensor<T>],
        t: usize,
        eps: &[T],
        sched: &NoiseSchedule,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let cond = self.condition(tape, views, rng)?;
        training_loss(tape, &self.backbone(), x0, t, eps, cond, sched, rng)
    }

    /// Runs the reverse chain conditioned on `views`.
    pub fn reconstruct(
        &self,
        views: &[&ImageTensor<T>],
        sched: &NoiseSchedule,
        rng: &mut SeededRng,
    ) -> Result<PointCloud<T>> {
        let cond = self.condition_value(views, rng)?;
        sample(&self.backbone(), &cond, self.cfg.backbone.n_points(), sched, rng)
    }
}
