//! Central finite differences against reverse-mode gradients of the full
//! training loss, grouped by parameter prefix.
//!
//! Analytic gradients come from an `f32` tape (or `f64` in wide mode); the
//! numerical side always runs in `f64`. Per group the error is
//! `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` over a random sample of coordinates of every
//! tensor in the group.

use std::collections::BTreeMap;

use pcdiff_core::data::{generate_shape, render::render_views, ShapeKind, ShapeSpec};
use pcdiff_core::numerics::params::group_of;
use pcdiff_core::{ImageTensor, Model, NoiseSchedule, ParamStore, PointCloud, Scalar, SeededRng, Tape};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub config: RunConfig,
    pub eps: f64,
    pub tolerance: f64,
    /// Analytic gradients in `f64` instead of `f32`.
    pub wide: bool,
    /// Coordinates sampled per tensor.
    pub samples: usize,
    pub batch: usize,
    pub seed: u64,
    /// Negative control: scales one analytic gradient.
    pub corrupt_backward: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: String,
    /// `None` when the group is gated off by an ablation flag.
    pub error: Option<f64>,
    pub worst_param: String,
    pub coordinates: usize,
}

struct Example<T> {
    cloud: PointCloud<T>,
    views: Vec<ImageTensor<T>>,
}

fn examples(cfg: &RunConfig, batch: usize, seed: u64) -> CliResult<Vec<Example<f64>>> {
    let n = cfg.model.backbone.n_points();
    let mut rng = SeededRng::for_stream(seed, 1);
    (0..batch)
        .map(|i| {
            let kind = ShapeKind::ALL[i % ShapeKind::ALL.len()];
            let spec = ShapeSpec::random(kind, &mut rng);
            let cloud: PointCloud<f64> = generate_shape(&spec, n, &mut rng)?;
            let all = render_views(&cloud, cfg.model.vision.image_size)?;
            let picks = rng.choose_distinct(all.len(), cfg.views);
            Ok(Example {
                views: picks.iter().map(|&p| all[p].clone()).collect(),
                cloud,
            })
        })
        .collect()
}

/// Mean loss over the batch. All randomness (steps, noise, drop path, FPS
/// start) comes from a stream re-seeded on every call.
fn batch_loss<T: Scalar>(
    cfg: &RunConfig,
    params: &ParamStore<T>,
    batch: &[Example<T>],
    schedule: &NoiseSchedule,
    seed: u64,
) -> CliResult<(Tape<T>, pcdiff_core::Var)> {
    let mut rng = SeededRng::for_stream(seed, 2);
    let model = Model::new(&cfg.model, params);
    let mut tape = Tape::new();
    let mut total = None;
    for ex in batch {
        let t = 1 + rng.below(schedule.steps());
        let eps = rng.normal_vec::<T>(ex.cloud.len() * 3);
        let views: Vec<_> = ex.views.iter().collect();
        let l = model.loss(&mut tape, &ex.cloud, &views, t, &eps, schedule, &mut rng)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| CliError::usage("gradient check needs a non-empty batch"))?;
    let mean = tape.scale(total, T::of(1.0 / batch.len() as f64));
    Ok((tape, mean))
}

fn analytic<T: Scalar>(
    cfg: &RunConfig,
    params64: &ParamStore<f64>,
    batch64: &[Example<f64>],
    schedule: &NoiseSchedule,
    seed: u64,
) -> CliResult<BTreeMap<String, Vec<f64>>> {
    let mut params: ParamStore<T> = params64.cast();
    let batch: Vec<Example<T>> = batch64
        .iter()
        .map(|e| Example {
            cloud: e.cloud.cast(),
            views: e.views.iter().map(|v| v.cast()).collect(),
        })
        .collect();
    params.zero_grad();
    let (tape, loss) = batch_loss(cfg, &params, &batch, schedule, seed)?;
    tape.backward(loss, &mut params)?;
    Ok(params
        .iter()
        .map(|(n, t)| (n.to_string(), t.grad().unwrap().iter().map(|g| g.to_f64c()).collect()))
        .collect())
}

/// Running sums for one group: Σ(a−n)², Σa², Σn², and the tensor with the
/// largest Σ(a−n)².
#[derive(Default)]
struct GroupSums {
    diff2: f64,
    analytic2: f64,
    numeric2: f64,
    worst: String,
    worst_diff2: f64,
    coordinates: usize,
}

pub fn gradcheck(opts: &GradcheckOptions) -> CliResult<Vec<GroupReport>> {
    let cfg = &opts.config;
    cfg.validate()?;
    if opts.eps <= 0.0 || opts.tolerance <= 0.0 {
        return Err(CliError::usage("eps and tolerance must be positive"));
    }
    let schedule = NoiseSchedule::new(&cfg.model.diffusion)?;
    let mut rng = SeededRng::new(opts.seed);
    // Initialize in f32 so both precisions start from identical values.
    let params32: ParamStore<f32> = cfg.model.init_params(&mut rng)?;
    let mut params: ParamStore<f64> = params32.cast();
    let batch = examples(cfg, opts.batch, opts.seed)?;
    let mut grads = if opts.wide {
        analytic::<f64>(cfg, &params, &batch, &schedule, opts.seed)?
    } else {
        analytic::<f32>(cfg, &params, &batch, &schedule, opts.seed)?
    };
    if opts.corrupt_backward {
        if let Some(g) = grads.get_mut("head.proj.w") {
            g.iter_mut().for_each(|x| *x *= 1.5);
        }
    }

    let gated = cfg.model.gated_groups();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut acc: BTreeMap<String, GroupSums> = BTreeMap::new();
    for name in &names {
        let group = group_of(name).to_string();
        let entry = acc.entry(group.clone()).or_default();
        if gated.contains(&group.as_str()) {
            continue;
        }
        let numel = params.get(name)?.numel();
        let coords = rng.choose_distinct(numel, opts.samples.min(numel));
        let mut diff2 = 0.0;
        for &i in &coords {
            let orig = params.get(name)?.data()[i];
            params.get_mut(name)?.data_mut()[i] = orig + opts.eps;
            let (tape, l) = batch_loss(cfg, &params, &batch, &schedule, opts.seed)?;
            let plus = tape.value(l).data()[0];
            params.get_mut(name)?.data_mut()[i] = orig - opts.eps;
            let (tape, l) = batch_loss(cfg, &params, &batch, &schedule, opts.seed)?;
            let minus = tape.value(l).data()[0];
            params.get_mut(name)?.data_mut()[i] = orig;
            let num = (plus - minus) / (2.0 * opts.eps);
            let ana = grads[name][i];
            diff2 += (ana - num).powi(2);
            entry.analytic2 += ana * ana;
            entry.numeric2 += num * num;
        }
        entry.diff2 += diff2;
        entry.coordinates += coords.len();
        if entry.worst.is_empty() || diff2 > entry.worst_diff2 {
            entry.worst = name.clone();
            entry.worst_diff2 = diff2;
        }
    }

    Ok(acc
        .into_iter()
        .map(|(group, g)| {
            let gated_off = gated.contains(&group.as_str());
            let denom = g.analytic2.sqrt().max(g.numeric2.sqrt());
            GroupReport {
                error: (!gated_off).then(|| if denom == 0.0 { 0.0 } else { g.diff2.sqrt() / denom }),
                worst_param: g.worst,
                coordinates: g.coordinates,
                group,
            }
        })
        .collect())
}

/// The failing group with the largest error, if any exceeds `tolerance`.
pub fn worst_failure(reports: &[GroupReport], tolerance: f64) -> Option<&GroupReport> {
    reports
        .iter()
        .filter(|r| r.error.is_some_and(|e| e.is_nan() || e >= tolerance))
        .max_by(|a, b| a.error.unwrap().total_cmp(&b.error.unwrap()))
}
