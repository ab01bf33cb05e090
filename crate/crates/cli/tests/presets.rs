//! Preset values and the configuration snapshot format.

use pcdiff::RunConfig;
use pcdiff_core::Aggregation;

/// One column of the published experimental-setup table.
struct Column {
    name: &'static str,
    lr: f64,
    weight_decay: f64,
    batch_size: usize,
    steps: usize,
    beta_1: f64,
    beta_t: f64,
    embed_dim: usize,
    heads: usize,
    depth: usize,
    groups: usize,
    group_size: usize,
    drop_path: f64,
    views: usize,
}

const TABLE: [Column; 2] = [
    Column {
        name: "diffpoint-s",
        lr: 2e-4,
        weight_decay: 0.03,
        batch_size: 128,
        steps: 200,
        beta_1: 1e-4,
        beta_t: 0.05,
        embed_dim: 384,
        heads: 16,
        depth: 16,
        groups: 64,
        group_size: 32,
        drop_path: 0.1,
        views: 1,
    },
    Column {
        name: "diffpoint-m",
        lr: 2e-4,
        weight_decay: 0.05,
        batch_size: 128,
        steps: 1000,
        beta_1: 1e-4,
        beta_t: 0.02,
        embed_dim: 512,
        heads: 16,
        depth: 18,
        groups: 64,
        group_size: 32,
        drop_path: 0.1,
        views: 5,
    },
];

#[test]
fn presets_match_the_setup_table() {
    for col in &TABLE {
        let c = RunConfig::preset(col.name).unwrap();
        let (b, d) = (&c.model.backbone, &c.model.diffusion);
        assert_eq!(c.preset, col.name);
        assert_eq!(c.optimizer.lr, col.lr);
        assert_eq!(c.optimizer.weight_decay, col.weight_decay);
        assert_eq!(c.batch_size, col.batch_size);
        assert_eq!(d.steps, col.steps);
        assert_eq!(d.beta_1, col.beta_1);
        assert_eq!(d.beta_t, col.beta_t);
        assert_eq!(b.embed_dim, col.embed_dim);
        assert_eq!(c.model.vision.embed_dim, col.embed_dim);
        assert_eq!(b.num_heads, col.heads);
        assert_eq!(b.depth, col.depth);
        assert_eq!(b.groups, col.groups);
        assert_eq!(b.group_size, col.group_size);
        assert_eq!(b.n_points(), 2048);
        assert_eq!(b.drop_path_rate, col.drop_path);
        assert_eq!(c.views, col.views);
        assert!(b.use_positional_embedding);
        assert_eq!(c.model.vision.aggregation, Aggregation::Mfa);
        c.validate().unwrap();
    }
}

#[test]
fn toy_preset_fits_desk_scale() {
    let c = RunConfig::preset("toy").unwrap();
    let b = &c.model.backbone;
    assert_eq!((b.embed_dim, b.depth, b.num_heads), (64, 4, 4));
    assert_eq!((b.groups, b.group_size, b.n_points()), (16, 16, 256));
    assert_eq!(c.model.diffusion.steps, 50);
    assert_eq!(c.batch_size, 8);
    assert!(c.steps <= 2000);
}

#[test]
fn snapshot_text_is_frozen() {
    let text = RunConfig::preset("diffpoint-s").unwrap().to_text();
    let want = "\
preset = diffpoint-s
seed = 0
steps = 100000
batch_size = 128
views = 1
log_interval = 100
checkpoint_interval = 5000
lr = 0.0002
weight_decay = 0.03
adam_beta1 = 0.9
adam_beta2 = 0.999
adam_eps = 0.00000001
diffusion_steps = 200
beta_1 = 0.0001
beta_t = 0.05
embed_dim = 384
depth = 16
num_heads = 16
groups = 64
group_size = 32
drop_path_rate = 0.1
positional_embedding = true
add_centers = false
pointnet_dims = 128,256,512
pos_hidden = 128
mlp_ratio = 4
image_size = 32
image_patch = 4
image_width = 192
image_depth = 4
image_heads = 4
aggregation = mfa
mfa_heads = 1
";
    assert_eq!(text, want);
}

#[test]
fn snapshots_parse_back_to_the_same_config() {
    for name in pcdiff::config::PRESETS {
        let c = RunConfig::preset(name).unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }
    let mut c = RunConfig::preset("toy").unwrap();
    c.model.vision.aggregation = Aggregation::Avg;
    c.model.backbone.use_positional_embedding = false;
    c.seed = 99;
    assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    assert_ne!(c.describe(), RunConfig::preset("toy").unwrap().describe());
}

#[test]
fn parameter_counts_are_frozen() {
    // Backbone 29,268,832 plus the image encoder (embed 3,264, positions
    // 12,288, four blocks of 444,864, norm 384, output 74,112) and MFA
    // (query 384, key 147,456, value 147,840, output 147,840).
    let s = RunConfig::preset("diffpoint-s").unwrap();
    assert_eq!(
        s.model.param_count(),
        29_268_832 + 3_264 + 12_288 + 4 * 444_864 + 384 + 74_112 + 443_520
    );
    assert_eq!(s.model.param_count(), 31_581_856);
    let toy = RunConfig::preset("toy").unwrap();
    let params = toy
        .model
        .init_params::<f32>(&mut pcdiff_core::SeededRng::new(0))
        .unwrap();
    assert_eq!(params.numel(), toy.model.param_count());
}
