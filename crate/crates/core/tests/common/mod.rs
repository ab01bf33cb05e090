#![allow(dead_code)]

use pcdiff_core::{PointCloud, Scalar, SeededRng, Tape, Tensor, Var};

pub fn random_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| 2.0 * rng.uniform() - 1.0).collect()).unwrap()
}

pub fn random_cloud(n: usize, rng: &mut SeededRng) -> PointCloud<f64> {
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    2.0 * rng.uniform() - 1.0,
                    2.0 * rng.uniform() - 1.0,
                    2.0 * rng.uniform() - 1.0,
                ]
            })
            .collect(),
    )
    .unwrap()
}

/// Scalar probe `Σ out ⊙ R` for a fixed random `R`, so every output entry
/// contributes a distinct weight.
fn probe<T: Scalar>(tape: &mut Tape<T>, out: Var) -> Var {
    let shape = tape.shape(out).to_vec();
    let mut rng = SeededRng::new(0xfeed);
    let r = tape.constant(random_tensor(&shape, &mut rng).cast());
    let m = tape.mul(out, r).unwrap();
    tape.sum(m)
}

pub fn analytic<T: Scalar>(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<T>, &[Var]) -> Var) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.cast())).collect();
    let out = build(&mut tape, &vars);
    let loss = probe(&mut tape, out);
    let grads = tape.gradients(loss).unwrap();
    vars.iter()
        .zip(inputs)
        .map(|(v, t)| match &grads[v.index()] {
            Some(g) => g.iter().map(|x| x.to_f64c()).collect(),
            None => vec![0.0; t.numel()],
        })
        .collect()
}

fn value64(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let loss = probe(&mut tape, out);
    tape.value(loss).data()[0]
}

pub fn numeric(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var, eps: f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    (0..inputs.len())
        .map(|i| {
            (0..inputs[i].numel())
                .map(|j| {
                    let orig = work[i].data()[j];
                    work[i].data_mut()[j] = orig + eps;
                    let plus = value64(&work, build);
                    work[i].data_mut()[j] = orig - eps;
                    let minus = value64(&work, build);
                    work[i].data_mut()[j] = orig;
                    (plus - minus) / (2.0 * eps)
                })
                .collect()
        })
        .collect()
}

/// Worst `‖a − n‖ / max(‖a‖, ‖n‖)` over the inputs.
pub fn rel_error(a: &[Vec<f64>], n: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(n)
        .map(|(a, n)| {
            let d: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            let den = na.max(nn);
            if den == 0.0 {
                0.0
            } else {
                d / den
            }
        })
        .fold(0.0, f64::max)
}

/// Finite-difference check of one op in both precisions: `f64` backward
/// within 1e-6 and `f32` backward within 1e-3 of `f64` central differences.
#[macro_export]
macro_rules! check_grad {
    ($inputs:expr, |$tape:ident, $v:ident| $body:expr) => {{
        let inputs: Vec<pcdiff_core::Tensor<f64>> = $inputs;
        let num = common::numeric(
            &inputs,
            &|$tape: &mut pcdiff_core::Tape<f64>, $v: &[pcdiff_core::Var]| $body,
            1e-6,
        );
        let a64 = common::analytic::<f64>(&inputs, &|$tape, $v| $body);
        let a32 = common::analytic::<f32>(&inputs, &|$tape, $v| $body);
        let (e64, e32) = (common::rel_error(&a64, &num), common::rel_error(&a32, &num));
        assert!(num.iter().flatten().any(|g| *g != 0.0), "probe has zero gradient");
        assert!(e64 < 1e-6, "f64 backward relative error {e64:e}");
        assert!(e32 < 1e-3, "f32 backward relative error {e32:e}");
    }};
}

// Plain-loop reference implementations used as oracles.

pub type Rows = Vec<Vec<f64>>;

pub fn rows_of(t: &Tensor<f64>) -> Rows {
    let c = *t.shape().last().unwrap();
    t.data().chunks(c).map(|r| r.to_vec()).collect()
}

pub fn ref_linear(x: &Rows, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Rows {
    let (i, o) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|r| {
            (0..o)
                .map(|j| {
                    let mut acc = b.map_or(0.0, |b| b.data()[j]);
                    for (k, xk) in r.iter().enumerate().take(i) {
                        acc += xk * w.data()[k * o + j];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn ref_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn ref_gelu_rows(x: &Rows) -> Rows {
    x.iter().map(|r| r.iter().map(|&v| ref_gelu(v)).collect()).collect()
}

pub fn ref_layer_norm(x: &Rows, g: &Tensor<f64>, b: &Tensor<f64>) -> Rows {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * g.data()[j] + b.data()[j])
                .collect()
        })
        .collect()
}

pub fn ref_softmax(r: &[f64]) -> Vec<f64> {
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn ref_add(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Reference pre-norm transformer stack (eval mode) followed by the final
/// norm, reading parameters by the same names as the implementation.
pub fn ref_transformer(
    x: &Rows,
    store: &pcdiff_core::ParamStore<f64>,
    prefix: &str,
    depth: usize,
    heads: usize,
    norm: &str,
) -> Rows {
    let p = |n: String| store.get(&n).unwrap();
    let d = x[0].len();
    let dh = d / heads;
    let mut x = x.clone();
    for i in 0..depth {
        let b = format!("{prefix}.{i}");
        let h = ref_layer_norm(&x, p(format!("{b}.ln1.gamma")), p(format!("{b}.ln1.beta")));
        let qkv = ref_linear(&h, p(format!("{b}.attn.qkv.w")), Some(p(format!("{b}.attn.qkv.b"))));
        let mut merged = vec![vec![0.0; d]; x.len()];
        for hd in 0..heads {
            for (r, out) in merged.iter_mut().enumerate() {
                let q = &qkv[r][hd * dh..(hd + 1) * dh];
                let scores: Vec<f64> = qkv
                    .iter()
                    .map(|row| {
                        let k = &row[d + hd * dh..d + (hd + 1) * dh];
                        q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let w = ref_softmax(&scores);
                for c in 0..dh {
                    out[hd * dh + c] = qkv.iter().zip(&w).map(|(row, wj)| wj * row[2 * d + hd * dh + c]).sum();
                }
            }
        }
        let a = ref_linear(
            &merged,
            p(format!("{b}.attn.proj.w")),
            Some(p(format!("{b}.attn.proj.b"))),
        );
        x = ref_add(&x, &a);
        let h = ref_layer_norm(&x, p(format!("{b}.ln2.gamma")), p(format!("{b}.ln2.beta")));
        let h = ref_gelu_rows(&ref_linear(
            &h,
            p(format!("{b}.mlp.fc1.w")),
            Some(p(format!("{b}.mlp.fc1.b"))),
        ));
        let m = ref_linear(&h, p(format!("{b}.mlp.fc2.w")), Some(p(format!("{b}.mlp.fc2.b"))));
        x = ref_add(&x, &m);
    }
    ref_layer_norm(&x, p(format!("{norm}.gamma")), p(format!("{norm}.beta")))
}

/// Initializes from shapes, then perturbs every entry so biases and norm
/// shifts are non-trivial.
pub fn dense_store(shapes: &[(String, Vec<usize>)], seed: u64) -> pcdiff_core::ParamStore<f64> {
    let mut rng = SeededRng::new(seed);
    let mut store = pcdiff_core::backbone::init_params::<f64>(shapes, &mut rng).unwrap();
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    store
}
