//! Finite-difference verification of every differentiable op and of a whole tiny model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Graph, ModelConfig, MoweModel};
use crate::tensor::{finite_diff_check, relative_error, Tape, Tensor, Var};

/// Largest relative error accepted by the suite.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: f64,
    /// Coordinates left out because a perturbation changed a top-k selection.
    pub skipped: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOLERANCE
    }
}

/// `sum(v ⊙ r)` for a fixed random `r`.
fn probe(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let r = tape.constant(Tensor::randn(
        shape,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabcd),
    ));
    let p = tape.mul(v, r)?;
    tape.sum(p)
}

type Case = (
    &'static str,
    Tensor,
    Box<dyn Fn(&mut Tape, Var) -> Result<Var>>,
);

/// Values spaced at least 0.1 apart in random order, so a small step never reorders them.
fn separated(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n)
        .map(|i| 0.25 * i as f64 - 0.125 * n as f64 + rng.gen_range(-0.05..0.05))
        .collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).expect("shape")
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, rng).map(|v| {
        if v.abs() < 0.05 {
            v.signum() * 0.05 + v
        } else {
            v
        }
    })
}

fn op_cases(seed: u64) -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut randn = |shape: &[usize]| Tensor::randn(shape.to_vec(), 1.0, &mut r);
    let x = randn(&[3, 4]);
    let other = randn(&[3, 4]);
    let w = randn(&[4, 2]);
    let lhs = randn(&[5, 3]);
    let bias = randn(&[4]);
    let scales = randn(&[3]);
    let img = randn(&[2, 5, 6]);
    let kernel = randn(&[4, 1, 3, 3]);
    let kfull = randn(&[3, 2, 3, 2]);
    let cbias = randn(&[3]);
    let gamma = randn(&[4]);
    let beta = randn(&[4]);
    let mut r2 = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 << 32));
    let logits = separated(&[3, 5], &mut r2);
    let relu_in = off_zero(&[3, 4], &mut r2);
    let l1_target = {
        let d = off_zero(&[3, 4], &mut r2);
        Tensor::new(
            [3, 4],
            x.data().iter().zip(d.data()).map(|(a, b)| a - b).collect(),
        )
        .expect("shape")
    };

    let c = |t: &Tensor| t.clone();
    vec![
        (
            "add",
            c(&x),
            Box::new({
                let o = c(&other);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    let y = tp.add(v, o)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "sub",
            c(&x),
            Box::new({
                let o = c(&other);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    let y = tp.sub(o, v)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "mul",
            c(&x),
            Box::new({
                let o = c(&other);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    let y = tp.mul(v, o)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "add_all",
            c(&x),
            Box::new({
                let o = c(&other);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    let y = tp.add_all(&[v, o, v])?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "matmul.lhs",
            c(&x),
            Box::new({
                let o = c(&w);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    let y = tp.matmul(v, o)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "matmul.rhs",
            c(&x),
            Box::new({
                let o = c(&lhs);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    let y = tp.matmul(o, v)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "add_bias.x",
            c(&x),
            Box::new({
                let b = c(&bias);
                move |tp: &mut Tape, v| {
                    let b = tp.constant(b.clone());
                    let y = tp.add_bias(v, b)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "add_bias.bias",
            c(&bias),
            Box::new({
                let o = c(&x);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    let y = tp.add_bias(o, v)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "scale_rows.x",
            c(&x),
            Box::new({
                let s = c(&scales);
                move |tp: &mut Tape, v| {
                    let s = tp.constant(s.clone());
                    let y = tp.scale_rows(v, s)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "scale_rows.scale",
            c(&scales),
            Box::new({
                let o = c(&x);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    let y = tp.scale_rows(o, v)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "scale",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.scale(v, -1.7)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "gelu",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.gelu(v)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "relu",
            relu_in,
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.relu(v)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "softmax.rows",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.softmax(v, 1)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "softmax.cols",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.softmax(v, 0)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "top_k_softmax",
            logits,
            Box::new(move |tp: &mut Tape, v| {
                let m = tp.top_k_mask(v, 2)?;
                let y = tp.softmax(m, 1)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "conv2d.x",
            c(&img),
            Box::new({
                let k = c(&kernel);
                move |tp: &mut Tape, v| {
                    let k = tp.constant(k.clone());
                    let y = tp.conv2d(v, k, None, 1, 1, 2)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "conv2d.weight",
            c(&kfull),
            Box::new({
                let x = c(&img);
                let b = c(&cbias);
                move |tp: &mut Tape, v| {
                    let x = tp.constant(x.clone());
                    let b = tp.constant(b.clone());
                    let y = tp.conv2d(x, v, Some(b), 2, 1, 1)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "conv2d.bias",
            c(&cbias),
            Box::new({
                let x = c(&img);
                let k = c(&kfull);
                move |tp: &mut Tape, v| {
                    let x = tp.constant(x.clone());
                    let k = tp.constant(k.clone());
                    let y = tp.conv2d(x, k, Some(v), 2, 1, 1)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "layer_norm.x",
            c(&x),
            Box::new({
                let (g, b) = (c(&gamma), c(&beta));
                move |tp: &mut Tape, v| {
                    let g = tp.constant(g.clone());
                    let b = tp.constant(b.clone());
                    let y = tp.layer_norm(v, g, b, 1e-5)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "layer_norm.gamma",
            c(&gamma),
            Box::new({
                let (x, b) = (c(&x), c(&beta));
                move |tp: &mut Tape, v| {
                    let x = tp.constant(x.clone());
                    let b = tp.constant(b.clone());
                    let y = tp.layer_norm(x, v, b, 1e-5)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "layer_norm.beta",
            c(&beta),
            Box::new({
                let (x, g) = (c(&x), c(&gamma));
                move |tp: &mut Tape, v| {
                    let x = tp.constant(x.clone());
                    let g = tp.constant(g.clone());
                    let y = tp.layer_norm(x, g, v, 1e-5)?;
                    probe(tp, y, seed)
                }
            }),
        ),
        (
            "global_avg_pool",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.global_avg_pool(v)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "sum",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.mul(v, v)?;
                tp.sum(y)
            }),
        ),
        (
            "mean",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.mul(v, v)?;
                tp.mean(y)
            }),
        ),
        (
            "cross_entropy",
            c(&x),
            Box::new(|tp: &mut Tape, v| tp.cross_entropy(v, &[0, 3, 1])),
        ),
        (
            "l1_loss",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let o = tp.constant(l1_target.clone());
                tp.l1_loss(v, o)
            }),
        ),
        (
            "mse_loss",
            c(&x),
            Box::new({
                let o = c(&other);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    tp.mse_loss(v, o)
                }
            }),
        ),
        (
            "reshape",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.reshape(v, [2, 6])?;
                probe(tp, y, seed)
            }),
        ),
        (
            "gather",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.gather(v, vec![11, 0, 5, 5, 3], [5])?;
                probe(tp, y, seed)
            }),
        ),
        (
            "transpose",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.transpose(v)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "gather_rows",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.gather_rows(v, &[2, 2, 0])?;
                probe(tp, y, seed)
            }),
        ),
        (
            "slice_cols",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.slice_cols(v, 1, 3)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "scatter_rows",
            c(&x),
            Box::new(move |tp: &mut Tape, v| {
                let y = tp.scatter_rows(v, &[2, 0, 2], 4)?;
                probe(tp, y, seed)
            }),
        ),
        (
            "concat",
            c(&x),
            Box::new({
                let o = c(&other);
                move |tp: &mut Tape, v| {
                    let o = tp.constant(o.clone());
                    let y = tp.concat(&[o, v, v])?;
                    probe(tp, y, seed)
                }
            }),
        ),
    ]
}

/// Checks every op on random inputs drawn from `seed`.
pub fn check_ops(seed: u64) -> Result<Vec<GradCheck>> {
    op_cases(seed)
        .into_iter()
        .map(|(name, x, f)| {
            Ok(GradCheck {
                name: name.to_string(),
                seed,
                max_rel_err: finite_diff_check(&f, &x, FD_STEP)?,
                skipped: 0,
            })
        })
        .collect()
}

/// Weight of the classification term in the checked model loss.
const CLS_WEIGHT: f64 = 0.1;

fn model_loss(
    model: &MoweModel,
    g: &mut Graph,
    img: &Tensor,
    target: &Tensor,
    class: usize,
) -> Result<(Var, Vec<Vec<Vec<usize>>>)> {
    let x = g.tape.constant(img.clone());
    let out = model.forward(g, x)?;
    let t = g.tape.constant(target.clone());
    let l1 = g.tape.l1_loss(out.pred, t)?;
    let ce = g.tape.cross_entropy(out.weather_logits, &[class])?;
    let ce = g.tape.scale(ce, CLS_WEIGHT)?;
    let loss = g.tape.add(l1, ce)?;
    let selections = out.records.into_iter().map(|r| r.selected).collect();
    Ok((loss, selections))
}

/// End-to-end check of `L1(pred, target) + 0.1·CE` through a freshly initialized model.
///
/// The target sits at least 0.05 away from the initial prediction in every pixel, so no
/// perturbation crosses the L1 kink. Up to `per_tensor` coordinates of every parameter
/// tensor are checked (all of them when `per_tensor` is `None`).
pub fn check_model(
    config: &ModelConfig,
    seed: u64,
    per_tensor: Option<usize>,
) -> Result<GradCheck> {
    let mut model = MoweModel::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let img = Tensor::uniform(
        [3, config.image_height, config.image_width],
        0.0,
        1.0,
        &mut rng,
    );
    let class = rng.gen_range(0..config.num_weather_classes);

    let (pred0, target) = {
        let mut g = Graph::inference(model.params());
        let x = g.tape.constant(img.clone());
        let out = model.forward(&mut g, x)?;
        let pred = g.tape.value(out.pred).clone();
        let offsets = Tensor::uniform(pred.shape().to_vec(), 0.05, 0.15, &mut rng);
        let signs = Tensor::uniform(pred.shape().to_vec(), -1.0, 1.0, &mut rng);
        let target: Vec<f64> = pred
            .data()
            .iter()
            .zip(offsets.data().iter().zip(signs.data()))
            .map(|(p, (o, s))| p + o * s.signum())
            .collect();
        (pred.clone(), Tensor::new(pred.shape().to_vec(), target)?)
    };
    debug_assert!(pred0.is_finite());

    let (analytic, base_sel) = {
        let mut g = Graph::new(model.params());
        let (loss, sel) = model_loss(&model, &mut g, &img, &target, class)?;
        g.tape.backward(loss)?;
        (g.param_grads(), sel)
    };

    let ids: Vec<_> = model.params().ids().collect();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for id in ids {
        let len = model.params().value(id).len();
        let mut coords: Vec<usize> = (0..len).collect();
        if let Some(k) = per_tensor {
            coords.shuffle(&mut rng);
            coords.truncate(k);
        }
        let grad = analytic[id.index()]
            .clone()
            .expect("all parameters trainable");
        for j in coords {
            let orig = model.params().value(id).data()[j];
            let eval = |v: f64, model: &mut MoweModel| -> Result<(f64, bool)> {
                model.params_mut().value_mut(id).data_mut()[j] = v;
                let mut g = Graph::inference(model.params());
                let (loss, sel) = model_loss(model, &mut g, &img, &target, class)?;
                Ok((g.tape.value(loss).item(), sel == base_sel))
            };
            let (plus, same_p) = eval(orig + FD_STEP, &mut model)?;
            let (minus, same_m) = eval(orig - FD_STEP, &mut model)?;
            model.params_mut().value_mut(id).data_mut()[j] = orig;
            if !(same_p && same_m) {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(GradCheck {
        name: "tiny_model".into(),
        seed,
        max_rel_err: worst,
        skipped,
    })
}

/// All op checks and the tiny-model check over `seeds`.
pub fn run_suite(
    seeds: impl IntoIterator<Item = u64>,
    per_tensor: Option<usize>,
) -> Result<Vec<GradCheck>> {
    let tiny = ModelConfig::tiny(16, 16);
    let mut out = Vec::new();
    for seed in seeds {
        out.extend(check_ops(seed)?);
        out.push(check_model(&tiny, seed, per_tensor)?);
    }
    Ok(out)
}
