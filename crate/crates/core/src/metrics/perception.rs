//! A frozen toy segmentation network and the perception metric built on it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{dim_err, Error, Result};
use crate::model::layers::Conv;
use crate::model::{Graph, ParamStore};
use crate::synth::{Scene, NUM_SEMANTIC_CLASSES};
use crate::tensor::{Tensor, Var};
use crate::train::{adam_step, AdamConfig, AdamState};

/// Channel width of both hidden layers.
pub const RECOGNIZER_WIDTH: usize = 16;

/// Three-layer fully convolutional segmenter: two 3×3 ReLU convs and a 1×1 classifier.
/// The second hidden activation is the feature map compared by [`m_pa`].
#[derive(Clone, Debug)]
pub struct RecognitionModel {
    params: ParamStore,
    convs: [Conv; 3],
}

/// Per-pixel outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Recognition {
    /// `[H·W × classes]`.
    pub logits: Tensor,
    /// `[width × H × W]`.
    pub features: Tensor,
}

impl RecognitionModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let convs = [
            Conv::new(&mut params, &mut rng, "r.conv1", 3, RECOGNIZER_WIDTH, 3, 1),
            Conv::new(
                &mut params,
                &mut rng,
                "r.conv2",
                RECOGNIZER_WIDTH,
                RECOGNIZER_WIDTH,
                3,
                1,
            ),
            Conv::new(
                &mut params,
                &mut rng,
                "r.conv3",
                RECOGNIZER_WIDTH,
                NUM_SEMANTIC_CLASSES,
                1,
                1,
            ),
        ];
        RecognitionModel { params, convs }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Returns `(logits [H·W × classes], features [width×H×W])`.
    pub fn forward(&self, g: &mut Graph, img: Var) -> Result<(Var, Var)> {
        let (c, h, w) = g.tape.value(img).dims3()?;
        if c != 3 {
            return dim_err(format!("recognizer expects 3 channels, got {c}"));
        }
        let a = self.convs[0].forward(g, img)?;
        let a = g.tape.relu(a)?;
        let b = self.convs[1].forward(g, a)?;
        let features = g.tape.relu(b)?;
        let out = self.convs[2].forward(g, features)?;
        let flat = g.tape.reshape(out, [NUM_SEMANTIC_CLASSES, h * w])?;
        let logits = g.tape.transpose(flat)?;
        Ok((logits, features))
    }

    pub fn infer(&self, img: &Tensor) -> Result<Recognition> {
        let mut g = Graph::inference(&self.params);
        let x = g.tape.constant(img.clone());
        let (l, f) = self.forward(&mut g, x)?;
        Ok(Recognition {
            logits: g.tape.value(l).clone(),
            features: g.tape.value(f).clone(),
        })
    }

    /// Per-pixel argmax labels.
    pub fn predict(&self, img: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.infer(img)?.logits))
    }

    /// Fraction of pixels whose predicted class equals `labels`.
    pub fn pixel_accuracy(&self, img: &Tensor, labels: &[u8]) -> Result<f64> {
        let pred = self.predict(img)?;
        if pred.len() != labels.len() {
            return dim_err(format!("{} labels for {} pixels", labels.len(), pred.len()));
        }
        let hits = pred
            .iter()
            .zip(labels)
            .filter(|(p, l)| **p == **l as usize)
            .count();
        Ok(hits as f64 / pred.len() as f64)
    }

    /// Trains a fresh recognizer on clean scenes with per-pixel cross-entropy, one scene per step.
    pub fn train(scenes: &[Scene], epochs: usize, lr: f64, seed: u64) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::Usage("no scenes to train the recognizer on".into()));
        }
        let mut model = RecognitionModel::new(seed);
        let mut state = AdamState::new(&model.params);
        let cfg = AdamConfig {
            lr,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7265_636f);
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let s = &scenes[i];
                let labels: Vec<usize> = s.labels.iter().map(|&l| l as usize).collect();
                let grads = {
                    let mut g = Graph::new(&model.params);
                    let x = g.tape.constant(s.image.clone());
                    let (logits, _) = model.forward(&mut g, x)?;
                    let loss = g.tape.cross_entropy(logits, &labels)?;
                    g.tape.backward(loss)?;
                    g.param_grads()
                };
                adam_step(&mut model.params, &grads, &mut state, &cfg)?;
            }
        }
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: vec![
                ("kind".into(), "recognizer".into()),
                ("width".into(), RECOGNIZER_WIDTH.to_string()),
                ("classes".into(), NUM_SEMANTIC_CLASSES.to_string()),
            ],
            blobs: self
                .params
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header_value("kind") != Some("recognizer") {
            return Err(Error::Format(
                "checkpoint does not hold a recognizer".into(),
            ));
        }
        let mut model = RecognitionModel::new(0);
        model.params.assign(ckpt.blobs.clone())?;
        Ok(model)
    }
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// The two terms of the perception metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mpa {
    /// Cross-entropy of the recognizer on the restored image against its own clean-image labels.
    pub semantic: f64,
    /// Mean squared distance between mid-layer features.
    pub feature: f64,
    /// `semantic + gamma·feature`.
    pub value: f64,
}

/// Default weight of the feature term.
pub const DEFAULT_GAMMA: f64 = 1.0;

/// Label-free discrepancy between the recognizer's responses to `restored` and `clean`.
pub fn m_pa(restored: &Tensor, clean: &Tensor, r: &RecognitionModel, gamma: f64) -> Result<Mpa> {
    if restored.shape() != clean.shape() {
        return dim_err(format!(
            "images have shapes {:?} and {:?}",
            restored.shape(),
            clean.shape()
        ));
    }
    let reference = r.infer(clean)?;
    let pseudo = argmax_rows(&reference.logits);
    let out = r.infer(restored)?;
    let mut tape = crate::tensor::Tape::new();
    let l = tape.constant(out.logits);
    let ce = tape.cross_entropy(l, &pseudo)?;
    let semantic = tape.value(ce).item();
    let feature = out
        .features
        .data()
        .iter()
        .zip(reference.features.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / out.features.len() as f64;
    Ok(Mpa {
        semantic,
        feature,
        value: semantic + gamma * feature,
    })
}

/// Spearman rank correlation with average ranks for ties.
///
/// Returns `Ok(None)` when either series is constant, where the coefficient is undefined.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return dim_err(format!(
            "series lengths differ: {} and {}",
            a.len(),
            b.len()
        ));
    }
    if a.len() < 5 {
        return Err(Error::Usage(format!(
            "need at least 5 pairs, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Evaluation("series contains NaN".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    if da == 0.0 || db == 0.0 {
        return Ok(None);
    }
    Ok(Some(num / (da * db).sqrt()))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
