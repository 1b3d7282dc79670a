use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::report::EpochReport;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{
    routing_scores, Graph, ModelConfig, MoweModel, RoutingRecord, CLASSIFIER_PREFIX,
};
use crate::synth::{derive_seed, WeatherKind, WeatherParams, WeatherSample};
use crate::tensor::{Tensor, Var};

/// Classifier outputs: rain, fog, snow, clear, and a mixture class used only without random labels.
pub const NUM_CLASSES: usize = 5;

/// Fixed class id of a weather kind.
pub fn class_id(kind: WeatherKind) -> usize {
    match kind {
        WeatherKind::Rain => 0,
        WeatherKind::Fog => 1,
        WeatherKind::Snow => 2,
        WeatherKind::Clear => 3,
        WeatherKind::Mix => 4,
    }
}

/// Training label for one epoch. With random labels a mixture gets one of its components'
/// ids, drawn uniformly; otherwise it gets the mixture class.
pub fn random_label_assign<R: Rng + ?Sized>(
    params: &WeatherParams,
    enabled: bool,
    rng: &mut R,
) -> usize {
    match params {
        WeatherParams::Mix(components) if enabled && !components.is_empty() => {
            class_id(components[rng.gen_range(0..components.len())].kind())
        }
        other => class_id(other.kind()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub restoration_weight: f64,
    /// `λ_cls`.
    pub cls_weight: f64,
    pub seed: u64,
    pub random_label: bool,
    /// Stop updating the classifier once this many epochs have completed.
    pub freeze_classifier_after: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 4,
            epochs: 20,
            restoration_weight: 1.0,
            cls_weight: 0.1,
            seed: 0,
            random_label: true,
            freeze_classifier_after: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let checks = [
            (
                a.lr > 0.0 && a.lr.is_finite(),
                "learning rate must be positive",
            ),
            ((0.0..1.0).contains(&a.beta1), "beta1 must lie in [0, 1)"),
            ((0.0..1.0).contains(&a.beta2), "beta2 must lie in [0, 1)"),
            (a.eps > 0.0, "eps must be positive"),
            (self.batch_size > 0, "batch size must be positive"),
            (self.epochs > 0, "epochs must be positive"),
            (
                self.restoration_weight > 0.0 && self.restoration_weight.is_finite(),
                "restoration weight must be positive",
            ),
            (
                self.cls_weight >= 0.0 && self.cls_weight.is_finite(),
                "classifier loss weight must be non-negative",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Parameter(msg.to_string())),
            None => Ok(()),
        }
    }

    /// Settings that must agree when resuming; `epochs` may grow.
    fn pairs(&self) -> Vec<(String, String)> {
        [
            ("train.lr", format!("{:?}", self.adam.lr)),
            ("train.beta1", format!("{:?}", self.adam.beta1)),
            ("train.beta2", format!("{:?}", self.adam.beta2)),
            ("train.eps", format!("{:?}", self.adam.eps)),
            ("train.batch_size", self.batch_size.to_string()),
            (
                "train.restoration_weight",
                format!("{:?}", self.restoration_weight),
            ),
            ("train.cls_weight", format!("{:?}", self.cls_weight)),
            ("train.seed", self.seed.to_string()),
            ("train.random_label", self.random_label.to_string()),
            (
                "train.freeze_classifier_after",
                self.freeze_classifier_after
                    .map_or("never".into(), |e| e.to_string()),
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

pub struct LossParts {
    pub total: Var,
    pub l1: Var,
    pub ce: Var,
}

/// `restoration_weight·L1(pred, target) + λ_cls·CE(logits, class)`.
pub fn loss(
    g: &mut Graph,
    pred: Var,
    target: Var,
    logits: Var,
    class: usize,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    let l1 = g.tape.l1_loss(pred, target)?;
    let ce = g.tape.cross_entropy(logits, &[class])?;
    let a = g.tape.scale(l1, cfg.restoration_weight)?;
    let b = g.tape.scale(ce, cfg.cls_weight)?;
    let total = g.tape.add(a, b)?;
    Ok(LossParts { total, l1, ce })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn non_finite(e: Error, epoch: usize, id: &str) -> Error {
    match e {
        Error::NonFinite(op) => {
            Error::NonFinite(format!("{op} (epoch {}, sample {id})", epoch + 1))
        }
        other => other,
    }
}

/// Model, optimizer state and history of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: MoweModel,
    pub config: TrainConfig,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochReport>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const HISTORY: &str = "history";

impl Trainer {
    pub fn new(model: MoweModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params());
        Ok(Trainer {
            model,
            config,
            adam,
            epoch: 0,
            history: Vec::new(),
        })
    }

    fn classifier_frozen(&self) -> bool {
        self.config
            .freeze_classifier_after
            .is_some_and(|e| self.epoch >= e)
    }

    /// Runs one epoch over `samples` (degraded input, clean target) in an order drawn from
    /// `(seed, epoch)`, so a resumed run repeats the uninterrupted one exactly.
    pub fn train_epoch(&mut self, samples: &[&WeatherSample]) -> Result<EpochReport> {
        if samples.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        let cfg = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, self.epoch as u64 + 1));
        let labels: Vec<usize> = samples
            .iter()
            .map(|s| random_label_assign(&s.params, cfg.random_label, &mut rng))
            .collect();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);

        let frozen = self.classifier_frozen();
        let aux_weight = self.model.config().aux_loss_weight;
        let (mut l1_sum, mut ce_sum) = (0.0, 0.0);
        let mut correct = [0usize; 5];
        let mut seen = [0usize; 5];
        let mut records: Vec<Vec<RoutingRecord>> = Vec::with_capacity(samples.len());
        let mut kinds = Vec::with_capacity(samples.len());

        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Option<Tensor>>> = None;
            for &i in batch {
                let s = samples[i];
                let ctx = |e| non_finite(e, self.epoch, &s.id);
                let mut g = Graph::with_trainable(self.model.params(), |n| {
                    !(frozen && n.starts_with(CLASSIFIER_PREFIX))
                });
                let x = g.tape.constant(s.degraded.clone());
                let target = g.tape.constant(s.clean.clone());
                let out = self.model.forward(&mut g, x).map_err(ctx)?;
                let parts = loss(
                    &mut g,
                    out.pred,
                    target,
                    out.weather_logits,
                    labels[i],
                    &cfg,
                )
                .map_err(ctx)?;
                let mut total = parts.total;
                if let Some(aux) = out.aux_loss {
                    let a = g.tape.scale(aux, aux_weight).map_err(ctx)?;
                    total = g.tape.add(total, a).map_err(ctx)?;
                }
                let value = g.tape.value(total).item();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss (epoch {}, sample {})",
                        self.epoch + 1,
                        s.id
                    )));
                }
                g.tape.backward(total)?;
                l1_sum += g.tape.value(parts.l1).item();
                ce_sum += g.tape.value(parts.ce).item();

                let k = s.label.index();
                seen[k] += 1;
                let pred = argmax(g.tape.value(out.weather_logits).data());
                let ok = match (&s.params, cfg.random_label) {
                    (WeatherParams::Mix(_), true) => {
                        s.params.components().iter().any(|&c| class_id(c) == pred)
                    }
                    _ => pred == class_id(s.label),
                };
                correct[k] += usize::from(ok);
                records.push(out.records);
                kinds.push(s.label);

                let grads = g.param_grads();
                match &mut acc {
                    None => acc = Some(grads),
                    Some(sum) => {
                        for (a, b) in sum.iter_mut().zip(grads) {
                            if let (Some(a), Some(b)) = (a.as_mut(), b) {
                                a.data_mut()
                                    .iter_mut()
                                    .zip(b.data())
                                    .for_each(|(x, y)| *x += y);
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("batch is non-empty");
            let scale = 1.0 / batch.len() as f64;
            for t in grads.iter_mut().flatten() {
                t.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam_step(self.model.params_mut(), &grads, &mut self.adam, &cfg.adam)?;
        }

        self.epoch += 1;
        let n = samples.len() as f64;
        let mut accuracy = [None; 5];
        for k in 0..5 {
            if seen[k] > 0 {
                accuracy[k] = Some(correct[k] as f64 / seen[k] as f64);
            }
        }
        let report = EpochReport {
            epoch: self.epoch,
            l1: l1_sum / n,
            ce: ce_sum / n,
            accuracy,
            routing: routing_scores(&records, &kinds)?,
        };
        self.history.push(report.clone());
        Ok(report)
    }

    /// Trains until `config.epochs` epochs have completed, calling `after_epoch` after each.
    pub fn fit(
        &mut self,
        samples: &[&WeatherSample],
        mut after_epoch: impl FnMut(&Trainer, &EpochReport) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.config.epochs {
            let report = self.train_epoch(samples)?;
            after_epoch(self, &report)?;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint();
        ckpt.header.extend(self.config.pairs());
        ckpt.header
            .push(("train.epoch".into(), self.epoch.to_string()));
        ckpt.header
            .push(("train.adam_step".into(), self.adam.step.to_string()));
        let params = self.model.params();
        for id in params.ids() {
            ckpt.blobs.push((
                format!("{ADAM_M}{}", params.name(id)),
                self.adam.m[id.index()].clone(),
            ));
            ckpt.blobs.push((
                format!("{ADAM_V}{}", params.name(id)),
                self.adam.v[id.index()].clone(),
            ));
        }
        let rows: Vec<Vec<f64>> = self.history.iter().map(EpochReport::to_row).collect();
        let width = rows.first().map_or(0, Vec::len);
        ckpt.blobs.push((
            HISTORY.into(),
            Tensor::new([rows.len(), width], rows.concat()).expect("history rows have equal width"),
        ));
        ckpt
    }

    /// Restores a run saved by [`Trainer::to_checkpoint`]. The checkpoint must match
    /// `model_config` (if given) and every setting of `config` except the epoch budget.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        model_config: Option<&ModelConfig>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        for (key, expected) in config.pairs() {
            let found = ckpt.header_value(&key).ok_or_else(|| {
                Error::Format(format!(
                    "checkpoint has no `{key}`; not a training checkpoint"
                ))
            })?;
            if found != expected {
                return Err(Error::ConfigMismatch {
                    field: key,
                    found: found.to_string(),
                    expected,
                });
            }
        }
        let model = MoweModel::from_checkpoint(ckpt, model_config)?;
        let params = model.params();
        let mut adam = AdamState::new(params);
        for id in params.ids() {
            let get = |prefix: &str| {
                ckpt.blob(&format!("{prefix}{}", params.name(id)))
                    .cloned()
                    .ok_or_else(|| {
                        Error::Format(format!("missing optimizer state for {}", params.name(id)))
                    })
            };
            adam.m[id.index()] = get(ADAM_M)?;
            adam.v[id.index()] = get(ADAM_V)?;
        }
        let num = |key: &str| -> Result<u64> {
            ckpt.header_value(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("checkpoint has no valid `{key}`")))
        };
        adam.step = num("train.adam_step")?;
        let epoch = num("train.epoch")? as usize;
        let cfg = model.config();
        let history = match ckpt.blob(HISTORY) {
            Some(h) if !h.is_empty() => {
                let width = h.shape()[1];
                h.data()
                    .chunks(width)
                    .map(|row| EpochReport::from_row(row, cfg.depth, cfg.num_experts))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => Vec::new(),
        };
        Ok(Trainer {
            model,
            config,
            adam,
            epoch,
            history,
        })
    }
}

/// Mean L1 between the unclamped prediction and the clean target.
pub fn evaluate_l1(model: &MoweModel, samples: &[&WeatherSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut g = Graph::inference(model.params());
        let x = g.tape.constant(s.degraded.clone());
        let out = model.forward(&mut g, x)?;
        let t = g.tape.constant(s.clean.clone());
        let l = g.tape.l1_loss(out.pred, t)?;
        total += g.tape.value(l).item();
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Largest softmax probability of the classifier for each sample.
pub fn max_softmax_confidence(model: &MoweModel, samples: &[&WeatherSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let (logits, _) = model.classify(&s.degraded)?;
            let m = logits
                .data()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.data().iter().map(|v| (v - m).exp()).sum();
            Ok(1.0 / z)
        })
        .collect()
}
