use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::Attention;
use super::classifier::WeatherClassifier;
use super::config::ModelConfig;
use super::layers::{unpatchify, Conv, Linear, PatchEmbed};
use super::moe::{MoeFfn, RoutingRecord};
use super::params::{Graph, ParamStore};
use crate::checkpoint::Checkpoint;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Tensor, Var};

/// Attention then the mixture-of-experts feed-forward.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attn: Attention,
    pub moe: MoeFfn,
}

/// Parameter-name prefix of the weather classifier branch.
pub const CLASSIFIER_PREFIX: &str = "classifier.";

pub struct ForwardOutput {
    /// Unclamped `[3×H×W]` prediction.
    pub pred: Var,
    pub weather_logits: Var,
    pub records: Vec<RoutingRecord>,
    /// Sum of the per-layer load-balancing terms, when enabled in the config.
    pub aux_loss: Option<Var>,
}

/// Inference result.
#[derive(Clone, Debug)]
pub struct Restoration {
    /// Clamped to `[0, 1]`.
    pub image: Tensor,
    pub records: Vec<RoutingRecord>,
    pub weather_logits: Tensor,
}

#[derive(Clone, Debug)]
pub struct MoweModel {
    config: ModelConfig,
    params: ParamStore,
    pub head: [Conv; 2],
    pub embed: PatchEmbed,
    pub blocks: Vec<TransformerBlock>,
    pub expand: Linear,
    pub tail: [Conv; 2],
    pub classifier: WeatherClassifier,
}

impl MoweModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = &config;
        let (n, p, d, ch) = (c.num_tokens(), c.patch_size, c.embed_dim, c.channels);
        let head = [
            Conv::new(&mut s, &mut rng, "head.0", 3, ch, 3, 1),
            Conv::new(&mut s, &mut rng, "head.1", ch, ch, 3, 1),
        ];
        let embed = PatchEmbed::new(&mut s, &mut rng, "embed", ch, n, p, d);
        let kernels = c.expert_kernels();
        let blocks = (0..c.depth)
            .map(|i| TransformerBlock {
                attn: Attention::new(&mut s, &mut rng, &format!("blocks.{i}.attn"), d, c.heads),
                moe: MoeFfn::new(
                    &mut s,
                    &mut rng,
                    &format!("blocks.{i}.moe"),
                    d,
                    d * c.hidden_ratio,
                    &kernels,
                    c.top_k,
                    c.router,
                    c.weather_dim,
                    c.route_on_normed,
                ),
            })
            .collect();
        let expand = Linear::new(&mut s, &mut rng, "expand", d, ch * p * p, true);
        let tail = [
            Conv::new(&mut s, &mut rng, "tail.0", ch, ch, 3, 1),
            Conv::new(&mut s, &mut rng, "tail.1", ch, 3, 3, 1),
        ];
        let classifier = WeatherClassifier::new(
            &mut s,
            &mut rng,
            CLASSIFIER_PREFIX.trim_end_matches('.'),
            n,
            p,
            c.weather_dim,
            c.classifier_depth,
            c.classifier_heads,
            c.weather_dim * c.hidden_ratio,
            c.num_weather_classes,
        );
        Ok(MoweModel {
            config,
            params: s,
            head,
            embed,
            blocks,
            expand,
            tail,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_image(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape != [3, c.image_height, c.image_width] {
            return dim_err(format!(
                "model expects a 3×{}×{} image, got {shape:?}",
                c.image_height, c.image_width
            ));
        }
        Ok(())
    }

    /// Full differentiable pass. Weather tokens reach the routers detached, so the
    /// classifier learns only from its own loss.
    pub fn forward(&self, g: &mut Graph, img: Var) -> Result<ForwardOutput> {
        self.check_image(g.tape.shape(img))?;
        let c = &self.config;
        let grid = c.grid();
        let cls = self.classifier.forward(g, img)?;
        let weather = g.tape.detach(cls.tokens);

        let mut x = self.head[0].forward(g, img)?;
        x = g.tape.gelu(x)?;
        x = self.head[1].forward(g, x)?;
        let mut z = self.embed.forward(g, x)?;

        let mut records = Vec::with_capacity(self.blocks.len());
        let mut aux = Vec::new();
        let want_aux = c.aux_loss_weight > 0.0;
        for b in &self.blocks {
            let y = b.attn.forward(g, z)?.tokens;
            let out = b.moe.forward(g, y, Some(weather), grid, want_aux)?;
            z = out.tokens;
            records.push(out.record);
            aux.extend(out.aux_loss);
        }

        let patches = self.expand.forward(g, z)?;
        let mut x = unpatchify(
            g,
            patches,
            c.channels,
            c.image_height,
            c.image_width,
            c.patch_size,
        )?;
        x = self.tail[0].forward(g, x)?;
        x = g.tape.gelu(x)?;
        let pred = self.tail[1].forward(g, x)?;
        let aux_loss = match aux.len() {
            0 => None,
            _ => Some(g.tape.add_all(&aux)?),
        };
        Ok(ForwardOutput {
            pred,
            weather_logits: cls.logits,
            records,
            aux_loss,
        })
    }

    /// Evaluation-mode restoration; the output is clamped to `[0, 1]`.
    pub fn restore(&self, img: &Tensor) -> Result<Restoration> {
        self.check_image(img.shape())?;
        let mut g = Graph::inference(&self.params);
        let x = g.tape.constant(img.clone());
        let out = self.forward(&mut g, x)?;
        Ok(Restoration {
            image: g.tape.value(out.pred).clamp(0.0, 1.0),
            records: out.records,
            weather_logits: g.tape.value(out.weather_logits).clone(),
        })
    }

    /// Weather logits and tokens of the classifier branch alone.
    pub fn classify(&self, img: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_image(img.shape())?;
        let mut g = Graph::inference(&self.params);
        let x = g.tape.constant(img.clone());
        let out = self.classifier.forward(&mut g, x)?;
        Ok((
            g.tape.value(out.logits).clone(),
            g.tape.value(out.tokens).clone(),
        ))
    }

    /// Model checkpoint: config header plus every parameter tensor.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut header = vec![("kind".to_string(), "mowe-model".to_string())];
        header.extend(self.config.to_pairs());
        Checkpoint {
            header,
            blobs: self
                .params
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    /// Rebuilds a model from a checkpoint, rejecting it if its config differs from `expected`.
    /// Blobs that are not model parameters (optimizer state, history) are ignored.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&ModelConfig>) -> Result<Self> {
        let config = ModelConfig::from_pairs(&ckpt.header)?;
        if let Some(exp) = expected {
            if let Some((field, found, expected)) = config.first_mismatch(exp) {
                return Err(Error::ConfigMismatch {
                    field,
                    found,
                    expected,
                });
            }
        }
        let mut model = MoweModel::new(config, 0)?;
        let entries = ckpt
            .blobs
            .iter()
            .filter(|(n, _)| model.params.find(n).is_some())
            .cloned()
            .collect();
        model.params.assign(entries)?;
        Ok(model)
    }

    /// Zeroes the final tail conv, making the predicted image identically zero.
    pub fn zero_tail(&mut self) {
        self.tail[1].zero(&mut self.params);
    }

    /// Zeroes attention output projections and all experts, so every block is the identity.
    pub fn zero_block_outputs(&mut self) {
        for b in &self.blocks {
            b.attn.out.zero(&mut self.params);
            b.moe.zero_experts(&mut self.params);
        }
    }
}
