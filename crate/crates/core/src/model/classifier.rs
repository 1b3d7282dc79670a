use rand::Rng;

use super::attention::Attention;
use super::layers::{LayerNorm, Mlp, PatchEmbed};
use super::params::{Graph, ParamStore};
use crate::error::Result;
use crate::tensor::Var;

/// Attention followed by a pre-norm GELU feed-forward, both residual.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attn: Attention,
    pub norm: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        EncoderBlock {
            attn: Attention::new(store, rng, &format!("{name}.attn"), dim, heads),
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            mlp: Mlp::new(store, rng, &format!("{name}.mlp"), dim, hidden, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = self.attn.forward(g, x)?.tokens;
        let n = self.norm.forward(g, y)?;
        let f = self.mlp.forward(g, n)?;
        g.tape.add(y, f)
    }
}

/// Small ViT over the raw image; its final per-token embeddings are the weather tokens.
#[derive(Clone, Debug)]
pub struct WeatherClassifier {
    pub embed: PatchEmbed,
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
    pub head: Mlp,
}

pub struct ClassifierOutput {
    /// `[num_classes]`.
    pub logits: Var,
    /// `[N×D_w]`, aligned with the restoration token grid.
    pub tokens: Var,
}

impl WeatherClassifier {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        num_tokens: usize,
        patch: usize,
        dim: usize,
        depth: usize,
        heads: usize,
        hidden: usize,
        num_classes: usize,
    ) -> Self {
        WeatherClassifier {
            embed: PatchEmbed::new(
                store,
                rng,
                &format!("{name}.embed"),
                3,
                num_tokens,
                patch,
                dim,
            ),
            blocks: (0..depth)
                .map(|i| {
                    EncoderBlock::new(
                        store,
                        rng,
                        &format!("{name}.blocks.{i}"),
                        dim,
                        heads,
                        hidden,
                    )
                })
                .collect(),
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            head: Mlp::new(store, rng, &format!("{name}.head"), dim, dim, num_classes),
        }
    }

    pub fn forward(&self, g: &mut Graph, img: Var) -> Result<ClassifierOutput> {
        let mut x = self.embed.forward(g, img)?;
        for b in &self.blocks {
            x = b.forward(g, x)?;
        }
        let tokens = self.norm.forward(g, x)?;
        let pooled = g.tape.global_avg_pool(tokens)?;
        let pooled = g.tape.reshape(pooled, [1, g.tape.shape(pooled)[0]])?;
        let logits = self.head.forward(g, pooled)?;
        let c = g.tape.shape(logits)[1];
        let logits = g.tape.reshape(logits, [c])?;
        Ok(ClassifierOutput { logits, tokens })
    }
}
