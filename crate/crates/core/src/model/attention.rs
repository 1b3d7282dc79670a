use rand::Rng;

use super::layers::{LayerNorm, Linear};
use super::params::{Graph, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Pre-norm multi-head self-attention with a residual connection.
#[derive(Clone, Debug)]
pub struct Attention {
    pub norm: LayerNorm,
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionOutput {
    pub tokens: Var,
    /// One `[N×N]` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Self {
        Attention {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            qkv: Linear::new(store, rng, &format!("{name}.qkv"), dim, 3 * dim, true),
            out: Linear::new(store, rng, &format!("{name}.out"), dim, dim, true),
            heads,
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<AttentionOutput> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Parameter(format!(
                "{} heads do not divide width {}",
                self.heads, self.dim
            )));
        }
        let dh = self.dim / self.heads;
        let normed = self.norm.forward(g, x)?;
        let qkv = self.qkv.forward(g, normed)?;
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = g.tape.slice_cols(qkv, h * dh, (h + 1) * dh)?;
            let k = g
                .tape
                .slice_cols(qkv, self.dim + h * dh, self.dim + (h + 1) * dh)?;
            let v = g
                .tape
                .slice_cols(qkv, 2 * self.dim + h * dh, 2 * self.dim + (h + 1) * dh)?;
            let kt = g.tape.transpose(k)?;
            let scores = g.tape.matmul(q, kt)?;
            let scores = g.tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let a = g.tape.softmax(scores, 1)?;
            heads.push(g.tape.matmul(a, v)?);
            weights.push(a);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            g.tape.concat(&heads)?
        };
        let projected = self.out.forward(g, merged)?;
        let tokens = g.tape.add(x, projected)?;
        Ok(AttentionOutput { tokens, weights })
    }

    pub fn attention_maps(&self, g: &Graph, out: &AttentionOutput) -> Vec<Tensor> {
        out.weights
            .iter()
            .map(|&w| g.tape.value(w).clone())
            .collect()
    }
}
