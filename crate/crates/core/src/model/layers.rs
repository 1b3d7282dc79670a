use rand::Rng;

use super::params::{Graph, ParamId, ParamStore};
use crate::error::{dim_err, Result};
use crate::tensor::{Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// `x[n×d_in] · w[d_in×d_out] + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let w = store.add_randn(
            format!("{name}.w"),
            &[d_in, d_out],
            1.0 / (d_in as f64).sqrt(),
            rng,
        );
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros([d_out])));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }

    /// Zeroes weight and bias.
    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.w).data_mut().fill(0.0);
        if let Some(b) = self.b {
            store.value_mut(b).data_mut().fill(0.0);
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full([d], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([d])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.tape.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Same-padded stride-1 convolution over `[C×H×W]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub groups: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        groups: usize,
    ) -> Self {
        let fan_in = c_in / groups * kernel * kernel;
        let w = store.add_randn(
            format!("{name}.w"),
            &[c_out, c_in / groups, kernel, kernel],
            1.0 / (fan_in as f64).sqrt(),
            rng,
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros([c_out]));
        Conv {
            w,
            b,
            kernel,
            groups,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.tape
            .conv2d(x, w, Some(b), 1, self.kernel / 2, self.groups)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.w).data_mut().fill(0.0);
        store.value_mut(self.b).data_mut().fill(0.0);
    }
}

/// Flat `[C×H×W]` index of every `(token, feature)` entry of the patch matrix
/// `[N × C·p·p]`, tokens in row-major grid order and features ordered channel, row, column.
pub fn patch_index(c: usize, h: usize, w: usize, p: usize) -> Result<Vec<usize>> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return dim_err(format!("patch size {p} does not divide {h}×{w}"));
    }
    let (gh, gw) = (h / p, w / p);
    let mut index = Vec::with_capacity(c * h * w);
    for ty in 0..gh {
        for tx in 0..gw {
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        index.push(ch * h * w + (ty * p + dy) * w + tx * p + dx);
                    }
                }
            }
        }
    }
    Ok(index)
}

/// `[C×H×W] -> [N × C·p·p]`.
pub fn patchify(g: &mut Graph, x: Var, p: usize) -> Result<Var> {
    let (c, h, w) = g.tape.value(x).dims3()?;
    let index = patch_index(c, h, w, p)?;
    g.tape.gather(x, index, [(h / p) * (w / p), c * p * p])
}

/// Inverse of [`patchify`].
pub fn unpatchify(
    g: &mut Graph,
    tokens: Var,
    c: usize,
    h: usize,
    w: usize,
    p: usize,
) -> Result<Var> {
    let fwd = patch_index(c, h, w, p)?;
    if g.tape.value(tokens).len() != fwd.len() {
        return dim_err(format!(
            "cannot unpatchify {:?} into {c}×{h}×{w} with patch {p}",
            g.tape.shape(tokens)
        ));
    }
    let mut inv = vec![0; fwd.len()];
    for (k, &src) in fwd.iter().enumerate() {
        inv[src] = k;
    }
    g.tape.gather(tokens, inv, [c, h, w])
}

/// Tokens `[N×D]` as a `[D×gh×gw]` feature map.
pub fn tokens_to_grid(g: &mut Graph, x: Var, gh: usize, gw: usize) -> Result<Var> {
    let (n, d) = g.tape.value(x).dims2()?;
    if n != gh * gw {
        return dim_err(format!("{n} tokens do not form a {gh}×{gw} grid"));
    }
    let t = g.tape.transpose(x)?;
    g.tape.reshape(t, [d, gh, gw])
}

/// Inverse of [`tokens_to_grid`].
pub fn grid_to_tokens(g: &mut Graph, x: Var) -> Result<Var> {
    let (d, gh, gw) = g.tape.value(x).dims3()?;
    let flat = g.tape.reshape(x, [d, gh * gw])?;
    g.tape.transpose(flat)
}

/// Patchify, linear projection and a learned positional embedding.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub pos: ParamId,
    pub patch: usize,
}

impl PatchEmbed {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c: usize,
        num_tokens: usize,
        patch: usize,
        d: usize,
    ) -> Self {
        PatchEmbed {
            proj: Linear::new(
                store,
                rng,
                &format!("{name}.proj"),
                c * patch * patch,
                d,
                true,
            ),
            pos: store.add_randn(format!("{name}.pos"), &[num_tokens, d], 0.02, rng),
            patch,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let patches = patchify(g, x, self.patch)?;
        let tokens = self.proj.forward(g, patches)?;
        let pos = g.param(self.pos);
        if g.tape.shape(pos) != g.tape.shape(tokens) {
            return dim_err(format!(
                "positional embedding {:?} does not match tokens {:?}",
                g.tape.shape(pos),
                g.tape.shape(tokens)
            ));
        }
        g.tape.add(tokens, pos)
    }
}

/// Two-layer GELU feed-forward.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
    ) -> Self {
        Mlp {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), d_in, hidden, true),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, d_out, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.tape.gelu(h)?;
        self.fc2.forward(g, h)
    }
}
