use rand::Rng;

use super::config::RouterKind;
use super::layers::{grid_to_tokens, tokens_to_grid, Conv, LayerNorm, Linear, Mlp};
use super::params::{Graph, ParamStore};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{top_k_indices, Tensor, Var};

/// Feed-forward expert with an optional parallel depthwise conv over the token grid.
#[derive(Clone, Debug)]
pub struct Expert {
    pub ffn: Mlp,
    pub dwconv: Option<Conv>,
}

impl Expert {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        hidden: usize,
        kernel: usize,
    ) -> Self {
        Expert {
            ffn: Mlp::new(store, rng, &format!("{name}.ffn"), dim, hidden, dim),
            dwconv: (kernel > 1)
                .then(|| Conv::new(store, rng, &format!("{name}.dwconv"), dim, dim, kernel, dim)),
        }
    }

    /// Depthwise conv branch on all `N = gh·gw` tokens, or `None` for a pure FFN expert.
    pub fn conv_branch(&self, g: &mut Graph, x: Var, grid: (usize, usize)) -> Result<Option<Var>> {
        let Some(conv) = &self.dwconv else {
            return Ok(None);
        };
        let map = tokens_to_grid(g, x, grid.0, grid.1)?;
        let y = conv.forward(g, map)?;
        grid_to_tokens(g, y).map(Some)
    }

    /// `FFN(x) + DWConv(x)` on a full `[N×D]` token grid.
    pub fn forward(&self, g: &mut Graph, x: Var, grid: (usize, usize)) -> Result<Var> {
        let (n, _) = g.tape.value(x).dims2()?;
        if n != grid.0 * grid.1 {
            return dim_err(format!(
                "{n} tokens do not form a {}×{} grid",
                grid.0, grid.1
            ));
        }
        let f = self.ffn.forward(g, x)?;
        match self.conv_branch(g, x, grid)? {
            Some(c) => g.tape.add(f, c),
            None => Ok(f),
        }
    }

    pub fn zero(&self, store: &mut ParamStore) {
        self.ffn.fc1.zero(store);
        self.ffn.fc2.zero(store);
        if let Some(c) = &self.dwconv {
            c.zero(store);
        }
    }
}

/// Token-to-expert gating.
#[derive(Clone, Debug)]
pub enum Router {
    /// `logits = W·y`.
    Plain { gate: Linear },
    /// `logits = W·adaptor(concat(y, w))` with a two-layer GELU adaptor.
    WeatherAware { adaptor: Mlp, gate: Linear },
}

impl Router {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        kind: RouterKind,
        dim: usize,
        weather_dim: usize,
        num_experts: usize,
    ) -> Self {
        match kind {
            RouterKind::Plain => Router::Plain {
                gate: Linear::new(store, rng, &format!("{name}.gate"), dim, num_experts, false),
            },
            RouterKind::WeatherAware => Router::WeatherAware {
                adaptor: Mlp::new(
                    store,
                    rng,
                    &format!("{name}.adaptor"),
                    dim + weather_dim,
                    dim,
                    dim,
                ),
                gate: Linear::new(store, rng, &format!("{name}.gate"), dim, num_experts, false),
            },
        }
    }

    pub fn kind(&self) -> RouterKind {
        match self {
            Router::Plain { .. } => RouterKind::Plain,
            Router::WeatherAware { .. } => RouterKind::WeatherAware,
        }
    }

    /// Router logits `[N×M]`. Weather tokens are ignored by the plain router.
    pub fn logits(&self, g: &mut Graph, content: Var, weather: Option<Var>) -> Result<Var> {
        match self {
            Router::Plain { gate } => gate.forward(g, content),
            Router::WeatherAware { adaptor, gate } => {
                let w = weather.ok_or_else(|| {
                    Error::Usage("weather-aware router needs weather tokens".into())
                })?;
                if g.tape.shape(w)[0] != g.tape.shape(content)[0] {
                    return dim_err(format!(
                        "{} weather tokens for {} content tokens",
                        g.tape.shape(w)[0],
                        g.tape.shape(content)[0]
                    ));
                }
                let joint = g.tape.concat(&[content, w])?;
                let a = adaptor.forward(g, joint)?;
                gate.forward(g, a)
            }
        }
    }

    /// Softmax over the top-`k` logits of each token.
    pub fn route(
        &self,
        g: &mut Graph,
        content: Var,
        weather: Option<Var>,
        k: usize,
    ) -> Result<Routing> {
        let logits = self.logits(g, content, weather)?;
        gate_logits(g, logits, k)
    }
}

/// Gates `[N×M]` with the selected experts of each token in ascending order.
pub struct Routing {
    pub logits: Var,
    pub gates: Var,
    pub selected: Vec<Vec<usize>>,
}

/// `softmax(top_k_mask(logits))` row-wise.
pub fn gate_logits(g: &mut Graph, logits: Var, k: usize) -> Result<Routing> {
    let (_, m) = g.tape.value(logits).dims2()?;
    let masked = g.tape.top_k_mask(logits, k)?;
    let gates = g.tape.softmax(masked, 1)?;
    let selected = g
        .tape
        .value(logits)
        .data()
        .chunks(m)
        .map(|row| top_k_indices(row, k))
        .collect();
    Ok(Routing {
        logits,
        gates,
        selected,
    })
}

/// Gate weights of one MoE layer for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingRecord {
    /// `[N×M]`, exactly K nonzeros per row.
    pub gates: Tensor,
    pub selected: Vec<Vec<usize>>,
}

pub struct MoeOutput {
    pub tokens: Var,
    pub record: RoutingRecord,
    /// Load-balancing term, present when requested.
    pub aux_loss: Option<Var>,
}

/// `z = Σ_i g_i(y) · Expert_i(LN(y)) + y`.
#[derive(Clone, Debug)]
pub struct MoeFfn {
    pub norm: LayerNorm,
    pub router: Router,
    pub experts: Vec<Expert>,
    pub top_k: usize,
    pub route_on_normed: bool,
}

impl MoeFfn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dim: usize,
        hidden: usize,
        kernels: &[usize],
        top_k: usize,
        router: RouterKind,
        weather_dim: usize,
        route_on_normed: bool,
    ) -> Self {
        MoeFfn {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            router: Router::new(
                store,
                rng,
                &format!("{name}.router"),
                router,
                dim,
                weather_dim,
                kernels.len(),
            ),
            experts: kernels
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    Expert::new(store, rng, &format!("{name}.experts.{i}"), dim, hidden, k)
                })
                .collect(),
            top_k,
            route_on_normed,
        }
    }

    fn prepare(&self, g: &mut Graph, y: Var, weather: Option<Var>) -> Result<(Var, Routing)> {
        let normed = self.norm.forward(g, y)?;
        let input = if self.route_on_normed { normed } else { y };
        let routing = self.router.route(g, input, weather, self.top_k)?;
        Ok((normed, routing))
    }

    /// Sparse forward: each expert's FFN runs only on the tokens routed to it.
    pub fn forward(
        &self,
        g: &mut Graph,
        y: Var,
        weather: Option<Var>,
        grid: (usize, usize),
        want_aux: bool,
    ) -> Result<MoeOutput> {
        let (n, _) = g.tape.value(y).dims2()?;
        if n != grid.0 * grid.1 {
            return dim_err(format!(
                "{n} tokens do not form a {}×{} grid",
                grid.0, grid.1
            ));
        }
        let m = self.experts.len();
        let (normed, routing) = self.prepare(g, y, weather)?;
        let mut parts = Vec::with_capacity(m + 1);
        for (i, expert) in self.experts.iter().enumerate() {
            let rows: Vec<usize> = (0..n)
                .filter(|&t| routing.selected[t].contains(&i))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let x_i = g.tape.gather_rows(normed, &rows)?;
            let mut out_i = expert.ffn.forward(g, x_i)?;
            if let Some(conv) = expert.conv_branch(g, normed, grid)? {
                let c_i = g.tape.gather_rows(conv, &rows)?;
                out_i = g.tape.add(out_i, c_i)?;
            }
            let gate_i = g.tape.gather(
                routing.gates,
                rows.iter().map(|&t| t * m + i).collect(),
                [rows.len()],
            )?;
            let weighted = g.tape.scale_rows(out_i, gate_i)?;
            parts.push(g.tape.scatter_rows(weighted, &rows, n)?);
        }
        parts.push(y);
        let tokens = g.tape.add_all(&parts)?;
        let aux_loss = if want_aux {
            Some(self.balance_loss(g, &routing)?)
        } else {
            None
        };
        Ok(MoeOutput {
            tokens,
            record: RoutingRecord {
                gates: g.tape.value(routing.gates).clone(),
                selected: routing.selected,
            },
            aux_loss,
        })
    }

    /// Dense reference: every expert on every token, weighted by the gates.
    pub fn forward_dense(
        &self,
        g: &mut Graph,
        y: Var,
        weather: Option<Var>,
        grid: (usize, usize),
    ) -> Result<Var> {
        let (n, _) = g.tape.value(y).dims2()?;
        let m = self.experts.len();
        let (normed, routing) = self.prepare(g, y, weather)?;
        let mut parts = Vec::with_capacity(m + 1);
        for (i, expert) in self.experts.iter().enumerate() {
            let out = expert.forward(g, normed, grid)?;
            let col = g
                .tape
                .gather(routing.gates, (0..n).map(|t| t * m + i).collect(), [n])?;
            parts.push(g.tape.scale_rows(out, col)?);
        }
        parts.push(y);
        g.tape.add_all(&parts)
    }

    /// `M · Σ_i f_i · P_i` with `f_i` the fraction of routing slots sent to expert `i`
    /// and `P_i` the mean unmasked router probability.
    fn balance_loss(&self, g: &mut Graph, routing: &Routing) -> Result<Var> {
        let m = self.experts.len();
        let n = routing.selected.len();
        let mut frac = vec![0.0; m];
        for sel in &routing.selected {
            sel.iter()
                .for_each(|&i| frac[i] += 1.0 / (n * self.top_k) as f64);
        }
        let probs = g.tape.softmax(routing.logits, 1)?;
        let mean = g.tape.global_avg_pool(probs)?;
        let f = g.tape.constant(Tensor::new([m], frac)?);
        let prod = g.tape.mul(mean, f)?;
        let s = g.tape.sum(prod)?;
        g.tape.scale(s, m as f64)
    }

    pub fn zero_experts(&self, store: &mut ParamStore) {
        self.experts.iter().for_each(|e| e.zero(store));
    }
}
