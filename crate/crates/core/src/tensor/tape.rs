use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x[..×m] + b[m]`
    AddBias(Var, Var),
    /// `x[n×d] * s[n]`, one scale per row.
    ScaleRows(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    TopKMask {
        x: Var,
        keep: Vec<bool>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    /// Mean over rows: `[n×d] -> [d]`.
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    L1(Var, Var),
    Mse(Var, Var),
    Reshape(Var),
    /// `out[i] = x[index[i]]`
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    /// `out[rows[r], :] += x[r, :]`
    ScatterRows {
        x: Var,
        rows: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        widths: Vec<usize>,
        outer: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records forward ops in execution order; [`Tape::backward`] replays them in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, or `None` if no backward pass has reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        Ok(self.push_unchecked(value, inputs, op))
    }

    fn push_unchecked(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return dim_err(format!(
                "matmul inner dimensions differ: [{n}×{k}] · [{k2}×{m}]"
            ));
        }
        let mut out = vec![0.0; n * m];
        kernels::matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            n,
            k,
            m,
        );
        self.push(
            Tensor::new([n, m], out)?,
            &[a, b],
            Op::MatMul(a, b),
            "matmul",
        )
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        name: &str,
    ) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, &[a, b], op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    /// Sums several same-shaped values.
    pub fn add_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::Usage("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &p| self.add(acc, p))
    }

    /// Adds `bias[m]` to every length-`m` row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let m = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [m] {
            return dim_err(format!(
                "bias shape {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(x)
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(m) {
            row.iter_mut().zip(&b).for_each(|(v, bv)| *v += bv);
        }
        self.push(out, &[x, bias], Op::AddBias(x, bias), "add_bias")
    }

    /// Multiplies row `i` of `x[n×d]` by `s[i]`; `s` has shape `[n]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if self.value(s).len() != n {
            return dim_err(format!(
                "scale_rows: {} scales for {n} rows",
                self.value(s).len()
            ));
        }
        let sv = self.value(s).data().to_vec();
        let mut out = self.value(x).clone();
        for (row, &k) in out.data_mut().chunks_mut(d).zip(&sv) {
            row.iter_mut().for_each(|v| *v *= k);
        }
        self.push(out, &[x, s], Op::ScaleRows(x, s), "scale_rows")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push(out, &[x], Op::Scale(x, c), "scale")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(kernels::gelu);
        self.push(out, &[x], Op::Gelu(x), "gelu")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, &[x], Op::Relu(x), "relu")
    }

    /// Max-subtracted softmax along `axis`. Entries equal to `-inf` get weight 0.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return dim_err(format!("softmax axis {axis} out of range for {shape:?}"));
        }
        let len = shape[axis];
        if len == 0 {
            return dim_err("softmax over an empty axis");
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len)
                    .map(|j| xv[at(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (xv[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            &[x],
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            "softmax",
        )
    }

    /// Keeps the `k` largest entries of each last-axis row and sets the rest to `-inf`.
    /// Ties go to the lowest index. Gradients pass through kept entries only.
    pub fn top_k_mask(&mut self, x: Var, k: usize) -> Result<Var> {
        let m = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::Dimension("top_k_mask on a scalar".into()))?;
        if k == 0 || k > m {
            return Err(Error::Parameter(format!(
                "top-k needs 1 <= k <= {m}, got k = {k}"
            )));
        }
        let mut out = self.value(x).clone();
        let mut keep = vec![false; out.len()];
        for (row, krow) in out.data_mut().chunks_mut(m).zip(keep.chunks_mut(m)) {
            for j in top_k_indices(row, k) {
                krow[j] = true;
            }
            for (v, &kp) in row.iter_mut().zip(krow.iter()) {
                if !kp {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        Ok(self.push_unchecked(out, &[x], Op::TopKMask { x, keep }))
    }

    /// Zero-padded cross-correlation of `x[C_in×H×W]` with `w[C_out×C_in/groups×kh×kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let (c_in, h, wd) = self.value(x).dims3()?;
        let (c_out, cin_g, kh, kw) = match self.shape(w)[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => return dim_err(format!("conv weight must be 4-d, got {:?}", self.shape(w))),
        };
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return dim_err(format!(
                "groups {groups} must divide C_in {c_in} and C_out {c_out}"
            ));
        }
        if cin_g != c_in / groups {
            return dim_err(format!(
                "conv weight expects {cin_g} input channels per group, input gives {}",
                c_in / groups
            ));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv stride must be positive".into()));
        }
        if kh > h + 2 * padding || kw > wd + 2 * padding {
            return dim_err(format!(
                "kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * padding,
                wd + 2 * padding
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return dim_err(format!(
                    "conv bias shape {:?}, expected [{c_out}]",
                    self.shape(b)
                ));
            }
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            stride,
            padding,
            groups,
            h_out: (h + 2 * padding - kh) / stride + 1,
            w_out: (wd + 2 * padding - kw) / stride + 1,
        };
        let mut out = vec![0.0; c_out * geom.h_out * geom.w_out];
        kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let out = Tensor::new([c_out, geom.h_out, geom.w_out], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.push(
            out,
            &inputs,
            Op::Conv2d {
                x,
                w,
                b: bias,
                geom,
            },
            "conv2d",
        )
    }

    /// Normalizes each last-axis row to zero mean and unit variance, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::Dimension("layer_norm on a scalar".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return dim_err(format!("layer_norm affine params must have shape [{d}]"));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let rows = xv.len() / d.max(1);
        let mut rstd = Vec::with_capacity(rows);
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            out,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            "layer_norm",
        )
    }

    /// Global average pooling of tokens: `[n×d] -> [d]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if n == 0 {
            return dim_err("global_avg_pool over zero tokens");
        }
        let mut out = vec![0.0; d];
        for row in self.value(x).data().chunks(d) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        self.push(
            Tensor::new([d], out)?,
            &[x],
            Op::MeanRows(x),
            "global_avg_pool",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), &[x], Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).mean();
        self.push(Tensor::scalar(v), &[x], Op::Mean(x), "mean")
    }

    /// Mean cross-entropy of `logits[b×c]` (or `[c]`) against class `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let (b, c) = match shape[..] {
            [c] => (1, c),
            [b, c] => (b, c),
            _ => {
                return dim_err(format!(
                    "cross_entropy logits must be 1-d or 2-d, got {shape:?}"
                ))
            }
        };
        if labels.len() != b {
            return dim_err(format!("{} labels for {b} rows of logits", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return dim_err(format!("label {bad} out of range for {c} classes"));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for r in 0..b {
            let row = &lv[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + total.ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[labels[r]];
        }
        let out = Tensor::scalar(loss / b as f64);
        self.push(
            out,
            &[logits],
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            "cross_entropy",
        )
    }

    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1_loss")?;
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        self.push(Tensor::scalar(s / n), &[a, b], Op::L1(a, b), "l1_loss")
    }

    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse_loss")?;
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push(Tensor::scalar(s / n), &[a, b], Op::Mse(a, b), "mse_loss")
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push_unchecked(out, &[x], Op::Reshape(x)))
    }

    /// `out[i] = x.flat[index[i]]`, shaped as `shape`.
    pub fn gather(
        &mut self,
        x: Var,
        index: Vec<usize>,
        shape: impl Into<Vec<usize>>,
    ) -> Result<Var> {
        let xv = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.len()) {
            return dim_err(format!(
                "gather index {bad} out of range for {} values",
                xv.len()
            ));
        }
        let out = Tensor::new(shape, index.iter().map(|&i| xv[i]).collect())?;
        Ok(self.push_unchecked(out, &[x], Op::Gather { x, index }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let index = (0..c)
            .flat_map(|j| (0..r).map(move |i| i * c + j))
            .collect();
        self.gather(x, index, [c, r])
    }

    /// Rows `rows` of `x[n×d]`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return dim_err(format!("row {bad} out of range for {n} rows"));
        }
        let index = rows
            .iter()
            .flat_map(|&r| (0..d).map(move |j| r * d + j))
            .collect();
        self.gather(x, index, [rows.len(), d])
    }

    /// Columns `start..end` of `x[n×d]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if start > end || end > d {
            return dim_err(format!(
                "column range {start}..{end} out of range for width {d}"
            ));
        }
        let index = (0..n)
            .flat_map(|i| (start..end).map(move |j| i * d + j))
            .collect();
        self.gather(x, index, [n, end - start])
    }

    /// Places row `r` of `x[k×d]` at row `rows[r]` of a zero `[n×d]` output, summing collisions.
    pub fn scatter_rows(&mut self, x: Var, rows: &[usize], n: usize) -> Result<Var> {
        let (k, d) = self.value(x).dims2()?;
        if rows.len() != k {
            return dim_err(format!("scatter_rows: {} targets for {k} rows", rows.len()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return dim_err(format!("scatter row {bad} out of range for {n} rows"));
        }
        let mut out = vec![0.0; n * d];
        for (src, &r) in self.value(x).data().chunks(d).zip(rows) {
            out[r * d..(r + 1) * d]
                .iter_mut()
                .zip(src)
                .for_each(|(o, v)| *o += v);
        }
        let out = Tensor::new([n, d], out)?;
        Ok(self.push_unchecked(
            out,
            &[x],
            Op::ScatterRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Concatenates along the last axis; all leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of nothing".into()))?;
        let lead = self.shape(*first);
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return dim_err(format!(
                    "concat: shape {s:?} does not match leading dims {lead:?}"
                ));
            }
            widths.push(s[s.len() - 1]);
        }
        let outer: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, out)?;
        Ok(self.push_unchecked(
            out,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
                outer,
            },
        ))
    }

    /// Reverse-mode pass from a scalar `loss`.
    ///
    /// Gradients are added to whatever the nodes already hold, so calling this twice without
    /// [`Tape::zero_grad`] doubles them. Every node that requires a gradient ends up with one,
    /// zero if the loss does not depend on it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if !node.requires_grad {
                continue;
            }
            let acc = node.grad.get_or_insert_with(|| vec![0.0; node.value.len()]);
            if let Some(g) = g {
                acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
            }
        }
        for node in self.nodes.iter_mut().skip(loss.0 + 1) {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.nodes[a.0].value.dims2().unwrap();
                let m = self.nodes[b.0].value.shape()[1];
                acc(*a, &mut |ga| {
                    kernels::matmul_nt_acc(g, val(*b), ga, n, m, k)
                });
                acc(*b, &mut |gb| {
                    kernels::matmul_tn_acc(val(*a), g, gb, n, k, m)
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v)
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j] * vb[j];
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..g.len() {
                        gb[j] += g[j] * va[j];
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let m = self.nodes[b.0].value.len();
                acc(*b, &mut |gb| {
                    for row in g.chunks(m) {
                        add_into(gb, row);
                    }
                });
            }
            Op::ScaleRows(x, s) => {
                let sv = val(*s);
                let d = self.nodes[x.0].value.shape()[1];
                acc(*x, &mut |gx| {
                    for (r, (gr, gi)) in gx.chunks_mut(d).zip(g.chunks(d)).enumerate() {
                        gr.iter_mut().zip(gi).for_each(|(o, v)| *o += v * sv[r]);
                    }
                });
                let xv = val(*x);
                acc(*s, &mut |gs| {
                    for (r, (xr, gi)) in xv.chunks(d).zip(g.chunks(d)).enumerate() {
                        gs[r] += xr.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |gx| {
                gx.iter_mut().zip(g).for_each(|(o, v)| *o += c * v)
            }),
            Op::Gelu(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for j in 0..g.len() {
                        gx[j] += g[j] * kernels::gelu_grad(xv[j]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for j in 0..g.len() {
                        if xv[j] > 0.0 {
                            gx[j] += g[j];
                        }
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = self.nodes[i].value.data();
                let (outer, len, inner) = (*outer, *len, *inner);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for q in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + q;
                            let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::TopKMask { x, keep } => acc(*x, &mut |gx| {
                for j in 0..g.len() {
                    if keep[j] {
                        gx[j] += g[j];
                    }
                }
            }),
            Op::Conv2d { x, w, b, geom } => {
                let gx = if needs(*x) {
                    Some(vec![0.0; val(*x).len()])
                } else {
                    None
                };
                let gw = if needs(*w) {
                    Some(vec![0.0; val(*w).len()])
                } else {
                    None
                };
                let gb = match b {
                    Some(b) if needs(*b) => Some(vec![0.0; val(*b).len()]),
                    _ => None,
                };
                let (mut gx, mut gw, mut gb) = (gx, gw, gb);
                kernels::conv2d_backward(
                    geom,
                    val(*x),
                    val(*w),
                    g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(d) = gx {
                    acc(*x, &mut |t| add_into(t, &d));
                }
                if let Some(d) = gw {
                    acc(*w, &mut |t| add_into(t, &d));
                }
                if let (Some(b), Some(d)) = (b, gb) {
                    acc(*b, &mut |t| add_into(t, &d));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gm = val(*gamma);
                let d = gm.len();
                acc(*beta, &mut |gb| {
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (row, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += row[j] * xr[j];
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, ((row, xr), gxr)) in g
                        .chunks(d)
                        .zip(xhat.chunks(d))
                        .zip(gx.chunks_mut(d))
                        .enumerate()
                    {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let dxh = row[j] * gm[j];
                            m1 += dxh;
                            m2 += dxh * xr[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            let dxh = row[j] * gm[j];
                            gxr[j] += rstd[r] * (dxh - m1 - xr[j] * m2);
                        }
                    }
                });
            }
            Op::MeanRows(x) => {
                let n = self.nodes[x.0].value.shape()[0] as f64;
                let d = g.len();
                acc(*x, &mut |gx| {
                    for row in gx.chunks_mut(d) {
                        row.iter_mut().zip(g).for_each(|(o, v)| *o += v / n);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                acc(*logits, &mut |gl| {
                    for r in 0..b {
                        for j in 0..c {
                            let target = if j == labels[r] { 1.0 } else { 0.0 };
                            gl[r * c + j] += g[0] * (probs[r * c + j] - target) / b as f64;
                        }
                    }
                });
            }
            Op::L1(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let n = va.len() as f64;
                let sign = |j: usize| {
                    let d = va[j] - vb[j];
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                acc(*a, &mut |ga| {
                    (0..ga.len()).for_each(|j| ga[j] += g[0] * sign(j) / n)
                });
                acc(*b, &mut |gb| {
                    (0..gb.len()).for_each(|j| gb[j] -= g[0] * sign(j) / n)
                });
            }
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let n = va.len() as f64;
                acc(*a, &mut |ga| {
                    (0..ga.len()).for_each(|j| ga[j] += g[0] * 2.0 * (va[j] - vb[j]) / n)
                });
                acc(*b, &mut |gb| {
                    (0..gb.len()).for_each(|j| gb[j] -= g[0] * 2.0 * (va[j] - vb[j]) / n)
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Gather { x, index } => acc(*x, &mut |gx| {
                for (o, &src) in index.iter().enumerate() {
                    gx[src] += g[o];
                }
            }),
            Op::ScatterRows { x, rows } => {
                let d = self.nodes[x.0].value.shape()[1];
                acc(*x, &mut |gx| {
                    for (r, &dst) in rows.iter().enumerate() {
                        for j in 0..d {
                            gx[r * d + j] += g[dst * d + j];
                        }
                    }
                });
            }
            Op::Concat {
                parts,
                widths,
                outer,
            } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    acc(p, &mut |gp| {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + w];
                            add_into(&mut gp[o * w..(o + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Indices of the `k` largest values, lowest index first among ties.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}
