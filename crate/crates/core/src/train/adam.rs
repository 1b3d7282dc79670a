use crate::error::{dim_err, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. `None` gradients leave their parameter and moments untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return dim_err(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    let ids: Vec<_> = params.ids().collect();
    for &id in &ids {
        if let Some(g) = &grads[id.index()] {
            let shape = params.value(id).shape();
            if g.shape() != shape
                || state.m[id.index()].shape() != shape
                || state.v[id.index()].shape() != shape
            {
                return dim_err(format!("adam: shape mismatch for {}", params.name(id)));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for id in ids {
        let Some(g) = &grads[id.index()] else {
            continue;
        };
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let p = params.value_mut(id).data_mut();
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g.data()[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g.data()[j] * g.data()[j];
            p[j] -= cfg.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x));
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = one_param(1.5);
        let mut st = AdamState::new(&s);
        adam_step(
            &mut s,
            &[Some(Tensor::scalar(0.0))],
            &mut st,
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(s.iter().next().unwrap().1.item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        for g in [3.0, -0.002, 250.0] {
            let mut s = one_param(0.0);
            let mut st = AdamState::new(&s);
            adam_step(&mut s, &[Some(Tensor::scalar(g))], &mut st, &cfg).unwrap();
            let delta = s.iter().next().unwrap().1.item();
            assert!(
                (delta + cfg.lr * f64::signum(g)).abs() < 1e-7,
                "g={g}: {delta}"
            );
        }
    }

    #[test]
    fn converges_on_a_quadratic() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        let mut s = one_param(3.0);
        let mut st = AdamState::new(&s);
        let mut x = 3.0;
        for _ in 0..500 {
            adam_step(&mut s, &[Some(Tensor::scalar(2.0 * x))], &mut st, &cfg).unwrap();
            x = s.iter().next().unwrap().1.item();
        }
        assert!(x.abs() < 1e-3, "{x}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = one_param(0.0);
        let mut st = AdamState::new(&s);
        let bad = [Some(Tensor::zeros([2]))];
        assert!(adam_step(&mut s, &bad, &mut st, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut s, &[], &mut st, &AdamConfig::default()).is_err());
    }
}
