use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Handle to a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors, in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics if `name` is already taken; names are generated by model constructors.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn add_randn<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        self.add(name, Tensor::randn(shape.to_vec(), std, rng))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces every value with the same-named tensor from `entries`, which must cover
    /// exactly this store's names and shapes.
    pub fn assign(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                self.len(),
                entries.len()
            )));
        }
        let mut fresh = vec![None; self.len()];
        for (name, value) in entries {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            if value.shape() != self.values[id.0].shape() {
                return dim_err(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    self.values[id.0].shape()
                ));
            }
            fresh[id.0] = Some(value);
        }
        for (slot, value) in self.values.iter_mut().zip(fresh) {
            *slot = value.ok_or_else(|| Error::Format("duplicate parameter entry".into()))?;
        }
        Ok(())
    }
}

/// One forward pass: a tape plus lazily bound parameter leaves.
pub struct Graph<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
    trainable: Vec<bool>,
}

impl<'p> Graph<'p> {
    /// Every parameter receives a gradient.
    pub fn new(store: &'p ParamStore) -> Self {
        Self::with_trainable(store, |_| true)
    }

    /// No parameter receives a gradient.
    pub fn inference(store: &'p ParamStore) -> Self {
        Self::with_trainable(store, |_| false)
    }

    pub fn with_trainable(store: &'p ParamStore, trainable: impl Fn(&str) -> bool) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            trainable: store.names.iter().map(|n| trainable(n)).collect(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self
            .tape
            .leaf(self.store.value(id).clone(), self.trainable[id.0]);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    /// Gradients indexed by parameter id; `None` for frozen parameters.
    /// Trainable parameters that were never used get zeros.
    pub fn param_grads(&self) -> Vec<Option<Tensor>> {
        (0..self.bound.len())
            .map(|i| {
                if !self.trainable[i] {
                    return None;
                }
                Some(match self.bound[i] {
                    Some(v) => self
                        .tape
                        .grad(v)
                        .unwrap_or_else(|| Tensor::zeros(self.store.values[i].shape().to_vec())),
                    None => Tensor::zeros(self.store.values[i].shape().to_vec()),
                })
            })
            .collect()
    }
}
