use super::{Tape, Tensor, TensorError, Var};

/// A named trainable tensor and its most recent gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered parameter registry shared by all model components.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Tape handles for every parameter of a store, in registration order.
#[derive(Debug, Clone)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    /// Wraps handles already on a tape, one per parameter in registration
    /// order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), TensorError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::ParamShape {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Puts every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings(
            self.params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        )
    }

    /// Puts every parameter on `tape` as a constant (evaluation only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bindings {
        Bindings(
            self.params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        )
    }

    /// Copies gradients from `tape` after `backward`. Parameters the loss did
    /// not reach get `None`.
    pub fn collect_grads(&mut self, tape: &Tape, bindings: &Bindings) {
        for (p, &v) in self.params.iter_mut().zip(&bindings.0) {
            p.grad = tape.grad(v).cloned();
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Snapshot as `(name, tensor)` pairs, for checkpointing.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Overwrites every parameter from `tensors`. Names must match exactly and
    /// shapes must agree.
    pub fn load_named(&mut self, tensors: Vec<(String, Tensor)>) -> Result<(), LoadError> {
        if tensors.len() != self.params.len() {
            let missing = self
                .params
                .iter()
                .find(|p| !tensors.iter().any(|(n, _)| *n == p.name));
            if let Some(p) = missing {
                return Err(LoadError::Missing(p.name.clone()));
            }
            let extra = tensors
                .iter()
                .find(|(n, _)| self.id(n).is_none())
                .map(|(n, _)| n.clone())
                .unwrap_or_default();
            return Err(LoadError::Unexpected(extra));
        }
        let mut staged = Vec::with_capacity(tensors.len());
        for (name, t) in tensors {
            let id = self
                .id(&name)
                .ok_or_else(|| LoadError::Unexpected(name.clone()))?;
            let expected = self.get(id).shape();
            if expected != t.shape() {
                return Err(LoadError::Shape {
                    name,
                    expected: expected.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            staged.push((id, t));
        }
        for (id, t) in staged {
            self.params[id.0].value = t;
            self.params[id.0].grad = None;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LoadError {
    #[error("checkpoint lacks tensor {0}")]
    Missing(String),
    #[error("checkpoint has unexpected tensor {0}")]
    Unexpected(String),
    #[error("tensor {name}: model expects shape {expected:?}, checkpoint has {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}
