//! Named trainable parameters and their gradient accumulators.

use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::{Element, Tensor};

/// A tensor paired with a gradient accumulator of identical shape.
#[derive(Debug, Clone)]
pub struct Parameter<F> {
    name: String,
    value: Tensor<F>,
    grad: Tensor<F>,
}

impl<F: Element> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let grad = Tensor::zeros_like(&value);
        Self { name: name.into(), value, grad }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<F> {
        &self.grad
    }

    /// Mutable access to value and gradient at once.
    pub fn parts_mut(&mut self) -> (&mut Tensor<F>, &mut Tensor<F>) {
        (&mut self.value, &mut self.grad)
    }

    /// Replaces the value; the new tensor must keep the shape.
    pub fn set_value(&mut self, value: Tensor<F>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::Parameter {
                name: self.name.clone(),
                reason: format!("shape {:?} does not match {:?}", value.shape(), self.value.shape()),
            });
        }
        self.value = value;
        Ok(())
    }
}

/// Stable index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    by_name: HashMap<String, usize>,
}

/// Graph handles for every parameter of a store, valid for one [`Graph`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Parameter { name, reason: "duplicate parameter name".into() });
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter::new(name, value));
        Ok(ParamId(self.params.len() - 1))
    }

    /// Adds a parameter drawn uniformly from `[-bound, bound]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let value = Tensor::from_fn(shape, |_| F::from_f64(rng.gen_range(-bound..=bound)));
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a gradient-carrying leaf of `g`.
    pub fn bind(&self, g: &mut Graph<F>) -> Bound {
        Bound(self.params.iter().map(|p| g.variable(p.value.clone())).collect())
    }

    /// Records every parameter as a constant of `g`, for forward-only passes.
    pub fn bind_frozen(&self, g: &mut Graph<F>) -> Bound {
        Bound(self.params.iter().map(|p| g.input(p.value.clone())).collect())
    }

    /// Adds the gradients of every bound parameter into its accumulator.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients<F>) -> Result<()> {
        for (p, &var) in self.params.iter_mut().zip(&bound.0) {
            if let Some(g) = grads.get(var) {
                p.grad.add_assign(g).map_err(|_| Error::Parameter {
                    name: p.name.clone(),
                    reason: format!("gradient shape {:?} differs from value {:?}", g.shape(), p.value.shape()),
                })?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    /// Same parameters converted to another precision, with zeroed gradients.
    pub fn cast<G: Element>(&self) -> ParamStore<G> {
        ParamStore {
            params: self.params.iter().map(|p| Parameter::new(p.name.clone(), p.value.cast())).collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Snapshot of all values in store order.
    pub fn values(&self) -> Vec<Tensor<F>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }
}
