use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Named tensors in insertion order.
///
/// Used for model parameters, their gradients and optimizer moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Keeps only entries whose name satisfies `keep`, preserving order.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Self {
        let mut out = Self::new();
        for (name, t) in self.iter().filter(|(n, _)| keep(n)) {
            out.insert(name, t.clone()).expect("names are unique");
        }
        out
    }

    /// Appends every entry of `other`; names must not collide.
    pub fn extend(&mut self, other: &Params<T>) -> Result<()> {
        for (name, t) in other.iter() {
            self.insert(name, t.clone())?;
        }
        Ok(())
    }

    /// Places every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        let mut bound = Bound::default();
        for (name, t) in self.iter() {
            let v = tape.leaf(t.clone(), requires_grad);
            bound.index.insert(name.to_string(), bound.vars.len());
            bound.vars.push((name.to_string(), v));
        }
        bound
    }
}

/// Tape handles for a bound [`Params`] set.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: Vec<(String, Var)>,
    index: HashMap<String, usize>,
}

impl Bound {
    /// Binds names to existing tape variables, e.g. inputs of a gradient
    /// check.
    pub fn from_vars<'a>(pairs: impl IntoIterator<Item = (&'a str, Var)>) -> Result<Self> {
        let mut bound = Self::default();
        for (name, v) in pairs {
            if bound.index.contains_key(name) {
                return Err(AutodiffError::DuplicateParam(name.to_string()));
            }
            bound.index.insert(name.to_string(), bound.vars.len());
            bound.vars.push((name.to_string(), v));
        }
        Ok(bound)
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i].1)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    /// Collects the gradients that reached bound parameters after
    /// `tape.backward`. Parameters the loss does not depend on are omitted.
    pub fn gradients<T: Real>(&self, tape: &Tape<T>) -> Params<T> {
        let mut out = Params::new();
        for (name, v) in &self.vars {
            if let Some(g) = tape.grad(*v) {
                out.insert(name.clone(), g.clone()).expect("names are unique");
            }
        }
        out
    }
}
