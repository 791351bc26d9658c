//! Named parameter collections and their binding onto an autodiff graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{GimmError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Fixed entries (e.g. a frozen random projection) are stored and
    /// checkpointed but never updated.
    pub trainable: bool,
}

/// Ordered list of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        let name = name.into();
        debug_assert!(self.index(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable });
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index(name).map(move |i| &mut self.entries[i].value)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.all_finite())
    }

    /// Checks that `self` has exactly the names and shapes of `other`.
    pub fn expect_layout(&self, other: &ParamSet, what: &str) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(GimmError::ShapeMismatch(format!(
                "{what}: {} parameters, expected {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(GimmError::ShapeMismatch(format!(
                    "{what}: parameter {} {:?}, expected {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Places every entry on `g`. Trainable entries become gradient leaves
    /// when `track` is set, everything else is a constant.
    pub fn bind(&self, g: &mut Graph, track: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if track && e.trainable {
                    g.param(e.value.clone())
                } else {
                    g.constant(e.value.clone())
                }
            })
            .collect();
        Bound {
            names: self.entries.iter().map(|e| e.name.clone()).collect(),
            vars,
        }
    }
}

/// A [`ParamSet`] placed on a graph.
pub struct Bound {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"));
        self.vars[i]
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).unwrap()
}

/// 3×3 conv weights and bias with fan-in-scaled uniform init.
pub(crate) fn push_conv(set: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) {
    let bound = 1.0 / ((9 * cin) as f64).sqrt();
    set.push(format!("{name}.w"), uniform(rng, &[9 * cin, cout], bound), true);
    set.push(format!("{name}.b"), uniform(rng, &[cout], bound), true);
}

/// Dense weights `[cin, cout]` and bias with fan-in-scaled uniform init.
pub(crate) fn push_linear(set: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, trainable: bool) {
    let bound = 1.0 / (cin as f64).sqrt();
    set.push(format!("{name}.w"), uniform(rng, &[cin, cout], bound), trainable);
    set.push(format!("{name}.b"), uniform(rng, &[cout], bound), trainable);
}
