//! Named parameter storage and binding onto a tape.

use std::cell::RefCell;
use std::collections::HashMap;

use indexmap::IndexMap;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Dotted parameter path to tensor, in canonical order.
pub type ParamTable<T> = IndexMap<String, Tensor<T>>;

pub fn cast_table<T: Real, U: Real>(table: &ParamTable<T>) -> ParamTable<U> {
    table.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
}

/// Lazily turns table entries into tape leaves, one leaf per parameter.
pub struct Binder<'a, T: Real> {
    tape: &'a Tape<T>,
    table: &'a ParamTable<T>,
    bound: RefCell<HashMap<String, Var<T>>>,
}

impl<'a, T: Real> Binder<'a, T> {
    pub fn new(tape: &'a Tape<T>, table: &'a ParamTable<T>) -> Self {
        Binder {
            tape,
            table,
            bound: RefCell::new(HashMap::new()),
        }
    }

    pub fn tape(&self) -> &'a Tape<T> {
        self.tape
    }

    pub fn contains(&self, name: &str) -> bool {
        self.table.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<Var<T>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(v.clone());
        }
        let t = self
            .table
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        let v = self.tape.param(name, t.clone());
        self.bound.borrow_mut().insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn scope(&self, prefix: impl Into<String>) -> Scope<'_, 'a, T> {
        Scope {
            binder: self,
            prefix: prefix.into(),
        }
    }
}

/// A [`Binder`] view under a dotted prefix.
pub struct Scope<'b, 'a, T: Real> {
    binder: &'b Binder<'a, T>,
    prefix: String,
}

impl<'b, 'a, T: Real> Scope<'b, 'a, T> {
    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<T>> {
        self.binder.get(&self.full(name))
    }

    pub fn try_get(&self, name: &str) -> Result<Option<Var<T>>> {
        let full = self.full(name);
        if self.binder.contains(&full) {
            self.binder.get(&full).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn scope(&self, name: &str) -> Scope<'b, 'a, T> {
        Scope {
            binder: self.binder,
            prefix: self.full(name),
        }
    }

    pub fn tape(&self) -> &'a Tape<T> {
        self.binder.tape
    }
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-bound, bound)`.
    Uniform(f64),
    Const(f64),
    Normal(f64),
    /// `ln(n + 1)` along the trailing (state) axis, S4D-real style.
    S4dRealLog,
    /// Softplus-inverse of `exp(U(ln min, ln max))`.
    DtBias { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Draws every parameter in `specs` order from `rng`.
pub fn materialize<T: Real>(specs: &[ParamSpec], rng: &mut impl rand::Rng) -> ParamTable<T> {
    use rand_distr::{Distribution, StandardNormal};
    let mut table = ParamTable::new();
    for spec in specs {
        let n = spec.numel();
        let last = spec.shape.last().copied().unwrap_or(1).max(1);
        let data: Vec<f64> = match spec.init {
            Init::Uniform(b) => (0..n).map(|_| rng.gen_range(-b..=b)).collect(),
            Init::Const(c) => vec![c; n],
            Init::Normal(s) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * s
                })
                .collect(),
            Init::S4dRealLog => (0..n).map(|i| ((i % last) as f64 + 1.0).ln()).collect(),
            Init::DtBias { min, max } => (0..n)
                .map(|_| {
                    let dt = rng.gen_range(min.ln()..max.ln()).exp().max(1e-4);
                    // inverse softplus
                    dt + (-(-dt).exp_m1()).ln()
                })
                .collect(),
        };
        let t = Tensor::from_vec(&spec.shape, data.into_iter().map(T::lit).collect()).expect("spec shape");
        table.insert(spec.name.clone(), t);
    }
    table
}
