//! Named learnable tensors and their binding into a graph.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{read_avt, write_avt, Tensor};

/// Ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) {
        if let Some(&i) = self.index.get(name) {
            self.tensors[i] = value;
            return;
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| (n.clone(), graph.param(t.clone())))
                .collect(),
        }
    }

    /// Saves one AVT1 file per parameter plus `index.txt`
    /// (`name<TAB>file<TAB>dims` per line).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = String::new();
        for (i, (name, t)) in self.iter().enumerate() {
            let file = format!("{i:03}_{name}.avt");
            write_avt(&dir.join(&file), t)?;
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            index.push_str(&format!("{name}\t{file}\t{}\n", dims.join("x")));
        }
        let path = dir.join("index.txt");
        fs::write(&path, index).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("index.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut store = ParamStore::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(
                    &path,
                    format!("line {}: expected 3 fields", lineno + 1),
                ));
            }
            let t: Tensor<T> = read_avt(&dir.join(fields[1]))?;
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            if dims.join("x") != fields[2] {
                return Err(Error::format(
                    &path,
                    format!(
                        "`{}` stored as {:?}, index says {}",
                        fields[0],
                        t.shape(),
                        fields[2]
                    ),
                ));
            }
            store.insert(fields[0], t);
        }
        Ok(store)
    }
}

/// Parameter name to graph leaf mapping for one graph instance.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    /// Pairs the store's parameter names, in order, with existing leaves.
    pub fn from_vars<T: Scalar>(store: &ParamStore<T>, vars: &[Var]) -> Result<Bound> {
        if vars.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "{} leaves for {} parameters",
                vars.len(),
                store.len()
            )));
        }
        Ok(Bound {
            vars: store
                .iter()
                .map(|(n, _)| n.to_string())
                .zip(vars.iter().copied())
                .collect(),
        })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().map(|(_, v)| *v)
    }

    /// Gradients for every bound parameter, in store order.
    pub fn collect<T: Scalar>(
        &self,
        grads: &Gradients<T>,
        store: &ParamStore<T>,
    ) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|((_, v), t)| grads.get_or_zeros(*v, t.shape()))
            .collect()
    }
}

/// Gaussian init with standard deviation `1/sqrt(fan_in)`.
pub fn init_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let sd = 1.0 / (fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, sd).expect("finite sd");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}
