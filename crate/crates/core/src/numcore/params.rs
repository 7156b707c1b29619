//! Named parameter collections and their text checkpoint format.
//!
//! A checkpoint is UTF-8 text. The first line is `# evbench-checkpoint v1`,
//! then one line per parameter, in store order:
//!
//! ```text
//! <name> <shape> <v0> <v1> ...
//! ```
//!
//! `<shape>` is the comma-separated dimension list (`-` for a scalar) and the
//! values are the row-major entries written in shortest round-trip decimal,
//! so reading a checkpoint back reproduces every bit.

use std::fmt::Write as _;

use super::{NumError, Tensor};
use crate::scalar::Scalar;

const HEADER: &str = "# evbench-checkpoint v1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Append a parameter and return its index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let shape = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            };
            let _ = write!(out, "{} {}", name, shape);
            for v in t.data() {
                let _ = write!(out, " {}", v);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, NumError> {
        let bad = |msg: String| NumError::Checkpoint(msg);
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header line".into()));
        }
        let mut store = Self::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let name = fields
                .next()
                .ok_or_else(|| bad(format!("line {}: empty", lineno + 2)))?;
            let shape_field = fields
                .next()
                .ok_or_else(|| bad(format!("line {}: missing shape", lineno + 2)))?;
            let shape: Vec<usize> = if shape_field == "-" {
                Vec::new()
            } else {
                shape_field
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(format!("line {}: shape: {}", lineno + 2, e)))?
            };
            let values: Vec<T> = fields
                .map(|v| v.parse::<T>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(format!("line {}: unparseable value", lineno + 2)))?;
            if store.index_of(name).is_some() {
                return Err(bad(format!("duplicate parameter {}", name)));
            }
            store.insert(name, Tensor::new(shape, values)?);
        }
        Ok(store)
    }
}
