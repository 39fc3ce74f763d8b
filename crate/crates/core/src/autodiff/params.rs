use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named, row-major parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    groups: Vec<ParamGroup<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { groups: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<T>) -> ParamId {
        assert_eq!(data.len(), rows * cols, "parameter data does not match shape");
        self.groups.push(ParamGroup {
            name: name.into(),
            rows,
            cols,
            data,
        });
        ParamId(self.groups.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamGroup<T> {
        &self.groups[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamGroup<T> {
        &mut self.groups[id.0]
    }

    pub fn groups(&self) -> &[ParamGroup<T>] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup<T>] {
        &mut self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.groups.iter().position(|g| g.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.groups.iter().map(|g| g.data.len()).sum()
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            groups: self
                .groups
                .iter()
                .map(|g| ParamGroup {
                    name: g.name.clone(),
                    rows: g.rows,
                    cols: g.cols,
                    data: g.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }

    /// Overwrites values from a store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.groups.len() != self.groups.len() {
            return Err(Error::Config("parameter layouts differ".into()));
        }
        for (dst, src) in self.groups.iter_mut().zip(&other.groups) {
            if dst.name != src.name || dst.data.len() != src.data.len() {
                return Err(Error::Config(format!(
                    "parameter group `{}` does not match `{}`",
                    dst.name, src.name
                )));
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }
}

/// Per-group gradient buffers laid out like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub groups: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            groups: store.groups().iter().map(|g| vec![T::zero(); g.data.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.groups[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.groups[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.groups {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn is_all_zero(&self, id: ParamId) -> bool {
        self.groups[id.0].iter().all(|v| *v == T::zero())
    }
}
