use alloc::vec;
use alloc::vec::Vec;

use super::{Layout, MAX_FIELD_NODES};
use crate::error::{Error, Result};

/// Per-layer node data with a fixed number of values per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T = f64> {
    width: usize,
    layers: Vec<Vec<T>>,
}

impl<T: Copy + Default> Field<T> {
    /// Zero field over layers `0..layers` of `layout`.
    pub fn zeros(layout: &Layout, width: usize, layers: usize) -> Result<Self> {
        let nodes = layout.total_nodes(layers);
        if nodes > MAX_FIELD_NODES {
            return Err(Error::Capacity {
                what: "stored field nodes",
                value: nodes,
                cap: MAX_FIELD_NODES,
            });
        }
        Ok(Self {
            width,
            layers: (0..layers)
                .map(|k| vec![T::default(); layout.layer_len(k) * width])
                .collect(),
        })
    }
}

impl<T> Field<T> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, k: usize) -> &[T] {
        &self.layers[k]
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.layers[k]
    }

    /// Layer `k` mutably together with layer `k + 1`.
    pub(crate) fn pair_mut(&mut self, k: usize) -> (&mut [T], &[T]) {
        let (head, tail) = self.layers.split_at_mut(k + 1);
        (&mut head[k], &tail[0])
    }

    #[inline]
    pub fn get(&self, k: usize, node: usize) -> &[T] {
        &self.layers[k][node * self.width..(node + 1) * self.width]
    }

    #[inline]
    pub fn get_mut(&mut self, k: usize, node: usize) -> &mut [T] {
        let w = self.width;
        &mut self.layers[k][node * w..(node + 1) * w]
    }
}

impl Field<f64> {
    /// `self − other`, layer by layer.
    pub fn sub(&self, other: &Field) -> Result<Field> {
        if self.width != other.width || self.layers.len() != other.layers.len() {
            return Err(Error::Dimension {
                what: "field shapes",
                expected: self.width * self.layers.len(),
                found: other.width * other.layers.len(),
            });
        }
        Ok(Field {
            width: self.width,
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        })
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    /// Squared Euclidean norm of the values at one node.
    #[inline]
    pub fn norm_sq(&self, k: usize, node: usize) -> f64 {
        self.get(k, node).iter().map(|v| v * v).sum()
    }
}

/// Conditional sublinear expectation `V[k][x]` with the maximising
/// scenario-grid index at every node and component.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioField {
    pub layout: Layout,
    pub values: Field,
    /// Defined for layers `0..N`.
    pub policy: Field<u32>,
}

impl ScenarioField {
    pub fn components(&self) -> usize {
        self.values.width()
    }

    /// `V[0]` at the origin.
    pub fn root(&self) -> &[f64] {
        self.values.get(0, self.layout.origin())
    }
}
