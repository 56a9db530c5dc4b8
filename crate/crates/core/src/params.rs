//! Named, ordered parameter storage with stable flat indexing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One named parameter tensor and its position in the flat index space.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    name: String,
    tensor: Tensor,
    offset: usize,
}

impl ParamEntry {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    /// First flat index owned by this entry.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.tensor.len()
    }
}

/// Name and shape of an entry, without values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntryLayout {
    pub name: String,
    pub shape: Vec<usize>,
}

impl EntryLayout {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered collection of named parameter tensors.
///
/// Entries occupy contiguous, disjoint ranges of a flat index space
/// `[0, K)` in insertion order. Appending never renumbers existing entries.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::DuplicateName(name));
        }
        let offset = self.total;
        self.total += tensor.len();
        self.entries.push(ParamEntry {
            name,
            tensor,
            offset,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entry(name).map(|e| &e.tensor)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Replaces the values of an existing entry; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))?;
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::Dimension(format!(
                "parameter `{name}` has shape {:?}, replacement has {:?}",
                entry.tensor.shape(),
                tensor.shape()
            )));
        }
        entry.tensor = tensor;
        Ok(())
    }

    pub fn values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| e.tensor.data_mut())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Total number of scalar parameters `K`.
    pub fn num_params(&self) -> usize {
        self.total
    }

    pub fn layout(&self) -> Vec<EntryLayout> {
        self.entries
            .iter()
            .map(|e| EntryLayout {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
            })
            .collect()
    }

    /// All values concatenated in flat-index order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total);
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
        out
    }

    /// Maps a flat index to `(entry name, offset within entry)`.
    pub fn locate(&self, index: usize) -> Option<(&str, usize)> {
        self.entries
            .iter()
            .find(|e| e.range().contains(&index))
            .map(|e| (e.name.as_str(), index - e.offset))
    }

    pub fn flat_value(&self, index: usize) -> Option<f64> {
        self.locate(index)
            .and_then(|(name, off)| self.get(name).map(|t| t.data()[off]))
    }

    pub(crate) fn set_flat_value(&mut self, index: usize, value: f64) {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.range().contains(&index))
            .expect("flat index in range");
        let off = index - entry.offset;
        entry.tensor.data_mut()[off] = value;
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bits_eq(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.tensor.bits_eq(&b.tensor))
    }
}
