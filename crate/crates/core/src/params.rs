//! Flat parameter storage with a named-tensor layout.
//!
//! All trainable parameters live in one `Vec<f64>`. The layout maps tensor
//! names to (shape, offset) so the optimizer can treat the model as a single
//! vector, checkpoints can list tensors by name, and finite-difference checks
//! can perturb a single coordinate without knowing what it belongs to.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Handle to one named tensor inside a [`ParamLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Immutable description of a parameter vector: an ordered list of named
/// tensors with shapes and offsets.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    specs: Vec<TensorSpec>,
    by_name: BTreeMap<String, usize>,
    total: usize,
}

impl ParamLayout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder {
            layout: ParamLayout::default(),
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, id: ParamId) -> &TensorSpec {
        &self.specs[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn slice<'a>(&self, data: &'a [f64], id: ParamId) -> &'a [f64] {
        let s = &self.specs[id.0];
        &data[s.offset..s.offset + s.len()]
    }

    pub fn slice_mut<'a>(&self, data: &'a mut [f64], id: ParamId) -> &'a mut [f64] {
        let s = &self.specs[id.0];
        &mut data[s.offset..s.offset + s.len()]
    }

    /// Two distinct tensors of the same buffer, borrowed mutably at once
    /// (e.g. a layer's weight and bias gradients during backprop).
    pub fn slice_pair_mut<'a>(
        &self,
        data: &'a mut [f64],
        a: ParamId,
        b: ParamId,
    ) -> (&'a mut [f64], &'a mut [f64]) {
        assert_ne!(a.0, b.0, "tensors must be distinct");
        let (sa, sb) = (&self.specs[a.0], &self.specs[b.0]);
        if sa.offset < sb.offset {
            let (left, right) = data.split_at_mut(sb.offset);
            (
                &mut left[sa.offset..sa.offset + sa.len()],
                &mut right[..sb.len()],
            )
        } else {
            let (left, right) = data.split_at_mut(sa.offset);
            (
                &mut right[..sa.len()],
                &mut left[sb.offset..sb.offset + sb.len()],
            )
        }
    }
}

pub struct LayoutBuilder {
    layout: ParamLayout,
}

impl LayoutBuilder {
    /// Register a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let name = name.into();
        assert!(
            !self.layout.by_name.contains_key(&name),
            "duplicate tensor name {name}"
        );
        let len: usize = shape.iter().product();
        let spec = TensorSpec {
            name: name.clone(),
            shape: shape.to_vec(),
            offset: self.layout.total,
        };
        let idx = self.layout.specs.len();
        self.layout.by_name.insert(name, idx);
        self.layout.specs.push(spec);
        self.layout.total += len;
        ParamId(idx)
    }

    pub fn build(self) -> ParamLayout {
        self.layout
    }
}
