use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{Real, Tensor};
use crate::codec::fnv1a64;
use crate::error::{Error, Result};

/// Version tag folded into every layout hash. Bump when the layer order changes.
const LAYOUT_VERSION: &[u8] = b"fedcbmir-layout-v1";

/// 64-bit fingerprint of a [`ParamLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayoutId(pub u64);

impl fmt::Display for LayoutId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered `(name, shape)` list describing how a flat weight vector splits into tensors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let spec = ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += spec.len();
        self.specs.push(spec);
        self.specs.len() - 1
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn id(&self) -> LayoutId {
        let mut bytes = Vec::from(LAYOUT_VERSION);
        for spec in &self.specs {
            bytes.extend_from_slice(spec.name.as_bytes());
            bytes.push(0);
            for &d in &spec.shape {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            bytes.push(0xff);
        }
        LayoutId(fnv1a64(&bytes))
    }

    /// Name of the parameter owning flat index `i`.
    pub fn owner(&self, i: usize) -> Option<&str> {
        self.specs
            .iter()
            .find(|s| i >= s.offset && i < s.offset + s.len())
            .map(|s| s.name.as_str())
    }

    pub fn split<T: Real>(&self, flat: &[T]) -> Result<Vec<Tensor<T>>> {
        if flat.len() != self.total {
            return Err(Error::dim("layout split", &[self.total], &[flat.len()]));
        }
        Ok(self
            .specs
            .iter()
            .map(|s| Tensor::from_parts(s.shape.clone(), flat[s.offset..s.offset + s.len()].to_vec()))
            .collect())
    }

    pub fn flatten<T: Real>(&self, tensors: &[Tensor<T>]) -> Result<Vec<T>> {
        if tensors.len() != self.specs.len() {
            return Err(Error::dim("layout flatten", &[self.specs.len()], &[tensors.len()]));
        }
        let mut out = Vec::with_capacity(self.total);
        for (spec, t) in self.specs.iter().zip(tensors) {
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::dim("layout flatten", &spec.shape, t.shape()));
            }
            out.extend_from_slice(t.data());
        }
        Ok(out)
    }
}

/// Flat parameter vector tagged with the layout it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub layout_id: LayoutId,
    pub values: Vec<T>,
}

impl<T: Real> ModelWeights<T> {
    pub fn new(layout_id: LayoutId, values: Vec<T>) -> Self {
        ModelWeights { layout_id, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        ModelWeights {
            layout_id: self.layout_id,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn ensure_layout(&self, layout: &ParamLayout) -> Result<()> {
        if self.layout_id != layout.id() {
            return Err(Error::Config(alloc::format!(
                "weights belong to layout {}, model expects {}",
                self.layout_id,
                layout.id()
            )));
        }
        if self.values.len() != layout.total_len() {
            return Err(Error::dim("weights", &[layout.total_len()], &[self.values.len()]));
        }
        Ok(())
    }
}
