//! Flat parameter-vector arithmetic shared by the local trainer and the
//! server-side aggregators.
//!
//! Every vector carries the layout of the model it came from. Operations that
//! combine vectors refuse to mix layouts, so a delta from one architecture can
//! never be folded into another model by accident.

use std::sync::Arc;

use crate::error::{FedError, Result};

/// Ordered `(tensor name, shape)` pairs describing how a flat vector maps onto
/// model tensors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Layout {
    tensors: Vec<(String, Vec<usize>)>,
}

impl Layout {
    pub fn new<S: Into<String>>(tensors: impl IntoIterator<Item = (S, Vec<usize>)>) -> Self {
        Self {
            tensors: tensors
                .into_iter()
                .map(|(name, shape)| (name.into(), shape))
                .collect(),
        }
    }

    /// Single unnamed tensor of `len` elements. Handy for tests and scalar
    /// experiments.
    pub fn flat(len: usize) -> Self {
        Self::new([("flat", vec![len])])
    }

    pub fn tensors(&self) -> &[(String, Vec<usize>)] {
        &self.tensors
    }

    /// Total element count implied by the layout.
    pub fn num_elements(&self) -> usize {
        self.tensors
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }

    /// Offset and length of the named tensor inside the flat vector.
    pub fn span(&self, name: &str) -> Option<(usize, usize)> {
        let mut offset = 0;
        for (tensor, shape) in &self.tensors {
            let len = shape.iter().product::<usize>();
            if tensor == name {
                return Some((offset, len));
            }
            offset += len;
        }
        None
    }
}

/// Flat real-valued parameter (or update) vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        let expected = layout.num_elements();
        if values.len() != expected {
            return Err(FedError::Layout(format!(
                "layout describes {expected} elements but {} values were given",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    /// Vector over a single flat tensor; used heavily in tests.
    pub fn from_slice(values: &[f64]) -> Self {
        Self {
            layout: Arc::new(Layout::flat(values.len())),
            values: values.to_vec(),
        }
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.num_elements()],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Slice of the named tensor.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .span(name)
            .map(|(offset, len)| &self.values[offset..offset + len])
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub(crate) fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(FedError::Layout(format!(
                "cannot combine vectors of {} and {} elements with different layouts",
                self.len(),
                other.len()
            )))
        }
    }

    /// `self - other`, element-wise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        axpy(-1.0, other, self)
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|v| factor * v).collect(),
            layout: Arc::clone(&self.layout),
        }
    }
}

/// Element-wise `Σ weights[j] · vectors[j]`, accumulated in input order.
pub fn weighted_sum(vectors: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let first = vectors
        .first()
        .ok_or_else(|| FedError::Usage("weighted_sum of an empty vector list".into()))?;
    if weights.len() != vectors.len() {
        return Err(FedError::Usage(format!(
            "weighted_sum got {} vectors but {} weights",
            vectors.len(),
            weights.len()
        )));
    }
    for v in &vectors[1..] {
        first.check_layout(v)?;
    }
    let mut out = vec![0.0; first.len()];
    for (v, &w) in vectors.iter().zip(weights) {
        for (acc, x) in out.iter_mut().zip(&v.values) {
            *acc += w * x;
        }
    }
    Ok(ParamVector {
        values: out,
        layout: Arc::clone(&first.layout),
    })
}

/// `a·x + y`.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    x.check_layout(y)?;
    Ok(ParamVector {
        values: x
            .values
            .iter()
            .zip(&y.values)
            .map(|(xi, yi)| a * xi + yi)
            .collect(),
        layout: Arc::clone(&y.layout),
    })
}

/// Per-coordinate median. Even counts take the mean of the two middle values.
pub fn coordinate_median(vectors: &[&ParamVector]) -> Result<ParamVector> {
    let first = vectors
        .first()
        .ok_or_else(|| FedError::Usage("coordinate_median of an empty vector list".into()))?;
    for v in &vectors[1..] {
        first.check_layout(v)?;
    }
    let m = vectors.len();
    let mut column = Vec::with_capacity(m);
    let values = (0..first.len())
        .map(|i| {
            column.clear();
            column.extend(vectors.iter().map(|v| v.values[i]));
            column.sort_by(f64::total_cmp);
            if m % 2 == 1 {
                column[m / 2]
            } else {
                0.5 * (column[m / 2 - 1] + column[m / 2])
            }
        })
        .collect();
    Ok(ParamVector {
        values,
        layout: Arc::clone(&first.layout),
    })
}

pub fn l2_norm(x: &ParamVector) -> f64 {
    x.values.iter().map(|v| v * v).sum::<f64>().sqrt()
}
