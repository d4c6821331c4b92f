//! Named parameter tensors with gradient accumulators, plus the central
//! finite-difference gradient checker.

use std::collections::HashMap;

use crate::error::{Result, SmanError};
use crate::tensor::Tensor;

#[derive(Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Row 0 is a PAD row: pinned to zero, excluded from updates and from
    /// weight decay.
    pub frozen_row0: bool,
}

/// Parameter store with stable (insertion) iteration order.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, frozen_row0: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(SmanError::Integrity(format!(
                "duplicate parameter name {:?}",
                name
            )));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            value,
            grad,
            frozen_row0,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// Zero the gradient of every frozen PAD row so optimizer steps never
    /// move it.
    pub fn apply_freeze(&mut self) {
        for p in &mut self.entries {
            if p.frozen_row0 && p.grad.is_matrix() {
                let c = p.grad.cols();
                for g in &mut p.grad.data_mut()[..c] {
                    *g = 0.0;
                }
            }
        }
    }

    /// Entry indices that participate in training for parameter `p`.
    fn trainable_range(p: &Param) -> std::ops::Range<usize> {
        let start = if p.frozen_row0 && p.value.is_matrix() {
            p.value.cols()
        } else {
            0
        };
        start..p.value.len()
    }
}

/// Compare the analytic gradients stored in `params` against central finite
/// differences of `loss`, returning the max relative error
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` over all trainable
/// entries.
pub fn grad_check(
    mut loss: impl FnMut(&ParamStore) -> f64,
    params: &mut ParamStore,
    epsilon: f64,
) -> Result<f64> {
    assert!(epsilon > 0.0);
    let l0 = loss(params);
    let l1 = loss(params);
    if l0.to_bits() != l1.to_bits() {
        return Err(SmanError::Determinism(format!(
            "loss function is non-deterministic: {} vs {}",
            l0, l1
        )));
    }
    let mut max_err: f64 = 0.0;
    for pi in 0..params.entries.len() {
        let range = ParamStore::trainable_range(&params.entries[pi]);
        for ei in range {
            let orig = params.entries[pi].value.data()[ei];
            params.entries[pi].value.data_mut()[ei] = orig + epsilon;
            let lp = loss(params);
            params.entries[pi].value.data_mut()[ei] = orig - epsilon;
            let lm = loss(params);
            params.entries[pi].value.data_mut()[ei] = orig;
            let numeric = (lp - lm) / (2.0 * epsilon);
            let analytic = params.entries[pi].grad.data()[ei];
            let denom = 1.0f64.max(analytic.abs()).max(numeric.abs());
            let err = (analytic - numeric).abs() / denom;
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
