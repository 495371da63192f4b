//! Row-major flattening of per-agent indices.
//!
//! Both joint actions and joint pure policies are stored as a single flat
//! index with agent 0 as the slowest-varying digit, so payoff tensors,
//! transition tables and mixed policies all agree on layout.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedRadix {
    radices: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl MixedRadix {
    /// Returns `None` if the product of radices overflows `usize`.
    pub fn new(radices: &[usize]) -> Option<Self> {
        let mut strides = vec![1; radices.len()];
        let mut size: usize = 1;
        for (k, &r) in radices.iter().enumerate().rev() {
            strides[k] = size;
            size = size.checked_mul(r)?;
        }
        Some(Self { radices: radices.to_vec(), strides, size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn len(&self) -> usize {
        self.radices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radices.is_empty()
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.radices.len());
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum()
    }

    pub fn decode(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.radices.len()];
        for (k, &s) in self.strides.iter().enumerate() {
            out[k] = flat / s;
            flat %= s;
        }
        out
    }

    /// Digit of position `k` inside `flat`.
    pub fn digit(&self, flat: usize, k: usize) -> usize {
        (flat / self.strides[k]) % self.radices[k]
    }

    /// `flat` with digit `k` replaced by `value`.
    pub fn replace(&self, flat: usize, k: usize, value: usize) -> usize {
        flat - self.digit(flat, k) * self.strides[k] + value * self.strides[k]
    }

    /// Index of `flat` in the layout obtained by deleting position `k`.
    pub fn without(&self, flat: usize, k: usize) -> usize {
        let high = flat / (self.strides[k] * self.radices[k]);
        let low = flat % self.strides[k];
        high * self.strides[k] + low
    }

    /// Inverse of [`MixedRadix::without`]: re-inserts `value` at position `k`.
    pub fn insert(&self, rest: usize, k: usize, value: usize) -> usize {
        let high = rest / self.strides[k];
        let low = rest % self.strides[k];
        (high * self.radices[k] + value) * self.strides[k] + low
    }

    /// Number of joint indices once position `k` is removed.
    pub fn size_without(&self, k: usize) -> usize {
        self.size / self.radices[k]
    }
}
