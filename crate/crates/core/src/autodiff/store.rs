use std::collections::BTreeMap;

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

struct Entry {
    name: String,
    value: Matrix,
    grad: Matrix,
    m: Matrix,
    v: Matrix,
    /// Number of Adam updates applied to this parameter. Kept per parameter
    /// so one that sits out early steps still gets correct bias correction
    /// when it starts moving.
    steps: u64,
    /// Non-trainable entries still accumulate gradients (so gradient checks
    /// see them) but are skipped by the optimizer.
    trainable: bool,
}

/// Named parameters with their gradient accumulators and Adam state.
///
/// Entries iterate in insertion order everywhere, so anything serialized
/// from a store is reproducible run to run.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Matrix) -> Result<()> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("parameter {name:?} already registered")));
        }
        let (r, c) = value.shape();
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            steps: 0,
            trainable: true,
        });
        Ok(())
    }

    /// Mark a parameter as (non-)trainable; see [`ParamStore::adam_step`].
    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let i = self.idx(name)?;
        self.entries[i].trainable = trainable;
        Ok(())
    }

    /// Zero the accumulated gradient of the given rows of one parameter,
    /// excluding them from the next [`ParamStore::adam_step`]. A row whose
    /// gradient has been cleared since initialization has never touched its
    /// Adam moments, so clearing acts as an exact freeze of that row.
    pub fn clear_grad_rows(&mut self, name: &str, rows: &[usize]) -> Result<()> {
        let i = self.idx(name)?;
        let grad = &mut self.entries[i].grad;
        let (r, c) = grad.shape();
        for &row in rows {
            if row >= r {
                return Err(Error::shape(
                    "clear_grad_rows",
                    format!("{name:?} has {r} rows, asked to clear row {row}"),
                ));
            }
            grad.data_mut()[row * c..(row + 1) * c].fill(0.0);
        }
        Ok(())
    }

    fn idx(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.entries[self.idx(name)?].value)
    }

    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<()> {
        let i = self.idx(name)?;
        if value.shape() != self.entries[i].value.shape() {
            return Err(Error::shape(
                "set_value",
                format!(
                    "{name:?} is {:?}, got {:?}",
                    self.entries[i].value.shape(),
                    value.shape()
                ),
            ));
        }
        self.entries[i].value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.entries[self.idx(name)?].grad)
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Matrix) -> Result<()> {
        let i = self.idx(name)?;
        let entry = &mut self.entries[i];
        if g.shape() != entry.grad.shape() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("{name:?} is {:?}, got {:?}", entry.grad.shape(), g.shape()),
            ));
        }
        for (d, s) in entry.grad.data_mut().iter_mut().zip(g.data()) {
            *d += s;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parameter names in insertion order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// `(name, value)` pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    /// One Adam update from the accumulated gradients, then the caller is
    /// expected to [`ParamStore::zero_grads`].
    ///
    /// Parameters whose accumulated gradient is exactly zero, and parameters
    /// marked non-trainable, are skipped entirely: value, moments, and step
    /// counter stay untouched, so a step with all-zero gradients is the
    /// identity. This also freezes any module that does not participate in
    /// the current loss.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        for e in &mut self.entries {
            if !e.trainable || e.grad.all_zero() {
                continue;
            }
            e.steps += 1;
            let bc1 = 1.0 - cfg.beta1.powi(e.steps as i32);
            let bc2 = 1.0 - cfg.beta2.powi(e.steps as i32);
            let n = e.value.len();
            for i in 0..n {
                let g = e.grad.data()[i];
                let m = cfg.beta1 * e.m.data()[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * e.v.data()[i] + (1.0 - cfg.beta2) * g * g;
                e.m.data_mut()[i] = m;
                e.v.data_mut()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                e.value.data_mut()[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }

    /// Clone of every `(name, value)` pair in insertion order.
    pub fn snapshot(&self) -> Vec<(String, Matrix)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_rejects_duplicates() {
        let mut s = ParamStore::new();
        s.register("w", Matrix::zeros(1, 1)).unwrap();
        assert!(s.register("w", Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn unknown_names_error() {
        let s = ParamStore::new();
        assert!(s.value("nope").is_err());
    }

    #[test]
    fn accumulate_checks_shape() {
        let mut s = ParamStore::new();
        s.register("w", Matrix::zeros(2, 2)).unwrap();
        assert!(s.accumulate_grad("w", &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn zero_gradient_step_is_identity() {
        let mut s = ParamStore::new();
        s.register("w", Matrix::filled(2, 2, 1.5)).unwrap();
        s.register("b", Matrix::filled(1, 1, -0.25)).unwrap();
        // give b some optimizer history, then step both with zero grads
        s.accumulate_grad("b", &Matrix::filled(1, 1, 1.0)).unwrap();
        s.adam_step(&AdamConfig::default());
        s.zero_grads();
        let before: Vec<_> = s.snapshot();
        s.adam_step(&AdamConfig::default());
        for ((_, a), (_, b)) in before.iter().zip(s.snapshot().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn non_trainable_parameters_ignore_their_gradients() {
        let mut s = ParamStore::new();
        s.register("w", Matrix::filled(1, 1, 1.0)).unwrap();
        s.register("b", Matrix::filled(1, 1, -2.0)).unwrap();
        s.set_trainable("b", false).unwrap();
        s.accumulate_grad("w", &Matrix::filled(1, 1, 1.0)).unwrap();
        s.accumulate_grad("b", &Matrix::filled(1, 1, 1.0)).unwrap();
        s.adam_step(&AdamConfig::default());
        assert_ne!(s.value("w").unwrap().get(0, 0), 1.0);
        assert_eq!(s.value("b").unwrap().get(0, 0), -2.0);
        // gradients are still visible for inspection
        assert_eq!(s.grad("b").unwrap().get(0, 0), 1.0);
        assert!(s.set_trainable("nope", false).is_err());
    }

    #[test]
    fn clearing_grad_rows_freezes_exactly_those_rows() {
        let mut s = ParamStore::new();
        s.register("w", Matrix::filled(3, 2, 1.0)).unwrap();
        s.accumulate_grad("w", &Matrix::filled(3, 2, 0.5)).unwrap();
        s.clear_grad_rows("w", &[0, 2]).unwrap();
        s.adam_step(&AdamConfig::default());
        let w = s.value("w").unwrap();
        assert_eq!(w.get(0, 0), 1.0);
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(2, 0), 1.0);
        assert_ne!(w.get(1, 0), 1.0);
        assert!(s.clear_grad_rows("w", &[3]).is_err());
        assert!(s.clear_grad_rows("nope", &[0]).is_err());
    }

    #[test]
    fn adam_single_step_matches_hand_formula() {
        let cfg = AdamConfig::default();
        let mut s = ParamStore::new();
        s.register("x", Matrix::filled(1, 1, 2.0)).unwrap();
        s.accumulate_grad("x", &Matrix::filled(1, 1, 3.0)).unwrap();
        s.adam_step(&cfg);
        // hand computation for t = 1, g = 3
        let m = (1.0 - cfg.beta1) * 3.0;
        let v = (1.0 - cfg.beta2) * 9.0;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        let expect = 2.0 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        assert!((s.value("x").unwrap().get(0, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_a_quadratic_bowl() {
        // f(x) = |x|^2, grad = 2x, fixed start
        let cfg = AdamConfig::default();
        let mut s = ParamStore::new();
        s.register("x", Matrix::row_vector(&[0.1, -0.1, 0.05])).unwrap();
        let f = |m: &Matrix| m.data().iter().map(|v| v * v).sum::<f64>();
        let f0 = f(s.value("x").unwrap());
        for _ in 0..200 {
            let g = s.value("x").unwrap().map(|v| 2.0 * v);
            s.zero_grads();
            s.accumulate_grad("x", &g).unwrap();
            s.adam_step(&cfg);
        }
        let f_end = f(s.value("x").unwrap());
        assert!(
            f_end <= f0 / 100.0,
            "expected >=100x decrease, got {f0} -> {f_end}"
        );
    }
}
