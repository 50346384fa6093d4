use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, Zip};

use crate::checkpoint::Record;
use crate::error::{AutodiffError, Result};
use crate::tape::{Gradients, Mat, ParamKey, Tape, Var};

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

/// Adam hyper-parameters other than the learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named trainable arrays plus their Adam state.
///
/// Names are unique and shapes are fixed once added. Gradients are written by
/// [`ParameterSet::accumulate`] and consumed by [`ParameterSet::adam_step`].
#[derive(Clone, Debug)]
pub struct ParameterSet {
    id: u64,
    label: String,
    names: Vec<String>,
    lookup: HashMap<String, usize>,
    values: Vec<Mat>,
    grads: Vec<Option<Mat>>,
    first_moment: Vec<Mat>,
    second_moment: Vec<Mat>,
    step: u64,
}

impl ParameterSet {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            id: NEXT_SET_ID.fetch_add(1, Ordering::Relaxed),
            label: label.into(),
            names: Vec::new(),
            lookup: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> Result<usize> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(AutodiffError::DuplicateName(name));
        }
        if !value.iter().all(|x| x.is_finite()) {
            return Err(AutodiffError::NonFinite("parameter init"));
        }
        let idx = self.values.len();
        self.lookup.insert(name.clone(), idx);
        self.names.push(name);
        self.first_moment.push(Array2::zeros(value.dim()));
        self.second_moment.push(Array2::zeros(value.dim()));
        self.values.push(value);
        self.grads.push(None);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    pub fn key(&self, index: usize) -> ParamKey {
        ParamKey {
            set: self.id,
            index,
        }
    }

    pub fn value(&self, index: usize) -> &Mat {
        &self.values[index]
    }

    /// Replaces a value; the shape must not change.
    pub fn set_value(&mut self, index: usize, value: Mat) -> Result<()> {
        let old = &self.values[index];
        if old.dim() != value.dim() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set_value",
                lhs: old.dim(),
                rhs: value.dim(),
            });
        }
        self.values[index] = value;
        Ok(())
    }

    pub fn grad(&self, index: usize) -> Option<&Mat> {
        self.grads[index].as_ref()
    }

    pub fn has_grads(&self) -> bool {
        self.grads.iter().any(Option::is_some)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> (&Mat, &Mat) {
        (&self.first_moment[index], &self.second_moment[index])
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Places parameter `index` on `tape` (cached per tape).
    pub fn var<'t>(&self, tape: &'t Tape, index: usize) -> Result<Var<'t>> {
        tape.param(self.key(index), &self.values[index])
    }

    pub fn var_by_name<'t>(&self, tape: &'t Tape, name: &str) -> Result<Var<'t>> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        self.var(tape, idx)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Stores the gradients of a reverse pass. Parameters the loss did not
    /// touch receive zeros. Fails if gradients are still pending from an
    /// earlier pass.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        if self.has_grads() {
            return Err(AutodiffError::DoubleAccumulation(self.label.clone()));
        }
        for i in 0..self.values.len() {
            let g = match grads.param(self.key(i)) {
                Some(g) => g.clone(),
                None => Array2::zeros(self.values[i].dim()),
            };
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// One bias-corrected Adam update; consumes the stored gradients.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(AutodiffError::InvalidLearningRate(lr));
        }
        if let Some(i) = self.grads.iter().position(Option::is_none) {
            return Err(AutodiffError::MissingGrad(self.names[i].clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            let g = self.grads[i].take().expect("checked above");
            Zip::from(&mut self.values[i])
                .and(&mut self.first_moment[i])
                .and(&mut self.second_moment[i])
                .and(&g)
                .for_each(|p, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
                });
        }
        Ok(())
    }

    /// Values, then first and second moments (`.adam_m`, `.adam_v`), then the
    /// step counter as a rank-0 record, all names prefixed with `prefix`.
    pub fn to_records(&self, prefix: &str) -> Vec<Record> {
        let mut out = Vec::with_capacity(3 * self.len() + 1);
        for (i, name) in self.names.iter().enumerate() {
            out.push(Record::from_mat(format!("{prefix}{name}"), &self.values[i]));
        }
        for (i, name) in self.names.iter().enumerate() {
            out.push(Record::from_mat(
                format!("{prefix}{name}.adam_m"),
                &self.first_moment[i],
            ));
            out.push(Record::from_mat(
                format!("{prefix}{name}.adam_v"),
                &self.second_moment[i],
            ));
        }
        out.push(Record {
            name: format!("{prefix}adam_step"),
            dims: vec![],
            data: vec![self.step as f64],
        });
        out
    }

    /// Restores values and optimizer state written by [`Self::to_records`].
    pub fn load_records(&mut self, prefix: &str, records: &[Record]) -> Result<()> {
        let by_name: HashMap<&str, &Record> =
            records.iter().map(|r| (r.name.as_str(), r)).collect();
        let fetch = |name: String, like: &Mat| -> Result<Mat> {
            let rec = by_name
                .get(name.as_str())
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing record `{name}`")))?;
            let m = rec.to_mat()?;
            if m.dim() != like.dim() {
                return Err(AutodiffError::Checkpoint(format!(
                    "record `{name}` has shape {:?}, expected {:?}",
                    m.dim(),
                    like.dim()
                )));
            }
            Ok(m)
        };
        for i in 0..self.len() {
            let name = &self.names[i];
            let v = fetch(format!("{prefix}{name}"), &self.values[i])?;
            let m = fetch(format!("{prefix}{name}.adam_m"), &self.values[i])?;
            let s = fetch(format!("{prefix}{name}.adam_v"), &self.values[i])?;
            self.values[i] = v;
            self.first_moment[i] = m;
            self.second_moment[i] = s;
        }
        let step_name = format!("{prefix}adam_step");
        let step = by_name
            .get(step_name.as_str())
            .and_then(|r| r.data.first().copied())
            .ok_or_else(|| AutodiffError::Checkpoint(format!("missing record `{step_name}`")))?;
        self.step = step as u64;
        self.zero_grad();
        Ok(())
    }
}
