//! Fully connected networks evaluated three ways: on a tape, as duals for
//! input derivatives, and as plain arrays for inference.

use hsurf_autodiff::{Dual, Mat, ParameterSet, Tape, Var};
use ndarray::{Array2, Axis, Zip};
use rand::Rng;

use crate::error::Result;

/// What follows the last affine layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Head {
    Linear,
    /// `gain * tanh(x)`.
    Tanh(f64),
    Softplus,
}

/// Softplus MLP whose first layer optionally takes a latent code that is
/// shared by every row of the input.
#[derive(Clone, Debug)]
pub struct Mlp {
    dims: Vec<usize>,
    latent_dim: usize,
    head: Head,
    weights: Vec<usize>,
    biases: Vec<usize>,
    latent_weight: Option<usize>,
    /// Hidden activation is `softplus(s * x) / s`.
    sharpness: f64,
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize, rows: usize) -> Mat {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, fan_out), |_| rng.gen_range(-a..a))
}

impl Mlp {
    /// Adds the layers to `set` under `prefix`. `dims` lists the input
    /// width, the hidden widths and the output width.
    pub fn new(
        set: &mut ParameterSet,
        prefix: &str,
        dims: &[usize],
        latent_dim: usize,
        head: Head,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut latent_weight = None;
        for l in 0..dims.len() - 1 {
            let fan_in = dims[l] + if l == 0 { latent_dim } else { 0 };
            let w = xavier(rng, fan_in, dims[l + 1], dims[l]);
            weights.push(set.add(format!("{prefix}.w{l}"), w)?);
            if l == 0 && latent_dim > 0 {
                let z = xavier(rng, fan_in, dims[1], latent_dim);
                latent_weight = Some(set.add(format!("{prefix}.z0"), z)?);
            }
            biases.push(set.add(format!("{prefix}.b{l}"), Array2::zeros((1, dims[l + 1])))?);
        }
        Ok(Self {
            dims: dims.to_vec(),
            latent_dim,
            head,
            weights,
            biases,
            latent_weight,
            sharpness: 1.0,
        })
    }

    /// Sets the hidden softplus sharpness; 1 is the plain softplus.
    pub fn with_sharpness(mut self, sharpness: f64) -> Self {
        self.sharpness = sharpness;
        self
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    fn act<'t>(&self, h: Var<'t>) -> Result<Var<'t>> {
        if self.sharpness == 1.0 {
            return Ok(h.softplus()?);
        }
        Ok(h.scale(self.sharpness)?.softplus()?.scale(1.0 / self.sharpness)?)
    }

    fn act_dual<'t>(&self, h: Dual<'t>) -> Result<Dual<'t>> {
        if self.sharpness == 1.0 {
            return Ok(h.softplus()?);
        }
        Ok(h.scale(self.sharpness)?.softplus()?.scale(1.0 / self.sharpness)?)
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("nonempty")
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Parameter index of the last layer's weight.
    pub fn last_weight(&self) -> usize {
        *self.weights.last().expect("nonempty")
    }

    pub fn last_bias(&self) -> usize {
        *self.biases.last().expect("nonempty")
    }

    pub fn first_weight(&self) -> usize {
        self.weights[0]
    }

    /// The first layer's input-independent row `latent * Z + b`.
    fn first_offset<'t>(
        &self,
        set: &ParameterSet,
        tape: &'t Tape,
        latent: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let b = set.var(tape, self.biases[0])?;
        Ok(match (self.latent_weight, latent) {
            (Some(z), Some(lat)) => lat.matmul(set.var(tape, z)?)?.add(b)?,
            _ => b,
        })
    }

    pub fn forward<'t>(
        &self,
        set: &ParameterSet,
        x: Var<'t>,
        latent: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let tape = x.tape();
        let mut h = x
            .matmul(set.var(tape, self.weights[0])?)?
            .add(self.first_offset(set, tape, latent)?)?;
        for l in 1..self.weights.len() {
            h = self
                .act(h)?
                .matmul(set.var(tape, self.weights[l])?)?
                .add(set.var(tape, self.biases[l])?)?;
        }
        Ok(match self.head {
            Head::Linear => h,
            Head::Tanh(gain) => h.tanh()?.scale(gain)?,
            Head::Softplus => h.softplus()?,
        })
    }

    /// Forward pass carrying tangents with respect to the input rows.
    pub fn forward_dual<'t>(
        &self,
        set: &ParameterSet,
        x: Dual<'t>,
        latent: Option<Var<'t>>,
    ) -> Result<Dual<'t>> {
        let tape = x.primal.tape();
        let mut h = x
            .matmul(set.var(tape, self.weights[0])?)?
            .add_var(self.first_offset(set, tape, latent)?)?;
        for l in 1..self.weights.len() {
            h = self
                .act_dual(h)?
                .matmul(set.var(tape, self.weights[l])?)?
                .add_var(set.var(tape, self.biases[l])?)?;
        }
        Ok(match self.head {
            Head::Linear => h,
            Head::Tanh(gain) => h.tanh()?.scale(gain)?,
            Head::Softplus => h.softplus()?,
        })
    }

    /// Tape-free evaluation with the current parameter values.
    pub fn eval(&self, set: &ParameterSet, x: &Mat, latent: Option<&Mat>) -> Mat {
        let mut offset = set.value(self.biases[0]).clone();
        if let (Some(z), Some(lat)) = (self.latent_weight, latent) {
            offset = offset + lat.dot(set.value(z));
        }
        let mut h = x.dot(set.value(self.weights[0]));
        h += &offset;
        for l in 1..self.weights.len() {
            let k = self.sharpness;
            if k == 1.0 {
                h.mapv_inplace(softplus);
            } else {
                h.mapv_inplace(|v| softplus(k * v) / k);
            }
            h = h.dot(set.value(self.weights[l]));
            h += &set.value(self.biases[l]).index_axis(Axis(0), 0);
        }
        match self.head {
            Head::Linear => {}
            Head::Tanh(gain) => h.mapv_inplace(|v| gain * v.tanh()),
            Head::Softplus => h.mapv_inplace(softplus),
        }
        h
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major `n x 3` matrix from points.
pub fn points_to_mat(points: &[[f64; 3]]) -> Mat {
    Array2::from_shape_fn((points.len(), 3), |(i, k)| points[i][k])
}

pub fn mat_to_points(m: &Mat) -> Vec<[f64; 3]> {
    m.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

pub(crate) fn sigmoid_inplace(m: &mut Mat) {
    Zip::from(m).for_each(|v| *v = sigmoid(*v));
}
