//! Forward-mode tangents recorded as ordinary tape nodes.
//!
//! A [`Dual`] carries a primal var and one tangent per seeded direction.
//! Because every tangent is built from tape operations, a reverse pass
//! through a tangent differentiates the input-derivative itself with respect
//! to the parameters (forward-over-reverse).

use crate::error::{AutodiffError, Result};
use crate::tape::{Mat, Var};

#[derive(Clone, Debug)]
pub struct Dual<'t> {
    pub primal: Var<'t>,
    pub tangents: Vec<Var<'t>>,
}

/// Jacobian-vector product of `f` at `input` along `direction`.
pub fn jvp<'t, F>(input: Var<'t>, direction: Mat, f: F) -> Result<Dual<'t>>
where
    F: FnOnce(Dual<'t>) -> Result<Dual<'t>>,
{
    jvp_many(input, vec![direction], f)
}

/// Like [`jvp`] but propagates several directions through one primal pass.
pub fn jvp_many<'t, F>(input: Var<'t>, directions: Vec<Mat>, f: F) -> Result<Dual<'t>>
where
    F: FnOnce(Dual<'t>) -> Result<Dual<'t>>,
{
    f(Dual::seed(input, directions)?)
}

impl<'t> Dual<'t> {
    /// Seeds tangents with constant directions shaped like `input`.
    pub fn seed(input: Var<'t>, directions: Vec<Mat>) -> Result<Self> {
        let tape = input.tape();
        let shape = input.shape();
        let tangents = directions
            .into_iter()
            .map(|d| {
                if d.dim() != shape {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "jvp",
                        lhs: shape,
                        rhs: d.dim(),
                    });
                }
                tape.constant(d)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            primal: input,
            tangents,
        })
    }

    /// A value with zero tangent in `n` directions.
    pub fn constant(value: Var<'t>, n: usize) -> Result<Self> {
        let zero = value.tape().constant(Mat::zeros(value.shape()))?;
        Ok(Self {
            primal: value,
            tangents: vec![zero; n],
        })
    }

    pub fn tangent(&self) -> Var<'t> {
        self.tangents[0]
    }

    fn with(&self, primal: Var<'t>, f: impl Fn(Var<'t>) -> Result<Var<'t>>) -> Result<Self> {
        let tangents = self.tangents.iter().map(|&t| f(t)).collect::<Result<_>>()?;
        Ok(Self { primal, tangents })
    }

    fn zip(
        &self,
        other: &Dual<'t>,
        primal: Var<'t>,
        f: impl Fn(Var<'t>, Var<'t>) -> Result<Var<'t>>,
    ) -> Result<Self> {
        if self.tangents.len() != other.tangents.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "dual",
                lhs: (self.tangents.len(), 0),
                rhs: (other.tangents.len(), 0),
            });
        }
        let tangents = self
            .tangents
            .iter()
            .zip(&other.tangents)
            .map(|(&a, &b)| f(a, b))
            .collect::<Result<_>>()?;
        Ok(Self { primal, tangents })
    }

    /// Right-multiplication by a matrix that does not depend on the input.
    pub fn matmul(&self, w: Var<'t>) -> Result<Self> {
        self.with(self.primal.matmul(w)?, |t| t.matmul(w))
    }

    /// Adds a (broadcastable) term that does not depend on the input.
    pub fn add_var(&self, v: Var<'t>) -> Result<Self> {
        Ok(Self {
            primal: self.primal.add(v)?,
            tangents: self.tangents.clone(),
        })
    }

    /// Multiplies by a (broadcastable) factor that does not depend on the input.
    pub fn mul_var(&self, v: Var<'t>) -> Result<Self> {
        self.with(self.primal.mul(v)?, |t| t.mul(v))
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.with(self.primal.scale(c)?, |t| t.scale(c))
    }

    pub fn offset(&self, c: f64) -> Result<Self> {
        Ok(Self {
            primal: self.primal.offset(c)?,
            tangents: self.tangents.clone(),
        })
    }

    pub fn neg(&self) -> Result<Self> {
        self.with(self.primal.neg()?, |t| t.neg())
    }

    pub fn add(&self, other: &Dual<'t>) -> Result<Self> {
        self.zip(other, self.primal.add(other.primal)?, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Dual<'t>) -> Result<Self> {
        self.zip(other, self.primal.sub(other.primal)?, |a, b| a.sub(b))
    }

    pub fn mul(&self, other: &Dual<'t>) -> Result<Self> {
        let (x, y) = (self.primal, other.primal);
        self.zip(other, x.mul(y)?, |tx, ty| tx.mul(y)?.add(x.mul(ty)?))
    }

    pub fn softplus(&self) -> Result<Self> {
        let (y, slope) = self.primal.softplus_with_slope()?;
        self.with(y, |t| t.mul(slope))
    }

    pub fn sigmoid(&self) -> Result<Self> {
        let y = self.primal.sigmoid()?;
        let slope = y.mul(y.neg()?.offset(1.0)?)?;
        self.with(y, |t| t.mul(slope))
    }

    pub fn tanh(&self) -> Result<Self> {
        let y = self.primal.tanh()?;
        let slope = y.square()?.neg()?.offset(1.0)?;
        self.with(y, |t| t.mul(slope))
    }

    pub fn exp(&self) -> Result<Self> {
        let y = self.primal.exp()?;
        self.with(y, |t| t.mul(y))
    }

    pub fn log(&self) -> Result<Self> {
        let x = self.primal;
        self.with(x.log()?, |t| t.div(x))
    }

    pub fn square(&self) -> Result<Self> {
        let x = self.primal;
        self.with(x.square()?, |t| t.mul(x)?.scale(2.0))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        self.with(self.primal.slice_cols(start, len)?, |t| {
            t.slice_cols(start, len)
        })
    }

    /// Stacks duals with the same number of tangents.
    pub fn concat_rows(parts: &[Dual<'t>]) -> Result<Self> {
        let n = parts.first().map_or(0, |p| p.tangents.len());
        if parts.iter().any(|p| p.tangents.len() != n) {
            return Err(AutodiffError::ShapeMismatch {
                op: "dual",
                lhs: (n, 0),
                rhs: (0, 0),
            });
        }
        let primals: Vec<Var<'t>> = parts.iter().map(|p| p.primal).collect();
        let primal = Var::concat_rows(&primals)?;
        let tangents = (0..n)
            .map(|k| {
                let ts: Vec<Var<'t>> = parts.iter().map(|p| p.tangents[k]).collect();
                Var::concat_rows(&ts)
            })
            .collect::<Result<_>>()?;
        Ok(Self { primal, tangents })
    }

    pub fn sum(&self) -> Result<Self> {
        self.with(self.primal.sum()?, |t| t.sum())
    }

    pub fn cross(&self, other: &Dual<'t>) -> Result<Self> {
        let (a, b) = (self.primal, other.primal);
        self.zip(other, a.cross(b)?, |ta, tb| ta.cross(b)?.add(a.cross(tb)?))
    }

    pub fn row_dot(&self, other: &Dual<'t>) -> Result<Self> {
        let (a, b) = (self.primal, other.primal);
        self.zip(other, a.row_dot(b)?, |ta, tb| {
            ta.row_dot(b)?.add(a.row_dot(tb)?)
        })
    }

    pub fn row_norm(&self) -> Result<Self> {
        let a = self.primal;
        let n = a.row_norm()?;
        self.with(n, |t| a.row_dot(t)?.div(n))
    }

    /// Non-smooth: no tangent rule.
    pub fn abs(&self) -> Result<Self> {
        Err(AutodiffError::UnsupportedOp("abs"))
    }

    /// Non-smooth: no tangent rule.
    pub fn clamp(&self, _lo: f64, _hi: f64) -> Result<Self> {
        Err(AutodiffError::UnsupportedOp("clamp"))
    }

    /// Custom ops only supply a reverse rule.
    pub fn custom(&self, name: &'static str) -> Result<Self> {
        Err(AutodiffError::UnsupportedOp(name))
    }
}
