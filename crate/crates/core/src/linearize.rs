use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_finite_mat, check_finite_vec, check_len, check_shape};
use crate::reservoir::{Readout, ReservoirParams, Trajectory};

/// `x⁺ = Ax + Bu`, `y = Cx + Du`, optionally tagged with the operating pair
/// it was linearized at.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub x_bar: Option<DVector<f64>>,
    pub u_bar: Option<DVector<f64>>,
}

impl LtiModel {
    /// Validated model without an operating point.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let m = Self {
            a,
            b,
            c,
            d,
            x_bar: None,
            u_bar: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// `D = 0` of the matching shape.
    pub fn strictly_proper(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        check_shape("A", &self.a, n, n)?;
        if self.b.nrows() != n {
            return Err(Error::Dimension(format!("B must have {n} rows, got {}", self.b.nrows())));
        }
        if self.c.ncols() != n {
            return Err(Error::Dimension(format!("C must have {n} columns, got {}", self.c.ncols())));
        }
        check_shape("D", &self.d, self.c.nrows(), self.b.ncols())?;
        check_finite_mat("A", &self.a)?;
        check_finite_mat("B", &self.b)?;
        check_finite_mat("C", &self.c)?;
        check_finite_mat("D", &self.d)?;
        if let Some(x) = &self.x_bar {
            check_len("x_bar", x, n)?;
            check_finite_vec("x_bar", x)?;
        }
        if let Some(u) = &self.u_bar {
            check_len("u_bar", u, self.b.ncols())?;
            check_finite_vec("u_bar", u)?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u
    }

    pub fn has_feedthrough(&self) -> bool {
        self.d.iter().any(|v| *v != 0.0)
    }
}

/// Time-varying linearization: `x_{t+1} = A_t x_t + B_t u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvModel {
    pub a_t: Vec<DMatrix<f64>>,
    pub b_t: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LtvModel {
    pub fn len(&self) -> usize {
        self.a_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_t.is_empty()
    }

    pub fn at(&self, t: usize) -> LtiModel {
        LtiModel {
            a: self.a_t[t].clone(),
            b: self.b_t[t].clone(),
            c: self.c.clone(),
            d: self.d.clone(),
            x_bar: None,
            u_bar: None,
        }
    }
}

/// Slopes `σ'(ξ)` at `ξ = Wx̄ + Uū + b`.
pub(crate) fn slopes_at(p: &ReservoirParams, x_bar: &DVector<f64>, u_bar: &DVector<f64>) -> DVector<f64> {
    let act = p.activation;
    p.preactivation(x_bar, u_bar).map(|v| act.derivative(v))
}

/// Scales row `i` of `m` by `s[i]`.
pub(crate) fn scale_rows(s: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= s[i];
    }
    out
}

/// `A = (1−λ)I + λJ_σ(ξ)W`, `B = λJ_σ(ξ)U`, `C` from the readout, `D = 0`.
pub fn jacobians_at(
    p: &ReservoirParams,
    x_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
    readout: &Readout,
) -> Result<LtiModel> {
    p.validate()?;
    check_len("x_bar", x_bar, p.n())?;
    check_len("u_bar", u_bar, p.m())?;
    check_finite_vec("x_bar", x_bar)?;
    check_finite_vec("u_bar", u_bar)?;
    if readout.c.ncols() != p.n() {
        return Err(Error::Dimension(format!(
            "readout C has {} columns, reservoir has n = {}",
            readout.c.ncols(),
            p.n()
        )));
    }
    Ok(jacobians_unchecked(p, x_bar, u_bar, readout))
}

fn jacobians_unchecked(p: &ReservoirParams, x_bar: &DVector<f64>, u_bar: &DVector<f64>, readout: &Readout) -> LtiModel {
    let n = p.n();
    let s = slopes_at(p, x_bar, u_bar);
    let a = DMatrix::identity(n, n) * (1.0 - p.leak) + scale_rows(&s, &p.w) * p.leak;
    let b = scale_rows(&s, &p.u) * p.leak;
    LtiModel {
        a,
        b,
        c: readout.c.clone(),
        d: DMatrix::zeros(readout.p(), p.m()),
        x_bar: Some(x_bar.clone()),
        u_bar: Some(u_bar.clone()),
    }
}

/// One-step linearization error bound `(λ/2)·L_σ2·r²` on the tube where
/// `‖Wδx + Uδu‖ ≤ r`.
pub fn remainder_bound(p: &ReservoirParams, r: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("tube radius must be finite and >= 0, got {r}")));
    }
    let l2 = p.activation.second_deriv_bound().ok_or_else(|| {
        Error::MissingActivationData(format!(
            "activation {} has no second-derivative bound",
            p.activation.name()
        ))
    })?;
    Ok(0.5 * p.leak * l2 * r * r)
}

/// Per-step Jacobians along `(x_t, u_t)` for `t = 0..T−1`.
pub fn linearize_trajectory(p: &ReservoirParams, traj: &Trajectory, readout: &Readout) -> Result<LtvModel> {
    p.validate()?;
    traj.validate()?;
    if readout.c.ncols() != p.n() {
        return Err(Error::Dimension(format!(
            "readout C has {} columns, reservoir has n = {}",
            readout.c.ncols(),
            p.n()
        )));
    }
    let mut a_t = Vec::with_capacity(traj.len());
    let mut b_t = Vec::with_capacity(traj.len());
    for (t, u) in traj.inputs.iter().enumerate() {
        let x = &traj.states[t];
        check_len(&format!("state {t}"), x, p.n())?;
        check_len(&format!("input {t}"), u, p.m())?;
        let lti = jacobians_unchecked(p, x, u, readout);
        a_t.push(lti.a);
        b_t.push(lti.b);
    }
    Ok(LtvModel {
        a_t,
        b_t,
        c: readout.c.clone(),
        d: DMatrix::zeros(readout.p(), p.m()),
    })
}
