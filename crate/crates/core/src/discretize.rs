//! Continuous-time leaky reservoirs `τẋ = −x + σ(Wx + Uu + b)` and their
//! discrete-time equivalents.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_len, check_psd, check_shape, expm, norm1, symmetrize};
use crate::linearize::{scale_rows, slopes_at};
use crate::reservoir::ReservoirParams;

/// Linearized CT dynamics `ẋ = A_c x + B_c u + noise` with diffusion `Q_c`
/// per unit time, to be sampled every `Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtLinearModel {
    pub a_c: DMatrix<f64>,
    pub b_c: DMatrix<f64>,
    pub q_c: DMatrix<f64>,
    pub tau: f64,
    pub dt: f64,
}

/// Sampled-data equivalent of a [`CtLinearModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub q_d: DMatrix<f64>,
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter(format!("{what} must be finite and > 0, got {v}")));
    }
    Ok(())
}

/// Forward-Euler leak `λ = Δt/τ`; rejected when it leaves `(0, 1]`.
pub fn euler_leak(dt: f64, tau: f64) -> Result<f64> {
    check_positive("dt", dt)?;
    check_positive("tau", tau)?;
    let leak = dt / tau;
    if leak > 1.0 {
        return Err(Error::LeakOutOfRange(leak));
    }
    Ok(leak)
}

/// Trapezoidal (Tustin) leak `λ = Δt/(τ + Δt/2)`, always in `(0, 2)`.
/// Values `≥ 1` are returned as computed; callers decide whether to use them.
pub fn tustin_leak(dt: f64, tau: f64) -> Result<f64> {
    check_positive("dt", dt)?;
    check_positive("tau", tau)?;
    Ok(dt / (tau + dt / 2.0))
}

/// `A_c = (−I + J_σ(ξ)W)/τ`, `B_c = J_σ(ξ)U/τ` at `ξ = Wx̄ + Uū + b`.
/// The returned model has `Q_c = 0` and `Δt = τ`; set them before sampling.
pub fn ct_jacobians(p: &ReservoirParams, tau: f64, x_bar: &DVector<f64>, u_bar: &DVector<f64>) -> Result<CtLinearModel> {
    p.validate()?;
    check_positive("tau", tau)?;
    check_len("x_bar", x_bar, p.n())?;
    check_len("u_bar", u_bar, p.m())?;
    let n = p.n();
    let s = slopes_at(p, x_bar, u_bar);
    let a_c = (scale_rows(&s, &p.w) - DMatrix::identity(n, n)) / tau;
    let b_c = scale_rows(&s, &p.u) / tau;
    Ok(CtLinearModel {
        a_c,
        b_c,
        q_c: DMatrix::zeros(n, n),
        tau,
        dt: tau,
    })
}

/// Exact zero-order-hold sampling.
///
/// With `M = [[A_c, Q_c, B_c], [0, −A_cᵀ, 0], [0, 0, 0]]·Δt`, the blocks of
/// `e^M` are `F11 = A_d`, `F13 = ∫₀^Δt e^{A_cs}ds·B_c = B_d` and
/// `F12 = ∫₀^Δt e^{A_c(Δt−s)}Q_c e^{−A_cᵀs}ds`, so `Q_d = F12·A_dᵀ`.
pub fn zoh_discretize(ct: &CtLinearModel) -> Result<DiscreteModel> {
    let n = ct.a_c.nrows();
    check_shape("A_c", &ct.a_c, n, n)?;
    if ct.b_c.nrows() != n {
        return Err(Error::Dimension(format!("B_c must have {n} rows, got {}", ct.b_c.nrows())));
    }
    check_psd("Q_c", &ct.q_c)?;
    check_shape("Q_c", &ct.q_c, n, n)?;
    check_positive("dt", ct.dt)?;
    let m = ct.b_c.ncols();
    let scaled_norm = norm1(&ct.a_c) * ct.dt;
    if scaled_norm > 1e3 {
        return Err(Error::IllConditioned(format!(
            "‖A_c·Δt‖₁ = {scaled_norm:e} exceeds 1e3"
        )));
    }
    let size = 2 * n + m;
    let mut big = DMatrix::zeros(size, size);
    big.view_mut((0, 0), (n, n)).copy_from(&ct.a_c);
    big.view_mut((0, n), (n, n)).copy_from(&ct.q_c);
    big.view_mut((0, 2 * n), (n, m)).copy_from(&ct.b_c);
    big.view_mut((n, n), (n, n)).copy_from(&(-ct.a_c.transpose()));
    let e = expm(&(big * ct.dt))?;
    let a_d = e.view((0, 0), (n, n)).into_owned();
    let g = e.view((0, n), (n, n)).into_owned();
    let b_d = e.view((0, 2 * n), (n, m)).into_owned();
    let q_d = symmetrize(&(g * a_d.transpose()));
    Ok(DiscreteModel { a_d, b_d, q_d })
}
