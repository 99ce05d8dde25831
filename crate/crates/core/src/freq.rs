//! Frequency-domain view of an LTI model.
//!
//! The transfer function is `H(z) = C(I − z⁻¹A)⁻¹B + D = D + Σ_k h_k z^{−k}`
//! with Markov parameters `h_k = CAᵏB`, so on the unit circle `H(e^{jω})` is
//! the discrete-time Fourier transform of the kernel.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    condition_number, eigen_decompose, eigenvalues, solve_discrete_lyapunov, spectral_norm, spectral_radius,
    symmetrize, to_complex, Complex64,
};
use crate::linearize::LtiModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpulseKernel {
    /// `h_k = CAᵏB` for `k = 0..=K`.
    #[serde(skip)]
    pub blocks: Vec<DMatrix<f64>>,
    pub truncation: usize,
    /// Bound on `Σ_{k>K} ‖h_k‖₂`.
    pub tail_bound: f64,
    /// `c` in `‖Aᵏ‖₂ ≤ c·ρᵏ`, measured over `k ≤ K'`; empirical for
    /// non-normal `A`.
    pub growth_constant: f64,
    pub growth_window: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalDecomposition {
    pub eigenvalues: Vec<Complex64>,
    /// `R_i = (Cv_i)(w_iᵀB)` where `w_iᵀ` is row `i` of `V⁻¹`.
    pub residues: Vec<DMatrix<Complex64>>,
    pub feedthrough: DMatrix<f64>,
    /// 2-norm condition number of the eigenvector matrix.
    pub condition: f64,
}

impl ModalDecomposition {
    /// `Σ_i R_i λ_iᵏ`.
    pub fn kernel_block(&self, k: usize) -> DMatrix<Complex64> {
        let (p, m) = self.feedthrough.shape();
        let mut h = DMatrix::zeros(p, m);
        for (l, r) in self.eigenvalues.iter().zip(&self.residues) {
            h += r * l.powu(k as u32);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianPair {
    pub wc: DMatrix<f64>,
    pub wo: DMatrix<f64>,
    pub min_eig_wc: f64,
    pub min_eig_wo: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankReport {
    pub rank_c: usize,
    pub rank_o: usize,
    /// `None` when `ρ(A) ≥ 1` and the Gramians do not exist.
    pub min_eig_wc: Option<f64>,
    pub min_eig_wo: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HinfEstimate {
    /// Largest `σ_max(H(e^{jω}))` actually evaluated: a lower bound on the
    /// H∞ norm.
    pub value: f64,
    pub omega_peak: f64,
    /// Final refinement interval around `omega_peak`.
    pub bracket: (f64, f64),
}

/// `H(z)` with the eigenvalues of `A` cached for pole diagnostics.
pub struct TransferEvaluator<'a> {
    lti: &'a LtiModel,
    eig: Vec<Complex64>,
    rho: f64,
    a_c: DMatrix<Complex64>,
    b_c: DMatrix<Complex64>,
    c_c: DMatrix<Complex64>,
    d_c: DMatrix<Complex64>,
}

impl<'a> TransferEvaluator<'a> {
    pub fn new(lti: &'a LtiModel) -> Result<Self> {
        lti.validate()?;
        let eig = eigenvalues(&lti.a)?;
        let rho = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
        Ok(Self {
            lti,
            eig,
            rho,
            a_c: to_complex(&lti.a),
            b_c: to_complex(&lti.b),
            c_c: to_complex(&lti.c),
            d_c: to_complex(&lti.d),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    fn pole_hit(&self, z: Complex64) -> Error {
        let nearest = self
            .eig
            .iter()
            .copied()
            .min_by(|a, b| (a - z).norm().total_cmp(&(b - z).norm()))
            .unwrap_or(Complex64::new(0.0, 0.0));
        Error::PoleHit {
            z_re: z.re,
            z_im: z.im,
            eig_re: nearest.re,
            eig_im: nearest.im,
        }
    }

    pub fn eval(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        if z.norm() == 0.0 || !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::InvalidParameter(format!("transfer function needs finite z != 0, got {z}")));
        }
        let n = self.lti.n();
        if n == 0 {
            return Ok(self.d_c.clone());
        }
        let scale = 1.0 + self.eig.iter().map(|l| l.norm()).fold(0.0, f64::max);
        if self.eig.iter().any(|l| (l - z).norm() <= 1e-13 * scale) {
            return Err(self.pole_hit(z));
        }
        let zinv = z.inv();
        let mut m = &self.a_c * (-zinv);
        for i in 0..n {
            m[(i, i)] += Complex64::new(1.0, 0.0);
        }
        let x = m.lu().solve(&self.b_c).ok_or_else(|| self.pole_hit(z))?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(self.pole_hit(z));
        }
        Ok(&self.c_c * x + &self.d_c)
    }

    /// `H(e^{jω})`.
    pub fn eval_omega(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        self.eval(Complex64::from_polar(1.0, omega))
    }

    pub fn sigma_max(&self, omega: f64) -> Result<f64> {
        let h = self.eval_omega(omega)?;
        if h.is_empty() {
            return Ok(0.0);
        }
        Ok(h.singular_values().max())
    }
}

/// `H(z) = C(I − z⁻¹A)⁻¹B + D` by a direct complex linear solve. Logs a
/// warning when `|z| ≤ ρ(A)`, outside the region of convergence of the
/// kernel series.
pub fn transfer_eval(lti: &LtiModel, z: Complex64) -> Result<DMatrix<Complex64>> {
    let ev = TransferEvaluator::new(lti)?;
    if z.norm() <= ev.rho {
        log::warn!("|z| = {} is inside the spectral radius {}", z.norm(), ev.rho);
    }
    ev.eval(z)
}

const GROWTH_MIN_WINDOW: usize = 100;
const GROWTH_MAX_WINDOW: usize = 2000;
const RHO_FLOOR: f64 = 1e-3;

/// `h_k = CAᵏB` for `k ≤ K` by repeated multiplication, plus a tail bound
/// `c‖C‖‖B‖ρ^{K+1}/(1−ρ)`. The constant `c = sup ‖Aᵏ‖₂/ρᵏ` is measured over
/// `k ≤ K' = clamp(K, 100, 2000)` with `ρ` floored at `1e-3`, then inflated
/// by `1e-6` relative to cover the power-iteration tolerance. The tail is
/// exactly zero once some power `Aᵏ` with `k ≤ K+1` vanishes.
pub fn impulse_kernel(lti: &LtiModel, k_max: usize) -> Result<ImpulseKernel> {
    lti.validate()?;
    let n = lti.n();
    let mut blocks = Vec::with_capacity(k_max + 1);
    let mut akb = lti.b.clone();
    for _ in 0..=k_max {
        blocks.push(&lti.c * &akb);
        akb = &lti.a * akb;
    }
    let rho = if n == 0 { 0.0 } else { spectral_radius(&lti.a)? };
    let window = k_max.clamp(GROWTH_MIN_WINDOW, GROWTH_MAX_WINDOW);
    let rho_eff = rho.max(RHO_FLOOR);
    // Worked in logarithms: ρ_eff^k underflows long before the window ends.
    let mut log_c = 0.0_f64;
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut vanished_at = None;
    for k in 1..=window {
        power = &lti.a * power;
        let norm = spectral_norm(&power);
        if norm == 0.0 {
            vanished_at = Some(k);
            break;
        }
        log_c = log_c.max(norm.ln() - k as f64 * rho_eff.ln());
    }
    log_c += 1e-6_f64.ln_1p();
    let cb = spectral_norm(&lti.c) * spectral_norm(&lti.b);
    let tail_bound = match vanished_at {
        Some(k) if k <= k_max + 1 => 0.0,
        _ if n == 0 || cb == 0.0 => 0.0,
        _ if rho_eff >= 1.0 => f64::INFINITY,
        _ => (log_c + cb.ln() + (k_max as f64 + 1.0) * rho_eff.ln() - (-rho_eff).ln_1p()).exp(),
    };
    Ok(ImpulseKernel {
        blocks,
        truncation: k_max,
        tail_bound,
        growth_constant: log_c.exp(),
        growth_window: window,
        rho,
    })
}

/// Shortest kernel whose tail bound is at most `tol`, searching `K ≤ k_limit`.
pub fn impulse_kernel_auto(lti: &LtiModel, tol: f64, k_limit: usize) -> Result<ImpulseKernel> {
    let probe = impulse_kernel(lti, 0)?;
    if probe.tail_bound <= tol {
        return Ok(probe);
    }
    let rho_eff = probe.rho.max(RHO_FLOOR);
    if rho_eff >= 1.0 {
        return Err(Error::Unstable(probe.rho));
    }
    let scale = probe.tail_bound;
    // tail(K) = tail(0)·ρ^K up to the growth window; solve for K.
    let guess = ((tol / scale).ln() / rho_eff.ln()).ceil().max(0.0) as usize;
    let mut k = guess.min(k_limit);
    loop {
        let ker = impulse_kernel(lti, k)?;
        if ker.tail_bound <= tol {
            return Ok(ker);
        }
        if k >= k_limit {
            return Err(Error::IllConditioned(format!(
                "tail bound {:e} still above {tol:e} at K = {k_limit}",
                ker.tail_bound
            )));
        }
        k = (k + k / 4 + 1).min(k_limit);
    }
}

const MODAL_COND_LIMIT: f64 = 1e8;

/// Eigen-decomposition `A = VΛV⁻¹` and residues. Fails for nearly
/// defective `A`, where modal sums are numerically meaningless; analyse
/// the impulse kernel directly instead.
pub fn modal(lti: &LtiModel) -> Result<ModalDecomposition> {
    lti.validate()?;
    let (eigs, v) = eigen_decompose(&lti.a)?;
    let n = lti.n();
    let condition = if n == 0 { 1.0 } else { condition_number(&v) };
    if condition > MODAL_COND_LIMIT {
        return Err(Error::IllConditioned(format!(
            "eigenvector matrix has condition number {condition:e} > 1e8; A is close to defective, analyse the impulse kernel instead"
        )));
    }
    let w = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("eigenvector matrix".into()))?;
    let cv = to_complex(&lti.c) * &v;
    let wb = &w * to_complex(&lti.b);
    let residues = (0..n)
        .map(|i| cv.column(i).into_owned() * wb.row(i).into_owned())
        .collect();
    Ok(ModalDecomposition {
        eigenvalues: eigs,
        residues,
        feedthrough: lti.d.clone(),
        condition,
    })
}

/// Reachability and observability Gramians from the discrete Lyapunov
/// equations `W_c = AW_cAᵀ + BBᵀ`, `W_o = AᵀW_oA + CᵀC`.
pub fn gramians(lti: &LtiModel) -> Result<GramianPair> {
    lti.validate()?;
    let rho = spectral_radius(&lti.a)?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let wc = symmetrize(&solve_discrete_lyapunov(&lti.a, &(&lti.b * lti.b.transpose()))?);
    let wo = symmetrize(&solve_discrete_lyapunov(&lti.a.transpose(), &(lti.c.transpose() * &lti.c))?);
    let min_eig_wc = crate::linalg::sym_min_eigenvalue(&wc);
    let min_eig_wo = crate::linalg::sym_min_eigenvalue(&wo);
    Ok(GramianPair {
        wc,
        wo,
        min_eig_wc,
        min_eig_wo,
    })
}

fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s >= tol * smax).count()
}

/// Ranks of `[B AB … A^{n−1}B]` and its observability counterpart, with
/// singular values counted when `≥ tol·σ_max`.
pub fn ctrb_obsv_rank(lti: &LtiModel, tol: f64) -> Result<RankReport> {
    lti.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("rank tolerance must be > 0, got {tol}")));
    }
    let n = lti.n();
    let m = lti.m();
    let p = lti.p();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut blk = lti.b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = &lti.a * blk;
    }
    let mut obsv = DMatrix::zeros(n * p, n);
    let mut blk = lti.c.clone();
    for k in 0..n {
        obsv.view_mut((k * p, 0), (p, n)).copy_from(&blk);
        blk = blk * &lti.a;
    }
    let (min_eig_wc, min_eig_wo) = match gramians(lti) {
        Ok(g) => (Some(g.min_eig_wc), Some(g.min_eig_wo)),
        Err(Error::Unstable(_)) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(RankReport {
        rank_c: numerical_rank(&ctrb, tol),
        rank_o: numerical_rank(&obsv, tol),
        min_eig_wc,
        min_eig_wo,
    })
}

/// `‖H‖_{H2} = √tr(CW_cCᵀ)`; requires `D = 0`.
pub fn h2_norm(lti: &LtiModel) -> Result<f64> {
    lti.validate()?;
    if lti.has_feedthrough() {
        return Err(Error::InvalidParameter("H2 norm requires D = 0".into()));
    }
    let g = gramians(lti)?;
    Ok((&lti.c * &g.wc * lti.c.transpose()).trace().max(0.0).sqrt())
}

const GOLDEN_ROUNDS: usize = 3;
const GOLDEN_ITERS: usize = 20;

/// H∞ norm from a uniform grid on `[0, π]` plus golden-section refinement.
///
/// The grid argmax (lowest frequency on ties) seeds three rounds of 20
/// golden-section steps. Round one searches between the neighbouring grid
/// points; later rounds restart on a window of the previous bracket's width
/// centred on the best point found so far, which recovers from peaks that
/// the first bracket clipped.
pub fn hinf_norm_grid(lti: &LtiModel, grid_points: usize) -> Result<HinfEstimate> {
    if grid_points < 64 {
        return Err(Error::InvalidParameter(format!("grid needs at least 64 points, got {grid_points}")));
    }
    let ev = TransferEvaluator::new(lti)?;
    if ev.rho >= 1.0 {
        return Err(Error::Unstable(ev.rho));
    }
    let pi = std::f64::consts::PI;
    let step = pi / (grid_points - 1) as f64;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_w = 0.0;
    let mut best_j = 0;
    for j in 0..grid_points {
        let w = step * j as f64;
        let v = ev.sigma_max(w)?;
        if v > best_val {
            best_val = v;
            best_w = w;
            best_j = j;
        }
    }
    let mut lo = if best_j == 0 { 0.0 } else { step * (best_j - 1) as f64 };
    let mut hi = (step * (best_j + 1) as f64).min(pi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    for round in 0..GOLDEN_ROUNDS {
        if round > 0 {
            let half = 0.5 * (hi - lo).max(f64::EPSILON);
            lo = (best_w - half).max(0.0);
            hi = (best_w + half).min(pi);
        }
        let mut a = lo;
        let mut b = hi;
        let mut x1 = b - inv_phi * (b - a);
        let mut x2 = a + inv_phi * (b - a);
        let mut f1 = ev.sigma_max(x1)?;
        let mut f2 = ev.sigma_max(x2)?;
        for _ in 0..GOLDEN_ITERS {
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                f1 = ev.sigma_max(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                f2 = ev.sigma_max(x2)?;
            }
        }
        for (w, f) in [(x1, f1), (x2, f2)] {
            if f > best_val || (f == best_val && w < best_w) {
                best_val = f;
                best_w = w;
            }
        }
        lo = a;
        hi = b;
    }
    Ok(HinfEstimate {
        value: best_val,
        omega_peak: best_w,
        bracket: (lo, hi),
    })
}

/// `S_y(ω) = H(e^{jω}) S_u H(e^{jω})*` for a constant input spectral density.
pub fn output_psd(lti: &LtiModel, s_u: &DMatrix<Complex64>, omega: f64) -> Result<DMatrix<Complex64>> {
    let m = lti.m();
    if s_u.nrows() != m || s_u.ncols() != m {
        return Err(Error::Dimension(format!(
            "S_u must be {m}x{m}, got {}x{}",
            s_u.nrows(),
            s_u.ncols()
        )));
    }
    let herm = s_u - s_u.adjoint();
    let asym = herm.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = s_u.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric {
            what: "S_u".into(),
            asym,
        });
    }
    if m > 0 {
        let sym = (s_u + s_u.adjoint()) * Complex64::new(0.5, 0.0);
        let min_eig = sym.symmetric_eigenvalues().min();
        if min_eig < -1e-12 * scale {
            return Err(Error::NotPsd {
                what: "S_u".into(),
                min_eig,
            });
        }
    }
    let h = TransferEvaluator::new(lti)?.eval_omega(omega)?;
    Ok(&h * s_u * h.adjoint())
}

/// `Σ_k ‖h_k‖_F²` over the computed blocks.
pub fn kernel_energy(kernel: &ImpulseKernel) -> f64 {
    kernel.blocks.iter().map(|h| h.norm_squared()).sum()
}

/// Frequencies `ω_j = πj/(G−1)` and `σ_max(H(e^{jω_j}))` on a uniform grid.
pub fn sigma_grid(lti: &LtiModel, grid_points: usize) -> Result<Vec<(f64, DVector<f64>)>> {
    let ev = TransferEvaluator::new(lti)?;
    let denom = (grid_points.max(2) - 1) as f64;
    (0..grid_points)
        .map(|j| {
            let w = std::f64::consts::PI * j as f64 / denom;
            let h = ev.eval_omega(w)?;
            let sv = if h.is_empty() { DVector::zeros(0) } else { h.singular_values() };
            Ok((w, sv))
        })
        .collect()
}
