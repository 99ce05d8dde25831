//! Reference computations that share no code path with the library:
//! dense joint-Gaussian conditioning, direct frequency sums and quadrature.
#![allow(dead_code)]

use esnssm::rng::{standard_normal_mat, standard_normal_vec, Rng};
use esnssm::{Complex64, DMatrix, DVector};

pub fn gaussian_mat(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    standard_normal_mat(rng, rows, cols)
}

pub fn gaussian_vec(rng: &mut Rng, len: usize) -> DVector<f64> {
    standard_normal_vec(rng, len)
}

pub fn two_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Gaussian matrix rescaled to spectral norm `rho`, hence stable.
pub fn stable_matrix(rng: &mut Rng, n: usize, rho: f64) -> DMatrix<f64> {
    let g = gaussian_mat(rng, n, n);
    let s = two_norm(&g);
    g * (rho / s)
}

/// Orthogonal factor of a Gaussian matrix with the sign of `R`'s diagonal fixed.
pub fn orthogonal(rng: &mut Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_mat(rng, n, n).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn random_spd(rng: &mut Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let g = gaussian_mat(rng, n, n);
    (&g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1) * scale
}

/// Smoothed marginals of `x_0..x_T` and the data log-likelihood for
/// `x_{t+1} = Ax_t + Bu_t + w_t`, `y_{t+1} = Cx_{t+1} + v_{t+1}`, obtained by
/// writing every state as a linear map of `(x_0, w_0..w_{T−1})` and
/// conditioning the stacked Gaussian on all observations at once.
pub struct JointPosterior {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn joint_gaussian_posterior(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    mu0: &DVector<f64>,
    p0: &DMatrix<f64>,
    inputs: &[DVector<f64>],
    outputs: &[DVector<f64>],
) -> JointPosterior {
    let n = a.nrows();
    let p = c.nrows();
    let t_len = inputs.len();
    let dim_xi = n * (t_len + 1);
    // Covariance of ξ = (x_0, w_0, ..., w_{T−1}).
    let mut cov_xi = DMatrix::zeros(dim_xi, dim_xi);
    cov_xi.view_mut((0, 0), (n, n)).copy_from(p0);
    for s in 0..t_len {
        cov_xi.view_mut((n * (s + 1), n * (s + 1)), (n, n)).copy_from(q);
    }
    // x_t = M_t ξ + m_t.
    let mut maps = vec![DMatrix::zeros(n, dim_xi)];
    maps[0].view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    let mut offsets = vec![mu0.clone()];
    for s in 0..t_len {
        let mut next = a * &maps[s];
        let mut block = next.view_mut((0, n * (s + 1)), (n, n));
        block += DMatrix::<f64>::identity(n, n);
        maps.push(next);
        offsets.push(a * &offsets[s] + b * &inputs[s]);
    }
    let dim_x = n * (t_len + 1);
    let mut big_m = DMatrix::zeros(dim_x, dim_xi);
    let mut mean_x = DVector::zeros(dim_x);
    for t in 0..=t_len {
        big_m.view_mut((n * t, 0), (n, dim_xi)).copy_from(&maps[t]);
        mean_x.rows_mut(n * t, n).copy_from(&offsets[t]);
    }
    let cov_x = &big_m * &cov_xi * big_m.transpose();
    // y = H x + v, observing x_1..x_T.
    let dim_y = p * t_len;
    let mut h = DMatrix::zeros(dim_y, dim_x);
    let mut cov_v = DMatrix::zeros(dim_y, dim_y);
    let mut y = DVector::zeros(dim_y);
    for t in 0..t_len {
        h.view_mut((p * t, n * (t + 1)), (p, n)).copy_from(c);
        cov_v.view_mut((p * t, p * t), (p, p)).copy_from(r);
        y.rows_mut(p * t, p).copy_from(&outputs[t]);
    }
    let mean_y = &h * &mean_x;
    let cov_y = &h * &cov_x * h.transpose() + cov_v;
    let cov_xy = &cov_x * h.transpose();
    let lu = cov_y.clone().lu();
    let resid = &y - &mean_y;
    let gain_t = lu.solve(&cov_xy.transpose()).expect("innovation covariance is invertible");
    let post_mean = &mean_x + gain_t.transpose() * &resid;
    let post_cov = &cov_x - &cov_xy * &gain_t;
    let quad = resid.dot(&lu.solve(&resid).unwrap());
    let logdet = lu.determinant().ln();
    let loglik = -0.5 * (dim_y as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
    JointPosterior {
        means: (0..=t_len).map(|t| post_mean.rows(n * t, n).into_owned()).collect(),
        covs: (0..=t_len).map(|t| post_cov.view((n * t, n * t), (n, n)).into_owned()).collect(),
        loglik,
    }
}

fn complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// `Σ_k h_k e^{−jωk}` summed term by term.
pub fn dft_of_kernel(blocks: &[DMatrix<f64>], omega: f64) -> DMatrix<Complex64> {
    let (p, m) = blocks[0].shape();
    let mut acc = DMatrix::zeros(p, m);
    for (k, h) in blocks.iter().enumerate() {
        acc += complex(h) * Complex64::from_polar(1.0, -omega * k as f64);
    }
    acc
}

/// `C(I − e^{−jω}A)⁻¹B` by a dense complex solve.
pub fn transfer_direct(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, omega: f64) -> DMatrix<Complex64> {
    let n = a.nrows();
    let zinv = Complex64::from_polar(1.0, -omega);
    let lhs = DMatrix::<Complex64>::identity(n, n) - complex(a) * zinv;
    let x = lhs.lu().solve(&complex(b)).expect("no pole on the unit circle");
    complex(c) * x
}

/// `√((1/N)Σ ‖H(e^{jω_k})‖_F²)` on `N` equispaced frequencies over `[0, 2π)`.
pub fn h2_quadrature(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, points: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..points {
        let omega = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
        acc += transfer_direct(a, b, c, omega).iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    (acc / points as f64).sqrt()
}

/// `CAᵏB` for `k = 0..count` by repeated multiplication.
pub fn markov_direct(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, count: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut akb = b.clone();
    for _ in 0..count {
        out.push(c * &akb);
        akb = a * akb;
    }
    out
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn max_abs_diff_c(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
