//! Dense linear-algebra kernels shared by the analysis modules.
//!
//! Everything here works on `nalgebra` dynamic matrices in `f64`. The
//! nonsymmetric eigensolver balances the matrix (Parlett-Reinsch, radix 2)
//! before running a complex Schur decomposition; eigenvectors are recovered by
//! back-substitution on the triangular factor.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

pub(crate) const SYM_TOL: f64 = 1e-12;
pub(crate) const PSD_FLOOR: f64 = -1e-12;

pub fn check_finite_vec(what: &str, v: &DVector<f64>) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            what: what.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

/// Index reported is the row-major position of the first non-finite entry.
pub fn check_finite_mat(what: &str, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite {
                    what: what.to_string(),
                    index: i * m.ncols() + j,
                });
            }
        }
    }
    Ok(())
}

pub fn check_square(what: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn check_shape(what: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Dimension(format!(
            "{what} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn check_len(what: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!(
            "{what} must have length {len}, got {}",
            v.len()
        )));
    }
    Ok(())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn sym_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().max()
}

/// Checks symmetry to `1e-12` (relative to the largest entry, floor 1) and an
/// eigenvalue floor of `-1e-12`.
pub fn check_psd(what: &str, m: &DMatrix<f64>) -> Result<()> {
    check_square(what, m)?;
    check_finite_mat(what, m)?;
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > SYM_TOL * scale {
        return Err(Error::NotSymmetric {
            what: what.to_string(),
            asym,
        });
    }
    let min_eig = sym_min_eigenvalue(m);
    if min_eig < PSD_FLOOR * scale {
        return Err(Error::NotPsd {
            what: what.to_string(),
            min_eig,
        });
    }
    Ok(())
}

/// Symmetrizes and lifts every eigenvalue to at least `floor`. Returns the
/// repaired matrix and whether any eigenvalue had to be lifted.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= floor {
        return (sym, false);
    }
    let lifted = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&lifted) * eig.eigenvectors.transpose();
    (symmetrize(&rebuilt), true)
}

/// Cholesky factor of a symmetric matrix, retrying with growing diagonal
/// jitter (starting at `1e-12` relative) when the plain factorization fails.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return Some((ch, 0.0));
    }
    let n = sym.nrows();
    let scale = (sym.trace().abs() / n.max(1) as f64).max(1.0);
    let mut jitter = 1e-12 * scale;
    for _ in 0..6 {
        let trial = &sym + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = trial.cholesky() {
            return Some((ch, jitter));
        }
        jitter *= 100.0;
    }
    None
}

/// Largest singular value by power iteration on `MᵀM`.
///
/// Converges when the eigen-residual `‖MᵀMv − μv‖ ≤ 1e-10·μ`; after 10 000
/// iterations without convergence the value comes from a full SVD instead.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    spectral_norm_with(m, 1e-10, 10_000)
}

pub(crate) fn spectral_norm_with(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    // Deterministic start vector that is unlikely to be orthogonal to the top
    // right-singular vector.
    let mut v = DVector::from_fn(cols, |i, _| 1.0 + 0.1 * ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    v.normalize_mut();
    let mt = m.transpose();
    for _ in 0..max_iter {
        let w = &mt * (m * &v);
        let mu = v.dot(&w);
        let resid = (&w - &v * mu).norm();
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        if resid <= tol * mu.abs() {
            return mu.max(0.0).sqrt();
        }
        v = w / wn;
    }
    m.clone().singular_values().max()
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Parlett-Reinsch balancing with radix-2 scalings. Returns `D⁻¹AD` and the
/// diagonal of `D`.
pub fn balance(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut b = a.clone();
    let mut d = DVector::from_element(n, 1.0);
    const RADIX: f64 = 2.0;
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let mut rr = r;
            while cc < rr / RADIX {
                cc *= RADIX;
                rr /= RADIX;
                f *= RADIX;
            }
            while cc >= rr * RADIX {
                cc /= RADIX;
                rr *= RADIX;
                f /= RADIX;
            }
            if (cc + rr) < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..n {
                    b[(i, j)] /= f;
                }
                for j in 0..n {
                    b[(j, i)] *= f;
                }
            }
        }
    }
    (b, d)
}

/// Eigenvalues of a real square matrix (balanced real Schur form).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    check_square("matrix", a)?;
    check_finite_mat("matrix", a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (bal, _) = balance(a);
    let schur = nalgebra::Schur::try_new(bal, f64::EPSILON, 100 * n.max(10))
        .ok_or(Error::EigenNoConvergence(n))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// `max |λᵢ(A)|`.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Complex eigendecomposition `A = V diag(λ) V⁻¹` with unit-norm columns in
/// `V`. Does not check conditioning; callers decide what is acceptable.
pub fn eigen_decompose(a: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    check_square("matrix", a)?;
    check_finite_mat("matrix", a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let (bal, d) = balance(a);
    let schur = nalgebra::Schur::try_new(to_complex(&bal), f64::EPSILON, 100 * n.max(10))
        .ok_or(Error::EigenNoConvergence(n))?;
    let (q, t) = schur.unpack();
    let tnorm = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;
    let lambdas: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();

    // Eigenvectors of the triangular factor by back-substitution.
    let mut vt = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..n {
        let lk = lambdas[k];
        vt[(k, k)] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for l in (j + 1)..=k {
                acc += t[(j, l)] * vt[(l, k)];
            }
            let mut denom = t[(j, j)] - lk;
            if denom.norm() < small {
                denom = Complex64::new(small, 0.0);
            }
            vt[(j, k)] = -acc / denom;
        }
    }
    let mut v = q * vt;
    // Undo balancing: eigenvectors of A are D·v.
    for i in 0..n {
        for k in 0..n {
            v[(i, k)] *= d[i];
        }
    }
    for k in 0..n {
        let norm = v.column(k).norm();
        if norm > 0.0 {
            for i in 0..n {
                v[(i, k)] /= norm;
            }
        }
    }
    Ok((lambdas, v))
}

/// 2-norm condition number of a complex matrix.
pub fn condition_number(m: &DMatrix<Complex64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `X = A X Aᵀ + S` for `ρ(A) < 1`.
///
/// Small problems (`n ≤ 24`) use the vectorized Kronecker system; larger
/// ones run the squared-Smith doubling iteration `X ← X + AkXAkᵀ, Ak ← Ak²`.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square("A", a)?;
    let n = a.nrows();
    check_shape("S", s, n, n)?;
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let x = if n <= 24 {
        let nn = n * n;
        // vec(A X Aᵀ) = (A ⊗ A) vec(X) with column-major vec.
        let kron = a.kronecker(a);
        let lhs = DMatrix::<f64>::identity(nn, nn) - kron;
        let rhs = DVector::from_column_slice(s.as_slice());
        let sol = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("Kronecker Lyapunov system".into()))?;
        DMatrix::from_column_slice(n, n, sol.as_slice())
    } else {
        let mut x = s.clone();
        let mut ak = a.clone();
        let mut done = false;
        for _ in 0..64 {
            let incr = &ak * &x * ak.transpose();
            let inc_norm = incr.amax();
            x += incr;
            ak = &ak * &ak;
            if inc_norm <= 1e-17 * x.amax().max(f64::MIN_POSITIVE) || ak.amax() < 1e-300 {
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::IllConditioned(format!(
                "Lyapunov doubling did not converge (spectral radius {rho})"
            )));
        }
        x
    };
    Ok(if max_asymmetry(s) == 0.0 { symmetrize(&x) } else { x })
}

pub fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Padé coefficients and norm thresholds for scaling and squaring. The
// thresholds θ_m bound ‖A‖₁ so that the degree-m approximant has backward
// error below unit roundoff in double precision.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant of degree 3, 5, 7, 9 or 13.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square("matrix", a)?;
    check_finite_mat("matrix", a)?;
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    if n == 0 {
        return Ok(id);
    }
    let norm = norm1(a);
    for &(m, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return pade_low(a, coeffs);
        }
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-s);
    let b = &PADE13;
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1];
    let u = &scaled * inner_u;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .ok_or_else(|| Error::Singular("Padé denominator".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    // Even powers A^0, A^2, A^4, ...
    let mut even = vec![id.clone()];
    let degree = b.len() - 1;
    while 2 * even.len() <= degree {
        let next = even.last().unwrap() * &a2;
        even.push(next);
    }
    let mut u_inner = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for (k, coef) in b.iter().enumerate() {
        if k % 2 == 1 {
            u_inner += &even[k / 2] * *coef;
        } else {
            v += &even[k / 2] * *coef;
        }
    }
    let u = a * u_inner;
    (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .ok_or_else(|| Error::Singular("Padé denominator".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym_expm_oracle(a: &DMatrix<f64>) -> DMatrix<f64> {
        let eig = a.clone().symmetric_eigen();
        let e = eig.eigenvalues.map(f64::exp);
        &eig.eigenvectors * DMatrix::from_diagonal(&e) * eig.eigenvectors.transpose()
    }

    #[test]
    fn expm_matches_symmetric_eigen_oracle_across_norm_ranges() {
        for scale in [1e-3, 0.1, 0.5, 1.5, 4.0, 10.0] {
            let base = DMatrix::from_row_slice(3, 3, &[-1.0, 0.3, 0.1, 0.3, -0.5, 0.2, 0.1, 0.2, -0.8]);
            let a = &base * scale;
            let got = expm(&a).unwrap();
            let want = sym_expm_oracle(&a);
            let rel = (&got - &want).norm() / want.norm();
            assert!(rel < 1e-12, "scale {scale}: rel err {rel:e}");
        }
    }

    #[test]
    fn expm_of_rotation_generator() {
        let t = 0.7_f64;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&a).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        assert!((e - want).amax() < 1e-15);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 4.0, 1.0]);
        let svd = m.clone().singular_values().max();
        assert!((spectral_norm(&m) - svd).abs() < 1e-9 * svd);
    }

    #[test]
    fn lyapunov_paths_agree() {
        let n = 30;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 0.5 } else { 0.3 * (((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5) / n as f64 });
        let s = DMatrix::identity(n, n);
        let x = solve_discrete_lyapunov(&a, &s).unwrap();
        let resid = (&a * &x * a.transpose() + &s - &x).amax();
        assert!(resid < 1e-12, "resid {resid:e}");
        let small = a.view((0, 0), (5, 5)).into_owned();
        let xs = solve_discrete_lyapunov(&small, &DMatrix::identity(5, 5)).unwrap();
        let r2 = (&small * &xs * small.transpose() + DMatrix::identity(5, 5) - &xs).amax();
        assert!(r2 < 1e-12);
    }

    #[test]
    fn eigen_decompose_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.3, 0.4, 0.1, 0.0, 0.05, -0.2]);
        let (l, v) = eigen_decompose(&a).unwrap();
        let vinv = v.clone().try_inverse().unwrap();
        let rebuilt = &v * DMatrix::from_diagonal(&DVector::from_vec(l)) * vinv;
        let err = (rebuilt - to_complex(&a)).map(|z| z.norm()).max();
        assert!(err < 1e-12);
    }

    #[test]
    fn eigen_decompose_repeated_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 0.2]));
        let (_, v) = eigen_decompose(&a).unwrap();
        assert!(condition_number(&v) < 10.0);
    }

    #[test]
    fn balancing_preserves_spectrum() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1e6, 0.0, 1e-6, 2.0, 1e4, 0.0, 1e-4, 3.0]);
        let mut ev: Vec<f64> = eigenvalues(&a).unwrap().iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut direct: Vec<f64> = a.clone().complex_eigenvalues().iter().map(|z| z.re).collect();
        direct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (x, y) in ev.iter().zip(direct.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}
