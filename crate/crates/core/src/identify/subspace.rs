use nalgebra::{DMatrix, DVector};

use super::{project_structured, StructuredBasis, StructuredProjection};
use crate::error::{Error, Result};
use crate::linalg::check_len;
use crate::stability::Certificate;

/// Markov parameters `g_k = CAᵏB`, `k = 0, 1, …`: `g_k` is the output `k+1`
/// steps after a unit input.
#[derive(Debug, Clone, PartialEq)]
pub enum SubspaceData {
    Impulse(Vec<DMatrix<f64>>),
    /// Rows `(u_t, y_t)` with `y_t` depending on `u_{t−1}, u_{t−2}, …`;
    /// Markov parameters are estimated by FIR least squares of length
    /// `fir_len`.
    InputOutput {
        inputs: Vec<DVector<f64>>,
        outputs: Vec<DVector<f64>>,
        fir_len: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceOptions {
    pub order: usize,
    /// Singular values below this floor (and below `1e-8·σ₁`) do not count
    /// towards the Hankel rank.
    pub sv_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoKalman {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

impl HoKalman {
    pub fn markov(&self, k: usize) -> DMatrix<f64> {
        let mut akb = self.b.clone();
        for _ in 0..k {
            akb = &self.a * akb;
        }
        &self.c * akb
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceResult {
    pub realization: HoKalman,
    /// Realized `A` padded with zeros to the basis dimension.
    pub a_embedded: DMatrix<f64>,
    pub projection: StructuredProjection,
    pub certificate: Certificate,
}

/// `σ_min/√cols` of the depth-`depth` block-Toeplitz input matrix whose
/// columns are the stacked windows `[u_{j+depth−1}; …; u_j]`.
pub fn excitation_margin(inputs: &[DVector<f64>], depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(Error::InvalidParameter("excitation depth must be >= 1".into()));
    }
    if inputs.len() < depth {
        return Err(Error::Dimension(format!(
            "{} inputs cannot fill a depth-{depth} window",
            inputs.len()
        )));
    }
    let m = inputs[0].len();
    let cols = inputs.len() - depth + 1;
    let toeplitz = DMatrix::from_fn(depth * m, cols, |r, j| inputs[j + depth - 1 - r / m][r % m]);
    let sv = toeplitz.singular_values();
    let sigma_min = if depth * m > cols { 0.0 } else { sv.min() };
    Ok(sigma_min / (cols as f64).sqrt())
}

fn check_io(inputs: &[DVector<f64>], outputs: &[DVector<f64>]) -> Result<(usize, usize)> {
    if inputs.len() != outputs.len() || inputs.is_empty() {
        return Err(Error::Dimension(format!(
            "need equally many (>= 1) inputs and outputs, got {} and {}",
            inputs.len(),
            outputs.len()
        )));
    }
    let m = inputs[0].len();
    let p = outputs[0].len();
    for (t, (u, y)) in inputs.iter().zip(outputs).enumerate() {
        check_len(&format!("input {t}"), u, m)?;
        check_len(&format!("output {t}"), y, p)?;
    }
    Ok((m, p))
}

/// Least-squares FIR fit `y_t ≈ Σ_{k<L} g_k u_{t−1−k}` over `t = L..T−1`.
pub fn estimate_markov(inputs: &[DVector<f64>], outputs: &[DVector<f64>], fir_len: usize) -> Result<Vec<DMatrix<f64>>> {
    let (m, p) = check_io(inputs, outputs)?;
    if fir_len == 0 {
        return Err(Error::InvalidParameter("FIR length must be >= 1".into()));
    }
    let rows = inputs.len().saturating_sub(fir_len);
    let cols = fir_len * m;
    if rows < cols {
        return Err(Error::Dimension(format!(
            "{rows} regression rows for {cols} FIR coefficients"
        )));
    }
    let phi = DMatrix::from_fn(rows, cols, |i, j| inputs[i + fir_len - 1 - j / m][j % m]);
    let target = DMatrix::from_fn(rows, p, |i, j| outputs[i + fir_len][j]);
    let svd = phi.svd(true, true);
    let tol = svd.singular_values.max() * f64::EPSILON * rows.max(cols) as f64;
    if svd.singular_values.min() <= tol {
        return Err(Error::RankDeficient("FIR regressor; inputs are not exciting enough".into()));
    }
    let theta = svd.solve(&target, tol).map_err(|e| Error::Singular(e.to_string()))?;
    Ok((0..fir_len)
        .map(|k| theta.rows(k * m, m).transpose())
        .collect())
}

/// Balanced realization of order `r` from the block Hankel matrix of `g`
/// with `s = ⌊len/2⌋` block rows and columns.
pub fn ho_kalman(markov: &[DMatrix<f64>], order: usize, sv_floor: f64) -> Result<HoKalman> {
    if order == 0 {
        return Err(Error::InvalidParameter("model order must be >= 1".into()));
    }
    if markov.is_empty() {
        return Err(Error::Dimension("no Markov parameters".into()));
    }
    let p = markov[0].nrows();
    let m = markov[0].ncols();
    for (k, g) in markov.iter().enumerate() {
        if g.nrows() != p || g.ncols() != m {
            return Err(Error::Dimension(format!("Markov parameter {k} must be {p}x{m}")));
        }
    }
    let s = markov.len() / 2;
    if s * p.min(m) < order || s < 1 {
        return Err(Error::Dimension(format!(
            "{} Markov parameters give {s} block rows, too few for order {order}",
            markov.len()
        )));
    }
    let hankel = |shift: usize| DMatrix::from_fn(s * p, s * m, |i, j| markov[i / p + j / m + shift][(i % p, j % m)]);
    let h0 = hankel(0);
    let h1 = hankel(1);
    let svd = h0.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // nalgebra does not sort singular values.
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let threshold = (1e-8 * sv[0]).max(sv_floor);
    let rank = sv.iter().filter(|&&v| v >= threshold && v > 0.0).count();
    if rank < order {
        return Err(Error::RankDeficient(format!("Hankel rank {rank} is below the requested order {order}")));
    }
    let u_r = DMatrix::from_fn(s * p, order, |i, j| u[(i, idx[j])]);
    let v_r = DMatrix::from_fn(s * m, order, |i, j| v_t[(idx[j], i)]);
    let sqrt = DVector::from_fn(order, |j, _| sv[j].sqrt());
    let inv_sqrt = sqrt.map(|v| 1.0 / v);
    let mut obs = u_r.clone();
    let mut ctr = v_r.transpose();
    for j in 0..order {
        obs.column_mut(j).scale_mut(sqrt[j]);
        ctr.row_mut(j).scale_mut(sqrt[j]);
    }
    let mut a = u_r.transpose() * h1 * v_r;
    for i in 0..order {
        a.row_mut(i).scale_mut(inv_sqrt[i]);
        a.column_mut(i).scale_mut(inv_sqrt[i]);
    }
    Ok(HoKalman {
        a,
        b: ctr.columns(0, m).into_owned(),
        c: obs.rows(0, p).into_owned(),
        singular_values: sv,
    })
}

/// Ho–Kalman realization followed by projection of `A` onto the reservoir
/// family `span{I, W̄}` with the small-gain feasibility constraint.
///
/// The realization lives in its own balanced coordinates; the projection is
/// taken in those coordinates, zero-padded to the basis dimension when
/// `r < n`.
pub fn subspace_shape(data: &SubspaceData, opts: SubspaceOptions, basis: &StructuredBasis) -> Result<SubspaceResult> {
    let n = basis.n();
    if opts.order > n {
        return Err(Error::InvalidParameter(format!(
            "order {} exceeds the reservoir dimension {n}",
            opts.order
        )));
    }
    let markov = match data {
        SubspaceData::Impulse(g) => g.clone(),
        SubspaceData::InputOutput {
            inputs,
            outputs,
            fir_len,
        } => {
            check_io(inputs, outputs)?;
            let margin = excitation_margin(inputs, opts.order)?;
            if !(margin > 1e-8) {
                return Err(Error::NotExciting {
                    depth: opts.order,
                    sigma_min: margin,
                });
            }
            estimate_markov(inputs, outputs, *fir_len)?
        }
    };
    let realization = ho_kalman(&markov, opts.order, opts.sv_floor)?;
    let mut a_embedded = DMatrix::zeros(n, n);
    a_embedded
        .view_mut((0, 0), (opts.order, opts.order))
        .copy_from(&realization.a);
    let projection = project_structured(&a_embedded, basis)?;
    let certificate = projection.certificate.clone();
    Ok(SubspaceResult {
        realization,
        a_embedded,
        projection,
        certificate,
    })
}
