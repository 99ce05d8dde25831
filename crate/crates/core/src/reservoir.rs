use nalgebra::{DMatrix, DVector};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linalg::{check_finite_mat, check_finite_vec, check_len, check_shape, spectral_norm};
use crate::rng::{seeded, GaussianSampler};

/// Fixed core of a leaky echo state network,
/// `x⁺ = (1−λ)x + λσ(Wx + Uu + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirParams {
    pub w: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub b: DVector<f64>,
    pub leak: f64,
    pub activation: Activation,
}

impl ReservoirParams {
    pub fn new(
        w: DMatrix<f64>,
        u: DMatrix<f64>,
        b: DVector<f64>,
        leak: f64,
        activation: Activation,
    ) -> Result<Self> {
        let p = Self {
            w,
            u,
            b,
            leak,
            activation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.w.nrows();
        if n == 0 {
            return Err(Error::Dimension("reservoir needs n >= 1".into()));
        }
        check_shape("W", &self.w, n, n)?;
        if self.u.nrows() != n {
            return Err(Error::Dimension(format!(
                "U must have {n} rows, got {}",
                self.u.nrows()
            )));
        }
        check_len("b", &self.b, n)?;
        if !(self.leak > 0.0 && self.leak <= 1.0) {
            return Err(Error::LeakOutOfRange(self.leak));
        }
        check_finite_mat("W", &self.w)?;
        check_finite_mat("U", &self.u)?;
        check_finite_vec("b", &self.b)?;
        self.activation.validate()
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.ncols()
    }

    /// `ξ = Wx + Uu + b`.
    pub fn preactivation(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.u * u + &self.b
    }

    /// State Lipschitz modulus `L_x = (1−λ) + λ‖W‖₂L_σ`.
    pub fn state_lipschitz(&self) -> f64 {
        (1.0 - self.leak) + self.leak * spectral_norm(&self.w) * self.activation.lipschitz()
    }

    /// Input Lipschitz modulus `L_u = λ‖U‖₂L_σ`.
    pub fn input_lipschitz(&self) -> f64 {
        self.leak * spectral_norm(&self.u) * self.activation.lipschitz()
    }

    fn check_point(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
        check_len("x", x, self.n())?;
        check_len("u", u, self.m())
    }

    pub(crate) fn step_unchecked(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let xi = self.preactivation(x, u);
        let act = &self.activation;
        x * (1.0 - self.leak) + xi.map(|v| act.value(v)) * self.leak
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl Readout {
    pub fn new(c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if c.nrows() != d.len() {
            return Err(Error::Dimension(format!(
                "readout C has {} rows but d has length {}",
                c.nrows(),
                d.len()
            )));
        }
        check_finite_mat("C", &c)?;
        check_finite_vec("d", &d)?;
        Ok(Self { c, d })
    }

    /// `C = I`, `d = 0`.
    pub fn identity(n: usize) -> Self {
        Self {
            c: DMatrix::identity(n, n),
            d: DVector::zeros(n),
        }
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d
    }
}

/// States `x_0..x_T`, inputs `u_0..u_{T−1}` and optional outputs
/// `y_t = Cx_t + d (+ v_t)` for `t = 0..T−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.inputs.len() + 1 {
            return Err(Error::Dimension(format!(
                "trajectory has {} states for {} inputs",
                self.states.len(),
                self.inputs.len()
            )));
        }
        if let Some(y) = &self.outputs {
            if y.len() != self.inputs.len() {
                return Err(Error::Dimension(format!(
                    "trajectory has {} outputs for {} inputs",
                    y.len(),
                    self.inputs.len()
                )));
            }
        }
        Ok(())
    }
}

/// Optional Gaussian noise for [`simulate`]: process noise `ω_t ~ N(0, Q)`
/// added to every state update, and measurement noise `v_t ~ N(0, R)` added
/// to every output when a readout is present.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationNoise {
    pub q: Option<DMatrix<f64>>,
    pub r: Option<DMatrix<f64>>,
    pub seed: u64,
}

/// `f(x, u) = (1−λ)x + λσ(Wx + Uu + b)`.
pub fn reservoir_step(p: &ReservoirParams, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    p.check_point(x, u)?;
    Ok(p.step_unchecked(x, u))
}

/// Iterates [`reservoir_step`] from `x0`. With noise, each step draws the
/// measurement sample (if any) before the process sample from a single
/// seeded stream.
pub fn simulate(
    p: &ReservoirParams,
    readout: Option<&Readout>,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    noise: Option<&SimulationNoise>,
) -> Result<Trajectory> {
    p.validate()?;
    check_len("x0", x0, p.n())?;
    check_finite_vec("x0", x0)?;
    for (t, u) in inputs.iter().enumerate() {
        if u.len() != p.m() {
            return Err(Error::Dimension(format!(
                "input {t} has length {}, expected {}",
                u.len(),
                p.m()
            )));
        }
        check_finite_vec(&format!("input {t}"), u)?;
    }
    if let Some(r) = readout {
        if r.c.ncols() != p.n() {
            return Err(Error::Dimension(format!(
                "readout C has {} columns, reservoir has n = {}",
                r.c.ncols(),
                p.n()
            )));
        }
    }

    let mut process = None;
    let mut measurement = None;
    let mut rng = None;
    if let Some(nz) = noise {
        if let Some(q) = &nz.q {
            check_shape("Q", q, p.n(), p.n())?;
            process = Some(GaussianSampler::new("Q", q)?);
        }
        if let (Some(r), Some(ro)) = (&nz.r, readout) {
            check_shape("R", r, ro.p(), ro.p())?;
            measurement = Some(GaussianSampler::new("R", r)?);
        }
        rng = Some(seeded(nz.seed));
    }

    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut outputs = readout.map(|_| Vec::with_capacity(inputs.len()));
    states.push(x0.clone());
    for u in inputs {
        let x = states.last().unwrap();
        if let (Some(ro), Some(ys)) = (readout, outputs.as_mut()) {
            let mut y = ro.apply(x);
            if let (Some(s), Some(g)) = (&measurement, rng.as_mut()) {
                y += s.sample(g);
            }
            ys.push(y);
        }
        let mut next = p.step_unchecked(x, u);
        if let (Some(s), Some(g)) = (&process, rng.as_mut()) {
            next += s.sample(g);
        }
        states.push(next);
    }
    Ok(Trajectory {
        states,
        inputs: inputs.to_vec(),
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: DMatrix<f64>, u: DMatrix<f64>, leak: f64, act: Activation) -> ReservoirParams {
        let n = w.nrows();
        ReservoirParams::new(w, u, DVector::zeros(n), leak, act).unwrap()
    }

    #[test]
    fn saturating_zero_preactivation() {
        let p = params(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 1.0, Activation::Tanh);
        let x = DVector::from_vec(vec![3.0, -1.0]);
        let y = reservoir_step(&p, &x, &DVector::zeros(2)).unwrap();
        assert_eq!(y, DVector::zeros(2));
    }

    #[test]
    fn pure_leak() {
        let p = params(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), 0.5, Activation::Tanh);
        let y = reservoir_step(&p, &DVector::from_vec(vec![2.0]), &DVector::zeros(1)).unwrap();
        assert_eq!(y[0], 1.0);
    }

    #[test]
    fn identity_activation_is_linear_recursion() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let p = params(a.clone(), b.clone(), 1.0, Activation::Identity);
        let inputs: Vec<_> = (0..50).map(|t| DVector::from_vec(vec![(t as f64 * 0.3).sin()])).collect();
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let traj = simulate(&p, None, &x0, &inputs, None).unwrap();
        let mut x = x0;
        for (t, u) in inputs.iter().enumerate() {
            x = &a * &x + &b * u;
            assert!((&traj.states[t + 1] - &x).amax() <= 1e-12);
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let p = params(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 2), 0.7, Activation::Tanh);
        let ro = Readout::identity(2);
        let noise = SimulationNoise {
            q: Some(DMatrix::identity(2, 2) * 0.01),
            r: Some(DMatrix::identity(2, 2) * 0.1),
            seed: 42,
        };
        let inputs = vec![DVector::from_vec(vec![0.1, 0.2]); 30];
        let a = simulate(&p, Some(&ro), &DVector::zeros(2), &inputs, Some(&noise)).unwrap();
        let b = simulate(&p, Some(&ro), &DVector::zeros(2), &inputs, Some(&noise)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&p, Some(&ro), &DVector::zeros(2), &inputs, Some(&SimulationNoise { seed: 43, ..noise })).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_input_zero_state_stays_zero() {
        let p = params(DMatrix::identity(3, 3) * 0.9, DMatrix::identity(3, 1), 0.3, Activation::Tanh);
        let traj = simulate(&p, None, &DVector::zeros(3), &vec![DVector::zeros(1); 20], None).unwrap();
        assert!(traj.states.iter().all(|x| x.amax() == 0.0));
    }

    #[test]
    fn rejects_non_psd_q() {
        let p = params(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), 1.0, Activation::Tanh);
        let noise = SimulationNoise {
            q: Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1])),
            r: None,
            seed: 0,
        };
        let err = simulate(&p, None, &DVector::zeros(2), &[DVector::zeros(1)], Some(&noise)).unwrap_err();
        assert_eq!(err.code(), "not_psd");
        let asym = SimulationNoise {
            q: Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0])),
            r: None,
            seed: 0,
        };
        let err = simulate(&p, None, &DVector::zeros(2), &[DVector::zeros(1)], Some(&asym)).unwrap_err();
        assert_eq!(err.code(), "not_symmetric");
    }

    #[test]
    fn leak_range_enforced() {
        let r = ReservoirParams::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DVector::zeros(1), 0.0, Activation::Tanh);
        assert_eq!(r.unwrap_err(), Error::LeakOutOfRange(0.0));
    }
}
