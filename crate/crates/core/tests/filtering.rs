mod oracles;

use esnssm::identify::{ekf_filter, kalman_filter, kalman_smoother, IdData, NoiseModel, Prior};
use esnssm::predict::predictive;
use esnssm::rng::{seeded, Rng};
use esnssm::{Activation, DMatrix, DVector, LtiModel, Readout, ReservoirParams};
use oracles::*;
use rand::Rng as _;

struct Case {
    lti: LtiModel,
    noise: NoiseModel,
    prior: Prior,
    data: IdData,
}

fn random_case(rng: &mut Rng) -> Case {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let p = rng.random_range(1..=2);
    let t = rng.random_range(1..=8);
    let a = stable_matrix(rng, n, 0.9);
    let b = gaussian_mat(rng, n, m);
    let c = gaussian_mat(rng, p, n);
    let q = random_spd(rng, n, 0.2);
    let r = random_spd(rng, p, 0.3);
    let mu0 = gaussian_vec(rng, n);
    let p0 = random_spd(rng, n, 1.0);
    let inputs: Vec<_> = (0..t).map(|_| gaussian_vec(rng, m)).collect();
    let outputs: Vec<_> = (0..t).map(|_| gaussian_vec(rng, p)).collect();
    Case {
        lti: LtiModel::strictly_proper(a, b, c).unwrap(),
        noise: NoiseModel::new(q, r).unwrap(),
        prior: Prior::new(mu0, p0).unwrap(),
        data: IdData::new(inputs, outputs).unwrap(),
    }
}

fn oracle(case: &Case) -> JointPosterior {
    joint_gaussian_posterior(
        &case.lti.a,
        &case.lti.b,
        &case.lti.c,
        &case.noise.q,
        &case.noise.r,
        &case.prior.mean,
        &case.prior.cov,
        &case.data.inputs,
        &case.data.outputs,
    )
}

#[test]
fn smoother_matches_joint_conditioning() {
    let mut rng = seeded(11);
    for _ in 0..20 {
        let case = random_case(&mut rng);
        let post = kalman_smoother(&case.lti, &case.noise, &case.data, &case.prior).unwrap();
        let want = oracle(&case);
        for t in 0..want.means.len() {
            assert!((&post.smoothed_means[t] - &want.means[t]).amax() < 1e-9);
            assert!(max_abs_diff(&post.smoothed_covs[t], &want.covs[t]) < 1e-9);
        }
        assert!((post.loglik - want.loglik).abs() < 1e-8 * (1.0 + want.loglik.abs()));
    }
}

#[test]
fn filter_last_marginal_matches_joint_conditioning() {
    let mut rng = seeded(12);
    for _ in 0..20 {
        let case = random_case(&mut rng);
        let post = kalman_filter(&case.lti, &case.noise, &case.data, &case.prior).unwrap();
        let want = oracle(&case);
        let last = want.means.len() - 1;
        assert!((&post.filtered_means[last] - &want.means[last]).amax() < 1e-9);
        assert!(max_abs_diff(&post.filtered_covs[last], &want.covs[last]) < 1e-9);
    }
}

#[test]
fn ekf_reduces_to_kalman_for_linear_activation() {
    let mut rng = seeded(13);
    let (n, m, p, t) = (3, 2, 2, 25);
    let w = stable_matrix(&mut rng, n, 0.8);
    let u = gaussian_mat(&mut rng, n, m);
    let b = gaussian_vec(&mut rng, n) * 0.1;
    let leak = 0.7;
    let params = ReservoirParams::new(w.clone(), u.clone(), b.clone(), leak, Activation::Identity).unwrap();
    let readout = Readout::new(gaussian_mat(&mut rng, p, n), DVector::zeros(p)).unwrap();
    let noise = NoiseModel::new(random_spd(&mut rng, n, 0.05), random_spd(&mut rng, p, 0.1)).unwrap();
    let prior = Prior::new(gaussian_vec(&mut rng, n), DMatrix::identity(n, n)).unwrap();
    let inputs: Vec<_> = (0..t).map(|_| gaussian_vec(&mut rng, m)).collect();
    let outputs: Vec<_> = (0..t).map(|_| gaussian_vec(&mut rng, p)).collect();
    let data = IdData::new(inputs.clone(), outputs.clone()).unwrap();
    let ekf = ekf_filter(&params, &readout, &noise, &data, &prior).unwrap();

    // Affine model: fold the bias into an extra constant input.
    let a = DMatrix::identity(n, n) * (1.0 - leak) + &w * leak;
    let mut b_aug = DMatrix::zeros(n, m + 1);
    b_aug.view_mut((0, 0), (n, m)).copy_from(&(&u * leak));
    b_aug.set_column(m, &(&b * leak));
    let lti = LtiModel::strictly_proper(a, b_aug, readout.c.clone()).unwrap();
    let aug_inputs = inputs.iter().map(|v| v.clone().insert_row(m, 1.0)).collect();
    let kf = kalman_filter(&lti, &noise, &IdData::new(aug_inputs, outputs).unwrap(), &prior).unwrap();
    for k in 0..=t {
        assert!((&ekf.filtered_means[k] - &kf.filtered_means[k]).amax() < 1e-10);
        assert!(max_abs_diff(&ekf.filtered_covs[k], &kf.filtered_covs[k]) < 1e-10);
    }
    assert!((ekf.loglik - kf.loglik).abs() < 1e-8);
}

#[test]
fn ekf_tracks_a_mildly_nonlinear_reservoir() {
    let mut rng = seeded(14);
    let (n, t) = (4, 400);
    let w = stable_matrix(&mut rng, n, 0.7);
    let u = gaussian_mat(&mut rng, n, 1) * 0.5;
    let params = ReservoirParams::new(w, u, DVector::zeros(n), 0.6, Activation::Tanh).unwrap();
    let readout = Readout::new(DMatrix::identity(n, n), DVector::zeros(n)).unwrap();
    let q = DMatrix::identity(n, n) * 1e-3;
    let r = DMatrix::identity(n, n) * 1e-2;
    let noise = esnssm::SimulationNoise {
        q: Some(q.clone()),
        r: Some(r.clone()),
        seed: 99,
    };
    let inputs: Vec<_> = (0..t).map(|_| gaussian_vec(&mut rng, 1)).collect();
    let traj = esnssm::simulate(&params, Some(&readout), &DVector::zeros(n), &inputs, Some(&noise)).unwrap();
    let ys = traj.outputs.unwrap();
    let data = IdData::from_readout_rows(&inputs, &ys).unwrap();
    let prior = Prior::new(DVector::zeros(n), DMatrix::identity(n, n) * 1e-6).unwrap();
    let post = ekf_filter(&params, &readout, &NoiseModel::new(q, r).unwrap(), &data, &prior).unwrap();
    let mut inside = 0;
    let mut total = 0;
    for k in 1..=data.len() {
        for i in 0..n {
            let sd = post.filtered_covs[k][(i, i)].sqrt();
            if (post.filtered_means[k][i] - traj.states[k][i]).abs() <= 3.0 * sd {
                inside += 1;
            }
            total += 1;
        }
    }
    let frac = inside as f64 / total as f64;
    assert!(frac > 0.97, "3σ coverage {frac}");
}

#[test]
fn multi_step_prediction_covers_monte_carlo_draws() {
    let mut rng = seeded(15);
    let lti = LtiModel::strictly_proper(
        DMatrix::from_row_slice(2, 2, &[0.8, 0.2, -0.1, 0.7]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
    )
    .unwrap();
    let noise = NoiseModel::new(DMatrix::identity(2, 2) * 0.05, DMatrix::identity(1, 1) * 0.1).unwrap();
    let mean = DVector::from_vec(vec![0.3, -0.2]);
    let cov = DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);
    let future: Vec<_> = (0..4).map(|k| DVector::from_element(1, 0.1 * k as f64)).collect();
    let dist = predictive(&lti, &noise, &mean, &cov, &future).unwrap();

    let trials = 20_000;
    let qs = noise.q.clone().cholesky().unwrap().l();
    let cs = cov.clone().cholesky().unwrap().l();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        let mut x = &mean + &cs * gaussian_vec(&mut rng, 2);
        for u in &future {
            x = &lti.a * x + &lti.b * u + &qs * gaussian_vec(&mut rng, 2);
        }
        let y = (&lti.c * x)[0] + noise.r[(0, 0)].sqrt() * gaussian_vec(&mut rng, 1)[0];
        sum += y;
        sum_sq += y * y;
    }
    let mc_mean = sum / trials as f64;
    let mc_var = sum_sq / trials as f64 - mc_mean * mc_mean;
    let var = dist.covariance[(0, 0)];
    assert!((mc_mean - dist.mean[0]).abs() < 4.0 * (var / trials as f64).sqrt());
    assert!((mc_var / var - 1.0).abs() < 0.05);
}
