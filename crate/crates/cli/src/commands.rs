use std::path::Path;

use esnssm::design::{design_reservoir, DesignSpec};
use esnssm::discretize::{ct_jacobians, euler_leak, tustin_leak, zoh_discretize};
use esnssm::freq::{h2_norm, hinf_norm_grid, impulse_kernel, impulse_kernel_auto, sigma_grid};
use esnssm::identify::{
    em_run, kalman_filter, readout_bayes, readout_ml, subspace_shape, EmOptions, EmParams, IdData, NoiseModel, Prior,
    ReadoutOptions, StateEstimates, StructuredBasis, SubspaceData, SubspaceOptions,
};
use esnssm::io::{matrix_to_rows, opt_rows, opt_vector, rows, LtiFile, ModelFile, NoiseFile};
use esnssm::lift::{edmd_fit, lifted_rollout_error, Dictionary, DictionaryKind};
use esnssm::predict::predictive;
use esnssm::rng::{seeded, standard_normal_vec};
use esnssm::stability::{best_certificate, memory_horizon, spectral_radius};
use esnssm::{
    certify_lipschitz, certify_spectral, certify_weighted, jacobians_at, remainder_bound, DMatrix, DVector,
    LtiModel, Readout, ReservoirParams, SimulationNoise, Trajectory,
};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::files::{csv_text, names, write_atomic};
use crate::{
    CertifyArgs, CliError, Ctx, DesignArgs, DiscretizeArgs, EmArgs, InputSource, KernelArgs, LiftArgs, LinearizeArgs,
    PredictArgs, ReadoutArgs, SimulateArgs, SpectrumArgs, SubspaceArgs,
};

type Out = Result<Value, CliError>;

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_model(ctx: &mut Ctx, path: &Path) -> Result<(ReservoirParams, Option<Readout>), CliError> {
    let file: ModelFile = ctx.log.json("model", path)?;
    Ok(file.to_parts()?)
}

fn load_lti(ctx: &mut Ctx, path: &Path) -> Result<LtiModel, CliError> {
    let file: LtiFile = ctx.log.json("lti", path)?;
    Ok(file.to_model()?)
}

fn load_noise(ctx: &mut Ctx, path: &Path) -> Result<NoiseModel, CliError> {
    let file: NoiseFile = ctx.log.json("noise", path)?;
    Ok(file.to_model()?)
}

fn input_sequence(ctx: &mut Ctx, src: &InputSource, m: usize) -> Result<Vec<DVector<f64>>, CliError> {
    match (&src.inputs, src.steps) {
        (Some(path), _) => {
            let table = ctx.log.table("inputs", path)?;
            if table.u.first().map_or(0, |u| u.len()) != m {
                return Err(CliError::Schema(format!(
                    "{}: expected {m} input columns u_1..u_{m}",
                    path.display()
                )));
            }
            Ok(table.u)
        }
        (None, Some(steps)) => {
            if !(src.input_std >= 0.0) || !src.input_std.is_finite() {
                return Err(esnssm::Error::InvalidParameter(format!(
                    "input std must be finite and >= 0, got {}",
                    src.input_std
                ))
                .into());
            }
            let mut rng = seeded(ctx.seed);
            Ok((0..steps).map(|_| standard_normal_vec(&mut rng, m) * src.input_std).collect())
        }
        (None, None) => Err(CliError::Schema("either --inputs or --steps is required".into())),
    }
}

fn trajectory_csv(traj: &Trajectory, states_as_outputs: bool) -> String {
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let outputs: Vec<&DVector<f64>> = match &traj.outputs {
        Some(y) if !states_as_outputs => y.iter().collect(),
        _ => traj.states[..traj.len()].iter().collect(),
    };
    let p = outputs.first().map_or(0, |y| y.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(names("u", m))
        .chain(names("y", p))
        .collect();
    let rows = (0..traj.len()).map(|t| {
        let mut row = vec![t as f64];
        row.extend(traj.inputs[t].iter());
        row.extend(outputs[t].iter());
        row
    });
    csv_text(&header, rows)
}

fn states_csv(traj: &Trajectory) -> String {
    let n = traj.states[0].len();
    let header: Vec<String> = std::iter::once("t".to_string()).chain(names("x", n)).collect();
    let rows = traj.states.iter().enumerate().map(|(t, x)| {
        let mut row = vec![t as f64];
        row.extend(x.iter());
        row
    });
    csv_text(&header, rows)
}

pub fn simulate(a: &SimulateArgs, ctx: &mut Ctx) -> Out {
    let (params, readout) = load_model(ctx, &a.model)?;
    let inputs = input_sequence(ctx, &a.source, params.m())?;
    let noise = match &a.noise {
        Some(path) => {
            let nm = load_noise(ctx, path)?;
            Some(SimulationNoise {
                q: Some(nm.q),
                r: readout.as_ref().map(|_| nm.r),
                seed: ctx.seed,
            })
        }
        None => None,
    };
    let x0 = DVector::zeros(params.n());
    let traj = esnssm::simulate(&params, readout.as_ref(), &x0, &inputs, noise.as_ref())?;
    if let Some(path) = &a.data_out {
        write_atomic(path, trajectory_csv(&traj, readout.is_none()).as_bytes())?;
    }
    if let Some(path) = &a.states_out {
        write_atomic(path, states_csv(&traj).as_bytes())?;
    }
    let max_state = traj.states.iter().map(|x| x.amax()).fold(0.0, f64::max);
    Ok(json!({
        "steps": traj.len(),
        "n": params.n(),
        "m": params.m(),
        "p": readout.as_ref().map(|r| r.p()),
        "noisy": noise.is_some(),
        "final_state": vec_json(traj.states.last().expect("x_0 is always present")),
        "max_abs_state": max_state,
    }))
}

pub fn certify(a: &CertifyArgs, ctx: &mut Ctx) -> Out {
    let (params, _) = load_model(ctx, &a.model)?;
    let origin_x = DVector::zeros(params.n());
    let origin_u = DVector::zeros(params.m());
    let certs = vec![
        certify_lipschitz(&params)?,
        certify_spectral(&params, &origin_x, &origin_u)?,
        certify_weighted(&params, a.vertex_budget)?,
    ];
    let best = best_certificate(&certs).cloned();
    let horizon = match (a.epsilon, &best) {
        (Some(eps), Some(cert)) if cert.passed() => Some(memory_horizon(
            cert.kappa,
            params.input_lipschitz().max(f64::MIN_POSITIVE),
            a.amplitude,
            eps,
        )?),
        _ => None,
    };
    Ok(json!({
        "certificates": to_value(&certs),
        "best": best.as_ref().map(to_value),
        "fading_memory": best.as_ref().is_some_and(|c| c.passed()),
        "state_lipschitz": params.state_lipschitz(),
        "input_lipschitz": params.input_lipschitz(),
        "memory_horizon": horizon.as_ref().map(to_value),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PointFile {
    x_bar: Vec<f64>,
    #[serde(default)]
    u_bar: Option<Vec<f64>>,
}

pub fn linearize(a: &LinearizeArgs, ctx: &mut Ctx) -> Out {
    let (params, readout) = load_model(ctx, &a.model)?;
    let (x_bar, u_bar) = match &a.point {
        Some(path) => {
            let pt: PointFile = ctx.log.json("point", path)?;
            (
                DVector::from_vec(pt.x_bar),
                pt.u_bar.map_or_else(|| DVector::zeros(params.m()), DVector::from_vec),
            )
        }
        None => (DVector::zeros(params.n()), DVector::zeros(params.m())),
    };
    let readout = readout.unwrap_or_else(|| Readout::identity(params.n()));
    let lti = jacobians_at(&params, &x_bar, &u_bar, &readout)?;
    let remainder = a.radius.map(|r| remainder_bound(&params, r)).transpose()?;
    if let Some(path) = &a.lti_out {
        write_json(path, &LtiFile::from_model(&lti))?;
    }
    Ok(json!({
        "lti": to_value(&LtiFile::from_model(&lti)),
        "spectral_radius": spectral_radius(&lti.a)?,
        "tube_radius": a.radius,
        "remainder_bound": remainder,
    }))
}

pub fn lift(a: &LiftArgs, ctx: &mut Ctx) -> Out {
    let (params, readout) = load_model(ctx, &a.model)?;
    let kind: DictionaryKind = ctx.log.json("dictionary", &a.dictionary)?;
    let inputs = input_sequence(ctx, &a.source, params.m())?;
    let x0 = DVector::zeros(params.n());
    let traj = esnssm::simulate(&params, None, &x0, &inputs, None)?;
    let dict = Dictionary::new(kind, params.n())?;
    let lm = edmd_fit(&params, std::slice::from_ref(&traj), &dict, a.ridge, readout.as_ref())?;
    let k = a.horizon.unwrap_or(traj.len());
    let rollout = lifted_rollout_error(&lm, &params, &traj, k)?;
    let max_disc = rollout.discrepancy.iter().copied().fold(0.0, f64::max);
    Ok(json!({
        "dictionary": to_value(&kind),
        "features": dict.output_dim(),
        "snapshots": lm.snapshots,
        "ridge": lm.ridge,
        "epsilon": lm.epsilon,
        "rms_residual": lm.rms_residual,
        "decay_radius": lm.decay_radius()?,
        "rollout": {
            "horizon": k,
            "rho": rollout.rho,
            "violations": rollout.violations,
            "violation_fraction": if k == 0 { 0.0 } else { rollout.violations as f64 / k as f64 },
            "max_discrepancy": max_disc,
            "final_bound": rollout.bound.last(),
        },
    }))
}

pub fn discretize(a: &DiscretizeArgs, ctx: &mut Ctx) -> Out {
    let (params, _) = load_model(ctx, &a.model)?;
    let n = params.n();
    let mut ct = ct_jacobians(&params, a.tau, &DVector::zeros(n), &DVector::zeros(params.m()))?;
    if !(a.q_c >= 0.0) || !a.q_c.is_finite() {
        return Err(esnssm::Error::InvalidParameter(format!("q_c must be finite and >= 0, got {}", a.q_c)).into());
    }
    ct.q_c = DMatrix::identity(n, n) * a.q_c;
    ct.dt = a.dt;
    let dm = zoh_discretize(&ct)?;
    let euler = match euler_leak(a.dt, a.tau) {
        Ok(l) => Some(l),
        Err(esnssm::Error::LeakOutOfRange(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(json!({
        "tau": a.tau,
        "dt": a.dt,
        "A_d": matrix_to_rows(&dm.a_d),
        "B_d": matrix_to_rows(&dm.b_d),
        "Q_d": matrix_to_rows(&dm.q_d),
        "spectral_radius": spectral_radius(&dm.a_d)?,
        "euler_leak": euler,
        "tustin_leak": tustin_leak(a.dt, a.tau)?,
    }))
}

pub fn kernel(a: &KernelArgs, ctx: &mut Ctx) -> Out {
    let lti = load_lti(ctx, &a.lti)?;
    let ker = match a.k_max {
        Some(k) => impulse_kernel(&lti, k)?,
        None => impulse_kernel_auto(&lti, a.tol, a.k_limit)?,
    };
    if let Some(path) = &a.csv_out {
        let (p, m) = (lti.p(), lti.m());
        let mut header = vec!["k".to_string()];
        for i in 1..=p {
            for j in 1..=m {
                header.push(format!("h_{i}_{j}"));
            }
        }
        let rows = ker.blocks.iter().enumerate().map(|(k, h)| {
            let mut row = vec![k as f64];
            for i in 0..p {
                row.extend(h.row(i).iter());
            }
            row
        });
        write_atomic(path, csv_text(&header, rows).as_bytes())?;
    }
    let energy = esnssm::freq::kernel_energy(&ker);
    Ok(json!({
        "kernel": to_value(&ker),
        "energy": energy,
    }))
}

pub fn spectrum(a: &SpectrumArgs, ctx: &mut Ctx) -> Out {
    let lti = load_lti(ctx, &a.lti)?;
    let grid = sigma_grid(&lti, a.points)?;
    if let Some(path) = &a.csv_out {
        let k = grid.first().map_or(0, |(_, s)| s.len());
        let header: Vec<String> = std::iter::once("omega".to_string()).chain(names("sigma", k)).collect();
        let rows = grid.iter().map(|(w, s)| {
            let mut row = vec![*w];
            row.extend(s.iter());
            row
        });
        write_atomic(path, csv_text(&header, rows).as_bytes())?;
    }
    let hinf = hinf_norm_grid(&lti, a.points)?;
    Ok(json!({
        "points": grid.len(),
        "spectral_radius": spectral_radius(&lti.a)?,
        "h2_norm": h2_norm(&lti)?,
        "hinf": to_value(&hinf),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisFile {
    #[serde(rename = "W_bar", with = "rows")]
    w_bar: DMatrix<f64>,
    #[serde(rename = "L_sigma", default = "one")]
    l_sigma: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Structure {
    Named(String),
    Basis(BasisFile),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmInit {
    #[serde(rename = "A", with = "rows")]
    a: DMatrix<f64>,
    #[serde(rename = "B", with = "rows")]
    b: DMatrix<f64>,
    #[serde(rename = "C", with = "rows")]
    c: DMatrix<f64>,
    #[serde(rename = "Q", with = "rows")]
    q: DMatrix<f64>,
    #[serde(rename = "R", with = "rows")]
    r: DMatrix<f64>,
    #[serde(default, with = "opt_vector")]
    mu0: Option<DVector<f64>>,
    #[serde(rename = "P0", default, with = "opt_rows")]
    p0: Option<DMatrix<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmConfig {
    #[serde(default)]
    structure: Option<Structure>,
    #[serde(default = "default_max_iters")]
    max_iters: usize,
    #[serde(default = "default_rel_tol")]
    rel_tol: f64,
    init: EmInit,
}

fn default_max_iters() -> usize {
    200
}

fn default_rel_tol() -> f64 {
    1e-8
}

fn id_data(ctx: &mut Ctx, path: &Path) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>), CliError> {
    let table = ctx.log.table("data", path)?;
    if table.y.first().is_none_or(|y| y.is_empty()) {
        return Err(CliError::Schema(format!("{}: no output columns y_1..y_p", path.display())));
    }
    Ok((table.u, table.y))
}

pub fn identify_em(a: &EmArgs, ctx: &mut Ctx) -> Out {
    let cfg: EmConfig = ctx.log.json("config", &a.config)?;
    let (u, y) = id_data(ctx, &a.data)?;
    let data = IdData::from_readout_rows(&u, &y)?;
    let structure = match cfg.structure {
        None => None,
        Some(Structure::Named(s)) if s == "free" => None,
        Some(Structure::Named(s)) => {
            return Err(CliError::Schema(format!("unknown structure '{s}'; use \"free\" or a basis object")))
        }
        Some(Structure::Basis(b)) => Some(StructuredBasis::new(b.w_bar, b.l_sigma)?),
    };
    let init = cfg.init;
    let n = init.a.nrows();
    let prior = Prior::new(
        init.mu0.unwrap_or_else(|| DVector::zeros(n)),
        init.p0.unwrap_or_else(|| DMatrix::identity(n, n)),
    )?;
    let params = EmParams {
        lti: LtiModel::strictly_proper(init.a, init.b, init.c)?,
        noise: NoiseModel::new(init.q, init.r)?,
        prior,
    };
    let opts = EmOptions {
        max_iters: cfg.max_iters,
        rel_tol: cfg.rel_tol,
        structure,
    };
    let run = em_run(params, &data, &opts)?;
    let lti_file = LtiFile::from_model(&run.params.lti);
    let noise_file = NoiseFile::from_model(&run.params.noise);
    if let Some(path) = &a.model_out {
        write_json(path, &json!({ "lti": lti_file, "noise": noise_file }))?;
    }
    Ok(json!({
        "iterations": run.iterations,
        "converged": run.converged,
        "loglik": run.trace.last(),
        "trace": run.trace,
        "constrained_steps": run.constrained_steps,
        "jitter_events": run.jitter_events,
        "lti": to_value(&lti_file),
        "noise": to_value(&noise_file),
        "projection": run.projection.as_ref().map(to_value),
    }))
}

pub fn identify_readout(a: &ReadoutArgs, ctx: &mut Ctx) -> Out {
    let (params, _) = load_model(ctx, &a.model)?;
    let (u, y) = id_data(ctx, &a.data)?;
    if u.first().map_or(0, |v| v.len()) != params.m() {
        return Err(CliError::Schema(format!("data must have {} input columns", params.m())));
    }
    let traj = esnssm::simulate(&params, None, &DVector::zeros(params.n()), &u, None)?;
    if a.washout >= traj.len() {
        return Err(esnssm::Error::InvalidParameter(format!(
            "washout {} leaves no samples out of {}",
            a.washout,
            traj.len()
        ))
        .into());
    }
    let xs = traj.states[a.washout..traj.len()].to_vec();
    let ys = &y[a.washout..];
    let states = StateEstimates::Raw(xs.clone());
    let ml = readout_ml(
        &states,
        ys,
        ReadoutOptions {
            ridge: a.ridge,
            fit_intercept: !a.no_intercept,
        },
    )?;
    let p = ml.p();
    let mut resid_cov = DMatrix::zeros(p, p);
    for (x, yt) in xs.iter().zip(ys) {
        let e = yt - ml.apply(x);
        resid_cov += &e * e.transpose();
    }
    resid_cov /= xs.len() as f64;
    let rmse = (resid_cov.trace() / p as f64).sqrt();
    let bayes = match a.tau {
        Some(tau) => {
            let floor = 1e-12 * resid_cov.trace().max(1.0);
            let r = DMatrix::from_diagonal(&resid_cov.diagonal().map(|v| v.max(floor)));
            let post = readout_bayes(&states, ys, tau, &r)?;
            Some(json!({
                "tau": tau,
                "R": matrix_to_rows(&r),
                "C_mean": matrix_to_rows(&post.mean.c),
                "C_variance": matrix_to_rows(&post.entry_variances()),
            }))
        }
        None => None,
    };
    if let Some(path) = &a.model_out {
        write_json(path, &ModelFile::from_parts(&params, Some(&ml)))?;
    }
    Ok(json!({
        "samples": xs.len(),
        "washout": a.washout,
        "C": matrix_to_rows(&ml.c),
        "d": vec_json(&ml.d),
        "rmse": rmse,
        "bayes": bayes,
    }))
}

pub fn identify_subspace(a: &SubspaceArgs, ctx: &mut Ctx) -> Out {
    let basis = match (&a.basis, &a.model) {
        (Some(path), _) => {
            let b: BasisFile = ctx.log.json("basis", path)?;
            StructuredBasis::new(b.w_bar, b.l_sigma)?
        }
        (None, Some(path)) => {
            let (params, _) = load_model(ctx, path)?;
            StructuredBasis::new(params.w.clone(), params.activation.lipschitz())?
        }
        (None, None) => return Err(CliError::Schema("either --basis or --model is required".into())),
    };
    let (inputs, outputs) = id_data(ctx, &a.data)?;
    let data = SubspaceData::InputOutput {
        inputs,
        outputs,
        fir_len: a.fir_len,
    };
    let res = subspace_shape(
        &data,
        SubspaceOptions {
            order: a.order,
            sv_floor: a.sv_floor,
        },
        &basis,
    )?;
    Ok(json!({
        "order": res.realization.a.nrows(),
        "singular_values": res.realization.singular_values,
        "A": matrix_to_rows(&res.realization.a),
        "B": matrix_to_rows(&res.realization.b),
        "C": matrix_to_rows(&res.realization.c),
        "A_embedded": matrix_to_rows(&res.a_embedded),
        "projection": to_value(&res.projection),
        "certificate": to_value(&res.certificate),
    }))
}

pub fn design(a: &DesignArgs, ctx: &mut Ctx) -> Out {
    let spec: DesignSpec = ctx.log.json("spec", &a.spec)?;
    let (params, designed) = design_reservoir(&spec)?;
    if let Some(path) = &a.model_out {
        write_json(path, &ModelFile::from_parts(&params, None))?;
    }
    Ok(json!({
        "spec": to_value(&spec),
        "design": to_value(&designed),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    #[serde(with = "esnssm::io::vector")]
    mean: DVector<f64>,
    #[serde(with = "rows")]
    cov: DMatrix<f64>,
}

pub fn predict(a: &PredictArgs, ctx: &mut Ctx) -> Out {
    let lti = load_lti(ctx, &a.lti)?;
    let noise = load_noise(ctx, &a.noise)?;
    let (u, y) = id_data(ctx, &a.data)?;
    let n = lti.n();
    let prior = match &a.prior {
        Some(path) => {
            let pf: PriorFile = ctx.log.json("prior", path)?;
            Prior::new(pf.mean, pf.cov)?
        }
        None => Prior::new(DVector::zeros(n), DMatrix::identity(n, n))?,
    };
    if a.horizon == 0 {
        return Err(esnssm::Error::InvalidParameter("horizon must be >= 1".into()).into());
    }
    let data = IdData::from_readout_rows(&u, &y)?;
    let post = kalman_filter(&lti, &noise, &data, &prior)?;
    let mut future = vec![u.last().expect("table has rows").clone()];
    if a.horizon > 1 {
        let path = a
            .future
            .as_ref()
            .ok_or_else(|| CliError::Schema("--future is required when --horizon > 1".into()))?;
        let table = ctx.log.table("future", path)?;
        if table.u.len() < a.horizon - 1 {
            return Err(CliError::Schema(format!(
                "{}: need {} future input rows, found {}",
                path.display(),
                a.horizon - 1,
                table.u.len()
            )));
        }
        future.extend(table.u.into_iter().take(a.horizon - 1));
    }
    let mean = post.filtered_means.last().expect("prior entry");
    let cov = post.filtered_covs.last().expect("prior entry");
    let dist = predictive(&lti, &noise, mean, cov, &future)?;
    Ok(json!({
        "history": u.len(),
        "filter_loglik": post.loglik,
        "predictive": to_value(&dist),
    }))
}
