use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use saddle_core::control::{destabilize, ClosedLoopSystem, FeedbackLaw};
use saddle_core::hamsys::{builtin, GradientMode, PolynomialHamiltonian, BUILTIN_SYSTEMS};
use saddle_core::normal_form::{rotation_n, symplectic_defect, NormalFormTransform, CONJUGATION_TOL};
use saddle_core::pipeline::{analyze, stabilize, Analysis};
use saddle_core::reaction::diagnose;
use saddle_core::sim::{sample_ball, simulate_closed_loop, simulate_open_loop, verify_stability};
use saddle_core::spectral::{classify, linearize, EquilibriumKind};
use saddle_core::{CanonicalState, Hamiltonian};

use crate::config::RunConfig;
use crate::output::{
    coordinate_names, ensure_dir, matrix, write_json, write_potential_grid, write_trajectory_csv,
};
use crate::CliError;

struct LoadedSystem {
    h: Arc<dyn Hamiltonian>,
    guess: Vec<f64>,
    /// Exact polynomial form when one exists (quadratic and file systems).
    polynomial: Option<PolynomialHamiltonian>,
}

fn load(cfg: &RunConfig) -> Result<LoadedSystem, CliError> {
    let mode = if cfg.finite_difference {
        GradientMode::FiniteDifference
    } else {
        GradientMode::Analytic
    };
    let mut sys = if cfg.system == "polynomial" {
        let path = cfg
            .poly_file
            .as_ref()
            .ok_or_else(|| CliError::Config("system 'polynomial' needs --poly-file".into()))?;
        if !cfg.params.is_empty() {
            return Err(CliError::Config("system 'polynomial' takes no --param".into()));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let poly: PolynomialHamiltonian = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid polynomial file {}: {e}", path.display())))?;
        let n = poly.dof();
        let h: Arc<dyn Hamiltonian> = match mode {
            GradientMode::Analytic => Arc::new(poly.clone()),
            GradientMode::FiniteDifference => Arc::new(saddle_core::hamsys::FiniteDifference(poly.clone())),
        };
        LoadedSystem {
            h,
            guess: vec![0.0; 2 * n],
            polynomial: Some(poly),
        }
    } else {
        let b = builtin(&cfg.system, &cfg.params, mode)?;
        let polynomial = if cfg.system == "quadratic" {
            let zero = vec![0.0; b.guess.len()];
            Some(PolynomialHamiltonian::quadratic_form(&b.hamiltonian.hessian(&zero)?, &zero)?)
        } else {
            None
        };
        LoadedSystem {
            h: b.hamiltonian,
            guess: b.guess,
            polynomial,
        }
    };
    if let Some(g) = &cfg.guess {
        if g.len() != sys.guess.len() {
            return Err(CliError::Config(format!("--guess needs {} values, got {}", sys.guess.len(), g.len())));
        }
        sys.guess = g.clone();
    }
    Ok(sys)
}

fn default_radius(cfg: &RunConfig) -> f64 {
    cfg.radius.unwrap_or(if cfg.system == "hydrogen" { 0.05 } else { 0.1 })
}

fn transform_report(t: &NormalFormTransform) -> Value {
    let conj_err = (t.conjugated_hessian() - t.normal_form_hessian()).amax();
    let scale = t.hessian.amax().max(1.0);
    json!({
        "c": t.c,
        "M": matrix(&t.m),
        "N": matrix(&rotation_n(t.dof())),
        "S": matrix(&t.s),
        "S_inv": matrix(&t.s_inv),
        "symplectic_defect_M": symplectic_defect(&t.m),
        "symplectic_defect_S": symplectic_defect(&t.s),
        "conjugation_error": conj_err,
        "conjugation_check": if conj_err <= CONJUGATION_TOL * scale { "pass" } else { "fail" },
        "reversor": t.reversor,
    })
}

fn feedback_table(t: &NormalFormTransform) -> Value {
    let names = coordinate_names(t.dof());
    Value::Array(
        (0..t.dof())
            .map(|i| {
                let row = t.q_row(i);
                let terms: serde_json::Map<String, Value> = names
                    .iter()
                    .zip(row.iter())
                    .filter(|(_, v)| v.abs() > 1e-12)
                    .map(|(k, v)| (k.clone(), json!(v)))
                    .collect();
                json!({ "name": format!("F{}", i + 1), "coefficients": terms, "row": row.as_slice() })
            })
            .collect(),
    )
}

pub fn analysis_report(cfg: &RunConfig, a: &Analysis) -> Value {
    let cls = &a.classification;
    json!({
        "system": cfg.system,
        "params": cfg.params,
        "dof": a.z0.dof(),
        "equilibrium": a.z0,
        "kind": cls.kind,
        "detail": cls.detail,
        "linearization": matrix(&cls.linearization.matrix),
        "eigenvalues": cls.eigenvalues.iter().map(|e| json!({"re": e.re, "im": e.im})).collect::<Vec<_>>(),
        "eigenvector_condition": cls.eigvec_condition,
        "lambda": cls.lambda,
        "omegas": cls.omegas,
        "transform": a.transform.as_ref().map(transform_report),
        "feedback": a.transform.as_ref().map(feedback_table),
    })
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<Value, CliError> {
    let sys = load(cfg)?;
    let a = analyze(&*sys.h, &sys.guess)?;
    let report = analysis_report(cfg, &a);
    if a.kind() == EquilibriumKind::Other {
        return Err(CliError::Classification(format!(
            "equilibrium is neither saddle-center nor center type: {}",
            a.classification.detail.clone().unwrap_or_default()
        )));
    }
    if let Some(dir) = &cfg.out {
        ensure_dir(dir)?;
        write_json(&dir.join("analysis.json"), &report)?;
        if let Some(points) = cfg.grid {
            if a.z0.dof() != 2 {
                return Err(CliError::Config("--grid needs a system with 2 degrees of freedom".into()));
            }
            if points < 2 {
                return Err(CliError::Config("--grid needs at least 2 points".into()));
            }
            let shaped = match (&a.transform, a.kind()) {
                (Some(t), EquilibriumKind::SaddleCenter) => {
                    let law = FeedbackLaw::with_default_gains(t)?;
                    Some(ClosedLoopSystem::new(sys.h.clone(), law)?.h_mod)
                }
                _ => None,
            };
            write_potential_grid(
                &dir.join("potential.csv"),
                &*sys.h,
                shaped.as_ref().map(|s| s as &dyn Hamiltonian),
                &a.z0,
                cfg.radius.unwrap_or(0.75),
                points,
            )?;
        }
    }
    Ok(report)
}

fn gains(cfg: &RunConfig) -> (Option<f64>, Option<Vec<f64>>) {
    (cfg.gain_c, cfg.gain_d.clone())
}

pub fn cmd_stabilize(cfg: &RunConfig) -> Result<Value, CliError> {
    let sys = load(cfg)?;
    let (c, d) = gains(cfg);
    let st = stabilize(sys.h.clone(), &sys.guess, c, d)?;
    let radius = default_radius(cfg);
    let mut report = json!({
        "system": cfg.system,
        "params": cfg.params,
        "equilibrium": st.analysis.z0,
        "lambda": st.system.law.lambda,
        "gains": { "c": st.system.law.c, "d": st.system.law.d },
        "hypotheses": st.hypotheses,
        "integrator": cfg.integrator,
    });
    if !st.hypotheses.passed() {
        return Err(CliError::Precondition(
            format!("stabilization hypotheses not satisfied: {:?}", st.hypotheses),
            Some(report),
        ));
    }
    let rep = verify_stability(&st.system, radius, cfg.samples, &cfg.integrator, cfg.conv_tol, cfg.seed)?;
    report["stability"] = json!(rep);
    report["threshold"] = json!(cfg.threshold);
    let passed = rep.converged_fraction >= cfg.threshold && rep.max_real_part < 0.0;
    report["passed"] = json!(passed);

    if let Some(dir) = &cfg.out {
        ensure_dir(dir)?;
        let t = st.analysis.transform.as_ref().expect("saddle-center transform");
        let ics = sample_ball(st.system.z0(), radius, cfg.trajectories.min(cfg.samples), cfg.seed);
        for (k, ic) in ics.iter().enumerate() {
            let traj = simulate_closed_loop(&st.system, ic, &cfg.integrator)?;
            write_trajectory_csv(&dir.join(format!("trajectory_{k:03}.csv")), &traj, &st.system, t)?;
        }
        write_json(&dir.join("verification.json"), &report)?;
    }
    if !passed {
        return Err(CliError::Verification(
            format!(
                "converged fraction {} below threshold {} (max Re {:.3e})",
                rep.converged_fraction, cfg.threshold, rep.max_real_part
            ),
            Some(report),
        ));
    }
    Ok(report)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Value, CliError> {
    let sys = load(cfg)?;
    let a = analyze(&*sys.h, &sys.guess)?;
    a.classification.require(EquilibriumKind::SaddleCenter)?;
    let t = a.transform.as_ref().expect("saddle-center transform");
    let n = t.dof();
    let lambda = t.lambda.expect("saddle-center lambda");
    let c = cfg.gain_c.unwrap_or(2.0 * lambda);
    let d = cfg.gain_d.clone().unwrap_or_else(|| vec![1.0; n]);
    let law = if cfg.no_control {
        // H_mod and F_i columns still use a law; only validate its shape
        FeedbackLaw::unchecked(saddle_core::control::feedback_functions(t), c, d, lambda)?
    } else {
        FeedbackLaw::new(t, c, d)?
    };
    let cl = ClosedLoopSystem::unchecked(sys.h.clone(), law);

    let ic = match &cfg.ic {
        Some(v) => CanonicalState::new(v.clone())?,
        None => {
            // reactant side, moving towards the dividing surface with I_1 > 0
            let r = default_radius(cfg);
            let mut qp = vec![0.0; 2 * n];
            qp[0] = -r;
            qp[n] = 1.2 * r;
            if n > 1 {
                qp[1] = 0.5 * r;
            }
            t.from_normal_form(&qp)?
        }
    };
    if ic.len() != 2 * n {
        return Err(CliError::Config(format!("--ic needs {} values, got {}", 2 * n, ic.len())));
    }
    let traj = if cfg.no_control {
        simulate_open_loop(&*sys.h, &ic, &cfg.integrator)?
    } else {
        simulate_closed_loop(&cl, &ic, &cfg.integrator)?
    };
    let diag = diagnose(t, &traj)?;
    let last = traj.last_state();
    let final_distance = (last.vector() - a.z0.vector()).amax();
    let report = json!({
        "system": cfg.system,
        "params": cfg.params,
        "controlled": !cfg.no_control,
        "gains": if cfg.no_control { Value::Null } else { json!({"c": cl.law.c, "d": cl.law.d}) },
        "initial_state": ic,
        "final_state": last,
        "final_distance": final_distance,
        "samples": traj.len(),
        "integrator": cfg.integrator,
        "reaction": diag,
    });
    if let Some(dir) = &cfg.out {
        ensure_dir(dir)?;
        write_trajectory_csv(&dir.join("trajectory.csv"), &traj, &cl, t)?;
        write_json(&dir.join("simulation.json"), &report)?;
    }
    Ok(report)
}

pub fn cmd_destabilize(cfg: &RunConfig) -> Result<Value, CliError> {
    let sys = load(cfg)?;
    let a = analyze(&*sys.h, &sys.guess)?;
    a.classification.require(EquilibriumKind::AllCenter)?;
    let omega1 = a.classification.omegas[0];
    let c = cfg.gain_c.unwrap_or(2.0 * omega1);
    let d = destabilize(sys.h.clone(), &a.z0, c)?;
    let cls = classify(&linearize(&d.hamiltonian, &a.z0)?, None)?;
    let f1 = d.hamiltonian.shaping.coeffs.clone();
    let mut report = json!({
        "system": cfg.system,
        "params": cfg.params,
        "equilibrium": a.z0,
        "input_omegas": a.classification.omegas,
        "c": c,
        "shaping_function": f1.as_slice(),
        "predicted_lambda": d.predicted_lambda,
        "kind": cls.kind,
        "lambda": cls.lambda,
        "omegas": cls.omegas,
        "eigenvalues": cls.eigenvalues.iter().map(|e| json!({"re": e.re, "im": e.im})).collect::<Vec<_>>(),
    });
    if cls.kind != EquilibriumKind::SaddleCenter {
        return Err(CliError::Verification(
            format!("destabilized system is {}, not saddle-center", cls.kind),
            Some(report),
        ));
    }
    if let Some(dir) = &cfg.out {
        ensure_dir(dir)?;
        if let Some(poly) = &sys.polynomial {
            let outer = &f1 * f1.transpose() * (-c);
            let shaped = poly.sum(&PolynomialHamiltonian::quadratic_form(&outer, &a.z0)?)?;
            let path = dir.join("destabilized.json");
            let text = serde_json::to_string_pretty(&shaped).expect("polynomial serializes") + "\n";
            std::fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
            report["system_file"] = json!(path_str(&path));
        }
        write_json(&dir.join("destabilization.json"), &report)?;
    }
    Ok(report)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn cmd_list_systems() -> Value {
    let mut list: Vec<Value> = BUILTIN_SYSTEMS
        .iter()
        .map(|(name, desc)| json!({"name": name, "description": desc}))
        .collect();
    list.push(json!({
        "name": "polynomial",
        "description": "polynomial Hamiltonian read from --poly-file",
    }));
    Value::Array(list)
}
