use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use saddle_core::control::ClosedLoopSystem;
use saddle_core::normal_form::NormalFormTransform;
use saddle_core::reaction::linear_invariants;
use saddle_core::sim::Trajectory;
use saddle_core::Hamiltonian;

use crate::CliError;

/// Shortest round-trip representation; always '.' as decimal separator.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn matrix(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| json!(m.row(i).iter().collect::<Vec<_>>())).collect())
}

pub fn coordinate_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).chain((1..=n).map(|i| format!("P{i}"))).collect()
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Columns: `t, x1..xn, P1..Pn, H, H_mod, F1..Fn, I1..In`.
pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(coordinate_names(n));
    h.push("H".into());
    h.push("H_mod".into());
    h.extend((1..=n).map(|i| format!("F{i}")));
    h.extend((1..=n).map(|i| format!("I{i}")));
    h
}

/// Writes a trajectory with energies, feedback values and linear invariants.
/// `law` supplies `H_mod` and `F_i` even when the flow itself was
/// uncontrolled.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    law: &ClosedLoopSystem,
    transform: &NormalFormTransform,
) -> Result<(), CliError> {
    let n = transform.dof();
    let io = |e: csv::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(trajectory_header(n)).map_err(io)?;
    for (t, z) in traj.times.iter().zip(&traj.states) {
        let h = law.base().energy(z).map_err(CliError::Core)?;
        let h_mod = law.h_mod.energy(z).map_err(CliError::Core)?;
        let qp = transform.to_normal_form(z).map_err(CliError::Core)?;
        let mut row = vec![num(*t)];
        row.extend(z.iter().map(|v| num(*v)));
        row.push(num(h));
        row.push(num(h_mod));
        row.extend(law.law.values(z).into_iter().map(num));
        row.extend(linear_invariants(&qp).into_iter().map(num));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// `H` (and `H_mod` if given) on a grid over `(x1, x2)` with the momenta held
/// at their equilibrium values.
pub fn write_potential_grid(
    path: &Path,
    h: &dyn Hamiltonian,
    h_mod: Option<&dyn Hamiltonian>,
    z0: &[f64],
    span: f64,
    points: usize,
) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["x1", "x2", "H"];
    if h_mod.is_some() {
        header.push("H_mod");
    }
    w.write_record(&header).map_err(io)?;
    let step = 2.0 * span / (points - 1) as f64;
    let mut z = z0.to_vec();
    for i in 0..points {
        for j in 0..points {
            z[0] = z0[0] - span + i as f64 * step;
            z[1] = z0[1] - span + j as f64 * step;
            // singular points are skipped rather than aborting the grid
            let Ok(e) = h.energy(&z) else { continue };
            let mut row = vec![num(z[0]), num(z[1]), num(e)];
            if let Some(hm) = h_mod {
                let Ok(em) = hm.energy(&z) else { continue };
                row.push(num(em));
            }
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}
