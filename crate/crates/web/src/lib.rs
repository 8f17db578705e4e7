//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The [`demo`] module holds plain Rust functions so they can be tested
//! natively; the `#[wasm_bindgen]` exports only convert errors.

use wasm_bindgen::prelude::*;

pub mod demo {
    use std::collections::BTreeMap;
    use std::sync::Arc;

    use serde_json::{json, Value};

    use saddle_core::control::{modified_hamiltonian, ClosedLoopSystem, FeedbackLaw};
    use saddle_core::hamsys::{builtin, GradientMode};
    use saddle_core::normal_form::NormalFormTransform;
    use saddle_core::pipeline::{analyze, Analysis};
    use saddle_core::sim::{simulate_closed_loop, simulate_open_loop, IntegratorConfig};
    use saddle_core::spectral::EquilibriumKind;
    use saddle_core::{CanonicalState, Hamiltonian};

    /// Upper bound on stored trajectory samples, to keep the page responsive.
    pub const MAX_POINTS: usize = 4000;
    pub const MAX_GRID: usize = 201;

    struct Setup {
        h: Arc<dyn Hamiltonian>,
        analysis: Analysis,
    }

    impl Setup {
        fn transform(&self) -> Result<&NormalFormTransform, String> {
            self.analysis
                .classification
                .require(EquilibriumKind::SaddleCenter)
                .map_err(|e| e.to_string())?;
            Ok(self.analysis.transform.as_ref().expect("saddle-center transform"))
        }

        fn law(&self, c: Option<f64>) -> Result<FeedbackLaw, String> {
            let t = self.transform()?;
            let lambda = t.lambda.expect("saddle-center lambda");
            FeedbackLaw::new(t, c.unwrap_or(2.0 * lambda), vec![1.0; t.dof()]).map_err(|e| e.to_string())
        }
    }

    fn parse_params(params_json: &str) -> Result<BTreeMap<String, f64>, String> {
        if params_json.trim().is_empty() {
            return Ok(BTreeMap::new());
        }
        serde_json::from_str(params_json).map_err(|e| format!("parameters: {e}"))
    }

    fn setup(system: &str, params_json: &str) -> Result<Setup, String> {
        let b = builtin(system, &parse_params(params_json)?, GradientMode::Analytic).map_err(|e| e.to_string())?;
        let analysis = analyze(&*b.hamiltonian, &b.guess).map_err(|e| e.to_string())?;
        Ok(Setup {
            h: b.hamiltonian,
            analysis,
        })
    }

    fn gain(c: f64) -> Option<f64> {
        (c.is_finite() && c > 0.0).then_some(c)
    }

    /// Equilibrium, spectrum and the unstable feedback function as JSON.
    pub fn analyze_json(system: &str, params_json: &str) -> Result<String, String> {
        let s = setup(system, params_json)?;
        let cls = &s.analysis.classification;
        let mut report = json!({
            "system": system,
            "kind": cls.kind,
            "equilibrium": s.analysis.z0,
            "lambda": cls.lambda,
            "omegas": cls.omegas,
        });
        if let Some(t) = s.analysis.transform.as_ref().filter(|_| cls.kind == EquilibriumKind::SaddleCenter) {
            let rows: Vec<Vec<f64>> = (0..t.dof()).map(|i| t.s.row(i).iter().copied().collect()).collect();
            report["feedback_rows"] = json!(rows);
            report["default_c"] = json!(2.0 * t.lambda.expect("saddle-center lambda"));
        }
        Ok(report.to_string())
    }

    /// Flat trajectory `[t, z_1..z_2n, H, H_mod]` per sample, row width
    /// `2n + 3`. `offset` is the initial displacement in normal-form coordinates `(q_1..q_n, p_1..p_n)`.
    /// `c <= 0` selects the default gain.
    pub fn simulate(
        system: &str,
        params_json: &str,
        controlled: bool,
        c: f64,
        offset: &[f64],
        t_final: f64,
    ) -> Result<Vec<f64>, String> {
        let s = setup(system, params_json)?;
        let t = s.transform()?;
        let n = t.dof();
        if offset.len() != 2 * n {
            return Err(format!("offset needs {} values, got {}", 2 * n, offset.len()));
        }
        let law = if controlled {
            s.law(gain(c))?
        } else {
            // only used for the H_mod column
            let lambda = t.lambda.expect("saddle-center lambda");
            FeedbackLaw::unchecked(
                saddle_core::control::feedback_functions(t),
                gain(c).unwrap_or(2.0 * lambda),
                vec![1.0; n],
                lambda,
            )
            .map_err(|e| e.to_string())?
        };
        let cl = ClosedLoopSystem::unchecked(s.h.clone(), law);
        let ic: CanonicalState = t.from_normal_form(offset).map_err(|e| e.to_string())?;
        let mut cfg = IntegratorConfig::rkf45(t_final);
        cfg.rel_tol = 1e-8;
        cfg.abs_tol = 1e-10;
        cfg.validate().map_err(|e| e.to_string())?;
        let traj = if controlled {
            simulate_closed_loop(&cl, &ic, &cfg)
        } else {
            simulate_open_loop(&*s.h, &ic, &cfg)
        };
        let traj = traj.map_err(|e| e.to_string())?;
        let stride = traj.len().div_ceil(MAX_POINTS).max(1);
        let mut out = Vec::with_capacity((traj.len() / stride + 2) * (2 * n + 3));
        let last = traj.len() - 1;
        for (k, (time, z)) in traj.times.iter().zip(&traj.states).enumerate() {
            if k % stride != 0 && k != last {
                continue;
            }
            out.push(*time);
            out.extend(z.iter());
            out.push(s.h.energy(z).map_err(|e| e.to_string())?);
            out.push(cl.h_mod.energy(z).map_err(|e| e.to_string())?);
        }
        Ok(out)
    }

    /// `points x points` grid over `(x_1, x_2)` around the equilibrium with the
    /// other coordinates fixed there. Returns `[H..., H_mod...]` row-major
    /// (`x_1` slow); singular points are NaN. `c <= 0` selects the default
    /// gain.
    pub fn potential_grid(system: &str, params_json: &str, c: f64, span: f64, points: usize) -> Result<Vec<f64>, String> {
        if !(2..=MAX_GRID).contains(&points) {
            return Err(format!("grid size must be in 2..={MAX_GRID}"));
        }
        if !(span.is_finite() && span > 0.0) {
            return Err("span must be positive".into());
        }
        let s = setup(system, params_json)?;
        let h_mod = modified_hamiltonian(s.h.clone(), &s.law(gain(c))?).map_err(|e| e.to_string())?;
        let z0 = s.analysis.z0.clone().into_vec();
        let step = 2.0 * span / (points - 1) as f64;
        let mut h_vals = Vec::with_capacity(points * points);
        let mut m_vals = Vec::with_capacity(points * points);
        let mut z = z0.clone();
        for i in 0..points {
            for j in 0..points {
                z[0] = z0[0] - span + i as f64 * step;
                z[1] = z0[1] - span + j as f64 * step;
                h_vals.push(s.h.energy(&z).unwrap_or(f64::NAN));
                m_vals.push(h_mod.energy(&z).unwrap_or(f64::NAN));
            }
        }
        h_vals.extend(m_vals);
        Ok(h_vals)
    }

    pub fn systems_json() -> String {
        let list: Vec<Value> = saddle_core::hamsys::BUILTIN_SYSTEMS
            .iter()
            .map(|(name, about)| json!({"name": name, "about": about}))
            .collect();
        Value::Array(list).to_string()
    }
}

fn js_err(e: String) -> JsValue {
    JsValue::from_str(&e)
}

#[wasm_bindgen]
pub fn systems() -> String {
    demo::systems_json()
}

#[wasm_bindgen]
pub fn analyze(system: &str, params_json: &str) -> Result<String, JsValue> {
    demo::analyze_json(system, params_json).map_err(js_err)
}

#[wasm_bindgen]
pub fn simulate(
    system: &str,
    params_json: &str,
    controlled: bool,
    c: f64,
    offset: &[f64],
    t_final: f64,
) -> Result<Vec<f64>, JsValue> {
    demo::simulate(system, params_json, controlled, c, offset, t_final).map_err(js_err)
}

#[wasm_bindgen]
pub fn potential_grid(system: &str, params_json: &str, c: f64, span: f64, points: usize) -> Result<Vec<f64>, JsValue> {
    demo::potential_grid(system, params_json, c, span, points).map_err(js_err)
}
