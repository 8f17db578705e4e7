//! Feedback laws built from the normal-form transform.
//!
//! With `F_i(z) = s_i . (z - z0)` (`s_i` the i-th row of `S`), the closed
//! loop is
//!
//! ```text
//! zdot = X_Hmod(z) + sum_i d_i {F_i, Hmod}(z) X_Fi,    Hmod = H + c/2 F_1^2
//! ```
//!
//! so that `d/dt Hmod = -sum_i d_i {F_i, Hmod}^2 <= 0`. For `c > lambda` and
//! `d_i > 0`, `Hmod` has a strict minimum at `z0` and the equilibrium is
//! asymptotically stable.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamsys::{apply_j, check_dim, symplectic_j, CanonicalState, GradientMode, Hamiltonian};
use crate::normal_form::{build_transform, NormalFormTransform};
use crate::spectral::{classify, linearize, EquilibriumKind};

/// Singular values below this fraction of the largest count as zero in the
/// co-distribution rank.
pub const RANK_TOL: f64 = 1e-8;
/// Largest `|{F_i, F_j}|` accepted as involution.
pub const INVOLUTION_TOL: f64 = 1e-10;
/// Relative margin by which `c` must exceed `lambda`; absorbs eigenvalue round-off.
pub const GAIN_MARGIN: f64 = 1e-10;

fn exceeds(c: f64, lambda: f64) -> bool {
    c > lambda + GAIN_MARGIN * lambda.abs().max(1.0)
}

/// Affine function `F(z) = s . (z - z0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFunction {
    pub coeffs: DVector<f64>,
    pub z0: DVector<f64>,
}

impl LinearFunction {
    pub fn new(coeffs: DVector<f64>, z0: DVector<f64>) -> Self {
        assert_eq!(coeffs.len(), z0.len());
        Self { coeffs, z0 }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(z.iter().zip(self.z0.iter()))
            .map(|(s, (a, b))| s * (a - b))
            .sum()
    }

    /// `X_F = J s`, constant in `z`.
    pub fn hamiltonian_vector(&self) -> DVector<f64> {
        apply_j(&self.coeffs)
    }
}

impl Hamiltonian for LinearFunction {
    fn dof(&self) -> usize {
        self.coeffs.len() / 2
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.dof(), z)?;
        Ok(self.eval(z))
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dof(), z)?;
        Ok(self.coeffs.clone())
    }
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dof(), z)?;
        let d = self.coeffs.len();
        Ok(DMatrix::zeros(d, d))
    }
    fn gradient_mode(&self) -> GradientMode {
        GradientMode::Analytic
    }
}

/// The functions `F_1..F_n`, i.e. `q_1..q_n` pulled back to the original
/// coordinates.
pub fn feedback_functions(t: &NormalFormTransform) -> Vec<LinearFunction> {
    (0..t.dof())
        .map(|i| LinearFunction::new(t.q_row(i), t.z0.vector().clone()))
        .collect()
}

/// `H + coeff/2 F^2`. Stabilization uses `coeff = c`, destabilization
/// `coeff = -c`.
#[derive(Clone)]
pub struct ShapedHamiltonian {
    pub base: Arc<dyn Hamiltonian>,
    pub shaping: LinearFunction,
    pub coeff: f64,
}

impl std::fmt::Debug for ShapedHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShapedHamiltonian")
            .field("shaping", &self.shaping)
            .field("coeff", &self.coeff)
            .finish_non_exhaustive()
    }
}

impl Hamiltonian for ShapedHamiltonian {
    fn dof(&self) -> usize {
        self.base.dof()
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        let f = self.shaping.eval(z);
        Ok(self.base.energy(z)? + 0.5 * self.coeff * f * f)
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        let f = self.shaping.eval(z);
        Ok(self.base.gradient(z)? + &self.shaping.coeffs * (self.coeff * f))
    }
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let s = &self.shaping.coeffs;
        Ok(self.base.hessian(z)? + s * s.transpose() * self.coeff)
    }
    fn gradient_mode(&self) -> GradientMode {
        self.base.gradient_mode()
    }
}

/// Feedback covectors and gains.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub functions: Vec<LinearFunction>,
    pub c: f64,
    pub d: Vec<f64>,
    pub lambda: f64,
}

impl FeedbackLaw {
    /// Gains must satisfy `c > lambda`, `d_i > 0`.
    pub fn new(t: &NormalFormTransform, c: f64, d: Vec<f64>) -> Result<Self> {
        if t.kind != EquilibriumKind::SaddleCenter {
            return Err(Error::WrongKind {
                expected: EquilibriumKind::SaddleCenter.to_string(),
                found: t.kind.to_string(),
            });
        }
        let lambda = t.lambda.expect("saddle-center transform has lambda");
        let law = Self::unchecked(feedback_functions(t), c, d, lambda)?;
        law.validate()?;
        Ok(law)
    }

    /// `c = 2 lambda`, `d_i = 1`.
    pub fn with_default_gains(t: &NormalFormTransform) -> Result<Self> {
        let lambda = t.lambda.unwrap_or(0.0);
        Self::new(t, 2.0 * lambda, vec![1.0; t.dof()])
    }

    /// Builds a law from arbitrary covectors without checking the gains.
    pub fn unchecked(functions: Vec<LinearFunction>, c: f64, d: Vec<f64>, lambda: f64) -> Result<Self> {
        if functions.is_empty() || d.len() != functions.len() {
            return Err(Error::Config(format!(
                "need one damping gain per feedback function ({} functions, {} gains)",
                functions.len(),
                d.len()
            )));
        }
        Ok(Self { functions, c, d, lambda })
    }

    pub fn validate(&self) -> Result<()> {
        if !exceeds(self.c, self.lambda) {
            return Err(Error::Gain(format!("c = {} must exceed lambda = {}", self.c, self.lambda)));
        }
        if let Some((i, d)) = self.d.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
            return Err(Error::Gain(format!("d_{} = {d} must be positive", i + 1)));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.functions.len()
    }

    pub fn values(&self, z: &[f64]) -> Vec<f64> {
        self.functions.iter().map(|f| f.eval(z)).collect()
    }
}

/// `H_mod = H + c/2 F_1^2`. Fails when `c <= lambda`.
pub fn modified_hamiltonian(h: Arc<dyn Hamiltonian>, law: &FeedbackLaw) -> Result<ShapedHamiltonian> {
    if !exceeds(law.c, law.lambda) {
        return Err(Error::Gain(format!("c = {} must exceed lambda = {}", law.c, law.lambda)));
    }
    Ok(shaped(h, law))
}

fn shaped(h: Arc<dyn Hamiltonian>, law: &FeedbackLaw) -> ShapedHamiltonian {
    ShapedHamiltonian {
        base: h,
        shaping: law.functions[0].clone(),
        coeff: law.c,
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    pub law: FeedbackLaw,
    pub h_mod: ShapedHamiltonian,
}

impl ClosedLoopSystem {
    /// Validates the gains.
    pub fn new(base: Arc<dyn Hamiltonian>, law: FeedbackLaw) -> Result<Self> {
        law.validate()?;
        Ok(Self::unchecked(base, law))
    }

    /// No gain validation; used for diagnostics and the uncontrolled limit.
    pub fn unchecked(base: Arc<dyn Hamiltonian>, law: FeedbackLaw) -> Self {
        let h_mod = shaped(base, &law);
        Self { law, h_mod }
    }

    pub fn base(&self) -> &Arc<dyn Hamiltonian> {
        &self.h_mod.base
    }

    pub fn dof(&self) -> usize {
        self.law.dof()
    }

    pub fn z0(&self) -> &DVector<f64> {
        &self.law.functions[0].z0
    }

    /// `{F_i, H_mod}(z)` for every `i`; equals `dF_i/dt` along the closed
    /// loop because the `F_i` are in involution.
    pub fn brackets(&self, z: &[f64]) -> Result<Vec<f64>> {
        let xh = apply_j(&self.h_mod.gradient(z)?);
        Ok(self.law.functions.iter().map(|f| f.coeffs.dot(&xh)).collect())
    }

    pub fn field(&self, z: &[f64]) -> Result<DVector<f64>> {
        let xh = apply_j(&self.h_mod.gradient(z)?);
        let mut out = xh.clone();
        for (f, &d) in self.law.functions.iter().zip(&self.law.d) {
            let b = f.coeffs.dot(&xh);
            out += f.hamiltonian_vector() * (d * b);
        }
        Ok(out)
    }

    /// `sum_i d_i {F_i, H_mod}^2`, the rate at which `H_mod` decreases.
    pub fn dissipation(&self, z: &[f64]) -> Result<f64> {
        Ok(self
            .brackets(z)?
            .iter()
            .zip(&self.law.d)
            .map(|(b, d)| d * b * b)
            .sum())
    }
}

pub fn closed_loop_field(cl: &ClosedLoopSystem, z: &[f64]) -> Result<DVector<f64>> {
    cl.field(z)
}

/// Linearization of the closed-loop field at `z0`, assembled from the
/// Hessian: `A_cl = A_mod + sum_i d_i (J s_i)(s_i A_mod)`.
pub fn closed_loop_matrix(cl: &ClosedLoopSystem) -> Result<DMatrix<f64>> {
    let z0 = cl.z0().as_slice().to_vec();
    let n = cl.dof();
    let a_mod = symplectic_j(n) * cl.h_mod.hessian(&z0)?;
    let mut a = a_mod.clone();
    for (f, &d) in cl.law.functions.iter().zip(&cl.law.d) {
        let row = f.coeffs.transpose() * &a_mod;
        a += f.hamiltonian_vector() * row * d;
    }
    Ok(a)
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub positive_definite: bool,
    pub min_hessian_eigenvalue: f64,
    pub involution: bool,
    pub max_bracket: f64,
    pub rank_dc: usize,
    pub full_rank: bool,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.positive_definite && self.involution && self.full_rank
    }
}

/// Checks the hypotheses of the stabilization theorem at `z0`: positive
/// definite `D^2 H_mod`, `F_i` in involution, and a co-distribution of full
/// rank `2n` (Krylov rank of the covectors `s_i A_mod^k`).
pub fn check_hypotheses(cl: &ClosedLoopSystem) -> Result<HypothesisReport> {
    let z0 = cl.z0().as_slice().to_vec();
    let n = cl.dof();
    let dim = 2 * n;
    let hess = cl.h_mod.hessian(&z0)?;
    let sym = (&hess + hess.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym).eigenvalues.min();

    let j = symplectic_j(n);
    let mut max_bracket: f64 = 0.0;
    for a in &cl.law.functions {
        for b in &cl.law.functions {
            max_bracket = max_bracket.max(a.coeffs.dot(&(&j * &b.coeffs)).abs());
        }
    }

    let a_mod = &j * &hess;
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(n * dim);
    for f in &cl.law.functions {
        let mut r = f.coeffs.clone();
        for _ in 0..dim {
            rows.push(r.clone());
            r = a_mod.transpose() * r;
        }
    }
    let stacked = DMatrix::from_columns(&rows).transpose();
    let sv = stacked.singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax).count();

    Ok(HypothesisReport {
        positive_definite: min_eig > 0.0,
        min_hessian_eigenvalue: min_eig,
        involution: max_bracket <= INVOLUTION_TOL,
        max_bracket,
        rank_dc: rank,
        full_rank: rank == dim,
    })
}

/// Conservative system `H - c/2 F_1^2` obtained from a center-type
/// equilibrium, with `F_1 = q_1` the coordinate of the slowest mode.
#[derive(Debug, Clone)]
pub struct DestabilizedSystem {
    pub hamiltonian: ShapedHamiltonian,
    pub transform: NormalFormTransform,
    pub c: f64,
    /// Predicted `sqrt(omega_1 (c - omega_1))` of the created real pair.
    pub predicted_lambda: f64,
}

/// Turns a center-...-center equilibrium into a saddle-center one.
pub fn destabilize(h: Arc<dyn Hamiltonian>, z0: &CanonicalState, c: f64) -> Result<DestabilizedSystem> {
    let cls = classify(&linearize(&*h, z0)?, None)?;
    cls.require(EquilibriumKind::AllCenter)?;
    let transform = build_transform(&cls)?;
    let omega1 = transform.omegas[0];
    if !exceeds(c, omega1) {
        return Err(Error::Gain(format!("c = {c} must exceed omega_1 = {omega1}")));
    }
    let f1 = LinearFunction::new(transform.q_row(0), z0.vector().clone());
    Ok(DestabilizedSystem {
        hamiltonian: ShapedHamiltonian {
            base: h,
            shaping: f1,
            coeff: -c,
        },
        predicted_lambda: (omega1 * (c - omega1)).sqrt(),
        transform,
        c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamsys::{fd_gradient, vector_field, FiniteDifference, ModelPotential, Quadratic, Shifted};
    use crate::spectral::SpectrumClassification;
    use approx::assert_abs_diff_eq;

    fn saddle_setup(h: Arc<dyn Hamiltonian>) -> (NormalFormTransform, SpectrumClassification) {
        let z0 = CanonicalState::origin(h.dof());
        let cls = classify(&linearize(&*h, &z0).unwrap(), None).unwrap();
        (build_transform(&cls).unwrap(), cls)
    }

    fn model(a: f64, b: f64) -> Arc<dyn Hamiltonian> {
        Arc::new(Shifted::new(ModelPotential::new(a, b).unwrap(), &ModelPotential::saddle()).unwrap())
    }

    #[test]
    fn model_feedback_functions() {
        let (a, b) = (2.0f64, 1.0f64);
        let (t, _) = saddle_setup(model(a, b));
        let fs = feedback_functions(&t);
        assert_abs_diff_eq!(fs[0].coeffs, DVector::from_vec(vec![1.0 / a.sqrt(), 0.0, 0.0, 0.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(
            fs[1].coeffs,
            DVector::from_vec(vec![0.0, 0.0, 0.0, b.sqrt() / 2f64.powf(0.25)]),
            epsilon = 1e-12
        );
        for f in &fs {
            assert_eq!(f.eval(t.z0.as_ref()), 0.0);
        }
    }

    #[test]
    fn model_modified_potential() {
        let (a, b) = (2.0f64, 1.0f64);
        let h = model(a, b);
        let (t, _) = saddle_setup(h.clone());
        let law = FeedbackLaw::with_default_gains(&t).unwrap();
        let h_mod = modified_hamiltonian(h.clone(), &law).unwrap();
        // c = 2 lambda = 2/a, so c/2 F1^2 = x1^2/a^2; V + x1^2/(2a^2) would be
        // c = lambda
        let z = [0.13, -0.07, 0.2, 0.4];
        let expected = h.energy(&z).unwrap() + z[0] * z[0] / (a * a);
        assert_abs_diff_eq!(h_mod.energy(&z).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn modified_hessian_in_normal_form() {
        let h: Arc<dyn Hamiltonian> = Arc::new(Quadratic::normal_form(Some(1.0), &[2.0]).unwrap());
        let (t, _) = saddle_setup(h.clone());
        let law = FeedbackLaw::new(&t, 3.0, vec![1.0, 1.0]).unwrap();
        let h_mod = modified_hamiltonian(h, &law).unwrap();
        let hess = h_mod.hessian(&[0.0; 4]).unwrap();
        let conj = t.s_inv.transpose() * hess * &t.s_inv;
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 1.0, 2.0]));
        assert_abs_diff_eq!(conj, expected, epsilon = 1e-12);
    }

    #[test]
    fn gain_boundary_rejected() {
        let h: Arc<dyn Hamiltonian> = Arc::new(Quadratic::normal_form(Some(1.0), &[2.0]).unwrap());
        let (t, _) = saddle_setup(h);
        assert!(matches!(FeedbackLaw::new(&t, 1.0, vec![1.0, 1.0]), Err(Error::Gain(_))));
        assert!(matches!(FeedbackLaw::new(&t, 2.0, vec![1.0, 0.0]), Err(Error::Gain(_))));
        assert!(matches!(FeedbackLaw::new(&t, 2.0, vec![1.0]), Err(Error::Config(_))));
        let fs = feedback_functions(&t);
        let law = FeedbackLaw::unchecked(fs, 1.0, vec![1.0, 1.0], 1.0).unwrap();
        let h2: Arc<dyn Hamiltonian> = Arc::new(Quadratic::normal_form(Some(1.0), &[2.0]).unwrap());
        assert!(matches!(modified_hamiltonian(h2, &law), Err(Error::Gain(_))));
    }

    #[test]
    fn zero_gains_recover_open_loop() {
        let h = model(2.0, 1.0);
        let (t, _) = saddle_setup(h.clone());
        let law = FeedbackLaw::unchecked(feedback_functions(&t), 0.0, vec![0.0, 0.0], 0.5).unwrap();
        let cl = ClosedLoopSystem::unchecked(h.clone(), law);
        for z in [[0.1, 0.2, -0.3, 0.05], [0.0, 0.0, 0.0, 0.0], [-0.4, 0.1, 0.9, -1.2]] {
            assert_eq!(cl.field(&z).unwrap(), vector_field(&*h, &z).unwrap());
        }
    }

    #[test]
    fn quadratic_closed_loop_against_linear_algebra() {
        // H2 with lambda = omega = 1 is already in normal form: F1 = x1, F2 = P2 up to the
        // center rotation; compare with the matrix assembled independently
        let h: Arc<dyn Hamiltonian> = Arc::new(Quadratic::normal_form(Some(1.0), &[1.0]).unwrap());
        let (t, _) = saddle_setup(h.clone());
        let law = FeedbackLaw::new(&t, 2.0, vec![1.0, 1.0]).unwrap();
        let cl = ClosedLoopSystem::new(h, law).unwrap();
        let z = [0.1, 0.0, 0.0, 0.0];
        let a = closed_loop_matrix(&cl).unwrap();
        let expected = &a * DVector::from_column_slice(&z);
        assert_abs_diff_eq!(cl.field(&z).unwrap(), expected, epsilon = 1e-14);

        // independent oracle: with F1 = x1, Hmod = -x1^2/2 + x1^2 + ... => {F1, Hmod} = P1
        assert_abs_diff_eq!(t.q_row(0), DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]), epsilon = 1e-12);
        let b = cl.brackets(&z).unwrap();
        assert_abs_diff_eq!(b[0], 0.0, epsilon = 1e-14);
        // xdot1 = P1, Pdot1 = x1 - c x1 = -0.1
        let f = cl.field(&z).unwrap();
        assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f[2], -0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(cl.dissipation(&z).unwrap(), 0.0, epsilon = 1e-14);
        let z2 = [0.1, 0.0, 0.3, 0.0];
        // {x1, Hmod} = P1 = 0.3; xdot1 = 0.3 + d1 * 0.3 * (J e_x1)_x1 = 0.3, Pdot1 = -0.1 - 0.3
        let f2 = cl.field(&z2).unwrap();
        assert_abs_diff_eq!(f2[0], 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(f2[2], -0.4, epsilon = 1e-14);
        assert_abs_diff_eq!(cl.dissipation(&z2).unwrap(), 0.09, epsilon = 1e-14);
    }

    #[test]
    fn model_field_matches_finite_difference_implementation() {
        let h = model(2.0, 1.0);
        let (t, _) = saddle_setup(h.clone());
        let law = FeedbackLaw::new(&t, 1.0, vec![1.0, 1.0]).unwrap();
        let cl = ClosedLoopSystem::new(h.clone(), law.clone()).unwrap();
        let z = [0.1, 0.0, 0.0, 0.0];

        // X_Hmod from finite differences of the energy alone, then dissipation
        let fd_mod = FiniteDifference(cl.h_mod.clone());
        let grad = fd_gradient(&fd_mod, &z).unwrap();
        let xh = DVector::from_vec(vec![grad[2], grad[3], -grad[0], -grad[1]]);
        let mut expected = xh.clone();
        for (f, d) in law.functions.iter().zip(&law.d) {
            let s = &f.coeffs;
            let jx = DVector::from_vec(vec![s[2], s[3], -s[0], -s[1]]);
            expected += jx * (d * s.dot(&xh));
        }
        assert_abs_diff_eq!(cl.field(&z).unwrap(), expected, epsilon = 1e-8);
        assert_eq!(cl.field(t.z0.as_ref()).unwrap().amax(), 0.0);
    }

    #[test]
    fn hypotheses_and_broken_law() {
        let h = model(2.0, 1.0);
        let (t, _) = saddle_setup(h.clone());
        let law = FeedbackLaw::with_default_gains(&t).unwrap();
        let cl = ClosedLoopSystem::new(h.clone(), law.clone()).unwrap();
        let rep = check_hypotheses(&cl).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.rank_dc, 4);

        let mut broken = law;
        broken.functions[1].coeffs.fill(0.0);
        let rep = check_hypotheses(&ClosedLoopSystem::unchecked(h, broken)).unwrap();
        assert!(rep.rank_dc < 4);
        assert!(!rep.passed());
    }

    #[test]
    fn destabilization_creates_saddle() {
        let h: Arc<dyn Hamiltonian> = Arc::new(Quadratic::normal_form(None, &[1.0, 2.0]).unwrap());
        let z0 = CanonicalState::origin(2);
        let d = destabilize(h.clone(), &z0, 2.0).unwrap();
        assert_abs_diff_eq!(d.predicted_lambda, 1.0, epsilon = 1e-14);
        let cls = classify(&linearize(&d.hamiltonian, &z0).unwrap(), None).unwrap();
        assert_eq!(cls.kind, EquilibriumKind::SaddleCenter);
        assert_abs_diff_eq!(cls.lambda.unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(cls.omegas[0], 2.0, epsilon = 1e-10);

        assert!(matches!(destabilize(h.clone(), &z0, 1.0), Err(Error::Gain(_))));
        let saddle: Arc<dyn Hamiltonian> = Arc::new(Quadratic::normal_form(Some(1.0), &[2.0]).unwrap());
        assert!(matches!(destabilize(saddle, &z0, 3.0), Err(Error::WrongKind { .. })));
    }
}
