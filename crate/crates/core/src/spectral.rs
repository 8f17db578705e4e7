//! Linearization at an equilibrium and classification of its spectrum into
//! saddle-center-...-center or center-...-center type.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamsys::{symplectic_j, CanonicalState, Hamiltonian};

/// Largest gradient norm accepted as an equilibrium by [`linearize`].
pub const EQUILIBRIUM_TOL: f64 = 1e-8;
/// Default relative threshold for splitting real and imaginary parts.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Eigenvector matrices worse conditioned than this are treated as defective.
pub const MAX_EIGVEC_CONDITION: f64 = 1e8;

/// `A = J D^2H(z0)` together with the Hessian it came from.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub matrix: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    pub z0: CanonicalState,
    pub n: usize,
}

impl Linearization {
    /// Builds the linearization from a Hessian directly (no equilibrium check).
    pub fn from_hessian(hessian: DMatrix<f64>, z0: CanonicalState) -> Result<Self> {
        let n = z0.dof();
        if hessian.nrows() != 2 * n || hessian.ncols() != 2 * n {
            return Err(Error::Dimension {
                expected: 2 * n,
                got: hessian.nrows(),
            });
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let matrix = symplectic_j(n) * &hessian;
        Ok(Self { matrix, hessian, z0, n })
    }

    /// `|| J A - (J A)^T ||_inf`; zero for a Hamiltonian matrix.
    pub fn hamiltonian_defect(&self) -> f64 {
        let ja = symplectic_j(self.n) * &self.matrix;
        (&ja - ja.transpose()).amax()
    }
}

pub fn linearize<H: Hamiltonian + ?Sized>(h: &H, z0: &CanonicalState) -> Result<Linearization> {
    let grad = h.gradient(z0)?;
    let residual = grad.amax();
    if !(residual <= EQUILIBRIUM_TOL) {
        return Err(Error::NotEquilibrium(residual));
    }
    Linearization::from_hessian(h.hessian(z0)?, z0.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumKind {
    SaddleCenter,
    AllCenter,
    Other,
}

impl std::fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SaddleCenter => "saddle-center",
            Self::AllCenter => "center",
            Self::Other => "other",
        })
    }
}

/// Paired spectrum of a Hamiltonian linearization.
///
/// Eigenvectors are stored as returned by the null-space solve (unit
/// Euclidean norm, arbitrary sign/phase); conventions are fixed later by
/// [`crate::normal_form`].
#[derive(Debug, Clone)]
pub struct SpectrumClassification {
    pub kind: EquilibriumKind,
    pub lambda: Option<f64>,
    /// Center frequencies, ascending.
    pub omegas: Vec<f64>,
    /// Eigenvectors for `+lambda` and `-lambda`.
    pub real_pair: Option<(DVector<f64>, DVector<f64>)>,
    /// Eigenvectors for `+i omega_k`, same order as `omegas`.
    pub center_vectors: Vec<DVector<Complex<f64>>>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub eigvec_condition: f64,
    pub detail: Option<String>,
    pub linearization: Linearization,
}

impl SpectrumClassification {
    pub fn require(&self, kind: EquilibriumKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::WrongKind {
                expected: kind.to_string(),
                found: match &self.detail {
                    Some(d) => format!("{} ({d})", self.kind),
                    None => self.kind.to_string(),
                },
            });
        }
        Ok(())
    }
}

fn neg(c: Complex<f64>) -> Complex<f64> {
    Complex::new(-c.re, -c.im)
}

/// Groups eigenvalues into `(e, -e)` pairs by greedy nearest-negation
/// matching. The representative of each pair has positive real part, or
/// zero real part and positive imaginary part.
fn pair_eigenvalues(eigs: &[Complex<f64>], scale: f64) -> Result<Vec<Complex<f64>>> {
    let mut remaining: Vec<Complex<f64>> = eigs.to_vec();
    // deterministic processing order: largest |Re|, then largest |Im|
    remaining.sort_by(|a, b| {
        b.re.abs()
            .total_cmp(&a.re.abs())
            .then(b.im.abs().total_cmp(&a.im.abs()))
            .then(b.re.total_cmp(&a.re))
            .then(b.im.total_cmp(&a.im))
    });
    let mut reps = Vec::new();
    while let Some(e) = (!remaining.is_empty()).then(|| remaining.remove(0)) {
        let target = neg(e);
        let (idx, dist) = remaining
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (c - target).norm()))
            .min_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then(remaining[b.0].im.abs().total_cmp(&remaining[a.0].im.abs()))
            })
            .ok_or_else(|| Error::Unpaired(format!("eigenvalue {e} has no partner")))?;
        if dist > 1e-6 * scale.max(1e-300) {
            return Err(Error::Unpaired(format!(
                "eigenvalue {e} is {dist:e} away from its nearest negation"
            )));
        }
        let partner = remaining.remove(idx);
        // average the pair to cancel round-off asymmetry, then fix the sign
        // of the dominant component
        let mid = (e - partner) * 0.5;
        let flip = if mid.re.abs() >= mid.im.abs() { mid.re < 0.0 } else { mid.im < 0.0 };
        let rep = if flip { neg(mid) } else { mid };
        reps.push(rep);
    }
    Ok(reps)
}

fn null_vector_complex(a: &DMatrix<f64>, e: Complex<f64>) -> DVector<Complex<f64>> {
    let dim = a.nrows();
    let mut shifted: DMatrix<Complex<f64>> = a.map(|v| Complex::new(v, 0.0));
    for i in 0..dim {
        shifted[(i, i)] -= e;
    }
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let v: DVector<Complex<f64>> = v_t.row(idx).transpose().map(|c| c.conj());
    let norm = v.norm();
    v / Complex::new(norm, 0.0)
}

fn null_vector_real(a: &DMatrix<f64>, e: f64) -> DVector<f64> {
    let dim = a.nrows();
    let shifted = a - DMatrix::identity(dim, dim) * e;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let v: DVector<f64> = v_t.row(idx).transpose();
    let norm = v.norm();
    v / norm
}

fn condition_number(m: &DMatrix<Complex<f64>>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Classifies the spectrum of `lin`. `tol` is relative to the spectral
/// radius; `None` uses [`DEFAULT_TOL`].
pub fn classify(lin: &Linearization, tol: Option<f64>) -> Result<SpectrumClassification> {
    let tol = tol.unwrap_or(DEFAULT_TOL);
    let a = &lin.matrix;
    let dim = a.nrows();
    let eigenvalues: Vec<Complex<f64>> = a.clone().complex_eigenvalues().iter().cloned().collect();
    let scale = eigenvalues.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let thr = tol * scale.max(f64::MIN_POSITIVE);

    let trace: Complex<f64> = eigenvalues.iter().sum();
    if trace.norm() > 1e-8 * scale.max(1.0) {
        return Err(Error::Unpaired(format!("eigenvalue sum {trace} is not zero")));
    }

    let reps = pair_eigenvalues(&eigenvalues, scale)?;
    let mut lambdas = Vec::new();
    let mut omegas = Vec::new();
    let mut issues = Vec::new();
    for r in &reps {
        let (re, im) = (r.re.abs(), r.im.abs());
        if re > thr && im <= thr {
            lambdas.push(re);
        } else if re <= thr && im > thr {
            omegas.push(im);
        } else if re <= thr && im <= thr {
            issues.push("zero eigenvalue pair".to_string());
        } else {
            issues.push(format!("complex quartet {:.6}{:+.6}i", r.re, r.im));
        }
    }
    omegas.sort_by(f64::total_cmp);

    let kind = if !issues.is_empty() {
        EquilibriumKind::Other
    } else if lambdas.len() == 1 {
        EquilibriumKind::SaddleCenter
    } else if lambdas.is_empty() {
        EquilibriumKind::AllCenter
    } else {
        issues.push(format!("{} real eigenvalue pairs", lambdas.len()));
        EquilibriumKind::Other
    };

    let mut out = SpectrumClassification {
        kind,
        lambda: None,
        omegas: omegas.clone(),
        real_pair: None,
        center_vectors: Vec::new(),
        eigenvalues: eigenvalues.clone(),
        eigvec_condition: f64::NAN,
        detail: (!issues.is_empty()).then(|| issues.join("; ")),
        linearization: lin.clone(),
    };
    if kind == EquilibriumKind::Other {
        return Ok(out);
    }

    for w in omegas.windows(2) {
        if (w[1] - w[0]).abs() <= thr.max(1e-8 * w[1]) {
            return Err(Error::Resonance(w[0], w[1]));
        }
    }

    let mut columns: Vec<DVector<Complex<f64>>> = Vec::with_capacity(dim);
    if let Some(&lambda) = lambdas.first() {
        let vp = null_vector_real(a, lambda);
        let vm = null_vector_real(a, -lambda);
        columns.push(vp.map(|v| Complex::new(v, 0.0)));
        columns.push(vm.map(|v| Complex::new(v, 0.0)));
        out.lambda = Some(lambda);
        out.real_pair = Some((vp, vm));
    }
    for &w in &omegas {
        let v = null_vector_complex(a, Complex::new(0.0, w));
        columns.push(v.clone());
        columns.push(v.map(|c| c.conj()));
        out.center_vectors.push(v);
    }
    let vmat = DMatrix::from_columns(&columns);
    let cond = condition_number(&vmat);
    out.eigvec_condition = cond;
    if !(cond < MAX_EIGVEC_CONDITION) {
        return Err(Error::NonSemisimple(cond));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamsys::{Quadratic, Shifted, ModelPotential};
    use approx::assert_abs_diff_eq;

    fn classify_quadratic(lambda: Option<f64>, omegas: &[f64]) -> Result<SpectrumClassification> {
        let h = Quadratic::normal_form(lambda, omegas).unwrap();
        let z0 = CanonicalState::origin(h.dof());
        classify(&linearize(&h, &z0).unwrap(), None)
    }

    #[test]
    fn quadratic_linearization_layout() {
        let h = Quadratic::normal_form(Some(0.7), &[1.3]).unwrap();
        let lin = linearize(&h, &CanonicalState::origin(2)).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0, 1.3, 0.7, 0.0, 0.0, 0.0, 0.0, -1.3, 0.0, 0.0],
        );
        assert_abs_diff_eq!(lin.matrix, expected, epsilon = 1e-15);
        assert!(lin.hamiltonian_defect() < 1e-15);
    }

    #[test]
    fn recovers_quadratic_parameters() {
        let cls = classify_quadratic(Some(0.37), &[2.5, 0.8, 1.9]).unwrap();
        assert_eq!(cls.kind, EquilibriumKind::SaddleCenter);
        assert_abs_diff_eq!(cls.lambda.unwrap(), 0.37, epsilon = 1e-10);
        for (got, want) in cls.omegas.iter().zip([0.8, 1.9, 2.5]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
        assert_eq!(cls.center_vectors.len(), 3);
    }

    #[test]
    fn all_center() {
        let cls = classify_quadratic(None, &[2.0, 1.0]).unwrap();
        assert_eq!(cls.kind, EquilibriumKind::AllCenter);
        assert!(cls.lambda.is_none());
        assert_abs_diff_eq!(cls.omegas[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cls.omegas[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn model_spectrum() {
        for (a, b) in [(2.0, 1.0), (3.0, 1.0), (4.0, 2.0)] {
            let h = Shifted::new(ModelPotential::new(a, b).unwrap(), &ModelPotential::saddle()).unwrap();
            let cls = classify(&linearize(&h, &CanonicalState::origin(2)).unwrap(), None).unwrap();
            assert_eq!(cls.kind, EquilibriumKind::SaddleCenter);
            assert_abs_diff_eq!(cls.lambda.unwrap(), 1.0 / a, epsilon = 1e-12);
            assert_abs_diff_eq!(cls.omegas[0], 2f64.sqrt() / b, epsilon = 1e-12);
        }
    }

    #[test]
    fn resonance_is_rejected() {
        assert!(matches!(classify_quadratic(Some(1.0), &[1.5, 1.5]), Err(Error::Resonance(..))));
    }

    #[test]
    fn two_saddles_are_other() {
        // two hyperbolic degrees of freedom
        let h = Quadratic::new(DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0, 1.0, 2.0]))).unwrap();
        let cls = classify(&linearize(&h, &CanonicalState::origin(2)).unwrap(), None).unwrap();
        assert_eq!(cls.kind, EquilibriumKind::Other);
        assert!(cls.require(EquilibriumKind::SaddleCenter).is_err());
    }

    #[test]
    fn complex_quartet_is_other() {
        // A = J Q with eigenvalues +-1 +-i
        let q = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0, -1.0, -1.0, -1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0],
        );
        let h = Quadratic::new(q).unwrap();
        let lin = linearize(&h, &CanonicalState::origin(2)).unwrap();
        let cls = classify(&lin, None).unwrap();
        assert_eq!(cls.kind, EquilibriumKind::Other);
        assert!(cls.detail.unwrap().contains("quartet"));
    }

    #[test]
    fn defective_center_block_is_rejected() {
        // nilpotent Hamiltonian block: H = p1^2/2, zero eigenvalue of multiplicity 2
        let h = Quadratic::new(DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))).unwrap();
        let cls = classify(&linearize(&h, &CanonicalState::origin(1)).unwrap(), None).unwrap();
        assert_eq!(cls.kind, EquilibriumKind::Other);
    }

    #[test]
    fn rejects_non_equilibrium() {
        let h = Quadratic::normal_form(Some(1.0), &[1.0]).unwrap();
        let z = CanonicalState::new(vec![0.1, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(linearize(&h, &z), Err(Error::NotEquilibrium(_))));
    }

    #[test]
    fn eigenvectors_satisfy_eigen_equation() {
        let cls = classify_quadratic(Some(0.5), &[1.1, 2.3]).unwrap();
        let a = &cls.linearization.matrix;
        let (vp, vm) = cls.real_pair.as_ref().unwrap();
        assert!((a * vp - vp * 0.5).amax() < 1e-12);
        assert!((a * vm + vm * 0.5).amax() < 1e-12);
        let ac = a.map(|v| Complex::new(v, 0.0));
        for (v, &w) in cls.center_vectors.iter().zip(&cls.omegas) {
            let r = &ac * v - v * Complex::new(0.0, w);
            assert!(r.iter().all(|c| c.norm() < 1e-12));
        }
    }
}
