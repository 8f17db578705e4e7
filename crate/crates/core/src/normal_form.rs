//! Symplectic linear normal form at a saddle-center or center equilibrium.
//!
//! `M` has the scaled eigenvectors as columns and maps normal-form
//! coordinates to displacements `z - z0`. `N` rotates the hyperbolic plane so
//! that `lambda qbar1 pbar1` becomes `lambda/2 (p1^2 - q1^2)`, and
//! `S = N M^-1` maps displacements to normal-form coordinates `(q, p)`.
//!
//! Eigenvectors carry a sign (real pair) or phase (center pairs) freedom.
//! Conventions applied here, in order:
//!
//! * real pair: both vectors unit length, `v_{n+1}` negated if
//!   `<v_1, J v_{n+1}> < 0`;
//! * center pairs: if the linearization has a diagonal reversing symmetry
//!   `R = diag(s, -s)` (`R A R = -A`), the phase is chosen so that
//!   `-R conj(v) = v`; otherwise the largest component of `v` is made real;
//!   `v` is conjugated if `<Re v, J Im v> < 0`;
//! * each `(q_k, p_k)` row pair of `S` is negated together when the
//!   largest-magnitude entry of the `q_k` row is negative.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hamsys::{check_dim, symplectic_j, CanonicalState};
use crate::spectral::{EquilibriumKind, SpectrumClassification};

/// Tolerance of the conjugated-Hessian check in [`build_transform`],
/// relative to `max(1, spectral radius)`.
pub const CONJUGATION_TOL: f64 = 1e-6;

const MAX_REVERSOR_DOF: usize = 12;

/// `|| M^T J M - J ||_inf`.
pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let j = symplectic_j(m.nrows() / 2);
    (m.transpose() * &j * m - j).amax()
}

/// Rotation by 45 degrees in the `(q_1, p_1)` plane, identity elsewhere.
pub fn rotation_n(n: usize) -> DMatrix<f64> {
    let mut r = DMatrix::identity(2 * n, 2 * n);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    r[(0, 0)] = s;
    r[(0, n)] = -s;
    r[(n, 0)] = s;
    r[(n, n)] = s;
    r
}

/// Searches for a diagonal anti-symplectic involution `R = diag(s, -s)` with
/// `R A R = -A`, `s_1 = +1`. Candidates with fewer sign flips are preferred;
/// among equals, flips on later coordinates come first.
pub fn find_reversor(a: &DMatrix<f64>) -> Option<Vec<f64>> {
    let dim = a.nrows();
    let n = dim / 2;
    if n == 0 || n > MAX_REVERSOR_DOF {
        return None;
    }
    let tol = 1e-6 * a.amax().max(1.0);
    let mut masks: Vec<u32> = (0..(1u32 << (n - 1))).collect();
    // bit k-1 set means s_{k+1} = -1; order by flip count, then by mask value
    masks.sort_by_key(|m| (m.count_ones(), *m));
    for mask in masks {
        let mut r = vec![0.0; dim];
        for k in 0..n {
            let s = if k > 0 && mask & (1 << (k - 1)) != 0 { -1.0 } else { 1.0 };
            r[k] = s;
            r[n + k] = -s;
        }
        let ok = (0..dim).all(|i| (0..dim).all(|j| (r[i] * r[j] * a[(i, j)] + a[(i, j)]).abs() <= tol));
        if ok {
            return Some(r);
        }
    }
    None
}

/// Eigenvectors after the sign/phase conventions, ready for scaling.
#[derive(Debug, Clone)]
pub struct Eigenbasis {
    pub real_pair: Option<(DVector<f64>, DVector<f64>)>,
    pub center_vectors: Vec<DVector<Complex<f64>>>,
    pub reversor: Option<Vec<f64>>,
    /// `<v_1, J v_{n+1}>` followed by `<Re v_k, J Im v_k>`.
    pub pairings: Vec<f64>,
}

impl Eigenbasis {
    pub fn constants(&self) -> Vec<f64> {
        self.pairings.iter().map(|p| p.powf(-0.5)).collect()
    }

    /// Rescales the eigenvectors by positive factors (`real` applies to both
    /// vectors of the hyperbolic pair) and recomputes the pairings. The
    /// constants change with the scale; `M` does not.
    pub fn rescaled(&self, real: f64, centers: &[f64]) -> Eigenbasis {
        let real_pair = self.real_pair.as_ref().map(|(a, b)| (a * real, b * real));
        let center_vectors: Vec<_> = self
            .center_vectors
            .iter()
            .zip(centers)
            .map(|(v, &k)| v * Complex::new(k, 0.0))
            .collect();
        let mut pairings = Vec::new();
        if let Some((a, b)) = &real_pair {
            pairings.push(j_pairing(a, b));
        }
        for v in &center_vectors {
            pairings.push(j_pairing(&v.map(|c| c.re), &v.map(|c| c.im)));
        }
        Eigenbasis {
            real_pair,
            center_vectors,
            reversor: self.reversor.clone(),
            pairings,
        }
    }

    /// `M` assembled from these vectors.
    pub fn matrix_m(&self) -> DMatrix<f64> {
        let n = self.center_vectors.len() + usize::from(self.real_pair.is_some());
        assemble_m(self, n)
    }
}

fn j_pairing(u: &DVector<f64>, w: &DVector<f64>) -> f64 {
    u.dot(&(symplectic_j(u.len() / 2) * w))
}

fn fix_center_phase(v: &DVector<Complex<f64>>, reversor: Option<&[f64]>) -> DVector<Complex<f64>> {
    let unit = v / Complex::new(v.norm(), 0.0);
    if let Some(r) = reversor {
        // w = -R conj(v) is an eigenvector for the same eigenvalue
        let w = DVector::from_fn(unit.len(), |i, _| unit[i].conj() * (-r[i]));
        let inner = unit.dotc(&w);
        if inner.norm() > 0.5 {
            let half = Complex::from_polar(1.0, inner.arg() / 2.0);
            return unit * half;
        }
    }
    let (k, _) = unit
        .iter()
        .enumerate()
        .fold((0, -1.0), |best, (i, c)| if c.norm() > best.1 + 1e-12 { (i, c.norm()) } else { best });
    let phase = unit[k].conj() / Complex::new(unit[k].norm(), 0.0);
    unit * phase
}

/// Applies the sign/phase conventions and computes the pairings whose
/// inverse square roots are the scaling constants.
pub fn normalize_eigenvectors(cls: &SpectrumClassification) -> Result<Eigenbasis> {
    if cls.kind == EquilibriumKind::Other {
        return Err(Error::WrongKind {
            expected: "saddle-center or center".into(),
            found: cls.kind.to_string(),
        });
    }
    let reversor = find_reversor(&cls.linearization.matrix);
    let mut pairings = Vec::new();
    let scale = 1e-12;

    let real_pair = match &cls.real_pair {
        Some((vp, vm)) => {
            let vp = vp / vp.norm();
            let mut vm = vm / vm.norm();
            let mut p = j_pairing(&vp, &vm);
            if p.abs() <= scale {
                return Err(Error::DegeneratePairing(format!("<v1, J v(n+1)> = {p:e}")));
            }
            if p < 0.0 {
                vm = -vm;
                p = -p;
            }
            pairings.push(p);
            Some((vp, vm))
        }
        None => None,
    };

    let mut center_vectors = Vec::new();
    for (k, v) in cls.center_vectors.iter().enumerate() {
        let mut v = fix_center_phase(v, reversor.as_deref());
        let re = v.map(|c| c.re);
        let im = v.map(|c| c.im);
        let mut p = j_pairing(&re, &im);
        if p.abs() <= scale {
            return Err(Error::DegeneratePairing(format!(
                "<Re v, J Im v> = {p:e} for omega = {}",
                cls.omegas[k]
            )));
        }
        if p < 0.0 {
            v = v.map(|c| c.conj());
            p = -p;
        }
        pairings.push(p);
        center_vectors.push(v);
    }
    Ok(Eigenbasis {
        real_pair,
        center_vectors,
        reversor,
        pairings,
    })
}

/// Scaling constants `c_1 = <v_1, J v_{n+1}>^-1/2`, `c_k = <Re v_k, J Im v_k>^-1/2`
/// (center case: all `c_k` of the second kind).
pub fn normalization_constants(cls: &SpectrumClassification) -> Result<Vec<f64>> {
    Ok(normalize_eigenvectors(cls)?.constants())
}

fn assemble_m(basis: &Eigenbasis, n: usize) -> DMatrix<f64> {
    let c = basis.constants();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    let mut col = 0;
    if let Some((vp, vm)) = &basis.real_pair {
        m.set_column(0, &(vp * c[0]));
        m.set_column(n, &(vm * c[0]));
        col = 1;
    }
    let offset = col;
    for (k, v) in basis.center_vectors.iter().enumerate() {
        let ck = c[offset + k];
        m.set_column(col, &(v.map(|z| z.re) * ck));
        m.set_column(n + col, &(v.map(|z| z.im) * ck));
        col += 1;
    }
    m
}

/// The symplectic eigenvector matrix before the row-sign convention on `S`
/// is applied.
pub fn build_m(cls: &SpectrumClassification) -> Result<DMatrix<f64>> {
    let basis = normalize_eigenvectors(cls)?;
    Ok(assemble_m(&basis, cls.linearization.n))
}

#[derive(Debug, Clone)]
pub struct NormalFormTransform {
    pub kind: EquilibriumKind,
    pub m: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub s_inv: DMatrix<f64>,
    pub c: Vec<f64>,
    pub lambda: Option<f64>,
    pub omegas: Vec<f64>,
    pub z0: CanonicalState,
    pub hessian: DMatrix<f64>,
    pub reversor: Option<Vec<f64>>,
}

impl NormalFormTransform {
    pub fn dof(&self) -> usize {
        self.z0.dof()
    }

    /// `(q, p) = S (z - z0)`.
    pub fn to_normal_form(&self, z: &[f64]) -> Result<CanonicalState> {
        check_dim(self.dof(), z)?;
        let d = DVector::from_column_slice(z) - self.z0.vector();
        CanonicalState::from_vector(&self.s * d)
    }

    /// `z = z0 + S^-1 (q, p)`.
    pub fn from_normal_form(&self, qp: &[f64]) -> Result<CanonicalState> {
        check_dim(self.dof(), qp)?;
        CanonicalState::from_vector(self.z0.vector() + &self.s_inv * DVector::from_column_slice(qp))
    }

    /// `S^-T D^2H(z0) S^-1`.
    pub fn conjugated_hessian(&self) -> DMatrix<f64> {
        self.s_inv.transpose() * &self.hessian * &self.s_inv
    }

    /// Hessian of the quadratic normal form:
    /// `diag(-lambda, omega_2.., lambda, omega_2..)` or `diag(omega.., omega..)`.
    pub fn normal_form_hessian(&self) -> DMatrix<f64> {
        let n = self.dof();
        let mut d = DMatrix::zeros(2 * n, 2 * n);
        let mut k = 0;
        if let Some(l) = self.lambda {
            d[(0, 0)] = -l;
            d[(n, n)] = l;
            k = 1;
        }
        for &w in &self.omegas {
            d[(k, k)] = w;
            d[(n + k, n + k)] = w;
            k += 1;
        }
        d
    }

    /// Row `i` of `S`, i.e. the covector of `q_{i+1}`.
    pub fn q_row(&self, i: usize) -> DVector<f64> {
        self.s.row(i).transpose()
    }
}

/// Builds `M`, `N`, `S` and validates them (symplecticity and the
/// conjugated Hessian).
pub fn build_transform(cls: &SpectrumClassification) -> Result<NormalFormTransform> {
    let n = cls.linearization.n;
    let basis = normalize_eigenvectors(cls)?;
    let mut m = assemble_m(&basis, n);
    let rotation = match cls.kind {
        EquilibriumKind::SaddleCenter => rotation_n(n),
        _ => DMatrix::identity(2 * n, 2 * n),
    };
    let m_inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Construction("eigenvector matrix is singular".into()))?;
    let mut s = &rotation * m_inv;

    for k in 0..n {
        let row = s.row(k);
        let (idx, _) = row
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, v)| if v.abs() > best.1 + 1e-12 { (i, v.abs()) } else { best });
        if row[idx] < 0.0 {
            for r in [k, n + k] {
                s.row_mut(r).neg_mut();
                m.column_mut(r).neg_mut();
            }
        }
    }
    let s_inv = &m * rotation.transpose();

    let transform = NormalFormTransform {
        kind: cls.kind,
        c: basis.constants(),
        m,
        rotation,
        s,
        s_inv,
        lambda: cls.lambda,
        omegas: cls.omegas.clone(),
        z0: cls.linearization.z0.clone(),
        hessian: cls.linearization.hessian.clone(),
        reversor: basis.reversor,
    };

    let scale = transform
        .omegas
        .iter()
        .cloned()
        .chain(transform.lambda)
        .fold(1.0, f64::max);
    let defect = symplectic_defect(&transform.s);
    if defect > CONJUGATION_TOL * scale {
        return Err(Error::Construction(format!("S is not symplectic (defect {defect:e})")));
    }
    let mismatch = (transform.conjugated_hessian() - transform.normal_form_hessian()).amax();
    if mismatch > CONJUGATION_TOL * scale {
        return Err(Error::Construction(format!(
            "conjugated Hessian differs from the normal form by {mismatch:e}"
        )));
    }
    Ok(transform)
}
