//! Hamiltonian systems in canonical coordinates `(x_1..x_n, P_1..P_n)`.
//!
//! Every system implements [`Hamiltonian`]. Analytic gradients and Hessians
//! are provided by the built-in systems; anything else falls back to
//! fourth-order central differences.

use std::collections::BTreeMap;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance from the nucleus below which the hydrogen Hamiltonian refuses
/// to evaluate.
pub const HYDROGEN_CUTOFF: f64 = 1e-8;

/// A point of the 2n-dimensional phase space, ordered `(x_1..x_n, P_1..P_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalState(DVector<f64>);

impl CanonicalState {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "phase-space state must have even positive length, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(DVector::from_vec(coords)))
    }

    pub fn origin(n: usize) -> Self {
        Self(DVector::zeros(2 * n))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        Self::new(v.data.into())
    }

    /// Wraps a vector the caller already knows to be finite and even-length.
    pub(crate) fn from_vector_unchecked(v: DVector<f64>) -> Self {
        debug_assert!(v.len().is_multiple_of(2) && v.iter().all(|x| x.is_finite()));
        Self(v)
    }

    pub fn dof(&self) -> usize {
        self.0.len() / 2
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0.data.into()
    }
}

impl Serialize for CanonicalState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter())
    }
}

impl Deref for CanonicalState {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        self.0.as_slice()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

/// A smooth scalar function on canonical phase space.
///
/// Only `dof` and `energy` are required; the derivative methods default to
/// finite differences.
pub trait Hamiltonian: Send + Sync {
    fn dof(&self) -> usize;

    fn energy(&self, z: &[f64]) -> Result<f64>;

    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        fd_gradient(self, z)
    }

    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        fd_hessian(self, z)
    }

    fn gradient_mode(&self) -> GradientMode {
        GradientMode::FiniteDifference
    }
}

impl<H: Hamiltonian + ?Sized> Hamiltonian for Arc<H> {
    fn dof(&self) -> usize {
        (**self).dof()
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        (**self).energy(z)
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        (**self).gradient(z)
    }
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        (**self).hessian(z)
    }
    fn gradient_mode(&self) -> GradientMode {
        (**self).gradient_mode()
    }
}

impl<H: Hamiltonian + ?Sized> Hamiltonian for &H {
    fn dof(&self) -> usize {
        (**self).dof()
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        (**self).energy(z)
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        (**self).gradient(z)
    }
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        (**self).hessian(z)
    }
    fn gradient_mode(&self) -> GradientMode {
        (**self).gradient_mode()
    }
}

pub(crate) fn check_dim(expected_dof: usize, z: &[f64]) -> Result<()> {
    if z.len() != 2 * expected_dof {
        return Err(Error::Dimension {
            expected: 2 * expected_dof,
            got: z.len(),
        });
    }
    Ok(())
}

/// First-derivative weights of the five-point central stencil at offsets -2..=2.
const D1_WEIGHTS: [(f64, f64); 4] = [(-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)];

fn step_size(zi: f64, power: f64) -> f64 {
    zi.abs().max(1.0) * f64::EPSILON.powf(power)
}

/// Gradient by fourth-order central differences, step `max(1,|z_i|) eps^(1/5)`.
pub fn fd_gradient<H: Hamiltonian + ?Sized>(h: &H, z: &[f64]) -> Result<DVector<f64>> {
    check_dim(h.dof(), z)?;
    let mut work = z.to_vec();
    let mut grad = DVector::zeros(z.len());
    for i in 0..z.len() {
        let hi = step_size(z[i], 0.2);
        let mut acc = 0.0;
        for &(offset, w) in &D1_WEIGHTS {
            work[i] = z[i] + offset * hi;
            acc += w * h.energy(&work)?;
        }
        work[i] = z[i];
        grad[i] = acc / hi;
    }
    Ok(grad)
}

/// Hessian by fourth-order central differences, step `max(1,|z_i|) eps^(1/4)`,
/// symmetrized.
pub fn fd_hessian<H: Hamiltonian + ?Sized>(h: &H, z: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(h.dof(), z)?;
    let dim = z.len();
    let steps: Vec<f64> = z.iter().map(|&zi| step_size(zi, 0.25)).collect();
    let mut work = z.to_vec();
    let f0 = h.energy(z)?;
    let mut hess = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let hi = steps[i];
        let mut eval = |off: f64| -> Result<f64> {
            work[i] = z[i] + off * hi;
            let v = h.energy(&work);
            work[i] = z[i];
            v
        };
        let (m2, m1, p1, p2) = (eval(-2.0)?, eval(-1.0)?, eval(1.0)?, eval(2.0)?);
        hess[(i, i)] = (-m2 + 16.0 * m1 - 30.0 * f0 + 16.0 * p1 - p2) / (12.0 * hi * hi);
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            let mut acc = 0.0;
            for &(oi, wi) in &D1_WEIGHTS {
                for &(oj, wj) in &D1_WEIGHTS {
                    work[i] = z[i] + oi * steps[i];
                    work[j] = z[j] + oj * steps[j];
                    acc += wi * wj * h.energy(&work)?;
                }
            }
            work[i] = z[i];
            work[j] = z[j];
            let v = acc / (steps[i] * steps[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// The canonical structure matrix `[[0, I], [-I, 0]]`.
pub fn symplectic_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        j[(k, n + k)] = 1.0;
        j[(n + k, k)] = -1.0;
    }
    j
}

/// `J v` without forming `J`.
pub fn apply_j(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() / 2;
    let mut out = DVector::zeros(v.len());
    for k in 0..n {
        out[k] = v[n + k];
        out[n + k] = -v[k];
    }
    out
}

/// The Hamiltonian vector field `X_H(z) = J grad H(z)`.
pub fn vector_field<H: Hamiltonian + ?Sized>(h: &H, z: &[f64]) -> Result<DVector<f64>> {
    Ok(apply_j(&h.gradient(z)?))
}

/// Canonical Poisson bracket `{F, G}(z) = grad F^T J grad G`.
pub fn poisson_bracket<F, G>(f: &F, g: &G, z: &[f64]) -> Result<f64>
where
    F: Hamiltonian + ?Sized,
    G: Hamiltonian + ?Sized,
{
    let df = f.gradient(z)?;
    let dg = g.gradient(z)?;
    Ok(df.dot(&apply_j(&dg)))
}

/// Newton iteration `z <- z - (D^2 H)^-1 grad H` until `|grad H|_inf <= tol`.
pub fn find_equilibrium<H: Hamiltonian + ?Sized>(
    h: &H,
    guess: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CanonicalState> {
    check_dim(h.dof(), guess)?;
    let mut z = DVector::from_column_slice(guess);
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let grad = h.gradient(z.as_slice())?;
        residual = grad.amax();
        if residual <= tol {
            return CanonicalState::from_vector(z);
        }
        let hess = h.hessian(z.as_slice())?;
        let step = hess.lu().solve(&grad).ok_or(Error::SingularHessian)?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularHessian);
        }
        z -= step;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Forces finite-difference derivatives for any system.
#[derive(Debug, Clone)]
pub struct FiniteDifference<H>(pub H);

impl<H: Hamiltonian> Hamiltonian for FiniteDifference<H> {
    fn dof(&self) -> usize {
        self.0.dof()
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        self.0.energy(z)
    }
}

/// `H'(z) = H(z + offset)`: moves an equilibrium at `offset` to the origin.
#[derive(Debug, Clone)]
pub struct Shifted<H> {
    base: H,
    offset: DVector<f64>,
}

impl<H: Hamiltonian> Shifted<H> {
    pub fn new(base: H, offset: &[f64]) -> Result<Self> {
        check_dim(base.dof(), offset)?;
        Ok(Self {
            base,
            offset: DVector::from_column_slice(offset),
        })
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    fn moved(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.base.dof(), z)?;
        Ok(z.iter().zip(self.offset.iter()).map(|(a, b)| a + b).collect())
    }
}

impl<H: Hamiltonian> Hamiltonian for Shifted<H> {
    fn dof(&self) -> usize {
        self.base.dof()
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        self.base.energy(&self.moved(z)?)
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        self.base.gradient(&self.moved(z)?)
    }
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.base.hessian(&self.moved(z)?)
    }
    fn gradient_mode(&self) -> GradientMode {
        self.base.gradient_mode()
    }
}

/// Homogeneous quadratic Hamiltonian `H(z) = 1/2 z^T Q z`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    hessian: DMatrix<f64>,
}

impl Quadratic {
    pub fn new(hessian: DMatrix<f64>) -> Result<Self> {
        let dim = hessian.nrows();
        if dim == 0 || !dim.is_multiple_of(2) || hessian.ncols() != dim {
            return Err(Error::Config(format!(
                "quadratic form must be square of even size, got {}x{}",
                hessian.nrows(),
                hessian.ncols()
            )));
        }
        let sym = (&hessian + hessian.transpose()) * 0.5;
        Ok(Self { hessian: sym })
    }

    /// `lambda/2 (p_1^2 - q_1^2) + sum_k omega_k/2 (p_k^2 + q_k^2)`, or the
    /// all-center form when `lambda` is `None`.
    pub fn normal_form(lambda: Option<f64>, omegas: &[f64]) -> Result<Self> {
        let mut diag = Vec::new();
        if let Some(l) = lambda {
            if !(l > 0.0) {
                return Err(Error::Config(format!("lambda must be positive, got {l}")));
            }
            diag.push(-l);
        }
        for &w in omegas {
            if !(w > 0.0) {
                return Err(Error::Config(format!("omega must be positive, got {w}")));
            }
            diag.push(w);
        }
        if diag.is_empty() {
            return Err(Error::Config("quadratic system needs lambda or omega".into()));
        }
        let n = diag.len();
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for (k, &v) in diag.iter().enumerate() {
            h[(k, k)] = v;
            h[(n + k, n + k)] = v.abs();
        }
        Ok(Self { hessian: h })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.hessian
    }
}

impl Hamiltonian for Quadratic {
    fn dof(&self) -> usize {
        self.hessian.nrows() / 2
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.dof(), z)?;
        let v = DVector::from_column_slice(z);
        Ok(0.5 * v.dot(&(&self.hessian * &v)))
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dof(), z)?;
        Ok(&self.hessian * DVector::from_column_slice(z))
    }
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dof(), z)?;
        Ok(self.hessian.clone())
    }
    fn gradient_mode(&self) -> GradientMode {
        GradientMode::Analytic
    }
}

/// Two-well isomerization model `1/2|P|^2 + x1^2 (x1-1)^2 / a^2 + x2^2 / b^2`
/// in its original coordinates. The saddle sits at `x1 = 1/2`.
#[derive(Debug, Clone, Copy)]
pub struct ModelPotential {
    pub a: f64,
    pub b: f64,
}

impl ModelPotential {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Config(format!("model needs a, b > 0 (a={a}, b={b})")));
        }
        if !(a > b) {
            return Err(Error::Config(format!("model needs a > b (a={a}, b={b})")));
        }
        Ok(Self { a, b })
    }

    pub fn saddle() -> [f64; 4] {
        [0.5, 0.0, 0.0, 0.0]
    }

    pub fn potential(&self, x1: f64, x2: f64) -> f64 {
        let a2 = self.a * self.a;
        x1 * x1 * (x1 - 1.0) * (x1 - 1.0) / a2 + x2 * x2 / (self.b * self.b)
    }
}

impl Hamiltonian for ModelPotential {
    fn dof(&self) -> usize {
        2
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        check_dim(2, z)?;
        Ok(0.5 * (z[2] * z[2] + z[3] * z[3]) + self.potential(z[0], z[1]))
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_dim(2, z)?;
        let a2 = self.a * self.a;
        let x1 = z[0];
        Ok(DVector::from_vec(vec![
            2.0 * x1 * (x1 - 1.0) * (2.0 * x1 - 1.0) / a2,
            2.0 * z[1] / (self.b * self.b),
            z[2],
            z[3],
        ]))
    }
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(2, z)?;
        let a2 = self.a * self.a;
        let x1 = z[0];
        let mut h = DMatrix::zeros(4, 4);
        h[(0, 0)] = 2.0 * (6.0 * x1 * x1 - 6.0 * x1 + 1.0) / a2;
        h[(1, 1)] = 2.0 / (self.b * self.b);
        h[(2, 2)] = 1.0;
        h[(3, 3)] = 1.0;
        Ok(h)
    }
    fn gradient_mode(&self) -> GradientMode {
        GradientMode::Analytic
    }
}

/// Hydrogen atom in crossed electric and magnetic fields (rotating frame,
/// scaled units), field strength `eps`:
///
/// `H = |P|^2/2 - 1/R + (x1 P2 - x2 P1)/2 + (x1^2 + x2^2)/8 - eps x1`.
#[derive(Debug, Clone, Copy)]
pub struct Hydrogen {
    pub eps: f64,
}

impl Hydrogen {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("hydrogen needs eps > 0, got {eps}")));
        }
        Ok(Self { eps })
    }

    /// Closed-form Stark saddle `(eps^-1/2, 0, 0, 0, -eps^-1/2 / 2, 0)`.
    pub fn stark_saddle(&self) -> [f64; 6] {
        let x = self.eps.powf(-0.5);
        [x, 0.0, 0.0, 0.0, -0.5 * x, 0.0]
    }

    fn radius(z: &[f64]) -> Result<f64> {
        let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
        if r < HYDROGEN_CUTOFF {
            return Err(Error::Singularity(format!(
                "hydrogen evaluated at R = {r:e} < {HYDROGEN_CUTOFF:e}"
            )));
        }
        Ok(r)
    }
}

impl Hamiltonian for Hydrogen {
    fn dof(&self) -> usize {
        3
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        check_dim(3, z)?;
        let r = Self::radius(z)?;
        let (x1, x2) = (z[0], z[1]);
        let (p1, p2, p3) = (z[3], z[4], z[5]);
        Ok(0.5 * (p1 * p1 + p2 * p2 + p3 * p3) - 1.0 / r + 0.5 * (x1 * p2 - x2 * p1)
            + 0.125 * (x1 * x1 + x2 * x2)
            - self.eps * x1)
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_dim(3, z)?;
        let r = Self::radius(z)?;
        let r3 = r * r * r;
        let (x1, x2, x3) = (z[0], z[1], z[2]);
        let (p1, p2, p3) = (z[3], z[4], z[5]);
        Ok(DVector::from_vec(vec![
            x1 / r3 + 0.5 * p2 + 0.25 * x1 - self.eps,
            x2 / r3 - 0.5 * p1 + 0.25 * x2,
            x3 / r3,
            p1 - 0.5 * x2,
            p2 + 0.5 * x1,
            p3,
        ]))
    }
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(3, z)?;
        let r = Self::radius(z)?;
        let r3 = r * r * r;
        let r5 = r3 * r * r;
        let mut h = DMatrix::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { 1.0 / r3 } else { 0.0 };
                h[(i, j)] = delta - 3.0 * z[i] * z[j] / r5;
            }
        }
        h[(0, 0)] += 0.25;
        h[(1, 1)] += 0.25;
        h[(0, 4)] = 0.5;
        h[(4, 0)] = 0.5;
        h[(1, 3)] = -0.5;
        h[(3, 1)] = -0.5;
        for k in 3..6 {
            h[(k, k)] = 1.0;
        }
        Ok(h)
    }
    fn gradient_mode(&self) -> GradientMode {
        GradientMode::Analytic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub exps: Vec<u32>,
}

/// `H(z) = sum_t coeff_t prod_i z_i^(e_ti)`, read from
/// `{"n": .., "terms": [{"coeff": .., "exps": [..]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolynomial")]
pub struct PolynomialHamiltonian {
    n: usize,
    terms: Vec<Monomial>,
}

#[derive(Deserialize)]
struct RawPolynomial {
    n: usize,
    terms: Vec<Monomial>,
}

impl TryFrom<RawPolynomial> for PolynomialHamiltonian {
    type Error = Error;

    fn try_from(raw: RawPolynomial) -> Result<Self> {
        Self::new(raw.n, raw.terms)
    }
}

impl PolynomialHamiltonian {
    pub fn new(n: usize, terms: Vec<Monomial>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("polynomial system needs n >= 1".into()));
        }
        for (idx, t) in terms.iter().enumerate() {
            if t.exps.len() != 2 * n {
                return Err(Error::Config(format!(
                    "term {idx} has {} exponents, expected {}",
                    t.exps.len(),
                    2 * n
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::Config(format!("term {idx} has a non-finite coefficient")));
            }
        }
        Ok(Self { n, terms })
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    /// `1/2 (z - center)^T q (z - center)` expanded into monomials.
    pub fn quadratic_form(q: &DMatrix<f64>, center: &[f64]) -> Result<Self> {
        let d = center.len();
        if q.nrows() != d || q.ncols() != d || !d.is_multiple_of(2) {
            return Err(Error::Dimension { expected: d, got: q.nrows() });
        }
        let sym = (q + q.transpose()) * 0.5;
        let c = DVector::from_column_slice(center);
        let qc = &sym * &c;
        let mut terms = Vec::new();
        let mono = |coeff: f64, idx: &[usize]| {
            let mut exps = vec![0u32; d];
            for &i in idx {
                exps[i] += 1;
            }
            Monomial { coeff, exps }
        };
        for i in 0..d {
            for j in i..d {
                let coeff = if i == j { 0.5 * sym[(i, i)] } else { sym[(i, j)] };
                if coeff != 0.0 {
                    terms.push(mono(coeff, &[i, j]));
                }
            }
        }
        for i in 0..d {
            if qc[i] != 0.0 {
                terms.push(mono(-qc[i], &[i]));
            }
        }
        let constant = 0.5 * c.dot(&qc);
        if constant != 0.0 {
            terms.push(mono(constant, &[]));
        }
        Self::new(d / 2, terms)
    }

    /// Term-wise sum of two polynomials with the same number of degrees of
    /// freedom.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Dimension { expected: 2 * self.n, got: 2 * other.n });
        }
        Self::new(self.n, self.terms.iter().chain(&other.terms).cloned().collect())
    }

    fn monomial(z: &[f64], exps: &[u32], skip: &[usize]) -> f64 {
        // `skip` lists coordinates whose exponent is lowered by one per occurrence
        let mut value = 1.0;
        for (i, (&zi, &e)) in z.iter().zip(exps).enumerate() {
            let lowered = skip.iter().filter(|&&s| s == i).count() as u32;
            if lowered > e {
                return 0.0;
            }
            let mut factor = 1.0;
            for k in 0..lowered {
                factor *= f64::from(e - k);
            }
            value *= factor * zi.powi((e - lowered) as i32);
        }
        value
    }
}

impl Hamiltonian for PolynomialHamiltonian {
    fn dof(&self) -> usize {
        self.n
    }
    fn energy(&self, z: &[f64]) -> Result<f64> {
        check_dim(self.n, z)?;
        Ok(self.terms.iter().map(|t| t.coeff * Self::monomial(z, &t.exps, &[])).sum())
    }
    fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.n, z)?;
        Ok(DVector::from_fn(2 * self.n, |i, _| {
            self.terms
                .iter()
                .map(|t| t.coeff * Self::monomial(z, &t.exps, &[i]))
                .sum()
        }))
    }
    fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.n, z)?;
        Ok(DMatrix::from_fn(2 * self.n, 2 * self.n, |i, j| {
            self.terms
                .iter()
                .map(|t| t.coeff * Self::monomial(z, &t.exps, &[i, j]))
                .sum()
        }))
    }
    fn gradient_mode(&self) -> GradientMode {
        GradientMode::Analytic
    }
}

/// A named system ready for analysis: the Hamiltonian plus a Newton guess
/// for the equilibrium of interest.
#[derive(Clone)]
pub struct BuiltinSystem {
    pub name: String,
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub guess: Vec<f64>,
}

impl std::fmt::Debug for BuiltinSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltinSystem")
            .field("name", &self.name)
            .field("dof", &self.hamiltonian.dof())
            .field("guess", &self.guess)
            .finish()
    }
}

pub const BUILTIN_SYSTEMS: [(&str, &str); 3] = [
    (
        "quadratic",
        "normal-form quadratic; params lambda (omit or 0 for all-center), omega | omega1, omega2, ...",
    ),
    ("model", "two-well isomerization potential; params a=2, b=1 (a > b)"),
    ("hydrogen", "hydrogen atom in crossed fields; param eps=0.58"),
];

fn take_param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn reject_unknown(params: &BTreeMap<String, f64>, allowed: &[&str], system: &str) -> Result<()> {
    for key in params.keys() {
        let ok = allowed.contains(&key.as_str())
            || (system == "quadratic"
                && key.strip_prefix("omega").is_some_and(|s| s.parse::<usize>().is_ok()));
        if !ok {
            return Err(Error::Config(format!("unknown parameter '{key}' for system '{system}'")));
        }
    }
    Ok(())
}

/// Builds a built-in system. `params` override the defaults.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>, mode: GradientMode) -> Result<BuiltinSystem> {
    fn wrap<H: Hamiltonian + 'static>(h: H, mode: GradientMode) -> Arc<dyn Hamiltonian> {
        match mode {
            GradientMode::Analytic => Arc::new(h),
            GradientMode::FiniteDifference => Arc::new(FiniteDifference(h)),
        }
    }
    match name {
        "quadratic" => {
            reject_unknown(params, &["lambda", "omega"], name)?;
            let mut omegas: Vec<(usize, f64)> = params
                .iter()
                .filter_map(|(k, &v)| {
                    k.strip_prefix("omega")
                        .and_then(|s| s.parse::<usize>().ok())
                        .map(|idx| (idx, v))
                })
                .collect();
            omegas.sort_by_key(|&(idx, _)| idx);
            let mut omegas: Vec<f64> = omegas.into_iter().map(|(_, v)| v).collect();
            if let Some(&w) = params.get("omega") {
                omegas.insert(0, w);
            }
            let mut lambda = params.get("lambda").copied();
            if lambda.is_none() && omegas.is_empty() {
                lambda = Some(1.0);
                omegas.push(1.0);
            }
            let h = Quadratic::normal_form(lambda.filter(|&l| l != 0.0), &omegas)?;
            let n = h.dof();
            Ok(BuiltinSystem {
                name: name.into(),
                hamiltonian: wrap(h, mode),
                guess: vec![0.0; 2 * n],
            })
        }
        "model" => {
            reject_unknown(params, &["a", "b"], name)?;
            let h = ModelPotential::new(take_param(params, "a", 2.0), take_param(params, "b", 1.0))?;
            Ok(BuiltinSystem {
                name: name.into(),
                hamiltonian: wrap(h, mode),
                guess: vec![0.45, 0.05, 0.0, 0.0],
            })
        }
        "hydrogen" => {
            reject_unknown(params, &["eps"], name)?;
            let h = Hydrogen::new(take_param(params, "eps", 0.58))?;
            let x = h.eps.powf(-0.5);
            Ok(BuiltinSystem {
                name: name.into(),
                hamiltonian: wrap(h, mode),
                guess: vec![0.99 * x, 0.0, 0.0, 0.0, -0.5 * 0.99 * x, 0.0],
            })
        }
        other => Err(Error::Config(format!("unknown system '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn h2() -> Quadratic {
        Quadratic::normal_form(Some(1.0), &[1.0]).unwrap()
    }

    #[test]
    fn quadratic_gradient_and_field() {
        let h = h2();
        let g = h.gradient(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.as_slice(), &[-1.0, 0.0, 0.0, 0.0]);
        let f = vector_field(&h, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        let hess = h.hessian(&[0.3, -0.2, 0.1, 0.4]).unwrap();
        assert_eq!(hess, DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, 1.0, 1.0])));
    }

    #[test]
    fn quadratic_form_expansion() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, -1.0]);
        let c = [0.3, -0.7];
        let p = PolynomialHamiltonian::quadratic_form(&q, &c).unwrap();
        for z in [[0.0, 0.0], [1.0, 2.0], [-0.4, 0.9]] {
            let d = DVector::from_column_slice(&z) - DVector::from_column_slice(&c);
            let expected = 0.5 * d.dot(&(&q * &d));
            assert_abs_diff_eq!(p.energy(&z).unwrap(), expected, epsilon = 1e-14);
        }
        let twice = p.sum(&p).unwrap();
        assert_abs_diff_eq!(twice.energy(&[1.0, 2.0]).unwrap(), 2.0 * p.energy(&[1.0, 2.0]).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn translated_model_gradient() {
        let h = Shifted::new(ModelPotential::new(2.0, 1.0).unwrap(), &ModelPotential::saddle()).unwrap();
        let g = h.gradient(&[0.1, 0.0, 0.0, 0.0]).unwrap();
        // (4 x^3 - x) / a^2 at x = 0.1
        assert_abs_diff_eq!(g[0], -0.024, epsilon = 1e-15);
        let fd = fd_gradient(&h, &[0.1, 0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(fd[0], -0.024, epsilon = 1e-10);

        let hess = h.hessian(&[0.0; 4]).unwrap();
        assert_abs_diff_eq!(hess[(0, 0)], -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(hess[(1, 1)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hess[(2, 2)], 1.0);
        assert_abs_diff_eq!(hess[(3, 3)], 1.0);

        let f = vector_field(&h, &[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(f.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn structure_matrix() {
        assert_eq!(symplectic_j(1), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        assert_eq!(
            symplectic_j(2),
            DMatrix::from_row_slice(
                4,
                4,
                &[0., 0., 1., 0., 0., 0., 0., 1., -1., 0., 0., 0., 0., -1., 0., 0.]
            )
        );
        for n in 1..=5 {
            let j = symplectic_j(n);
            assert_eq!(&j * j.transpose(), DMatrix::identity(2 * n, 2 * n));
            assert_eq!(&j * &j, -DMatrix::identity(2 * n, 2 * n));
            assert_eq!(j.transpose(), -&j);
        }
    }

    #[test]
    fn canonical_brackets() {
        let coord = |i: usize| {
            let mut exps = vec![0; 4];
            exps[i] = 1;
            PolynomialHamiltonian::new(2, vec![Monomial { coeff: 1.0, exps }]).unwrap()
        };
        let z = [0.3, -0.7, 1.1, 0.2];
        assert_abs_diff_eq!(poisson_bracket(&coord(0), &coord(2), &z).unwrap(), 1.0);
        assert_abs_diff_eq!(poisson_bracket(&coord(0), &coord(1), &z).unwrap(), 0.0);
        assert_abs_diff_eq!(poisson_bracket(&coord(2), &coord(0), &z).unwrap(), -1.0);
        // {q1, H2} = lambda p1 for the saddle form
        let q1p1 = [0.0, 0.0, 1.0, 0.0];
        assert_abs_diff_eq!(poisson_bracket(&coord(0), &h2(), &q1p1).unwrap(), 1.0);
    }

    #[test]
    fn newton_finds_model_saddle() {
        let h = Shifted::new(ModelPotential::new(2.0, 1.0).unwrap(), &ModelPotential::saddle()).unwrap();
        let z0 = find_equilibrium(&h, &[0.05, 0.05, 0.0, 0.0], 1e-12, 50).unwrap();
        for v in z0.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn newton_finds_stark_saddle() {
        let h = Hydrogen::new(0.58).unwrap();
        let z0 = find_equilibrium(&h, &[1.3, 0.0, 0.0, 0.0, -0.65, 0.0], 1e-12, 50).unwrap();
        let expected = h.stark_saddle();
        for (a, b) in z0.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(z0[0], 1.31306, epsilon = 1e-5);
        assert_abs_diff_eq!(z0[4], -0.65653, epsilon = 1e-5);
        assert!(vector_field(&h, &z0).unwrap().amax() <= 1e-10);
    }

    #[test]
    fn newton_linear_one_step() {
        let h = h2();
        let z0 = find_equilibrium(&h, &[0.01, -0.02, 0.03, 0.0], 1e-12, 1).unwrap();
        assert!(z0.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn newton_errors() {
        let h = h2();
        assert!(matches!(
            find_equilibrium(&h, &[1.0, 0.0, 0.0, 0.0], 1e-12, 0),
            Err(Error::NoConvergence { .. })
        ));
        let degenerate = Quadratic::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).unwrap();
        assert!(matches!(
            find_equilibrium(&degenerate, &[1.0, 1.0], 1e-12, 5),
            Err(Error::SingularHessian)
        ));
    }

    #[test]
    fn hydrogen_singularity_guard() {
        let h = Hydrogen::new(0.58).unwrap();
        assert!(matches!(h.energy(&[0.0; 6]), Err(Error::Singularity(_))));
        assert!(matches!(h.gradient(&[1e-9, 0.0, 0.0, 0.0, 0.0, 0.0]), Err(Error::Singularity(_))));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(h2().energy(&[0.0; 3]), Err(Error::Dimension { expected: 4, got: 3 })));
        assert!(CanonicalState::new(vec![0.0, f64::NAN]).is_err());
        assert!(CanonicalState::new(vec![0.0; 3]).is_err());
    }

    #[test]
    fn polynomial_matches_model() {
        // model potential in original coordinates, a = 2, b = 1:
        // (x1^4 - 2 x1^3 + x1^2)/4 + x2^2 + (P1^2 + P2^2)/2
        let m = |c: f64, e: [u32; 4]| Monomial { coeff: c, exps: e.to_vec() };
        let poly = PolynomialHamiltonian::new(
            2,
            vec![
                m(0.25, [4, 0, 0, 0]),
                m(-0.5, [3, 0, 0, 0]),
                m(0.25, [2, 0, 0, 0]),
                m(1.0, [0, 2, 0, 0]),
                m(0.5, [0, 0, 2, 0]),
                m(0.5, [0, 0, 0, 2]),
            ],
        )
        .unwrap();
        let model = ModelPotential::new(2.0, 1.0).unwrap();
        let z = [0.37, -0.21, 0.5, 1.2];
        assert_abs_diff_eq!(poly.energy(&z).unwrap(), model.energy(&z).unwrap(), epsilon = 1e-14);
        assert_abs_diff_eq!(poly.gradient(&z).unwrap(), model.gradient(&z).unwrap(), epsilon = 1e-14);
        assert_abs_diff_eq!(poly.hessian(&z).unwrap(), model.hessian(&z).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn polynomial_rejects_bad_exponents() {
        let bad = Monomial { coeff: 1.0, exps: vec![1, 0, 0] };
        assert!(PolynomialHamiltonian::new(2, vec![bad]).is_err());
    }

    #[test]
    fn builtin_registry() {
        let empty = BTreeMap::new();
        for (name, _) in BUILTIN_SYSTEMS {
            let sys = builtin(name, &empty, GradientMode::Analytic).unwrap();
            assert_eq!(sys.guess.len(), 2 * sys.hamiltonian.dof());
        }
        let mut p = BTreeMap::new();
        p.insert("omega1".to_string(), 1.0);
        p.insert("omega2".to_string(), 2.0);
        let q = builtin("quadratic", &p, GradientMode::Analytic).unwrap();
        assert_eq!(q.hamiltonian.dof(), 2);
        p.insert("bogus".to_string(), 2.0);
        assert!(builtin("quadratic", &p, GradientMode::Analytic).is_err());
        assert!(builtin("nope", &empty, GradientMode::Analytic).is_err());
        let mut ab = BTreeMap::new();
        ab.insert("a".to_string(), 1.0);
        assert!(builtin("model", &ab, GradientMode::Analytic).is_err());
    }
}
