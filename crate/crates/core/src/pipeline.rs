//! End-to-end helpers: equilibrium, spectrum, transform and feedback in one
//! call.

use std::sync::Arc;

use crate::control::{check_hypotheses, ClosedLoopSystem, FeedbackLaw, HypothesisReport};
use crate::error::Result;
use crate::hamsys::{find_equilibrium, CanonicalState, Hamiltonian};
use crate::normal_form::{build_transform, NormalFormTransform};
use crate::spectral::{classify, linearize, EquilibriumKind, SpectrumClassification};

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone)]
pub struct Analysis {
    pub z0: CanonicalState,
    pub classification: SpectrumClassification,
    /// `None` when the equilibrium is neither saddle-center nor all-center.
    pub transform: Option<NormalFormTransform>,
}

impl Analysis {
    pub fn kind(&self) -> EquilibriumKind {
        self.classification.kind
    }
}

/// Newton from `guess`, then classification and (when possible) the
/// normal-form transform.
pub fn analyze(h: &dyn Hamiltonian, guess: &[f64]) -> Result<Analysis> {
    let z0 = find_equilibrium(h, guess, NEWTON_TOL, NEWTON_MAX_ITER)?;
    let classification = classify(&linearize(h, &z0)?, None)?;
    let transform = match classification.kind {
        EquilibriumKind::Other => None,
        _ => Some(build_transform(&classification)?),
    };
    Ok(Analysis {
        z0,
        classification,
        transform,
    })
}

#[derive(Debug, Clone)]
pub struct Stabilization {
    pub analysis: Analysis,
    pub system: ClosedLoopSystem,
    pub hypotheses: HypothesisReport,
}

/// Analysis plus a validated feedback law. `c` defaults to `2 lambda`, `d`
/// to all ones.
pub fn stabilize(h: Arc<dyn Hamiltonian>, guess: &[f64], c: Option<f64>, d: Option<Vec<f64>>) -> Result<Stabilization> {
    let analysis = analyze(&*h, guess)?;
    analysis.classification.require(EquilibriumKind::SaddleCenter)?;
    let t = analysis.transform.as_ref().expect("saddle-center has a transform");
    let lambda = t.lambda.expect("saddle-center has lambda");
    let law = FeedbackLaw::new(t, c.unwrap_or(2.0 * lambda), d.unwrap_or_else(|| vec![1.0; t.dof()]))?;
    let system = ClosedLoopSystem::new(h, law)?;
    let hypotheses = check_hypotheses(&system)?;
    Ok(Stabilization {
        analysis,
        system,
        hypotheses,
    })
}
