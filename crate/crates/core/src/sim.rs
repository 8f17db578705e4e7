//! Explicit integrators, trajectory recording and Monte-Carlo stability checks.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::ClosedLoopSystem;
use crate::error::{Error, Result};
use crate::hamsys::{vector_field, CanonicalState, Hamiltonian};

/// Smallest adaptive step before giving up.
pub const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Rkf45,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rk4" => Ok(Method::Rk4),
            "rkf45" => Ok(Method::Rkf45),
            other => Err(Error::Config(format!("unknown method '{other}' (rk4|rkf45)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed step for RK4, initial step for RKF45.
    pub dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub t_final: f64,
    pub record_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rkf45,
            dt: 1e-2,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            t_final: 10.0,
            record_stride: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn rk4(dt: f64, t_final: f64) -> Self {
        Self {
            method: Method::Rk4,
            dt,
            t_final,
            ..Self::default()
        }
    }

    pub fn rkf45(t_final: f64) -> Self {
        Self {
            t_final,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::Config(format!("t_final must be positive, got {}", self.t_final)));
        }
        if !(self.dt > 0.0) || self.dt > self.t_final {
            return Err(Error::Config(format!(
                "dt must lie in (0, t_final], got {} (t_final {})",
                self.dt, self.t_final
            )));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CanonicalState>,
    pub energy: Vec<f64>,
    pub modified_energy: Vec<f64>,
    /// `feedback[k][i] = F_i(z_k)`.
    pub feedback: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &CanonicalState {
        self.states.last().expect("trajectory is never empty")
    }

    /// Fills `energy` with `H`.
    pub fn annotate_energy(&mut self, h: &dyn Hamiltonian) -> Result<()> {
        self.energy = self.states.iter().map(|z| h.energy(z)).collect::<Result<_>>()?;
        Ok(())
    }

    /// Fills `H`, `H_mod` and the feedback function samples.
    pub fn annotate_closed_loop(&mut self, cl: &ClosedLoopSystem) -> Result<()> {
        self.annotate_energy(&**cl.base())?;
        self.modified_energy = self.states.iter().map(|z| cl.h_mod.energy(z)).collect::<Result<_>>()?;
        self.feedback = self.states.iter().map(|z| cl.law.values(z)).collect();
        Ok(())
    }
}

fn eval<F>(f: &F, t: f64, z: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let wrap = |source: Error| Error::Integration {
        t,
        last_state: z.as_slice().to_vec(),
        source: Box::new(source),
    };
    let k = f(z.as_slice()).map_err(wrap)?;
    if k.iter().any(|v| !v.is_finite()) {
        return Err(wrap(Error::NonFinite));
    }
    Ok(k)
}

fn rk4_step<F>(f: &F, t: f64, z: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let k1 = eval(f, t, z)?;
    let k2 = eval(f, t, &(z + &k1 * (h / 2.0)))?;
    let k3 = eval(f, t, &(z + &k2 * (h / 2.0)))?;
    let k4 = eval(f, t, &(z + &k3 * h))?;
    Ok(z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

// Fehlberg 4(5) tableau
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const B5: [f64; 6] = [16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0];

/// One Fehlberg step; returns the 5th-order solution and the error estimate.
fn rkf45_step<F>(f: &F, t: f64, z: &DVector<f64>, h: f64) -> Result<(DVector<f64>, DVector<f64>)>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(6);
    for row in A.iter() {
        let mut y = z.clone();
        for (j, kj) in k.iter().enumerate() {
            if row[j] != 0.0 {
                y.axpy(h * row[j], kj, 1.0);
            }
        }
        k.push(eval(f, t, &y)?);
    }
    let mut hi = z.clone();
    let mut err = DVector::zeros(z.len());
    for (i, ki) in k.iter().enumerate() {
        hi.axpy(h * B5[i], ki, 1.0);
        err.axpy(h * (B5[i] - B4[i]), ki, 1.0);
    }
    Ok((hi, err))
}

/// Integrates `zdot = field(z)` from `t = 0` to `cfg.t_final`.
///
/// Every `record_stride`-th step is stored, plus the initial and final
/// states.
pub fn integrate<F>(field: F, z_init: &CanonicalState, cfg: &IntegratorConfig) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    cfg.validate()?;
    let mut z = z_init.vector().clone();
    let mut t = 0.0;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![z_init.clone()],
        ..Default::default()
    };
    let mut steps = 0usize;
    let record = |t: f64, z: &DVector<f64>, steps: usize, done: bool, traj: &mut Trajectory| {
        if done || steps.is_multiple_of(cfg.record_stride) {
            traj.times.push(t);
            traj.states.push(CanonicalState::from_vector_unchecked(z.clone()));
        }
    };

    match cfg.method {
        Method::Rk4 => {
            let n_steps = (cfg.t_final / cfg.dt).round().max(1.0) as usize;
            let h = cfg.t_final / n_steps as f64;
            for i in 1..=n_steps {
                z = rk4_step(&field, t, &z, h)?;
                t = if i == n_steps { cfg.t_final } else { i as f64 * h };
                record(t, &z, i, i == n_steps, &mut traj);
            }
        }
        Method::Rkf45 => {
            let mut h = cfg.dt.min(cfg.t_final);
            while t < cfg.t_final {
                let last = t + h >= cfg.t_final;
                let step = if last { cfg.t_final - t } else { h };
                let (znew, err) = rkf45_step(&field, t, &z, step)?;
                let ratio = err
                    .iter()
                    .zip(z.iter().zip(znew.iter()))
                    .map(|(e, (a, b))| e.abs() / (cfg.abs_tol + cfg.rel_tol * a.abs().max(b.abs())))
                    .fold(0.0, f64::max);
                if ratio <= 1.0 {
                    t = if last { cfg.t_final } else { t + step };
                    z = znew;
                    steps += 1;
                    record(t, &z, steps, last, &mut traj);
                }
                let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
                h = step * factor;
                if h < MIN_STEP && t < cfg.t_final {
                    return Err(Error::Integration {
                        t,
                        last_state: z.as_slice().to_vec(),
                        source: Box::new(Error::StepUnderflow { t }),
                    });
                }
            }
        }
    }
    Ok(traj)
}

/// Uncontrolled Hamiltonian flow, annotated with `H`.
pub fn simulate_open_loop(h: &dyn Hamiltonian, z_init: &CanonicalState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let mut traj = integrate(|z| vector_field(h, z), z_init, cfg)?;
    traj.annotate_energy(h)?;
    Ok(traj)
}

/// Closed-loop flow, annotated with `H`, `H_mod` and `F_i`.
pub fn simulate_closed_loop(cl: &ClosedLoopSystem, z_init: &CanonicalState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let mut traj = integrate(|z| cl.field(z), z_init, cfg)?;
    traj.annotate_closed_loop(cl)?;
    Ok(traj)
}

/// Jacobian of `field` at `z` by 4th-order central differences with step
/// `1e-5 max(1, |z|_inf)`.
pub fn fd_jacobian<F>(field: F, z: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<DVector<f64>>,
{
    let d = z.len();
    let h = 1e-5 * z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut jac = DMatrix::zeros(d, d);
    let mut w = z.to_vec();
    for j in 0..d {
        let mut at = |delta: f64| {
            w[j] = z[j] + delta;
            let r = field(&w);
            w[j] = z[j];
            r
        };
        let col = (at(-2.0 * h)? - at(2.0 * h)? + (at(h)? - at(-h)?) * 8.0) / (12.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Eigenvalues sorted by descending real part.
pub fn spectrum(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    ev
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub seed: u64,
    pub samples: usize,
    pub radius: f64,
    pub t_final: f64,
    pub conv_tol: f64,
    pub converged: usize,
    pub converged_fraction: f64,
    pub max_final_distance: f64,
    /// `(re, im)` of the closed-loop Jacobian eigenvalues at `z0`.
    pub jacobian_spectrum: Vec<(f64, f64)>,
    pub max_real_part: f64,
    pub failures: Vec<SampleFailure>,
}

/// Points drawn uniformly from the `|.|_2` ball of `radius` around `center`.
pub fn sample_ball(center: &DVector<f64>, radius: f64, count: usize, seed: u64) -> Vec<CanonicalState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = center.len();
    (0..count)
        .map(|_| {
            let dir = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            CanonicalState::from_vector_unchecked(center + dir.normalize() * r)
        })
        .collect()
}

/// Integrates the closed loop from `samples` random states within `radius`
/// of `z0` and counts those ending within `conv_tol` (sup norm). Samples run
/// on worker threads; the report depends only on the seed.
pub fn verify_stability(
    cl: &ClosedLoopSystem,
    radius: f64,
    samples: usize,
    cfg: &IntegratorConfig,
    conv_tol: f64,
    seed: u64,
) -> Result<StabilityReport> {
    cfg.validate()?;
    if !(radius > 0.0) || samples == 0 {
        return Err(Error::Config("radius and sample count must be positive".into()));
    }
    let z0 = cl.z0().clone();
    let jac = fd_jacobian(|z| cl.field(z), z0.as_slice())?;
    let spec = spectrum(&jac);
    let ics = sample_ball(&z0, radius, samples, seed);

    let mut run_cfg = cfg.clone();
    run_cfg.record_stride = usize::MAX;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(samples);
    let chunk = samples.div_ceil(workers);
    let outcomes: Vec<std::result::Result<f64, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ics
            .chunks(chunk)
            .map(|part| {
                let run_cfg = &run_cfg;
                let z0 = &z0;
                scope.spawn(move || {
                    part.iter()
                        .map(|ic| {
                            integrate(|z| cl.field(z), ic, run_cfg)
                                .map(|tr| (tr.last_state().vector() - z0).amax())
                                .map_err(|e| e.to_string())
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut converged = 0;
    let mut max_dist: f64 = 0.0;
    let mut failures = Vec::new();
    for (index, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(d) => {
                max_dist = max_dist.max(d);
                if d <= conv_tol {
                    converged += 1;
                }
            }
            Err(error) => {
                max_dist = f64::INFINITY;
                failures.push(SampleFailure { index, error });
            }
        }
    }
    Ok(StabilityReport {
        seed,
        samples,
        radius,
        t_final: cfg.t_final,
        conv_tol,
        converged,
        converged_fraction: converged as f64 / samples as f64,
        max_final_distance: max_dist,
        max_real_part: spec.first().map_or(f64::NAN, |e| e.re),
        jacobian_spectrum: spec.iter().map(|e| (e.re, e.im)).collect(),
        failures,
    })
}
