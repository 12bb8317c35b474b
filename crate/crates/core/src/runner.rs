//! Problem files and the batch pipeline behind the command-line front end.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{
    detect_subperiod, subperiod_mask, subperiod_seed_mode, value_checks, DescentOptions, DescentStatus,
    DualProblem, DualState, InequalityLedger, ValueCheckInput,
};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    choose_exponent, BoundsCheck, Ellipsoid, GaugeFlow, GaugeProblem, HamiltonianFn, HypothesisReport, Opaque,
    PinchEstimate, PlaneQuartic, RawHamiltonian, DEFAULT_P_MIN,
};
use crate::io::{matrix_from_rows, matrix_to_rows, read_orbit_csv, write_loop_csv, write_orbit_csv};
use crate::loops::{build_grid, RotatingLoop};
use crate::ode::flow;
use crate::symplectic::{parse_angle, parse_preset, tilde_angles, NormalFormDefects, SymplecticRotation, C64};
use crate::verify::{
    distinctness_certificate, fingerprint, normalize_energy, orbit_from_samples, polish, Certificate,
    CertificateOptions, OrbitSolution, OrbitSource, VerifyOptions,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_DIR_ENV: &str = "ROTORBIT_OUTPUT_DIR";

/// A preset name (`identity`, `neg-identity`, `rotation:[…]`) or dense rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Preset(String),
    Dense(Vec<Vec<f64>>),
}

/// A number, or an expression such as `"2*pi"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Expr(String),
}

impl Scalar {
    pub fn value(&self) -> Result<f64> {
        match self {
            Scalar::Number(v) => Ok(*v),
            Scalar::Expr(s) => parse_angle(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    Sphere,
    /// `n` per-plane radii or `2n` per-coordinate semi-axes.
    Ellipsoid { axes: Vec<f64> },
    PlaneQuartic { omega: Vec<f64>, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub k_max: usize,
    pub samples: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Self { k_max: 32, samples: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub gtol: f64,
    pub max_iter: usize,
    /// Planes to seed from; all planes when absent.
    pub seeds: Option<Vec<usize>>,
    pub subperiod_probe: bool,
    pub max_subperiod: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            gtol: 1e-9,
            max_iter: 5000,
            seeds: None,
            subperiod_probe: true,
            max_subperiod: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub normal_form: f64,
    pub symmetry: f64,
    pub recover: f64,
    pub shooting: f64,
    pub drift: f64,
    pub capture: f64,
    pub fingerprint_rel: f64,
    pub distance_rel: f64,
    pub reparametrization: f64,
    pub normalization: f64,
    pub trajectory: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            normal_form: 1e-9,
            symmetry: 1e-8,
            recover: 1e-6,
            shooting: 1e-10,
            drift: 1e-9,
            capture: 1e-2,
            fingerprint_rel: 1e-6,
            distance_rel: 1e-4,
            reparametrization: 1e-6,
            normalization: 1e-8,
            trajectory: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub schema_version: u32,
    pub n: usize,
    pub q: MatrixSpec,
    pub hamiltonian: HamiltonianSpec,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub period: Scalar,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Fixes `p` instead of deriving it from the pinching.
    #[serde(default)]
    pub exponent: Option<f64>,
    #[serde(default = "default_p_min")]
    pub p_min: f64,
    /// Hide closed forms and use the generic numerics.
    #[serde(default)]
    pub generic_numerics: bool,
    #[serde(default = "default_pinch_samples")]
    pub pinch_samples: usize,
    #[serde(default = "default_steps")]
    pub integrator_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_beta() -> f64 {
    0.5
}
fn default_p_min() -> f64 {
    DEFAULT_P_MIN
}
fn default_pinch_samples() -> usize {
    256
}
fn default_steps() -> usize {
    4096
}

impl ProblemSpec {
    /// A spec with every optional field at its default.
    pub fn new(n: usize, q: MatrixSpec, hamiltonian: HamiltonianSpec, period: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            n,
            q,
            hamiltonian,
            beta: default_beta(),
            period: Scalar::Number(period),
            discretization: Discretization::default(),
            solver: SolverSpec::default(),
            tolerances: Tolerances::default(),
            exponent: None,
            p_min: default_p_min(),
            generic_numerics: false,
            pinch_samples: default_pinch_samples(),
            integrator_steps: default_steps(),
            seed: 0,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Input(format!("problem file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn period_value(&self) -> Result<f64> {
        self.period.value()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        let t = self.period_value()?;
        if !(t > 0.0 && t.is_finite()) {
            return bad(format!("period must be positive, got {t}"));
        }
        let d = &self.discretization;
        if d.k_max == 0 {
            return bad("k_max must be at least 1".into());
        }
        if d.samples < 2 * d.k_max + 2 {
            return bad(format!("samples = {} must be at least 2·k_max + 2 = {}", d.samples, 2 * d.k_max + 2));
        }
        if !(self.solver.gtol > 0.0) || self.solver.max_iter == 0 {
            return bad("solver needs gtol > 0 and max_iter ≥ 1".into());
        }
        if let Some(seeds) = &self.solver.seeds {
            if let Some(&j) = seeds.iter().find(|&&j| j >= self.n) {
                return bad(format!("seed plane {j} out of range for n = {}", self.n));
            }
        }
        if let Some(p) = self.exponent {
            if !(p > 2.0) {
                return bad(format!("exponent p must exceed 2, got {p}"));
            }
        }
        if !(self.p_min > 2.0) {
            return bad(format!("p_min must exceed 2, got {}", self.p_min));
        }
        if self.integrator_steps == 0 || self.pinch_samples == 0 {
            return bad("integrator_steps and pinch_samples must be positive".into());
        }
        match &self.hamiltonian {
            HamiltonianSpec::Sphere => {}
            HamiltonianSpec::Ellipsoid { axes } => {
                if axes.len() != self.n && axes.len() != 2 * self.n {
                    return bad(format!("ellipsoid needs {} or {} axes, got {}", self.n, 2 * self.n, axes.len()));
                }
            }
            HamiltonianSpec::PlaneQuartic { omega, .. } => {
                if omega.len() != self.n {
                    return bad(format!("plane_quartic needs {} frequencies, got {}", self.n, omega.len()));
                }
            }
        }
        Ok(())
    }

    pub fn q_matrix(&self) -> Result<DMatrix<f64>> {
        let m = match &self.q {
            MatrixSpec::Preset(s) => parse_preset(s, Some(self.n))?,
            MatrixSpec::Dense(rows) => matrix_from_rows(rows)?,
        };
        if m.nrows() != 2 * self.n || m.ncols() != 2 * self.n {
            return Err(Error::Input(format!(
                "Q is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                2 * self.n,
                2 * self.n
            )));
        }
        Ok(m)
    }

    pub fn hamiltonian_fn(&self) -> Result<Arc<dyn HamiltonianFn>> {
        let func: Arc<dyn HamiltonianFn> = match (&self.hamiltonian, self.generic_numerics) {
            (HamiltonianSpec::Sphere, false) => Arc::new(Ellipsoid::sphere(self.n)),
            (HamiltonianSpec::Sphere, true) => Arc::new(Opaque(Ellipsoid::sphere(self.n))),
            (HamiltonianSpec::Ellipsoid { axes }, false) => Arc::new(Ellipsoid::new(axes, self.n)?),
            (HamiltonianSpec::Ellipsoid { axes }, true) => Arc::new(Opaque(Ellipsoid::new(axes, self.n)?)),
            (HamiltonianSpec::PlaneQuartic { omega, epsilon }, _) => {
                Arc::new(PlaneQuartic::new(omega.clone(), *epsilon)?)
            }
        };
        Ok(func)
    }

    pub fn resolve_output_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return PathBuf::from(p);
        }
        if let Ok(p) = std::env::var(OUTPUT_DIR_ENV) {
            if !p.is_empty() {
                return PathBuf::from(p);
            }
        }
        PathBuf::from("rotorbit-out")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalFormReport {
    pub theta: Vec<f64>,
    pub tilde: Vec<f64>,
    pub tilde_planes: Vec<usize>,
    pub p: Vec<Vec<f64>>,
    pub defects: NormalFormDefects,
}

impl NormalFormReport {
    pub fn new(sr: &SymplecticRotation) -> Self {
        let tilde = tilde_angles(sr);
        Self {
            theta: sr.theta().to_vec(),
            tilde: tilde.values.clone(),
            tilde_planes: tilde.planes.clone(),
            p: matrix_to_rows(sr.p()),
            defects: sr.defects(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PinchReport {
    pub r_in: f64,
    pub r_out: f64,
    pub ratio: f64,
    pub pinched: bool,
    pub p: f64,
    pub q: f64,
    pub exponent_source: String,
    pub bounds: Option<BoundsCheck>,
}

/// Shared setup: normal form, hypotheses, pinching and the exponent.
pub struct Setup {
    pub rotation: Arc<SymplecticRotation>,
    pub raw: RawHamiltonian,
    pub gauge: Arc<GaugeProblem>,
    pub hypotheses: HypothesisReport,
    pub pinch: PinchEstimate,
    pub pinch_report: PinchReport,
    pub period: f64,
    pub warnings: Vec<String>,
}

pub fn setup(spec: &ProblemSpec, bounds_trials: usize) -> Result<Setup> {
    spec.validate()?;
    let qm = spec.q_matrix()?;
    let rotation = Arc::new(SymplecticRotation::with_tolerance(&qm, spec.tolerances.normal_form)?);
    let raw = RawHamiltonian::new(spec.hamiltonian_fn()?, spec.beta, qm)?;
    let probe = GaugeProblem::new(raw.clone(), 1.5)?;
    let hypotheses = probe.check_hypotheses(64, spec.tolerances.symmetry, spec.seed)?;
    let pinch = probe.pinch_estimate(spec.pinch_samples, spec.seed)?;
    let tilde = tilde_angles(&rotation);
    let mut warnings = Vec::new();
    let (p, q, source) = match spec.exponent {
        Some(p) => (p, p / (p - 1.0), "override".to_string()),
        None => match choose_exponent(&tilde, pinch.r_in, pinch.r_out, spec.p_min) {
            Ok((p, q)) => (p, q, "pinching".to_string()),
            Err(Error::NotPinched { ratio }) => {
                warnings.push(format!(
                    "surface is not pinched (R/r = {ratio:.6} ≥ √2); multiplicity is not guaranteed"
                ));
                (spec.p_min, spec.p_min / (spec.p_min - 1.0), "fallback".to_string())
            }
            Err(e) => return Err(e),
        },
    };
    if !pinch.pinched && spec.exponent.is_some() {
        warnings.push(format!(
            "surface is not pinched (R/r = {:.6} ≥ √2); multiplicity is not guaranteed",
            pinch.ratio()
        ));
    }
    let gauge = Arc::new(GaugeProblem::with_settings(raw.clone(), q, *probe.settings())?);
    let bounds = if bounds_trials > 0 {
        Some(gauge.legendre_bounds_check(&pinch, bounds_trials, spec.seed)?)
    } else {
        None
    };
    Ok(Setup {
        rotation,
        raw,
        gauge,
        hypotheses,
        pinch,
        pinch_report: PinchReport {
            r_in: pinch.r_in,
            r_out: pinch.r_out,
            ratio: pinch.ratio(),
            pinched: pinch.pinched,
            p,
            q,
            exponent_source: source,
            bounds,
        },
        period: spec.period_value()?,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Plane { plane: usize },
    Subperiod { plane: usize, ell: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct DescentReport {
    pub status: DescentStatus,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub grad_norm: f64,
    pub seed_value: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub residual: f64,
    pub z0: Vec<f64>,
    pub energy: f64,
    pub energy_spread: f64,
    pub critical: bool,
    pub subperiod: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolishReport {
    pub success: bool,
    pub newton_steps: usize,
    pub variational_residual: f64,
    pub residual: f64,
    pub energy_drift: f64,
    pub period: f64,
    pub level: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RawOrbitReport {
    pub period: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    pub index: usize,
    pub origin: Origin,
    pub descent: Option<DescentReport>,
    pub recovery: Option<RecoveryReport>,
    pub polish: Option<PolishReport>,
    pub raw_orbit: Option<RawOrbitReport>,
    /// `(plane, k, |c|)` above the fingerprint threshold.
    pub fingerprint: Vec<(usize, i64, f64)>,
    pub orbit_file: Option<String>,
    pub loop_file: Option<String>,
    pub raw_file: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub status: String,
    pub spec: ProblemSpec,
    pub normal_form: NormalFormReport,
    pub hypotheses: HypothesisReport,
    pub pinch: PinchReport,
    pub warnings: Vec<String>,
    pub solutions: Vec<SolutionReport>,
    /// Over the plane-seeded solutions.
    pub certificate: Option<Certificate>,
    pub ledger: Option<InequalityLedger>,
    pub tolerances: Tolerances,
    pub verify_options: VerifyOptions,
}

/// In-memory products of one solution, used for writing files and by tests.
#[derive(Debug, Clone)]
pub struct SolutionData {
    pub state: DualState,
    pub orbit: Option<OrbitSolution>,
    /// Integrated `z(T)` of `orbit`.
    pub end: Option<DVector<f64>>,
    pub raw: Option<(OrbitSolution, DVector<f64>)>,
}

pub struct SolveOutcome {
    pub report: SolveReport,
    pub data: Vec<Option<SolutionData>>,
    pub completed: bool,
}

struct Task {
    origin: Origin,
    start: RotatingLoop,
    mask: Option<Vec<bool>>,
}

fn descent_options(spec: &ProblemSpec, mask: Option<Vec<bool>>) -> DescentOptions {
    DescentOptions {
        gtol: spec.solver.gtol,
        max_iter: spec.solver.max_iter,
        mask,
        ..DescentOptions::default()
    }
}

/// Run the whole pipeline in memory.
pub fn solve(spec: &ProblemSpec) -> Result<SolveOutcome> {
    let su = setup(spec, 200)?;
    let rotation = su.rotation.clone();
    let gauge = su.gauge.clone();
    let q_exp = gauge.q();
    let p_exp = gauge.p();
    let period = su.period;
    let disc = &spec.discretization;
    let grid = build_grid(&rotation, period, disc.k_max)?;
    let dual = DualProblem::new(gauge.clone() as Arc<dyn crate::dual::ConjugatePotential>, grid.clone(), disc.samples)?;
    let tol = &spec.tolerances;
    let verify_opts = VerifyOptions {
        steps: spec.integrator_steps,
        capture_radius: tol.capture,
        target: tol.shooting,
        ..VerifyOptions::default()
    };
    let planes: Vec<usize> = spec.solver.seeds.clone().unwrap_or_else(|| (0..spec.n).collect());

    let mut tasks = Vec::new();
    for &j in &planes {
        tasks.push(Task {
            origin: Origin::Plane { plane: j },
            start: dual.seed(j)?,
            mask: None,
        });
    }
    if spec.solver.subperiod_probe {
        for &j in &planes {
            if let Some((ell, k)) = subperiod_seed_mode(&grid, j, spec.solver.max_subperiod) {
                let z = RotatingLoop::single_mode(grid.clone(), j, k, C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0))?;
                tasks.push(Task {
                    origin: Origin::Subperiod { plane: j, ell },
                    start: dual.scale_to_critical(&z)?,
                    mask: Some(subperiod_mask(&grid, ell)),
                });
            }
        }
    }

    let gauge_flow = GaugeFlow(gauge.clone());
    let qm = rotation.q().clone();
    let results: Vec<(SolutionReport, Option<SolutionData>)> = tasks
        .par_iter()
        .enumerate()
        .map(|(index, task)| {
            run_task(
                index,
                task,
                spec,
                &dual,
                &gauge,
                &gauge_flow,
                &qm,
                &rotation,
                &verify_opts,
                q_exp,
            )
        })
        .collect();
    let (mut reports, data): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let completed = reports
        .iter()
        .zip(&data)
        .all(|(r, d)| r.error.is_none() && d.is_some());

    // certificate over the plane-seeded orbits
    let mut cert_orbits = Vec::new();
    for (r, d) in reports.iter().zip(&data) {
        if let (Origin::Plane { .. }, Some(SolutionData { orbit: Some(o), .. })) = (&r.origin, d) {
            cert_orbits.push(o.clone());
        }
    }
    let cert_opts = CertificateOptions {
        fp_rel: tol.fingerprint_rel,
        dist_rel: tol.distance_rel,
        k_max: disc.k_max,
        ..CertificateOptions::default()
    };
    let certificate = if cert_orbits.is_empty() {
        None
    } else {
        Some(distinctness_certificate(&cert_orbits, &rotation, &cert_opts)?)
    };

    // inequality ledger
    let mut full = Vec::new();
    let mut sub = Vec::new();
    let mut seeds = Vec::new();
    for (r, d) in reports.iter().zip(&data) {
        let (Some(desc), Some(d)) = (&r.descent, d) else { continue };
        if matches!(r.origin, Origin::Plane { .. }) {
            seeds.push(desc.seed_value);
        }
        if !d.state.converged() {
            continue;
        }
        match r.recovery.as_ref().and_then(|x| x.subperiod) {
            Some(_) => sub.push(desc.value),
            None => full.push(desc.value),
        }
    }
    let tilde = tilde_angles(&rotation);
    let ledger = (!full.is_empty() || !seeds.is_empty()).then(|| {
        value_checks(&ValueCheckInput {
            p: p_exp,
            period,
            tilde_first: tilde.first(),
            r_in: su.pinch.r_in,
            full: &full,
            sub: &sub,
            seeds: &seeds,
        })
    });

    for (r, d) in reports.iter_mut().zip(&data) {
        if let Some(SolutionData { orbit: Some(o), .. }) = d {
            let fp = fingerprint(o, &rotation, disc.k_max)?;
            r.fingerprint = fp
                .support(tol.fingerprint_rel)
                .into_iter()
                .map(|e| (e.plane, e.k, e.magnitude))
                .collect();
        }
    }

    let mut warnings = su.warnings.clone();
    if let Some(c) = &certificate {
        if c.count < spec.n {
            warnings.push(format!("certificate count {} is below n = {}", c.count, spec.n));
        }
    }
    let report = SolveReport {
        schema_version: SCHEMA_VERSION,
        status: if completed { "completed".into() } else { "partial".into() },
        spec: spec.clone(),
        normal_form: NormalFormReport::new(&rotation),
        hypotheses: su.hypotheses.clone(),
        pinch: su.pinch_report.clone(),
        warnings,
        solutions: reports,
        certificate,
        ledger,
        tolerances: spec.tolerances.clone(),
        verify_options: verify_opts,
    };
    Ok(SolveOutcome {
        report,
        data,
        completed,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_task(
    index: usize,
    task: &Task,
    spec: &ProblemSpec,
    dual: &DualProblem,
    gauge: &Arc<GaugeProblem>,
    gauge_flow: &GaugeFlow,
    qm: &DMatrix<f64>,
    rotation: &Arc<SymplecticRotation>,
    verify_opts: &VerifyOptions,
    q_exp: f64,
) -> (SolutionReport, Option<SolutionData>) {
    let mut report = SolutionReport {
        index,
        origin: task.origin.clone(),
        descent: None,
        recovery: None,
        polish: None,
        raw_orbit: None,
        fingerprint: Vec::new(),
        orbit_file: None,
        loop_file: None,
        raw_file: None,
        error: None,
    };
    let tol = &spec.tolerances;
    let result = (|| -> Result<SolutionData> {
        let seed_value = dual.energy(&task.start)?;
        let state = dual.descend(&task.start, &descent_options(spec, task.mask.clone()))?;
        report.descent = Some(DescentReport {
            status: state.status,
            iterations: state.iterations,
            accepted_steps: state.accepted_steps,
            grad_norm: state.grad_norm,
            seed_value,
            value: state.energy,
        });
        let rec = dual.recover(&state.y, tol.recover)?;
        report.recovery = Some(RecoveryReport {
            residual: rec.residual,
            z0: rec.z0.iter().copied().collect(),
            energy: rec.energy,
            energy_spread: rec.energy_spread,
            critical: rec.critical,
            subperiod: detect_subperiod(&state.y, spec.solver.max_subperiod, crate::dual::SUBPERIOD_TOL),
        });
        let variational =
            orbit_from_samples(gauge_flow, qm, rec.samples.clone(), rec.period, verify_opts.steps)?;
        let normalized = normalize_energy(&variational, q_exp)?;
        let polished = polish(gauge_flow, qm, &normalized, verify_opts)?;
        let orbit = polished.orbit.clone();
        let total = orbit.samples.nrows() * verify_opts.steps.div_ceil(orbit.samples.nrows());
        let end = flow(gauge_flow, &orbit.initial(), orbit.period, total)?;
        report.polish = Some(PolishReport {
            success: polished.success,
            newton_steps: polished.newton_steps,
            variational_residual: normalized.shooting_residual,
            residual: orbit.shooting_residual,
            energy_drift: orbit.energy_drift,
            period: orbit.period,
            level: orbit.energy,
        });
        // the level set {𝓗 = 1/q} is S, so the raw flow is a time change away
        let raw = match gauge.reparametrize(rotation, &orbit.samples, orbit.period) {
            Ok((samples, t_raw)) => {
                let raw_fn = gauge.raw().func();
                let z0 = samples.row(0).transpose();
                let end = flow(raw_fn.as_ref(), &z0, t_raw, verify_opts.steps)?;
                let residual = (&end - qm * &z0).norm();
                report.raw_orbit = Some(RawOrbitReport {
                    period: t_raw,
                    residual,
                });
                Some((
                    OrbitSolution {
                        energy: raw_fn.value(&z0),
                        shooting_residual: residual,
                        energy_drift: 0.0,
                        samples,
                        period: t_raw,
                        source: OrbitSource::Variational,
                    },
                    end,
                ))
            }
            Err(e) => {
                log::warn!("reparametrization of solution {index} failed: {e}");
                None
            }
        };
        Ok(SolutionData {
            state,
            orbit: Some(orbit),
            end: Some(end),
            raw,
        })
    })();
    match result {
        Ok(d) => (report, Some(d)),
        Err(e) => {
            report.error = Some(e.to_string());
            (report, None)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub timestamp_unix: u64,
    pub elapsed_seconds: f64,
    pub version: String,
    pub threads: usize,
}

/// Run `solve` and write `report.json`, `run_info.json`, `spec.json` and the
/// CSV tables into `dir`.
pub fn run_solve(spec: &ProblemSpec, dir: &Path) -> Result<SolveOutcome> {
    let started = Instant::now();
    let mut outcome = solve(spec)?;
    std::fs::create_dir_all(dir.join("orbits"))?;
    std::fs::create_dir_all(dir.join("loops"))?;
    std::fs::create_dir_all(dir.join("raw"))?;
    for (r, d) in outcome.report.solutions.iter_mut().zip(&outcome.data) {
        let Some(d) = d else { continue };
        let i = r.index;
        let loop_file = format!("loops/loop_{i:02}.csv");
        write_loop_csv(&dir.join(&loop_file), &d.state.y)?;
        r.loop_file = Some(loop_file);
        if let (Some(o), Some(end)) = (&d.orbit, &d.end) {
            let orbit_file = format!("orbits/orbit_{i:02}.csv");
            write_orbit_csv(&dir.join(&orbit_file), &o.samples, o.period, end)?;
            r.orbit_file = Some(orbit_file);
        }
        if let Some((raw, end)) = &d.raw {
            let raw_file = format!("raw/orbit_{i:02}.csv");
            write_orbit_csv(&dir.join(&raw_file), &raw.samples, raw.period, end)?;
            r.raw_file = Some(raw_file);
        }
    }
    let report_json = serde_json::to_string_pretty(&outcome.report)?;
    std::fs::write(dir.join("report.json"), report_json + "\n")?;
    std::fs::write(dir.join("spec.json"), spec.to_json() + "\n")?;
    let info = RunInfo {
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        elapsed_seconds: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: rayon::current_num_threads(),
    };
    std::fs::write(dir.join("run_info.json"), serde_json::to_string_pretty(&info)? + "\n")?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitCheck {
    pub file: String,
    /// `|z_N − Q z₀|` read from the table.
    pub stored_residual: f64,
    /// `|z(T; z₀) − Q z₀|` recomputed by integration.
    pub shooting_residual: f64,
    /// `max_m |z(mT/N; z₀) − z_m|`
    pub trajectory_deviation: f64,
    pub energy_drift: f64,
    /// `|q·𝓗(z₀) − 1|`
    pub normalization_defect: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub orbits: Vec<OrbitCheck>,
    pub certificate_count: Option<usize>,
    pub reported_count: Option<usize>,
    pub tolerances: Tolerances,
    pub passed: bool,
}

/// Re-check the orbit tables in a solve output directory.
pub fn run_verify(dir: &Path) -> Result<VerifyReport> {
    let spec_path = dir.join("spec.json");
    let report_path = dir.join("report.json");
    if !spec_path.exists() || !report_path.exists() {
        return Err(Error::Input(format!(
            "{} must contain spec.json and report.json",
            dir.display()
        )));
    }
    let spec = ProblemSpec::from_path(&spec_path)?;
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report_path)?)?;
    let p = report["pinch"]["p"]
        .as_f64()
        .ok_or_else(|| Error::Input("report.json lacks pinch.p".into()))?;
    let q_exp = p / (p - 1.0);
    let steps = report["verify_options"]["steps"].as_u64().unwrap_or(spec.integrator_steps as u64) as usize;
    let qm = spec.q_matrix()?;
    let rotation = Arc::new(SymplecticRotation::with_tolerance(&qm, spec.tolerances.normal_form)?);
    let raw = RawHamiltonian::new(spec.hamiltonian_fn()?, spec.beta, qm.clone())?;
    let gauge = Arc::new(GaugeProblem::new(raw, q_exp)?);
    let h = GaugeFlow(gauge.clone());
    let tol = spec.tolerances.clone();

    let mut files: Vec<(String, bool)> = Vec::new();
    if let Some(sols) = report["solutions"].as_array() {
        for s in sols {
            if let Some(f) = s["orbit_file"].as_str() {
                let plane_seeded = s["origin"].get("plane").is_some();
                files.push((f.to_string(), plane_seeded));
            }
        }
    }
    if files.is_empty() {
        return Err(Error::Input("report.json lists no orbit files".into()));
    }
    let checks = files
        .par_iter()
        .map(|(f, _)| check_orbit_file(&dir.join(f), f, &h, &qm, steps, &tol, q_exp))
        .collect::<Result<Vec<_>>>()?;

    let mut cert_orbits = Vec::new();
    for ((f, plane_seeded), c) in files.iter().zip(&checks) {
        if *plane_seeded && c.normalization_defect <= tol.normalization {
            let table = read_orbit_csv(&dir.join(f))?;
            cert_orbits.push(OrbitSolution {
                samples: table.samples(),
                period: table.period(),
                energy: 1.0 / q_exp,
                shooting_residual: c.shooting_residual,
                energy_drift: c.energy_drift,
                source: OrbitSource::Polished,
            });
        }
    }
    let cert_opts = CertificateOptions {
        fp_rel: tol.fingerprint_rel,
        dist_rel: tol.distance_rel,
        k_max: spec.discretization.k_max,
        ..CertificateOptions::default()
    };
    let certificate_count = if cert_orbits.is_empty() {
        None
    } else {
        Some(distinctness_certificate(&cert_orbits, &rotation, &cert_opts)?.count)
    };
    let reported_count = report["certificate"]["count"].as_u64().map(|c| c as usize);
    let passed = checks.iter().all(|c| c.passed)
        && match (certificate_count, reported_count) {
            (Some(a), Some(b)) => a == b,
            _ => true,
        };
    Ok(VerifyReport {
        orbits: checks,
        certificate_count,
        reported_count,
        tolerances: tol,
        passed,
    })
}

fn check_orbit_file(
    path: &Path,
    name: &str,
    h: &GaugeFlow,
    qm: &DMatrix<f64>,
    steps: usize,
    tol: &Tolerances,
    q_exp: f64,
) -> Result<OrbitCheck> {
    let table = read_orbit_csv(path).map_err(|e| match e {
        Error::Csv(_) | Error::Io(_) => Error::Input(format!("{}: {e}", path.display())),
        other => other,
    })?;
    if table.states.ncols() != qm.nrows() {
        return Err(Error::Input(format!(
            "{}: {} state columns for dimension {}",
            path.display(),
            table.states.ncols(),
            qm.nrows()
        )));
    }
    let samples = table.samples();
    let n_s = samples.nrows();
    let period = table.period();
    let z0 = samples.row(0).transpose();
    let stored_residual = (table.end() - qm * &z0).norm();
    let total = n_s * steps.div_ceil(n_s);
    let traj = crate::ode::integrate_fixed(h, &z0, period, total, total / n_s)?;
    let mut deviation: f64 = 0.0;
    for m in 0..n_s {
        deviation = deviation.max((&traj.states[m] - samples.row(m).transpose()).norm());
    }
    let shooting_residual = (traj.last() - qm * &z0).norm();
    let normalization_defect = (q_exp * h.value(&z0) - 1.0).abs();
    let mut failures = Vec::new();
    if shooting_residual > tol.shooting {
        failures.push(format!("shooting residual {shooting_residual:.3e} > {:.1e}", tol.shooting));
    }
    if stored_residual > tol.shooting {
        failures.push(format!("stored end point residual {stored_residual:.3e} > {:.1e}", tol.shooting));
    }
    if deviation > tol.trajectory {
        failures.push(format!("samples deviate from the flow by {deviation:.3e} > {:.1e}", tol.trajectory));
    }
    if traj.energy_drift > tol.drift {
        failures.push(format!("energy drift {:.3e} > {:.1e}", traj.energy_drift, tol.drift));
    }
    if normalization_defect > tol.normalization {
        failures.push(format!(
            "orbit is not on the normalized level: |q·H(z0) − 1| = {normalization_defect:.3e}"
        ));
    }
    Ok(OrbitCheck {
        file: name.to_string(),
        stored_residual,
        shooting_residual,
        trajectory_deviation: deviation,
        energy_drift: traj.energy_drift,
        normalization_defect,
        passed: failures.is_empty(),
        failures,
    })
}

/// Exit status for an error: 2 for bad input, 3 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Input(_)
        | Error::Dimension(_)
        | Error::NotSymplecticOrthogonal { .. }
        | Error::Inconsistent { .. }
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Io(_) => 2,
        _ => 3,
    }
}
