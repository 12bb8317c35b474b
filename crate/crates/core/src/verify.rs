//! ODE-level checks of rotating orbits: shooting residuals, Newton polishing,
//! energy normalization and the multiplicity certificate.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianFn;
use crate::loops::{analyze, build_grid, default_scan_points, default_shift_span, orbit_distance, RotatingLoop};
use crate::ode::{flow, integrate_fixed, vector_field};
use crate::symplectic::SymplecticRotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitSource {
    Variational,
    Polished,
}

#[derive(Debug, Clone)]
pub struct OrbitSolution {
    /// `z(mT/N)`, `m = 0..N`.
    pub samples: DMatrix<f64>,
    pub period: f64,
    /// `H(z(0))`
    pub energy: f64,
    pub shooting_residual: f64,
    pub energy_drift: f64,
    pub source: OrbitSource,
}

impl OrbitSolution {
    pub fn initial(&self) -> DVector<f64> {
        self.samples.row(0).transpose()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOptions {
    /// Fixed integrator steps per period.
    pub steps: usize,
    pub capture_radius: f64,
    pub target: f64,
    pub max_newton: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            steps: 4096,
            capture_radius: 1e-2,
            target: 1e-10,
            max_newton: 30,
        }
    }
}

/// `|z(T; z₀) − Q z₀|`
pub fn shooting_residual(
    h: &dyn HamiltonianFn,
    q: &DMatrix<f64>,
    z0: &DVector<f64>,
    period: f64,
    steps: usize,
) -> Result<f64> {
    let z_t = flow(h, z0, period, steps)?;
    Ok((z_t - q * z0).norm())
}

fn steps_multiple(steps: usize, samples: usize) -> usize {
    samples * steps.div_ceil(samples).max(1)
}

/// Integrate from `z0` over one rotating period and package the result.
pub fn integrate_orbit(
    h: &dyn HamiltonianFn,
    q: &DMatrix<f64>,
    z0: &DVector<f64>,
    period: f64,
    samples: usize,
    steps: usize,
    source: OrbitSource,
) -> Result<OrbitSolution> {
    let total = steps_multiple(steps, samples);
    let traj = integrate_fixed(h, z0, period, total, total / samples)?;
    let mut out = DMatrix::zeros(samples, z0.len());
    for m in 0..samples {
        out.set_row(m, &traj.states[m].transpose());
    }
    let residual = (traj.last() - q * z0).norm();
    Ok(OrbitSolution {
        samples: out,
        period,
        energy: h.value(z0),
        shooting_residual: residual,
        energy_drift: traj.energy_drift,
        source,
    })
}

/// Wrap variational samples: the residual and drift come from integrating
/// the first sample.
pub fn orbit_from_samples(
    h: &dyn HamiltonianFn,
    q: &DMatrix<f64>,
    samples: DMatrix<f64>,
    period: f64,
    steps: usize,
) -> Result<OrbitSolution> {
    let z0 = samples.row(0).transpose();
    let traj = integrate_fixed(h, &z0, period, steps, steps)?;
    Ok(OrbitSolution {
        energy: h.value(&z0),
        shooting_residual: (traj.last() - q * &z0).norm(),
        energy_drift: traj.energy_drift,
        samples,
        period,
        source: OrbitSource::Variational,
    })
}

#[derive(Debug, Clone)]
pub struct PolishOutcome {
    pub orbit: OrbitSolution,
    pub success: bool,
    pub newton_steps: usize,
    pub initial_residual: f64,
}

/// Gauss–Newton on `(z₀, T)` for `z(T; z₀) = Q z₀`, with a phase condition
/// and an energy pin.
pub fn polish(
    h: &dyn HamiltonianFn,
    q: &DMatrix<f64>,
    orbit: &OrbitSolution,
    opts: &VerifyOptions,
) -> Result<PolishOutcome> {
    let dim = orbit.dim();
    let samples = orbit.samples.nrows();
    let anchor = orbit.initial();
    let level = orbit.energy;
    let phase_dir = vector_field(h, &anchor);
    let steps = opts.steps;

    let shoot = |z0: &DVector<f64>, t: f64| -> Result<(DVector<f64>, DVector<f64>)> {
        let zt = flow(h, z0, t, steps)?;
        let r = &zt - q * z0;
        Ok((zt, r))
    };
    let full_residual = |z0: &DVector<f64>, r: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(dim + 2);
        out.rows_mut(0, dim).copy_from(r);
        out[dim] = (z0 - &anchor).dot(&phase_dir);
        out[dim + 1] = h.value(z0) - level;
        out
    };

    let mut z0 = anchor.clone();
    let mut period = orbit.period;
    let (mut zt, mut r) = shoot(&z0, period)?;
    let initial_residual = r.norm();
    let fail = |initial_residual: f64| PolishOutcome {
        orbit: orbit.clone(),
        success: false,
        newton_steps: 0,
        initial_residual,
    };
    if initial_residual <= opts.target {
        let polished = integrate_orbit(h, q, &z0, period, samples, steps, OrbitSource::Polished)?;
        return Ok(PolishOutcome {
            orbit: polished,
            success: true,
            newton_steps: 0,
            initial_residual,
        });
    }
    if !(initial_residual <= opts.capture_radius) {
        log::warn!(
            "polish skipped: residual {initial_residual:.3e} exceeds capture radius {:.1e}",
            opts.capture_radius
        );
        return Ok(fail(initial_residual));
    }

    let mut newton_steps = 0;
    let mut merit = full_residual(&z0, &r).norm();
    while newton_steps < opts.max_newton && r.norm() > opts.target {
        newton_steps += 1;
        let mut jac = DMatrix::zeros(dim + 2, dim + 1);
        let scale = z0.norm().max(1.0);
        let eps = 1e-6 * scale;
        for i in 0..dim {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            zp[i] += eps;
            zm[i] -= eps;
            let (_, rp) = shoot(&zp, period)?;
            let (_, rm) = shoot(&zm, period)?;
            let col = (rp - rm) / (2.0 * eps);
            jac.view_mut((0, i), (dim, 1)).copy_from(&col);
        }
        let dt_col = vector_field(h, &zt);
        jac.view_mut((0, dim), (dim, 1)).copy_from(&dt_col);
        let grad = h.gradient(&z0);
        for i in 0..dim {
            jac[(dim, i)] = phase_dir[i];
            jac[(dim + 1, i)] = grad[i];
        }
        let rhs = full_residual(&z0, &r);
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let step = svd
            .solve(&rhs, 1e-10 * smax)
            .map_err(|e| Error::Numerical(format!("polish least squares: {e}")))?;

        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let z_try = &z0 - step.rows(0, dim) * alpha;
            let t_try = period - alpha * step[dim];
            if t_try > 0.0 {
                if let Ok((zt_try, r_try)) = shoot(&z_try, t_try) {
                    let m_try = full_residual(&z_try, &r_try).norm();
                    if m_try.is_finite() && m_try < merit {
                        z0 = z_try;
                        period = t_try;
                        zt = zt_try;
                        r = r_try;
                        merit = m_try;
                        improved = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let polished = integrate_orbit(h, q, &z0, period, samples, steps, OrbitSource::Polished)?;
    let success = polished.shooting_residual <= opts.target;
    if !success {
        log::warn!(
            "polish stopped at residual {:.3e} after {newton_steps} Newton steps",
            polished.shooting_residual
        );
        let mut out = fail(initial_residual);
        out.newton_steps = newton_steps;
        return Ok(out);
    }
    Ok(PolishOutcome {
        orbit: polished,
        success,
        newton_steps,
        initial_residual,
    })
}

/// Rescale an orbit of a `q`-homogeneous Hamiltonian to the level `1/q`:
/// `w(t) = (qd)^{-1/q} z((qd)^{(2−q)/q} t)`.
pub fn normalize_energy(orbit: &OrbitSolution, q: f64) -> Result<OrbitSolution> {
    let d = orbit.energy;
    if !(d > 0.0) {
        return Err(Error::Domain(format!("energy {d:.3e} must be positive to normalize")));
    }
    let qd = q * d;
    let amp = qd.powf(-1.0 / q);
    Ok(OrbitSolution {
        samples: &orbit.samples * amp,
        period: orbit.period * qd.powf((q - 2.0) / q),
        energy: 1.0 / q,
        shooting_residual: orbit.shooting_residual * amp,
        energy_drift: orbit.energy_drift,
        source: orbit.source,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FingerprintEntry {
    pub plane: usize,
    pub k: i64,
    /// Angular frequency; intrinsic to the trajectory, unlike `k`.
    pub omega: f64,
    pub magnitude: f64,
}

/// `|c|` of the oscillating part at each `(plane, ω)`, plus the constant part
/// `𝒫 z̄`. Time translation only changes phases, so both are invariant.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Fingerprint {
    pub entries: Vec<FingerprintEntry>,
    pub offset: Vec<f64>,
}

impl Fingerprint {
    pub fn from_loop(y: &RotatingLoop, offset: &DVector<f64>) -> Self {
        let mut entries: Vec<FingerprintEntry> = y
            .grid()
            .entries()
            .iter()
            .zip(y.coeffs())
            .map(|(e, c)| FingerprintEntry {
                plane: e.plane,
                k: e.k,
                omega: e.omega,
                magnitude: c.norm(),
            })
            .collect();
        entries.sort_by(|a, b| (a.plane, a.omega).partial_cmp(&(b.plane, b.omega)).expect("finite"));
        Self {
            entries,
            offset: offset.iter().copied().collect(),
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.entries.iter().map(|e| e.magnitude).fold(0.0, f64::max)
    }

    /// Entries above `rel` times the largest magnitude.
    pub fn support(&self, rel: f64) -> Vec<&FingerprintEntry> {
        let floor = rel * self.max_magnitude();
        self.entries.iter().filter(|e| e.magnitude > floor).collect()
    }

    /// `ℓ²` gap between the spectra, matching entries of the same plane whose
    /// frequencies agree to a relative `1e-9`; offsets included.
    pub fn gap(&self, other: &Self) -> f64 {
        let scale = self
            .entries
            .iter()
            .chain(&other.entries)
            .map(|e| e.omega.abs())
            .fold(0.0, f64::max);
        let tol = 1e-9 * scale.max(f64::MIN_POSITIVE);
        let mut used = vec![false; other.entries.len()];
        let mut sum = 0.0;
        for a in &self.entries {
            let hit = other.entries.iter().enumerate().position(|(j, b)| {
                !used[j] && b.plane == a.plane && (b.omega - a.omega).abs() <= tol
            });
            match hit {
                Some(j) => {
                    used[j] = true;
                    sum += (a.magnitude - other.entries[j].magnitude).powi(2);
                }
                None => sum += a.magnitude.powi(2),
            }
        }
        for (b, u) in other.entries.iter().zip(&used) {
            if !u {
                sum += b.magnitude.powi(2);
            }
        }
        for (x, y) in self.offset.iter().zip(&other.offset) {
            sum += (x - y).powi(2);
        }
        sum.sqrt()
    }
}

/// Spectral decomposition of orbit samples: oscillating loop plus fixed offset.
pub fn orbit_spectrum(
    orbit: &OrbitSolution,
    rotation: &Arc<SymplecticRotation>,
    k_max: usize,
) -> Result<(RotatingLoop, DVector<f64>)> {
    let n_s = orbit.samples.nrows();
    let k = k_max.min((n_s.saturating_sub(2)) / 2).max(1);
    let grid = build_grid(rotation, orbit.period, k)?;
    let y = analyze(&orbit.samples, &grid)?;
    let mean = DVector::from_fn(orbit.dim(), |d, _| orbit.samples.column(d).mean());
    let (offset, _) = rotation.fixed_projection(&mean);
    Ok((y, offset))
}

pub fn fingerprint(orbit: &OrbitSolution, rotation: &Arc<SymplecticRotation>, k_max: usize) -> Result<Fingerprint> {
    let (y, offset) = orbit_spectrum(orbit, rotation, k_max)?;
    Ok(Fingerprint::from_loop(&y, &offset))
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateOptions {
    pub fp_rel: f64,
    pub dist_rel: f64,
    pub period_rel: f64,
    pub energy_rel: f64,
    pub k_max: usize,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            fp_rel: 1e-6,
            dist_rel: 1e-4,
            period_rel: 1e-8,
            energy_rel: 1e-6,
            k_max: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDecision {
    Same,
    DistinctFingerprint,
    DistinctDistance,
}

impl PairDecision {
    pub fn distinct(self) -> bool {
        self != PairDecision::Same
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub count: usize,
    /// Equivalence class of each orbit.
    pub classes: Vec<usize>,
    pub decisions: Vec<Vec<PairDecision>>,
    pub fingerprint_gaps: Vec<Vec<f64>>,
    pub distances: Vec<Vec<Option<f64>>>,
    pub tol_fp: f64,
    pub tol_dist: f64,
    pub options: CertificateOptions,
}

/// Lower bound on the number of geometrically distinct orbits.
pub fn distinctness_certificate(
    orbits: &[OrbitSolution],
    rotation: &Arc<SymplecticRotation>,
    opts: &CertificateOptions,
) -> Result<Certificate> {
    let m = orbits.len();
    if let Some(first) = orbits.first() {
        for (i, o) in orbits.iter().enumerate() {
            let rel = (o.energy - first.energy).abs() / first.energy.abs().max(f64::MIN_POSITIVE);
            if rel > opts.energy_rel {
                return Err(Error::Contract(format!(
                    "orbit {i} has energy {:.12e}, orbit 0 has {:.12e}; normalize first",
                    o.energy, first.energy
                )));
            }
            if o.dim() != rotation.dim() {
                return Err(Error::Dimension(format!(
                    "orbit {i} has dimension {}, rotation acts on {}",
                    o.dim(),
                    rotation.dim()
                )));
            }
        }
    }
    let spectra = orbits
        .iter()
        .map(|o| orbit_spectrum(o, rotation, opts.k_max))
        .collect::<Result<Vec<_>>>()?;
    let prints: Vec<Fingerprint> = spectra.iter().map(|(y, off)| Fingerprint::from_loop(y, off)).collect();
    let max_mag = prints.iter().map(Fingerprint::max_magnitude).fold(0.0, f64::max);
    let tol_fp = opts.fp_rel * max_mag;
    let norms: Vec<f64> = spectra
        .iter()
        .map(|(y, off)| (y.l2_norm().powi(2) + y.grid().period() * off.norm_squared()).sqrt())
        .collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let tol_dist = opts.dist_rel * max_norm;

    let mut decisions = vec![vec![PairDecision::Same; m]; m];
    let mut gaps = vec![vec![0.0; m]; m];
    let mut distances = vec![vec![None; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let (yi, oi) = &spectra[i];
            let (yj, oj) = &spectra[j];
            let gap = prints[i].gap(&prints[j]);
            gaps[i][j] = gap;
            gaps[j][i] = gap;
            let pi = orbits[i].period;
            let pj = orbits[j].period;
            let decision = if gap > tol_fp {
                PairDecision::DistinctFingerprint
            } else if (pi - pj).abs() > opts.period_rel * pi.max(pj) {
                // equal spectra under different period conventions: cannot separate
                PairDecision::Same
            } else {
                let yj_same = RotatingLoop::from_coeffs(yi.grid().clone(), yj.coeffs().to_vec())?;
                let span = default_shift_span(yi.grid());
                let pts = default_scan_points(yi, &yj_same, span);
                let loop_dist = orbit_distance(yi, &yj_same, span, pts)?;
                let dist = (loop_dist.powi(2) + pi * (oi - oj).norm_squared()).sqrt();
                distances[i][j] = Some(dist);
                distances[j][i] = Some(dist);
                if dist > tol_dist {
                    PairDecision::DistinctDistance
                } else {
                    PairDecision::Same
                }
            };
            decisions[i][j] = decision;
            decisions[j][i] = decision;
        }
    }

    // greedy classes in input order: appending an orbit never merges old classes
    let mut classes = vec![0; m];
    let mut reps: Vec<usize> = Vec::new();
    for i in 0..m {
        match reps.iter().position(|&r| !decisions[r][i].distinct()) {
            Some(c) => classes[i] = c,
            None => {
                classes[i] = reps.len();
                reps.push(i);
            }
        }
    }
    Ok(Certificate {
        count: reps.len(),
        classes,
        decisions,
        fingerprint_gaps: gaps,
        distances,
        tol_fp,
        tol_dist,
        options: opts.clone(),
    })
}

/// Sample a loop as orbit data (used for synthetic checks).
pub fn orbit_from_loop(y: &RotatingLoop, samples: usize, energy: f64) -> Result<OrbitSolution> {
    Ok(OrbitSolution {
        samples: y.synthesize(samples)?,
        period: y.grid().period(),
        energy,
        shooting_residual: 0.0,
        energy_drift: 0.0,
        source: OrbitSource::Variational,
    })
}
