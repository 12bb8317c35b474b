//! Dual action `E(y) = ∫₀ᵀ H*(y) − ½⟨y, Ky⟩` on the spectral loop space,
//! seeding, descent to critical points and orbit recovery.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::GaugeProblem;
use crate::loops::{analyze, FrequencyGrid, RotatingLoop};
use crate::symplectic::C64;

/// Convex potential whose conjugate enters the dual action.
pub trait ConjugatePotential: Send + Sync {
    /// `(H*(y), ∇H*(y))`
    fn conjugate(&self, y: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
    /// Homogeneity degree of `H*`.
    fn exponent(&self) -> f64;
    /// Primal value `𝓗(z)`, used to report the energy of recovered orbits.
    fn primal(&self, z: &DVector<f64>) -> Result<f64>;
}

impl ConjugatePotential for GaugeProblem {
    fn conjugate(&self, y: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.legendre(y)
    }

    fn exponent(&self) -> f64 {
        self.p()
    }

    fn primal(&self, z: &DVector<f64>) -> Result<f64> {
        self.value(z)
    }
}

#[derive(Clone)]
pub struct DualProblem {
    potential: Arc<dyn ConjugatePotential>,
    grid: Arc<FrequencyGrid>,
    samples: usize,
}

impl std::fmt::Debug for DualProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DualProblem")
            .field("period", &self.grid.period())
            .field("k_max", &self.grid.k_max())
            .field("samples", &self.samples)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentStatus {
    Converged,
    MaxIterations,
    /// Line search could not find an acceptable step.
    Stalled,
    /// The iterate shrank below the norm floor (towards the trivial critical point).
    Collapsed,
}

#[derive(Debug, Clone)]
pub struct DescentOptions {
    pub gtol: f64,
    pub max_iter: usize,
    pub c1: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    /// Restrict the descent to the modes marked `true`.
    pub mask: Option<Vec<bool>>,
    /// Relative to the starting norm.
    pub norm_floor: f64,
    /// L-BFGS history length; 0 gives plain steepest descent.
    pub memory: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-9,
            max_iter: 5000,
            c1: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            mask: None,
            norm_floor: 1e-6,
            memory: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualState {
    pub y: RotatingLoop,
    pub energy: f64,
    pub gradient: RotatingLoop,
    pub grad_norm: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub last_step: f64,
    pub status: DescentStatus,
    /// `E` after every accepted step, starting with the initial value.
    pub energy_trace: Vec<f64>,
}

impl DualState {
    pub fn converged(&self) -> bool {
        self.status == DescentStatus::Converged
    }
}

#[derive(Debug, Clone)]
pub struct RecoveredOrbit {
    /// `z(mT/N)`, one row per sample.
    pub samples: DMatrix<f64>,
    pub z0: DVector<f64>,
    /// `max_m |z − Ky − z₀|`
    pub residual: f64,
    pub period: f64,
    /// `𝓗(z(0))`
    pub energy: f64,
    /// `max − min` of `𝓗` over the samples.
    pub energy_spread: f64,
    pub critical: bool,
}

impl DualProblem {
    pub fn new(
        potential: Arc<dyn ConjugatePotential>,
        grid: Arc<FrequencyGrid>,
        samples: usize,
    ) -> Result<Self> {
        if samples < grid.min_samples() {
            return Err(Error::Aliasing {
                samples,
                k_max: grid.k_max(),
                required: grid.min_samples(),
            });
        }
        Ok(Self {
            potential,
            grid,
            samples,
        })
    }

    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        &self.grid
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn period(&self) -> f64 {
        self.grid.period()
    }

    pub fn exponent(&self) -> f64 {
        self.potential.exponent()
    }

    fn check_grid(&self, y: &RotatingLoop) -> Result<()> {
        if Arc::ptr_eq(y.grid(), &self.grid) || **y.grid() == *self.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Trapezoid rule for `∫H*(y)`; exact for band-limited integrands.
    fn conjugate_integral(&self, y: &RotatingLoop, want_grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
        let ys = y.synthesize(self.samples)?;
        let dim = ys.ncols();
        let mut sum = 0.0;
        let mut grads = want_grad.then(|| DMatrix::zeros(self.samples, dim));
        for m in 0..self.samples {
            let ym = ys.row(m).transpose();
            let (v, g) = self.potential.conjugate(&ym)?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite H* at sample {m}")));
            }
            sum += v;
            if let Some(gs) = grads.as_mut() {
                gs.set_row(m, &g.transpose());
            }
        }
        Ok((sum * self.period() / self.samples as f64, grads))
    }

    pub fn energy(&self, y: &RotatingLoop) -> Result<f64> {
        self.check_grid(y)?;
        let (integral, _) = self.conjugate_integral(y, false)?;
        Ok(integral - 0.5 * y.quadratic_form())
    }

    /// `(E(y), ∇E(y))`, the gradient taken with respect to the `L²` pairing.
    pub fn energy_and_gradient(&self, y: &RotatingLoop) -> Result<(f64, RotatingLoop)> {
        self.check_grid(y)?;
        let (integral, grads) = self.conjugate_integral(y, true)?;
        let grads = grads.expect("requested");
        let g = analyze(&grads, &self.grid)?.axpy(-1.0, &y.apply_k())?;
        Ok((integral - 0.5 * y.quadratic_form(), g))
    }

    pub fn gradient(&self, y: &RotatingLoop) -> Result<RotatingLoop> {
        self.energy_and_gradient(y).map(|(_, g)| g)
    }

    /// `λ(z)` with `p λ^p ∫H*(z) = λ² ∫⟨z, Kz⟩`.
    pub fn critical_scale(&self, z: &RotatingLoop) -> Result<f64> {
        self.check_grid(z)?;
        let p = self.exponent();
        let (integral, _) = self.conjugate_integral(z, false)?;
        if !(integral > 0.0) {
            return Err(Error::InvalidGauge(format!(
                "∫H*(z) = {integral:.3e} is not positive"
            )));
        }
        let qf = z.quadratic_form();
        if !(qf > 0.0) {
            return Err(Error::Domain(format!(
                "∫⟨z, Kz⟩ = {qf:.3e}; the radial scaling needs a positive value"
            )));
        }
        Ok((qf / (p * integral)).powf(1.0 / (p - 2.0)))
    }

    /// `ρ(z) = λ(z) z`
    pub fn scale_to_critical(&self, z: &RotatingLoop) -> Result<RotatingLoop> {
        Ok(z.scale(self.critical_scale(z)?))
    }

    /// The lowest positive mode of a plane: `ω = θ̃ⱼ/T`.
    pub fn seed_mode(&self, plane: usize) -> Result<(usize, i64)> {
        if plane >= self.grid.n() {
            return Err(Error::Input(format!(
                "plane {plane} out of range for n = {}",
                self.grid.n()
            )));
        }
        let k = if self.grid.rotation().is_fixed_plane(plane) { 1 } else { 0 };
        Ok((plane, k))
    }

    /// `Q(t)ξ` for the unit vector of `plane`, scaled to the radial critical point.
    pub fn seed(&self, plane: usize) -> Result<RotatingLoop> {
        let (plane, k) = self.seed_mode(plane)?;
        let z = RotatingLoop::single_mode(self.grid.clone(), plane, k, C64::new(FRAC_1_SQRT_2, 0.0))?;
        self.scale_to_critical(&z)
    }

    /// `Q(t)ξ/|ξ|` for an arbitrary `ξ`, before scaling.
    pub fn orbit_of_vector(&self, xi: &DVector<f64>) -> Result<RotatingLoop> {
        let rot = self.grid.rotation();
        if xi.len() != rot.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} for dimension {}",
                xi.len(),
                rot.dim()
            )));
        }
        let norm = xi.norm();
        if norm == 0.0 {
            return Err(Error::Input("seed vector must be nonzero".into()));
        }
        let unit = xi / norm;
        let n_s = self.samples;
        let period = self.period();
        let mut samples = DMatrix::zeros(n_s, rot.dim());
        for m in 0..n_s {
            let t = period * m as f64 / n_s as f64;
            let zm = rot.rotation_path(t, period) * &unit;
            samples.set_row(m, &zm.transpose());
        }
        let mut z = analyze(&samples, &self.grid)?;
        // keep only the lowest mode of each plane (the rest is round-off)
        let mut mask = vec![false; self.grid.len()];
        for j in 0..rot.n() {
            let (_, k) = self.seed_mode(j)?;
            if let Some(idx) = self.grid.index_of(j, k) {
                mask[idx] = true;
            }
        }
        z = z.masked(&mask);
        Ok(z)
    }

    pub fn seed_from_vector(&self, xi: &DVector<f64>) -> Result<RotatingLoop> {
        let z = self.orbit_of_vector(xi)?;
        self.scale_to_critical(&z)
    }

    /// Limited-memory quasi-Newton descent (steepest descent when `memory = 0`)
    /// with Armijo backtracking, in the geometry of `pairing`.
    pub fn descend(&self, y0: &RotatingLoop, opts: &DescentOptions) -> Result<DualState> {
        self.check_grid(y0)?;
        if let Some(mask) = &opts.mask {
            if mask.len() != self.grid.len() {
                return Err(Error::Dimension(format!(
                    "mask of length {} for a grid of {} entries",
                    mask.len(),
                    self.grid.len()
                )));
            }
        }
        let start_norm = y0.l2_norm();
        if !(start_norm > 0.0) {
            return Err(Error::Input("descent must start away from y = 0".into()));
        }
        let restrict = |g: RotatingLoop| match &opts.mask {
            Some(m) => g.masked(m),
            None => g,
        };
        let mut y = match &opts.mask {
            Some(m) => y0.masked(m),
            None => y0.clone(),
        };
        let (mut e, g) = self.energy_and_gradient(&y)?;
        let mut g = restrict(g);
        let mut gn = g.l2_norm();
        let mut trace = vec![e];
        let mut step = opts.initial_step;
        let mut last_step = 0.0;
        let mut accepted = 0;
        let mut status = DescentStatus::MaxIterations;
        let mut iterations = 0;
        let mut history: Vec<(RotatingLoop, RotatingLoop, f64)> = Vec::new();

        while iterations < opts.max_iter {
            if gn <= opts.gtol {
                status = DescentStatus::Converged;
                break;
            }
            if !e.is_finite() {
                return Err(Error::Numerical("non-finite dual action during descent".into()));
            }
            iterations += 1;
            let mut d = self.lbfgs_direction(&g, &history)?;
            let mut slope = g.pairing(&d)?;
            if !(slope < 0.0) {
                history.clear();
                d = g.scale(-1.0);
                slope = -gn * gn;
            }
            let mut trial = if history.is_empty() { step } else { 1.0 };
            let mut next = None;
            while trial >= 1e-16 * opts.initial_step {
                let y_new = y.axpy(trial, &d)?;
                let (e_new, g_new) = self.energy_and_gradient(&y_new)?;
                if e_new.is_finite() {
                    let armijo = e_new <= e + opts.c1 * trial * slope;
                    let g_new = restrict(g_new);
                    let gn_new = g_new.l2_norm();
                    // near convergence the decrease drops below the rounding of E
                    let flat = e_new <= e + 1e-14 * e.abs() && gn_new < gn;
                    if armijo || flat {
                        next = Some((y_new, e_new, g_new, gn_new));
                        break;
                    }
                }
                trial *= opts.backtrack;
            }
            match next {
                Some((y_new, e_new, g_new, gn_new)) => {
                    if opts.memory > 0 {
                        let s_k = y_new.axpy(-1.0, &y)?;
                        let y_k = g_new.axpy(-1.0, &g)?;
                        let sy = s_k.pairing(&y_k)?;
                        if sy > 1e-12 * s_k.l2_norm() * y_k.l2_norm() {
                            if history.len() == opts.memory {
                                history.remove(0);
                            }
                            history.push((s_k, y_k, 1.0 / sy));
                        }
                    }
                    y = y_new;
                    e = e_new;
                    g = g_new;
                    gn = gn_new;
                    trace.push(e);
                    accepted += 1;
                    last_step = trial;
                    if history.is_empty() {
                        step = trial / opts.backtrack;
                    }
                }
                None if !history.is_empty() => history.clear(),
                None => {
                    status = DescentStatus::Stalled;
                    break;
                }
            }
            if y.l2_norm() < opts.norm_floor * start_norm {
                status = DescentStatus::Collapsed;
                break;
            }
        }
        if status == DescentStatus::MaxIterations && gn <= opts.gtol {
            status = DescentStatus::Converged;
        }
        if status != DescentStatus::Converged {
            log::warn!(
                "descent ended {:?} after {iterations} iterations, |∇E| = {gn:.3e}",
                status
            );
        }
        Ok(DualState {
            y,
            energy: e,
            gradient: g,
            grad_norm: gn,
            iterations,
            accepted_steps: accepted,
            last_step,
            status,
            energy_trace: trace,
        })
    }

    /// Two-loop recursion: `−H∇E` with `H` the inverse-Hessian estimate.
    fn lbfgs_direction(&self, g: &RotatingLoop, history: &[(RotatingLoop, RotatingLoop, f64)]) -> Result<RotatingLoop> {
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * s.pairing(&q)?;
            q = q.axpy(-a, y)?;
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.last() {
            q = q.scale(s.pairing(y)? / y.pairing(y)?);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.pairing(&q)?;
            q = q.axpy(a - b, s)?;
        }
        Ok(q.scale(-1.0))
    }

    /// Descend from several starting loops concurrently.
    pub fn descend_all(&self, starts: &[RotatingLoop], opts: &DescentOptions) -> Vec<Result<DualState>> {
        starts.par_iter().map(|y0| self.descend(y0, opts)).collect()
    }

    /// `z = ∇H*(y)`, `z₀ = 𝒫(mean(z − Ky))`.
    pub fn recover(&self, y: &RotatingLoop, rtol: f64) -> Result<RecoveredOrbit> {
        self.check_grid(y)?;
        let ys = y.synthesize(self.samples)?;
        let kys = y.apply_k().synthesize(self.samples)?;
        let dim = ys.ncols();
        let mut zs = DMatrix::zeros(self.samples, dim);
        for m in 0..self.samples {
            let (_, g) = self.potential.conjugate(&ys.row(m).transpose())?;
            zs.set_row(m, &g.transpose());
        }
        let diff = &zs - &kys;
        let mean = DVector::from_fn(dim, |d, _| diff.column(d).mean());
        let (z0, _) = self.grid.rotation().fixed_projection(&mean);
        let mut residual: f64 = 0.0;
        for m in 0..self.samples {
            let r = (diff.row(m).transpose() - &z0).norm();
            residual = residual.max(r);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in 0..self.samples {
            let h = self.potential.primal(&zs.row(m).transpose())?;
            lo = lo.min(h);
            hi = hi.max(h);
        }
        let energy = self.potential.primal(&zs.row(0).transpose())?;
        let critical = residual <= rtol;
        if !critical {
            log::warn!("recovered orbit is not critical: residual {residual:.3e} > {rtol:.1e}");
        }
        Ok(RecoveredOrbit {
            samples: zs,
            z0,
            residual,
            period: self.period(),
            energy,
            energy_spread: hi - lo,
            critical,
        })
    }
}

/// Is `(θ, k)` a mode of a loop with rotating period `T/ℓ`?
pub fn subperiod_compatible(theta: f64, k: i64, ell: usize) -> bool {
    let x = (ell as f64 - 1.0) * theta / TAU;
    let xr = x.round();
    if (x - xr).abs() > 1e-9 {
        return false;
    }
    (k - xr as i64).rem_euclid(ell as i64) == 0
}

pub fn subperiod_mask(grid: &FrequencyGrid, ell: usize) -> Vec<bool> {
    let theta = grid.rotation().theta();
    grid.entries()
        .iter()
        .map(|e| subperiod_compatible(theta[e.plane], e.k, ell))
        .collect()
}

pub const SUBPERIOD_TOL: f64 = 1e-8;
pub const MAX_SUBPERIOD: usize = 12;

/// Smallest `ℓ ≥ 2` such that all but a relative `tol` of the coefficient mass
/// sits on modes compatible with rotating period `T/ℓ`.
pub fn detect_subperiod(y: &RotatingLoop, max_ell: usize, tol: f64) -> Option<usize> {
    let total = y.coeff_energy();
    if total == 0.0 {
        return None;
    }
    (2..=max_ell).find(|&ell| {
        let mask = subperiod_mask(y.grid(), ell);
        let outside: f64 = y
            .coeffs()
            .iter()
            .zip(&mask)
            .filter(|(_, &keep)| !keep)
            .map(|(c, _)| c.norm_sqr())
            .sum();
        outside <= tol * total
    })
}

/// Lowest positive mode of `plane` compatible with the smallest feasible `ℓ ≥ 2`.
pub fn subperiod_seed_mode(grid: &FrequencyGrid, plane: usize, max_ell: usize) -> Option<(usize, i64)> {
    let theta = grid.rotation().theta()[plane];
    (2..=max_ell).find_map(|ell| {
        grid.entries()
            .iter()
            .filter(|e| e.plane == plane && e.omega > 0.0 && subperiod_compatible(theta, e.k, ell))
            .min_by(|a, b| a.omega.total_cmp(&b.omega))
            .map(|e| (ell, e.k))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Passed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerEntry {
    pub name: String,
    pub relation: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub slack: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityLedger {
    pub p: f64,
    pub period: f64,
    pub tilde_first: f64,
    pub r_in: f64,
    pub b: f64,
    pub c0: f64,
    pub m_hat: Option<f64>,
    pub m_hat_star: Option<f64>,
    pub seed_sup: Option<f64>,
    pub entries: Vec<LedgerEntry>,
}

impl InequalityLedger {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != CheckStatus::Failed)
    }

    pub fn entry(&self, name: &str) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct ValueCheckInput<'a> {
    pub p: f64,
    pub period: f64,
    pub tilde_first: f64,
    pub r_in: f64,
    /// Achieved values of full-period critical points.
    pub full: &'a [f64],
    /// Achieved values of sub-period critical points.
    pub sub: &'a [f64],
    /// `E(ρ(z))` at the seeds.
    pub seeds: &'a [f64],
}

/// `b = T²/θ̃₁`
pub fn maximal_quadratic_value(period: f64, tilde_first: f64) -> f64 {
    period * period / tilde_first
}

/// `c₀ = (1/p − ½) b^{p/(p−2)} T^{2/(2−p)}`
pub fn lower_constant(p: f64, period: f64, tilde_first: f64) -> f64 {
    let b = maximal_quadratic_value(period, tilde_first);
    (1.0 / p - 0.5) * b.powf(p / (p - 2.0)) * period.powf(2.0 / (2.0 - p))
}

pub fn value_checks(input: &ValueCheckInput<'_>) -> InequalityLedger {
    let p = input.p;
    let b = maximal_quadratic_value(input.period, input.tilde_first);
    let c0 = lower_constant(p, input.period, input.tilde_first);
    let min_of = |v: &[f64]| v.iter().copied().reduce(f64::min);
    let m_hat = min_of(input.full);
    let m_star = min_of(input.sub);
    let seed_sup = input.seeds.iter().copied().reduce(f64::max);
    let slack = 1e-6 * (1.0 + m_hat.map_or(0.0, f64::abs));
    let r_pow = input.r_in.powf(2.0 * p / (2.0 - p));
    let mut entries = Vec::new();

    let mut push = |name: &str, relation: &str, lhs: Option<f64>, rhs: Option<f64>, slack: f64, ok: Option<bool>| {
        entries.push(LedgerEntry {
            name: name.into(),
            relation: relation.into(),
            lhs,
            rhs,
            slack,
            status: match ok {
                None => CheckStatus::Skipped,
                Some(true) => CheckStatus::Passed,
                Some(false) => CheckStatus::Failed,
            },
        });
    };

    push(
        "negative_minimum",
        "m_hat < 0",
        m_hat,
        Some(0.0),
        0.0,
        m_hat.map(|m| m < 0.0),
    );
    let lower = c0 * r_pow;
    push(
        "lower_bound",
        "m_hat >= c0 r^(2p/(2-p)) - slack",
        m_hat,
        Some(lower),
        slack,
        m_hat.map(|m| m >= lower - slack),
    );
    let seed_bound = 2f64.powf(p / (2.0 - p)) * c0 * r_pow;
    push(
        "seed_bound",
        "sup E(rho(seeds)) < 2^(p/(2-p)) c0 r^(2p/(2-p))",
        seed_sup,
        Some(seed_bound),
        0.0,
        seed_sup.map(|s| s < seed_bound),
    );
    let sub_rhs = m_star.map(|m| 2f64.powf(p / (p - 2.0)) * m);
    push(
        "subperiod_comparison",
        "m_hat <= 2^(p/(p-2)) m_hat_star + slack",
        m_hat,
        sub_rhs,
        slack,
        match (m_hat, sub_rhs) {
            (Some(m), Some(r)) => Some(m <= r + slack),
            _ => None,
        },
    );

    InequalityLedger {
        p,
        period: input.period,
        tilde_first: input.tilde_first,
        r_in: input.r_in,
        b,
        c0,
        m_hat,
        m_hat_star: m_star,
        seed_sup,
        entries,
    }
}
