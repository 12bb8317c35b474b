//! Convex Hamiltonians, their q-homogeneous gauge and its Legendre transform.
//!
//! For a strictly convex body `C = {H ≤ β}` with `0` in its interior, every
//! ray from the origin meets `S = ∂C` once, at radius `r(ζ)`. The gauge
//! Hamiltonian is `𝓗(z) = G(z)^q / q` with `G(z) = |z| / r(z/|z|)`, so that
//! `S = {𝓗 = 1/q}` and `𝓗` is q-homogeneous. Its conjugate is
//! `H*(y) = h_C(y)^p / p` where `h_C` is the support function of `C` and
//! `p = q/(q-1)`.

use std::f64::consts::{SQRT_2, TAU};
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loops::{analyze, FrequencyGrid};
use crate::symplectic::{SymplecticRotation, TildeAngles, C64};

/// A smooth Hamiltonian on `R^{2n}` given by value and gradient oracles.
pub trait HamiltonianFn: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn value(&self, z: &DVector<f64>) -> f64;
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64>;

    /// Radius of `{H = level}` along the unit direction `dir`, when known in closed form.
    fn radial_closed_form(&self, _dir: &DVector<f64>, _level: f64) -> Option<f64> {
        None
    }

    /// Support function of `{H ≤ level}` at `y` and its maximizer, when known in closed form.
    fn support_closed_form(
        &self,
        _y: &DVector<f64>,
        _level: f64,
    ) -> Option<(f64, DVector<f64>)> {
        None
    }
}

/// `H(z) = ½ Σ zᵢ² / aᵢ²`.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    axes: Vec<f64>,
}

impl Ellipsoid {
    /// `axes` has either `2n` entries, or `n` entries that are repeated for
    /// the `x` and `y` coordinates of each plane.
    pub fn new(axes: &[f64], n: usize) -> Result<Self> {
        if axes.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::Input("ellipsoid axes must be positive".into()));
        }
        let axes = if axes.len() == 2 * n {
            axes.to_vec()
        } else if axes.len() == n {
            axes.iter().chain(axes.iter()).copied().collect()
        } else {
            return Err(Error::Input(format!(
                "ellipsoid needs {n} or {} axes, got {}",
                2 * n,
                axes.len()
            )));
        };
        Ok(Self { axes })
    }

    pub fn sphere(n: usize) -> Self {
        Self {
            axes: vec![1.0; 2 * n],
        }
    }

    pub fn axes(&self) -> &[f64] {
        &self.axes
    }

    fn quad(&self, z: &DVector<f64>) -> f64 {
        z.iter()
            .zip(&self.axes)
            .map(|(x, a)| x * x / (a * a))
            .sum()
    }
}

impl HamiltonianFn for Ellipsoid {
    fn dim(&self) -> usize {
        self.axes.len()
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        0.5 * self.quad(z)
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            z.len(),
            z.iter().zip(&self.axes).map(|(x, a)| x / (a * a)),
        )
    }

    fn radial_closed_form(&self, dir: &DVector<f64>, level: f64) -> Option<f64> {
        Some((2.0 * level / self.quad(dir)).sqrt())
    }

    fn support_closed_form(&self, y: &DVector<f64>, level: f64) -> Option<(f64, DVector<f64>)> {
        let s: f64 = y.iter().zip(&self.axes).map(|(v, a)| a * a * v * v).sum();
        let h = (2.0 * level * s).sqrt();
        if h == 0.0 {
            return Some((0.0, DVector::zeros(y.len())));
        }
        let z = DVector::from_iterator(
            y.len(),
            y.iter()
                .zip(&self.axes)
                .map(|(v, a)| 2.0 * level * a * a * v / h),
        );
        Some((h, z))
    }
}

/// `H(z) = Σⱼ (½ ωⱼ ρⱼ² + ε ρⱼ⁴)` with `ρⱼ² = xⱼ² + yⱼ²` the radius in plane `(e_j, e_{n+j})`.
#[derive(Debug, Clone)]
pub struct PlaneQuartic {
    omega: Vec<f64>,
    epsilon: f64,
}

impl PlaneQuartic {
    pub fn new(omega: Vec<f64>, epsilon: f64) -> Result<Self> {
        if omega.is_empty() || omega.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Input("plane frequencies must be positive".into()));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::Input("quartic coefficient must be nonnegative".into()));
        }
        Ok(Self { omega, epsilon })
    }
}

impl HamiltonianFn for PlaneQuartic {
    fn dim(&self) -> usize {
        2 * self.omega.len()
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        let n = self.omega.len();
        (0..n)
            .map(|j| {
                let r2 = z[j] * z[j] + z[n + j] * z[n + j];
                0.5 * self.omega[j] * r2 + self.epsilon * r2 * r2
            })
            .sum()
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.omega.len();
        let mut g = DVector::zeros(2 * n);
        for j in 0..n {
            let r2 = z[j] * z[j] + z[n + j] * z[n + j];
            let s = self.omega[j] + 4.0 * self.epsilon * r2;
            g[j] = s * z[j];
            g[n + j] = s * z[n + j];
        }
        g
    }
}

/// Hides any closed forms of the wrapped Hamiltonian, forcing the generic
/// root-finding and support-maximization paths.
#[derive(Debug, Clone)]
pub struct Opaque<H>(pub H);

impl<H: HamiltonianFn> HamiltonianFn for Opaque<H> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, z: &DVector<f64>) -> f64 {
        self.0.value(z)
    }
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        self.0.gradient(z)
    }
}

/// A raw Hamiltonian, the energy level `β` and the symmetry `Q` it must respect.
#[derive(Debug, Clone)]
pub struct RawHamiltonian {
    func: Arc<dyn HamiltonianFn>,
    beta: f64,
    symmetry: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub samples: usize,
    pub max_symmetry_defect: f64,
    pub min_surface_gradient: f64,
    pub tol_sym: f64,
}

pub const DEFAULT_TOL_SYM: f64 = 1e-8;

impl RawHamiltonian {
    pub fn new(func: Arc<dyn HamiltonianFn>, beta: f64, symmetry: DMatrix<f64>) -> Result<Self> {
        if symmetry.nrows() != func.dim() || symmetry.ncols() != func.dim() {
            return Err(Error::Dimension(format!(
                "Hamiltonian acts on R^{} but Q is {}x{}",
                func.dim(),
                symmetry.nrows(),
                symmetry.ncols()
            )));
        }
        if !beta.is_finite() {
            return Err(Error::Input("energy level must be finite".into()));
        }
        Ok(Self {
            func,
            beta,
            symmetry,
        })
    }

    pub fn func(&self) -> &Arc<dyn HamiltonianFn> {
        &self.func
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn symmetry(&self) -> &DMatrix<f64> {
        &self.symmetry
    }

    pub fn dim(&self) -> usize {
        self.func.dim()
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        self.func.value(z)
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        self.func.gradient(z)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GaugeSettings {
    pub tol_root: f64,
    pub rho_max: f64,
    pub support_tol: f64,
    pub support_max_iter: usize,
    pub tol_kappa: f64,
    pub tol_surface: f64,
}

impl Default for GaugeSettings {
    fn default() -> Self {
        Self {
            tol_root: 1e-12,
            rho_max: 1e8,
            support_tol: 1e-10,
            support_max_iter: 500,
            tol_kappa: 1e-8,
            tol_surface: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinchEstimate {
    pub r_in: f64,
    pub r_out: f64,
    pub pinched: bool,
}

impl PinchEstimate {
    pub fn ratio(&self) -> f64 {
        self.r_out / self.r_in
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsCheck {
    pub passed: bool,
    pub trials: usize,
    /// Smallest of `H*(y)/(|y|ᵖ/p) − rᵖ` and `Rᵖ − H*(y)/(|y|ᵖ/p)` over the trials.
    pub worst_margin: f64,
    pub counterexample: Option<Vec<f64>>,
}

/// The q-homogeneous gauge Hamiltonian built from a raw convex Hamiltonian.
#[derive(Debug, Clone)]
pub struct GaugeProblem {
    raw: RawHamiltonian,
    q: f64,
    p: f64,
    settings: GaugeSettings,
}

fn unit(v: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let norm = v.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Domain("direction must be a nonzero finite vector".into()));
    }
    Ok((norm, v / norm))
}

impl GaugeProblem {
    pub fn new(raw: RawHamiltonian, q: f64) -> Result<Self> {
        Self::with_settings(raw, q, GaugeSettings::default())
    }

    pub fn with_settings(raw: RawHamiltonian, q: f64, settings: GaugeSettings) -> Result<Self> {
        if !(q > 1.0 && q < 2.0) {
            return Err(Error::Domain(format!("q must lie in (1, 2), got {q}")));
        }
        let h0 = raw.value(&DVector::zeros(raw.dim()));
        if !(h0 < raw.beta()) {
            return Err(Error::InvalidGauge(format!(
                "H(0) = {h0} is not below the level {}",
                raw.beta()
            )));
        }
        Ok(Self {
            raw,
            q,
            p: q / (q - 1.0),
            settings,
        })
    }

    pub fn raw(&self) -> &RawHamiltonian {
        &self.raw
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.raw.dim()
    }

    pub fn settings(&self) -> &GaugeSettings {
        &self.settings
    }

    /// Sampled check of `H(Qz) = H(z)` and `∇H ≠ 0` on `S`.
    pub fn check_hypotheses(&self, samples: usize, tol_sym: f64, seed: u64) -> Result<HypothesisReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.dim();
        let mut max_defect = 0.0_f64;
        let mut min_grad = f64::INFINITY;
        for _ in 0..samples {
            let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let (_, dir) = unit(&g)?;
            let r = self.radial(&dir)?;
            // probe inside, on and outside the surface
            for scale in [0.5, 1.0, 1.7] {
                let z = &dir * (r * scale);
                let hz = self.raw.value(&z);
                let hqz = self.raw.value(&(self.raw.symmetry() * &z));
                max_defect = max_defect.max((hqz - hz).abs() / (1.0 + hz.abs()));
            }
            min_grad = min_grad.min(self.raw.gradient(&(&dir * r)).norm());
        }
        let report = HypothesisReport {
            samples,
            max_symmetry_defect: max_defect,
            min_surface_gradient: min_grad,
            tol_sym,
        };
        if max_defect > tol_sym {
            return Err(Error::Input(format!(
                "Hamiltonian is not Q-invariant: sampled defect {max_defect:.3e} > {tol_sym:.1e}"
            )));
        }
        if !(min_grad > 0.0) {
            return Err(Error::InvalidGauge("gradient vanishes on the surface".into()));
        }
        Ok(report)
    }

    /// `r(ζ)`: the radius at which the ray through `ζ` crosses `S`.
    pub fn radial(&self, zeta: &DVector<f64>) -> Result<f64> {
        let (_, dir) = unit(zeta)?;
        if let Some(r) = self.raw.func().radial_closed_form(&dir, self.raw.beta()) {
            return Ok(r);
        }
        self.radial_generic(&dir)
    }

    fn radial_generic(&self, dir: &DVector<f64>) -> Result<f64> {
        let beta = self.raw.beta();
        let f = |rho: f64| self.raw.value(&(dir * rho)) - beta;
        let rho_max = self.settings.rho_max;

        let (mut lo, mut hi) = if f(1.0) >= 0.0 {
            let mut hi = 1.0;
            while hi > 1e-12 && f(0.5 * hi) >= 0.0 {
                hi *= 0.5;
            }
            (0.5 * hi, hi)
        } else {
            let mut lo = 1.0;
            let mut hi = 2.0;
            while f(hi) < 0.0 {
                lo = hi;
                hi *= 2.0;
                if hi > rho_max {
                    return Err(Error::UnboundedSurface { rho_max });
                }
            }
            (lo, hi)
        };

        let mut rho = hi;
        for _ in 0..200 {
            let z = dir * rho;
            let val = self.raw.value(&z) - beta;
            if val == 0.0 {
                break;
            }
            if val > 0.0 {
                hi = rho;
            } else {
                lo = rho;
            }
            let slope = self.raw.gradient(&z).dot(dir);
            let mut next = if slope > 0.0 { rho - val / slope } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - rho).abs();
            rho = next;
            if step <= 1e-15 * rho || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        let z = dir * rho;
        let residual = (self.raw.value(&z) - beta).abs();
        let slope = self.raw.gradient(&z).dot(dir);
        if !(slope > 0.0) {
            return Err(Error::ConvexityViolation(format!(
                "radial derivative {slope:.3e} at the crossing is not positive"
            )));
        }
        if residual > self.settings.tol_root * (1.0 + beta.abs()) {
            // Newton and bisection both stalled; bracket collapsed without a root
            return Err(Error::Numerical(format!(
                "radial root residual {residual:.3e} above tolerance"
            )));
        }
        Ok(rho)
    }

    /// `G(z) = |z| / r(z/|z|)`, with `G(0) = 0`.
    pub fn gauge_function(&self, z: &DVector<f64>) -> Result<f64> {
        let norm = z.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        Ok(norm / self.radial(z)?)
    }

    /// `𝓗(z) = G(z)^q / q`
    pub fn value(&self, z: &DVector<f64>) -> Result<f64> {
        Ok(self.gauge_function(z)?.powf(self.q) / self.q)
    }

    /// `(𝓗(z), ∇𝓗(z))`
    pub fn gauge_eval(&self, z: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        if z.norm() == 0.0 {
            return Err(Error::Domain("gradient of the gauge at the origin".into()));
        }
        let g = self.gauge_function(z)?;
        let z_s = z / g;
        let grad_h = self.raw.gradient(&z_s);
        let s = z_s.dot(&grad_h);
        if !(s > 0.0) {
            return Err(Error::ConvexityViolation(format!(
                "<z, grad H(z)> = {s:.3e} on the surface"
            )));
        }
        let grad_g = grad_h / s;
        let value = g.powf(self.q) / self.q;
        Ok((value, grad_g * g.powf(self.q - 1.0)))
    }

    /// Support function `h_C(y) = max_{z∈S} ⟨z, y⟩` and its maximizer.
    pub fn support(&self, y: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let norm = y.norm();
        if norm == 0.0 {
            return Ok((0.0, DVector::zeros(y.len())));
        }
        if let Some(res) = self.raw.func().support_closed_form(y, self.raw.beta()) {
            return Ok(res);
        }
        let dir = y / norm;
        let (h, z) = self.support_unit(&dir)?;
        Ok((h * norm, z))
    }

    /// Projected gradient ascent of `⟨w, ŷ⟩` over `S`, retracting radially.
    fn support_unit(&self, dir: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let tol = self.settings.support_tol;
        let c1 = 1e-4;
        let ascent_grad = |w: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
            let gh = self.raw.gradient(w);
            let s = w.dot(&gh);
            if !(s > 0.0) {
                return Err(Error::ConvexityViolation(format!(
                    "<z, grad H(z)> = {s:.3e} on the surface"
                )));
            }
            let h = w.dot(dir);
            Ok((h, dir - gh * (h / s)))
        };
        let retract = |u: &DVector<f64>| -> Result<DVector<f64>> {
            let r = self.radial(u)?;
            Ok(u * (r / u.norm()))
        };

        let mut w = dir * self.radial(dir)?;
        let (mut h, mut g) = ascent_grad(&w)?;
        let mut alpha: f64 = 1.0;
        for _ in 0..self.settings.support_max_iter {
            let gn = g.norm();
            if gn <= tol {
                return Ok((h, w));
            }
            if gn <= 1e-2 {
                if let Some((hn, wn)) = self.support_newton(dir, &w) {
                    return Ok((hn, wn));
                }
            }
            let g2 = gn * gn;
            let mut accepted = false;
            let mut trial = alpha.min(1e3);
            while trial > 1e-14 {
                let w_new = retract(&(&w + &g * trial))?;
                let (h_new, g_new) = ascent_grad(&w_new)?;
                let armijo = h_new >= h + c1 * trial * g2;
                // below rounding the value test is uninformative; accept while the
                // directional derivative along the step is still nonnegative
                let near_flat = h_new >= h - 1e-12 * h.abs() && g_new.dot(&g) >= 0.0;
                if armijo || near_flat {
                    w = w_new;
                    h = h_new;
                    g = g_new;
                    alpha = 2.0 * trial;
                    accepted = true;
                    break;
                }
                trial *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if g.norm() <= 1e3 * tol {
            log::debug!("support maximization stopped at gradient {:.3e}", g.norm());
            return Ok((h, w));
        }
        Err(Error::Numerical(format!(
            "support maximization did not converge: gradient {:.3e}, best value {h:.12}",
            g.norm()
        )))
    }

    /// Newton on `dir = μ∇H(z)`, `H(z) = β` from a nearby ascent iterate.
    fn support_newton(&self, dir: &DVector<f64>, w0: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let dim = dir.len();
        let beta = self.raw.beta();
        let tol = self.settings.support_tol;
        let mut w = w0.clone();
        let gh0 = self.raw.gradient(&w);
        let mut mu = w.dot(dir) / w.dot(&gh0);
        let residual = |w: &DVector<f64>, mu: f64| -> (DVector<f64>, f64) {
            let gh = self.raw.gradient(w);
            (dir - &gh * mu, beta - self.raw.value(w))
        };
        let (mut rg, mut rv) = residual(&w, mu);
        for _ in 0..30 {
            let scale = w.norm().max(1.0);
            let eps = 1e-6 * scale;
            let gh = self.raw.gradient(&w);
            let mut a = DMatrix::zeros(dim + 1, dim + 1);
            for i in 0..dim {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += eps;
                wm[i] -= eps;
                let col = (self.raw.gradient(&wp) - self.raw.gradient(&wm)) / (2.0 * eps);
                for r in 0..dim {
                    a[(r, i)] = mu * col[r];
                }
            }
            for i in 0..dim {
                a[(i, dim)] = gh[i];
                a[(dim, i)] = gh[i];
            }
            let mut rhs = DVector::zeros(dim + 1);
            rhs.rows_mut(0, dim).copy_from(&rg);
            rhs[dim] = rv;
            let step = a.lu().solve(&rhs)?;
            w += step.rows(0, dim);
            mu += step[dim];
            let (g_new, v_new) = residual(&w, mu);
            let prev = rg.norm() + rv.abs();
            rg = g_new;
            rv = v_new;
            let now = rg.norm() + rv.abs();
            if !now.is_finite() || now > 2.0 * prev {
                return None;
            }
            if step.rows(0, dim).norm() <= 1e-14 * scale || now <= 1e-3 * tol {
                break;
            }
        }
        // land exactly on the surface and re-measure the stationarity gap
        let r = self.radial(&w).ok()?;
        let w = &w * (r / w.norm());
        let gh = self.raw.gradient(&w);
        let s = w.dot(&gh);
        let h = w.dot(dir);
        if (dir - gh * (h / s)).norm() <= tol {
            Some((h, w))
        } else {
            None
        }
    }

    /// `(H*(y), ∇H*(y))` with `H* = h_C^p / p`.
    pub fn legendre(&self, y: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (h, z) = self.support(y)?;
        if h == 0.0 {
            return Ok((0.0, DVector::zeros(y.len())));
        }
        Ok((h.powf(self.p) / self.p, z * h.powf(self.p - 1.0)))
    }

    /// `(min r, max r)` over sampled directions, refined locally.
    pub fn pinch_estimate(&self, samples: usize, seed: u64) -> Result<PinchEstimate> {
        let dim = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(samples + 2 * dim);
        for i in 0..dim {
            for sgn in [1.0, -1.0] {
                let mut e = DVector::zeros(dim);
                e[i] = sgn;
                dirs.push(e);
            }
        }
        for _ in 0..samples {
            let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            dirs.push(unit(&g)?.1);
        }
        let mut scored = dirs
            .into_iter()
            .map(|d| self.radial(&d).map(|r| (r, d)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut r_in = scored[0].0;
        let mut r_out = scored[scored.len() - 1].0;
        for (r, d) in scored.iter().take(3) {
            r_in = r_in.min(*r).min(self.refine_radius(d, -1.0)?);
        }
        for (r, d) in scored.iter().rev().take(3) {
            r_out = r_out.max(*r).max(self.refine_radius(d, 1.0)?);
        }
        Ok(PinchEstimate {
            r_in,
            r_out,
            pinched: r_out < SQRT_2 * r_in,
        })
    }

    /// Local extremum of `r` on the sphere (`sign = 1` maximizes, `-1` minimizes).
    fn refine_radius(&self, start: &DVector<f64>, sign: f64) -> Result<f64> {
        let grad_r = |zeta: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
            let r = self.radial(zeta)?;
            let gh = self.raw.gradient(&(zeta * r));
            let ambient = &gh * (-r / gh.dot(zeta));
            let tangent = &ambient - zeta * ambient.dot(zeta);
            Ok((r, tangent))
        };
        let mut zeta = start.clone();
        let (mut r, mut g) = grad_r(&zeta)?;
        let mut alpha: f64 = 1.0;
        for _ in 0..500 {
            let gn = g.norm();
            if gn <= 1e-11 {
                break;
            }
            let mut accepted = false;
            let mut trial = alpha;
            while trial > 1e-14 {
                let cand = unit(&(&zeta + &g * (sign * trial)))?.1;
                let (r_new, g_new) = grad_r(&cand)?;
                if sign * (r_new - r) >= 1e-4 * trial * gn * gn
                    || (sign * (r_new - r) >= -1e-15 * r && g_new.norm() < 0.9 * gn)
                {
                    zeta = cand;
                    r = r_new;
                    g = g_new;
                    alpha = 2.0 * trial;
                    accepted = true;
                    break;
                }
                trial *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(r)
    }

    /// Checks `(1/p) rᵖ |y|ᵖ ≤ H*(y) ≤ (1/p) Rᵖ |y|ᵖ` on random `y`.
    pub fn legendre_bounds_check(
        &self,
        pinch: &PinchEstimate,
        trials: usize,
        seed: u64,
    ) -> Result<BoundsCheck> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = pinch.r_in.powf(self.p);
        let hi = pinch.r_out.powf(self.p);
        let mut worst = f64::INFINITY;
        let mut counterexample = None;
        // y = 0 gives 0 ≤ 0 ≤ 0
        let (h0, _) = self.legendre(&DVector::zeros(self.dim()))?;
        if h0 != 0.0 {
            worst = -h0.abs();
            counterexample = Some(vec![0.0; self.dim()]);
        }
        for _ in 0..trials {
            let scale: f64 = rng.random_range(0.1..10.0);
            let y = DVector::from_fn(self.dim(), |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            let (hs, _) = self.legendre(&y)?;
            let normalized = hs / (y.norm().powf(self.p) / self.p);
            let margin = (normalized - lo).min(hi - normalized) / hi;
            if margin < worst {
                worst = margin;
                if margin < -1e-9 {
                    counterexample = Some(y.iter().copied().collect());
                }
            }
        }
        Ok(BoundsCheck {
            passed: worst >= -1e-9,
            trials,
            worst_margin: worst,
            counterexample,
        })
    }

    /// `κ(z)` with `∇H(z) = κ(z) ∇𝓗(z)` on `S`.
    pub fn kappa(&self, z: &DVector<f64>) -> Result<f64> {
        let (value, grad_gauge) = self.gauge_eval(z)?;
        let off_surface = (value * self.q - 1.0).abs();
        if off_surface > self.settings.tol_surface {
            return Err(Error::Domain(format!(
                "point is off the surface: q·𝓗(z) − 1 = {off_surface:.3e}"
            )));
        }
        let grad_raw = self.raw.gradient(z);
        let kappa = grad_raw.dot(&grad_gauge) / grad_gauge.norm_squared();
        let residual = (&grad_raw - &grad_gauge * kappa).norm() / grad_raw.norm();
        if residual > self.settings.tol_kappa {
            return Err(Error::NonProportionalGradient { residual });
        }
        if !(kappa > 0.0) {
            return Err(Error::InvalidGauge(format!("kappa = {kappa:.3e} is not positive")));
        }
        Ok(kappa)
    }

    /// Turn an orbit of the gauge flow on `S` into an orbit of the raw flow.
    ///
    /// `samples` holds `z̃(mT̃/N)`; the result holds `z(mT/N)` with
    /// `z(t) = z̃(s(t))`, `s' = κ(z̃(s))` and `T = ∫₀^T̃ ds/κ(z̃(s))`.
    pub fn reparametrize(
        &self,
        rotation: &Arc<SymplecticRotation>,
        samples: &DMatrix<f64>,
        period_tilde: f64,
    ) -> Result<(DMatrix<f64>, f64)> {
        let n_s = samples.nrows();
        if n_s < 4 {
            return Err(Error::Input("need at least 4 samples to reparametrize".into()));
        }
        let mut inv_kappa = Vec::with_capacity(n_s);
        for m in 0..n_s {
            let z = samples.row(m).transpose();
            let kappa = self.kappa(&z)?;
            if !(kappa > 0.0) {
                return Err(Error::InvalidGauge(format!("kappa = {kappa:.3e} at sample {m}")));
            }
            inv_kappa.push(1.0 / kappa);
        }

        // 1/κ(z̃(s)) is T̃-periodic; integrate its Fourier series exactly.
        let mut buf: Vec<C64> = inv_kappa.iter().map(|&v| C64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n_s).process(&mut buf);
        let coeffs: Vec<C64> = buf.iter().map(|c| c / n_s as f64).collect();
        let mean = coeffs[0].re;
        let period = period_tilde * mean;
        let k_top = (n_s - 1) / 2;
        let nu = |k: usize| TAU * k as f64 / period_tilde;
        let h_and_rate = |s: f64| -> (f64, f64) {
            let mut h = mean * s;
            let mut rate = mean;
            for (k, c) in coeffs.iter().enumerate().take(k_top + 1).skip(1) {
                let w = nu(k);
                let e = C64::from_polar(1.0, w * s);
                h += 2.0 * (c * (e - 1.0) / C64::new(0.0, w)).re;
                rate += 2.0 * (c * e).re;
            }
            (h, rate)
        };

        let k_interp = (n_s - 2) / 2;
        let grid = Arc::new(FrequencyGrid::new(rotation.clone(), period_tilde, k_interp)?);
        let trunc = DMatrix::from_fn(n_s, samples.ncols(), |m, d| samples[(m, d)]);
        let shape = analyze(&trunc, &grid)?;
        let mean_vec = DVector::from_fn(samples.ncols(), |d, _| samples.column(d).mean());
        let (offset, _) = rotation.fixed_projection(&mean_vec);

        let mut out = DMatrix::zeros(n_s, samples.ncols());
        for m in 0..n_s {
            let target = period * m as f64 / n_s as f64;
            let mut s = target / mean;
            for _ in 0..100 {
                let (h, rate) = h_and_rate(s);
                let step = (h - target) / rate;
                s -= step;
                if step.abs() <= 1e-15 * (1.0 + period_tilde) {
                    break;
                }
            }
            let z = shape.eval_at(s) + &offset;
            out.set_row(m, &z.transpose());
        }
        Ok((out, period))
    }
}

/// The gauge Hamiltonian `𝓗` as a plain Hamiltonian oracle.
#[derive(Debug, Clone)]
pub struct GaugeFlow(pub Arc<GaugeProblem>);

impl HamiltonianFn for GaugeFlow {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        self.0.value(z).unwrap_or(f64::NAN)
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        match self.0.gauge_eval(z) {
            Ok((_, g)) => g,
            Err(_) => DVector::from_element(z.len(), f64::NAN),
        }
    }
}

pub const DEFAULT_P_MIN: f64 = 4.0;
pub const EXPONENT_SAFETY: f64 = 1.1;

/// Smallest integer `p ≥ p_min` with `(θ̃₁/θ̃ₙ)^{-1/p} R < √2 r`, inflated by
/// [`EXPONENT_SAFETY`], and the matching `q = p/(p-1)`.
pub fn choose_exponent(tilde: &TildeAngles, r_in: f64, r_out: f64, p_min: f64) -> Result<(f64, f64)> {
    let ratio = r_out / r_in;
    if !(ratio < SQRT_2) {
        return Err(Error::NotPinched { ratio });
    }
    let spread = tilde.last() / tilde.first();
    let p = if spread <= 1.0 + 1e-12 {
        p_min
    } else {
        let needed = spread.ln() / (SQRT_2 / ratio).ln();
        p_min.max((EXPONENT_SAFETY * needed).ceil())
    };
    Ok((p, p / (p - 1.0)))
}
