//! Spectral representation of `Q`-rotating loops.
//!
//! A loop `y` with `y(t+T) = Q y(t)` and zero long-time mean is stored as
//! complex amplitudes `c_{j,k}` on the lattice `ω_{j,k} = (2πk + θⱼ)/T`:
//!
//! ```text
//! y(t) = Σ_{j,k} 2·Re( c_{j,k} e^{iω_{j,k} t} v_j )
//! ```
//!
//! with `v_j` the `+i` eigenframes of `J`. Since `v_jᵀ v_l = 0` for every pair
//! of frames, `⟨y₁(t), y₂(t)⟩ = 2 Re Σ conj(c₁) c₂ e^{i(ω₂-ω₁)t} ⟨v_{j₁}, v_{j₂}⟩`,
//! which gives exact Parseval identities on the truncated lattice.

use std::cell::RefCell;
use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::symplectic::{SymplecticRotation, C64};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn fft_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridEntry {
    pub plane: usize,
    pub k: i64,
    pub omega: f64,
}

/// Admissible frequencies `(2πk + θⱼ)/T`, `|k| ≤ K_max`, with `ω = 0` removed.
#[derive(Debug, Clone)]
pub struct FrequencyGrid {
    rotation: Arc<SymplecticRotation>,
    period: f64,
    k_max: usize,
    entries: Vec<GridEntry>,
    plane_offsets: Vec<usize>,
}

impl PartialEq for FrequencyGrid {
    fn eq(&self, other: &Self) -> bool {
        self.period == other.period
            && self.k_max == other.k_max
            && (Arc::ptr_eq(&self.rotation, &other.rotation)
                || (self.rotation.theta() == other.rotation.theta()
                    && self.rotation.p() == other.rotation.p()))
    }
}

impl FrequencyGrid {
    pub fn new(rotation: Arc<SymplecticRotation>, period: f64, k_max: usize) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::Input(format!("period must be positive, got {period}")));
        }
        if k_max == 0 {
            return Err(Error::Input("K_max must be at least 1".into()));
        }
        let mut entries = Vec::new();
        let mut plane_offsets = Vec::with_capacity(rotation.n() + 1);
        let km = k_max as i64;
        for j in 0..rotation.n() {
            plane_offsets.push(entries.len());
            let th = rotation.theta()[j];
            for k in -km..=km {
                if k == 0 && th == 0.0 {
                    continue;
                }
                entries.push(GridEntry {
                    plane: j,
                    k,
                    omega: (TAU * k as f64 + th) / period,
                });
            }
        }
        plane_offsets.push(entries.len());
        Ok(Self {
            rotation,
            period,
            k_max,
            entries,
            plane_offsets,
        })
    }

    pub fn rotation(&self) -> &Arc<SymplecticRotation> {
        &self.rotation
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn entries(&self) -> &[GridEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n(&self) -> usize {
        self.rotation.n()
    }

    /// Index of `(plane, k)`, if it is on the grid.
    pub fn index_of(&self, plane: usize, k: i64) -> Option<usize> {
        if plane >= self.n() || k.unsigned_abs() as usize > self.k_max {
            return None;
        }
        let fixed = self.rotation.is_fixed_plane(plane);
        if fixed && k == 0 {
            return None;
        }
        let base = self.plane_offsets[plane];
        let shift = k + self.k_max as i64;
        let idx = if fixed && k > 0 { shift - 1 } else { shift };
        Some(base + idx as usize)
    }

    fn plane_range(&self, plane: usize) -> std::ops::Range<usize> {
        self.plane_offsets[plane]..self.plane_offsets[plane + 1]
    }

    /// Smallest sample count accepted by [`RotatingLoop::synthesize`] and [`analyze`].
    pub fn min_samples(&self) -> usize {
        2 * self.k_max + 2
    }

    /// Same lattice with a different period.
    pub fn with_period(&self, period: f64) -> Result<Self> {
        Self::new(self.rotation.clone(), period, self.k_max)
    }
}

pub fn build_grid(
    rotation: &Arc<SymplecticRotation>,
    period: f64,
    k_max: usize,
) -> Result<Arc<FrequencyGrid>> {
    FrequencyGrid::new(rotation.clone(), period, k_max).map(Arc::new)
}

/// A `Q`-rotating, mean-zero loop stored by its spectral amplitudes.
#[derive(Debug, Clone)]
pub struct RotatingLoop {
    grid: Arc<FrequencyGrid>,
    coeffs: Vec<C64>,
}

impl RotatingLoop {
    pub fn zeros(grid: Arc<FrequencyGrid>) -> Self {
        let len = grid.len();
        Self {
            grid,
            coeffs: vec![C64::new(0.0, 0.0); len],
        }
    }

    pub fn from_coeffs(grid: Arc<FrequencyGrid>, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a grid of {} entries",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    /// Loop with a single nonzero amplitude at `(plane, k)`.
    pub fn single_mode(grid: Arc<FrequencyGrid>, plane: usize, k: i64, c: C64) -> Result<Self> {
        let idx = grid
            .index_of(plane, k)
            .ok_or_else(|| Error::Input(format!("mode ({plane}, {k}) is not on the grid")))?;
        let mut y = Self::zeros(grid);
        y.coeffs[idx] = c;
        Ok(y)
    }

    pub fn grid(&self) -> &Arc<FrequencyGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, plane: usize, k: i64) -> Option<C64> {
        self.grid.index_of(plane, k).map(|i| self.coeffs[i])
    }

    fn check_same_grid(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|_, c| c * a)
    }

    /// `self + a·other`
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x + y * a)
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            coeffs,
        })
    }

    fn map(&self, f: impl Fn(&GridEntry, C64) -> C64) -> Self {
        let coeffs = self
            .grid
            .entries()
            .iter()
            .zip(&self.coeffs)
            .map(|(e, &c)| f(e, c))
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Sum of `|c|²` over the grid; the mean square of `y` is twice this.
    pub fn coeff_energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `(1/T)∫₀ᵀ|y|² dt`
    pub fn mean_square(&self) -> f64 {
        2.0 * self.coeff_energy()
    }

    /// L² norm over one period, `(∫₀ᵀ|y|²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        (2.0 * self.grid.period * self.coeff_energy()).sqrt()
    }

    /// Samples `y(mT/N)`, `m = 0..N`, as an `N × 2n` matrix.
    pub fn synthesize(&self, samples: usize) -> Result<DMatrix<f64>> {
        let grid = &self.grid;
        if samples < grid.min_samples() {
            return Err(Error::Aliasing {
                samples,
                k_max: grid.k_max,
                required: grid.min_samples(),
            });
        }
        let rot = grid.rotation();
        let dim = rot.dim();
        let mut out = DMatrix::zeros(samples, dim);
        let ifft = fft_inverse(samples);
        let mut buf = vec![C64::new(0.0, 0.0); samples];
        for j in 0..rot.n() {
            let range = grid.plane_range(j);
            if self.coeffs[range.clone()].iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                continue;
            }
            buf.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
            for idx in range {
                let k = grid.entries[idx].k;
                buf[k.rem_euclid(samples as i64) as usize] += self.coeffs[idx];
            }
            ifft.process(&mut buf);
            let th = rot.theta()[j];
            let v = rot.frame(j);
            for (m, g) in buf.iter().enumerate() {
                let twist = C64::from_polar(1.0, th * m as f64 / samples as f64);
                let a = g * twist;
                for d in 0..dim {
                    out[(m, d)] += 2.0 * (a * v[d]).re;
                }
            }
        }
        Ok(out)
    }

    /// Direct evaluation of `y(t)` at an arbitrary time.
    pub fn eval_at(&self, t: f64) -> DVector<f64> {
        let rot = self.grid.rotation();
        let mut out = DVector::zeros(rot.dim());
        for j in 0..rot.n() {
            let mut a = C64::new(0.0, 0.0);
            for idx in self.grid.plane_range(j) {
                let c = self.coeffs[idx];
                if c.re != 0.0 || c.im != 0.0 {
                    a += c * C64::from_polar(1.0, self.grid.entries[idx].omega * t);
                }
            }
            if a.re == 0.0 && a.im == 0.0 {
                continue;
            }
            let v = rot.frame(j);
            for d in 0..out.len() {
                out[d] += 2.0 * (a * v[d]).re;
            }
        }
        out
    }

    /// `c ↦ c/ω`
    pub fn apply_k(&self) -> Self {
        self.map(|e, c| c / e.omega)
    }

    /// `Q(s)`: time translation `y ↦ y(· + s)`, i.e. `c ↦ e^{iωs} c`.
    pub fn shift(&self, s: f64) -> Self {
        self.map(|e, c| c * C64::from_polar(1.0, e.omega * s))
    }

    /// `∫₀ᵀ⟨y₁, y₂⟩ dt = 2T Re Σ conj(c₁) c₂`.
    pub fn pairing(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        Ok(2.0 * self.grid.period * s)
    }

    /// `∫₀ᵀ⟨y, Ky⟩ dt = 2T Σ |c|²/ω`.
    pub fn quadratic_form(&self) -> f64 {
        let s: f64 = self
            .grid
            .entries
            .iter()
            .zip(&self.coeffs)
            .map(|(e, c)| c.norm_sqr() / e.omega)
            .sum();
        2.0 * self.grid.period * s
    }

    /// Zero every amplitude whose mask entry is `false`.
    pub fn masked(&self, mask: &[bool]) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .zip(mask)
            .map(|(&c, &keep)| if keep { c } else { C64::new(0.0, 0.0) })
            .collect();
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// `‖shift(self, s) − other‖_{L²}` evaluated coefficient-wise.
    pub fn shifted_distance(&self, other: &Self, s: f64) -> Result<f64> {
        self.check_same_grid(other)?;
        let sum: f64 = self
            .grid
            .entries
            .iter()
            .zip(self.coeffs.iter().zip(&other.coeffs))
            .map(|(e, (a, b))| (a * C64::from_polar(1.0, e.omega * s) - b).norm_sqr())
            .sum();
        Ok((2.0 * self.grid.period * sum).sqrt())
    }
}

/// Project samples of a `Q`-rotating signal onto the grid (inverse of
/// [`RotatingLoop::synthesize`] on the truncated space).
pub fn analyze(samples: &DMatrix<f64>, grid: &Arc<FrequencyGrid>) -> Result<RotatingLoop> {
    let rot = grid.rotation();
    let n_samples = samples.nrows();
    if samples.ncols() != rot.dim() {
        return Err(Error::Dimension(format!(
            "samples have {} columns, expected {}",
            samples.ncols(),
            rot.dim()
        )));
    }
    if n_samples < grid.min_samples() {
        return Err(Error::Aliasing {
            samples: n_samples,
            k_max: grid.k_max,
            required: grid.min_samples(),
        });
    }
    let fft = fft_forward(n_samples);
    let mut buf = vec![C64::new(0.0, 0.0); n_samples];
    let mut coeffs = vec![C64::new(0.0, 0.0); grid.len()];
    let inv_n = 1.0 / n_samples as f64;
    for j in 0..rot.n() {
        let th = rot.theta()[j];
        let v = rot.frame(j);
        for (m, b) in buf.iter_mut().enumerate() {
            let mut proj = C64::new(0.0, 0.0);
            for d in 0..rot.dim() {
                proj += v[d].conj() * samples[(m, d)];
            }
            *b = proj * C64::from_polar(1.0, -th * m as f64 / n_samples as f64);
        }
        fft.process(&mut buf);
        for idx in grid.plane_range(j) {
            let k = grid.entries[idx].k;
            coeffs[idx] = buf[k.rem_euclid(n_samples as i64) as usize] * inv_n;
        }
    }
    RotatingLoop::from_coeffs(grid.clone(), coeffs)
}

/// Default horizon for the shift scan in [`orbit_distance`]: `T·L`, where
/// `L` is the least common multiple of the denominators of `θⱼ/2π` when all of
/// them are rationals with small denominators, capped at 64.
pub fn default_shift_span(grid: &FrequencyGrid) -> f64 {
    let mut l: u64 = 1;
    for &th in grid.rotation().theta() {
        match small_denominator(th / TAU, 64) {
            Some(d) => {
                l = lcm(l, d);
                if l > 64 {
                    l = 64;
                    break;
                }
            }
            None => {
                l = 64;
                break;
            }
        }
    }
    grid.period() * l as f64
}

/// Scan density that resolves the fastest active frequency of the pair.
pub fn default_scan_points(y1: &RotatingLoop, y2: &RotatingLoop, span: f64) -> usize {
    let omega_max = y1
        .grid
        .entries
        .iter()
        .zip(y1.coeffs.iter().zip(&y2.coeffs))
        .filter(|(_, (a, b))| a.norm() > 0.0 && b.norm() > 0.0)
        .map(|(e, _)| e.omega.abs())
        .fold(0.0_f64, f64::max);
    let needed = (span * omega_max / TAU * 8.0).ceil() as usize;
    needed.clamp(512, 1 << 20)
}

fn small_denominator(x: f64, max_den: u64) -> Option<u64> {
    (1..=max_den).find(|&d| {
        let v = x * d as f64;
        (v - v.round()).abs() < 1e-9
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Upper bound on `inf_s ‖Q(s)y₁ − y₂‖_{L²}`: coarse scan of `grid_pts`
/// shifts in `[0, span]` followed by golden-section refinement around the
/// best candidates.
pub fn orbit_distance(
    y1: &RotatingLoop,
    y2: &RotatingLoop,
    span: f64,
    grid_pts: usize,
) -> Result<f64> {
    y1.check_same_grid(y2)?;
    let terms: Vec<(f64, C64)> = y1
        .grid
        .entries
        .iter()
        .zip(y1.coeffs.iter().zip(&y2.coeffs))
        .filter_map(|(e, (a, b))| {
            let w = a * b.conj();
            (w.norm() > 0.0).then_some((e.omega, w))
        })
        .collect();
    // ‖Q(s)y₁ − y₂‖² = ‖y₁‖² + ‖y₂‖² − 4T·f(s)
    let corr = |s: f64| -> f64 {
        terms
            .iter()
            .map(|(w, a)| (a * C64::from_polar(1.0, w * s)).re)
            .sum()
    };
    if terms.is_empty() {
        return y1.shifted_distance(y2, 0.0);
    }
    let pts = grid_pts.max(2);
    let h = span / (pts - 1) as f64;
    let mut scored: Vec<(f64, f64)> = (0..pts)
        .map(|i| {
            let s = i as f64 * h;
            (corr(s), s)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = f64::INFINITY;
    for &(_, s0) in scored.iter().take(8) {
        let s = golden_max(&corr, s0 - h, s0 + h, 1e-13 * (1.0 + span));
        best = best.min(y1.shifted_distance(y2, s)?);
    }
    Ok(best)
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::plane_rotation;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn rot(angles: &[f64]) -> Arc<SymplecticRotation> {
        Arc::new(SymplecticRotation::new(&plane_rotation(angles)).unwrap())
    }

    #[test]
    fn grid_identity_one_plane() {
        let g = FrequencyGrid::new(rot(&[0.0]), TAU, 1).unwrap();
        let om: Vec<f64> = g.entries().iter().map(|e| e.omega).collect();
        assert_eq!(om, vec![-1.0, 1.0]);
    }

    #[test]
    fn grid_quarter_turn() {
        let g = FrequencyGrid::new(rot(&[PI / 2.0]), TAU, 1).unwrap();
        let om: Vec<f64> = g.entries().iter().map(|e| e.omega).collect();
        for (a, b) in om.iter().zip([-0.75, 0.25, 1.25]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_counts_and_index() {
        let g = FrequencyGrid::new(rot(&[0.0, 1.0, 0.0]), 3.0, 4).unwrap();
        assert_eq!(g.len(), 3 * 9 - 2);
        for (i, e) in g.entries().iter().enumerate() {
            assert_eq!(g.index_of(e.plane, e.k), Some(i));
        }
        assert_eq!(g.index_of(0, 0), None);
        assert_eq!(g.index_of(1, 0), None);
        assert!(g.index_of(2, 0).is_some());
        assert_eq!(g.index_of(1, 5), None);
    }

    #[test]
    fn zero_loop_synthesizes_to_zero() {
        let g = build_grid(&rot(&[0.3, 0.0]), 2.0, 3).unwrap();
        let y = RotatingLoop::zeros(g);
        assert_eq!(y.synthesize(16).unwrap().norm(), 0.0);
    }

    #[test]
    fn single_mode_has_constant_modulus() {
        let g = build_grid(&rot(&[0.7, 0.0]), 2.0, 3).unwrap();
        let y = RotatingLoop::single_mode(g.clone(), 1, -2, C64::new(1.0, 0.0)).unwrap();
        let s = y.synthesize(16).unwrap();
        for m in 0..16 {
            let direct = y.eval_at(m as f64 * 2.0 / 16.0);
            assert!((s.row(m).transpose() - &direct).norm() < 1e-13);
            assert!((s.row(m).norm() - 2f64.sqrt()).abs() < 1e-13);
        }
    }

    #[test]
    fn aliasing_rejected() {
        let g = build_grid(&rot(&[0.7]), 2.0, 3).unwrap();
        let y = RotatingLoop::zeros(g.clone());
        assert!(matches!(y.synthesize(7), Err(Error::Aliasing { .. })));
        assert!(matches!(
            analyze(&DMatrix::zeros(7, 2), &g),
            Err(Error::Aliasing { .. })
        ));
        assert!(matches!(
            analyze(&DMatrix::zeros(8, 4), &g),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rotating_orbit_of_a_plane_vector() {
        let r = rot(&[1.0, 2.5]);
        let period = 3.0;
        let g = build_grid(&r, period, 2).unwrap();
        let xi = r.plane_vector(1);
        let n_s = 32;
        let samples = DMatrix::from_fn(n_s, 4, |m, d| {
            (r.rotation_path(m as f64 * period / n_s as f64, period) * &xi)[d]
        });
        let y = analyze(&samples, &g).unwrap();
        let c = y.coeff(1, 0).unwrap();
        assert!((c.norm() - FRAC_1_SQRT_2).abs() < 1e-13);
        let others: f64 = y.coeffs().iter().map(|c| c.norm_sqr()).sum::<f64>() - c.norm_sqr();
        assert!(others < 1e-26);
    }

    #[test]
    fn k_examples() {
        let g = build_grid(&rot(&[0.0]), PI, 2).unwrap(); // ω = 2k
        let y = RotatingLoop::single_mode(g, 0, 1, C64::new(1.0, 0.0)).unwrap();
        assert!((y.apply_k().coeff(0, 1).unwrap() - C64::new(0.5, 0.0)).norm() < 1e-15);
        let a = 2.5;
        let lhs = y.scale(a).apply_k();
        let rhs = y.apply_k().scale(a);
        assert_eq!(lhs.coeffs(), rhs.coeffs());
    }

    #[test]
    fn quadratic_form_of_seed_mode_is_b() {
        let r = rot(&[0.0, 1.0]);
        let period = TAU;
        let g = build_grid(&r, period, 2).unwrap();
        // plane 0 is fixed: θ̃ = 2π, mode k = 1
        let y = RotatingLoop::single_mode(g.clone(), 0, 1, C64::new(FRAC_1_SQRT_2, 0.0)).unwrap();
        assert!((y.mean_square() - 1.0).abs() < 1e-15);
        assert!((y.quadratic_form() - period * period / TAU).abs() < 1e-12);
        let y = RotatingLoop::single_mode(g, 1, 0, C64::new(0.0, FRAC_1_SQRT_2)).unwrap();
        assert!((y.quadratic_form() - period * period / 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_identity_and_magnitudes() {
        let g = build_grid(&rot(&[1.0]), 2.0, 2).unwrap();
        let coeffs: Vec<C64> = (0..g.len()).map(|i| C64::new(i as f64, 1.0 - i as f64)).collect();
        let y = RotatingLoop::from_coeffs(g, coeffs).unwrap();
        assert_eq!(y.shift(0.0).coeffs(), y.coeffs());
        let ys = y.shift(0.37);
        for (a, b) in ys.coeffs().iter().zip(y.coeffs()) {
            assert!((a.norm() - b.norm()).abs() < 1e-14);
        }
    }

    #[test]
    fn distance_to_scaled_copy() {
        let g = build_grid(&rot(&[1.0]), 2.0, 2).unwrap();
        let y = RotatingLoop::single_mode(g, 0, 1, C64::new(0.3, 0.4)).unwrap();
        let d = orbit_distance(&y, &y.scale(2.0), 10.0, 512).unwrap();
        assert!(d >= y.l2_norm() - 1e-12);
    }

    #[test]
    fn default_span_rational_and_irrational() {
        let g = FrequencyGrid::new(rot(&[TAU / 3.0, PI]), 2.0, 2).unwrap();
        assert!((default_shift_span(&g) - 12.0).abs() < 1e-12);
        let g = FrequencyGrid::new(rot(&[1.0]), 2.0, 2).unwrap();
        assert!((default_shift_span(&g) - 128.0).abs() < 1e-12);
    }
}
