//! Matrices in `Sp(2n) ∩ O(2n)` and their rotation normal form.
//!
//! Coordinates are `z = (x, y)` with `x, y ∈ Rⁿ` and
//! `J = [[0, I], [-I, 0]]`. A matrix that is both orthogonal and symplectic
//! commutes with `J`, hence has the block form `Q = [[A, B], [-B, A]]`, and
//! under the identification `z ↦ x - i y ∈ Cⁿ` it acts as the unitary matrix
//! `U = A + iB` while `J` acts as multiplication by `i`. The normal form is
//! read off from an eigendecomposition of `U`.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use nalgebra::{Complex, DMatrix, DVector, Schur};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Default tolerance for membership and normal-form reconstruction checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Angles closer than this to `0` or `2π` are snapped to exactly `0`.
const ANGLE_SNAP: f64 = 1e-12;

/// Eigenvalues of `U` closer than this are treated as one eigenspace.
const CLUSTER_TOL: f64 = 1e-8;

/// The canonical symplectic matrix `J` on `R^{2n}`.
pub fn j_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// Apply `J` to a vector without forming the matrix.
pub fn apply_j(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() / 2;
    let mut out = DVector::zeros(v.len());
    for i in 0..n {
        out[i] = v[n + i];
        out[n + i] = -v[i];
    }
    out
}

/// Embed a unitary `U = A + iB` as the real matrix `[[A, B], [-B, A]]`.
pub fn embed_unitary(u: &DMatrix<C64>) -> DMatrix<f64> {
    let n = u.nrows();
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            let a = u[(r, c)].re;
            let b = u[(r, c)].im;
            q[(r, c)] = a;
            q[(r, n + c)] = b;
            q[(n + r, c)] = -b;
            q[(n + r, n + c)] = a;
        }
    }
    q
}

/// Haar-ish random unitary: QR of a complex Gaussian matrix with the phases
/// of `R`'s diagonal moved into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<C64> {
    let g = DMatrix::<C64>::from_fn(n, n, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for c in 0..n {
        let d = r[(c, c)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for row in 0..n {
            q[(row, c)] *= phase;
        }
    }
    q
}

/// Random element of `Sp(2n) ∩ O(2n)`, generated by embedding [`random_unitary`].
pub fn random_symplectic_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    embed_unitary(&random_unitary(n, rng))
}

/// `exp(Σ θⱼ Jⱼ)` where `Jⱼ` is `J` restricted to the coordinate plane `(e_j, e_{n+j})`.
pub fn plane_rotation(angles: &[f64]) -> DMatrix<f64> {
    let n = angles.len();
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    for (j, &th) in angles.iter().enumerate() {
        let (s, c) = th.sin_cos();
        q[(j, j)] = c;
        q[(j, n + j)] = s;
        q[(n + j, j)] = -s;
        q[(n + j, n + j)] = c;
    }
    q
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub orth_defect: f64,
    pub symp_defect: f64,
    pub tol: f64,
    pub passed: bool,
}

fn check_square_even(q: &DMatrix<f64>) -> Result<usize> {
    if q.nrows() != q.ncols() {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, expected square",
            q.nrows(),
            q.ncols()
        )));
    }
    if q.nrows() == 0 || q.nrows() % 2 != 0 {
        return Err(Error::Dimension(format!(
            "matrix dimension {} is not a positive even number",
            q.nrows()
        )));
    }
    Ok(q.nrows() / 2)
}

/// Orthogonality and symplectic defects (Frobenius norms) of `q`, without judging them.
pub fn membership_defects(q: &DMatrix<f64>) -> Result<ValidationReport> {
    let n = check_square_even(q)?;
    let id = DMatrix::<f64>::identity(2 * n, 2 * n);
    let j = j_matrix(n);
    let orth_defect = (q.transpose() * q - &id).norm();
    let symp_defect = (q.transpose() * &j * q - &j).norm();
    Ok(ValidationReport {
        orth_defect,
        symp_defect,
        tol: f64::NAN,
        passed: false,
    })
}

/// Check `QᵀQ = I` and `QᵀJQ = J` within `tol`.
pub fn validate_symplectic_orthogonal(q: &DMatrix<f64>, tol: f64) -> Result<ValidationReport> {
    let mut report = membership_defects(q)?;
    report.tol = tol;
    report.passed = report.orth_defect <= tol && report.symp_defect <= tol;
    if report.passed {
        Ok(report)
    } else {
        Err(Error::NotSymplecticOrthogonal {
            orth_defect: report.orth_defect,
            symp_defect: report.symp_defect,
            tol,
        })
    }
}

/// A validated `Q ∈ Sp(2n) ∩ O(2n)` together with its rotation normal form.
///
/// `P` is orthogonal with `PᵀJP = diag(J₂, …, J₂)` and
/// `PᵀQP = diag(M(θ₁), …, M(θₙ))`, `M(θ) = [[cos θ, sin θ], [-sin θ, cos θ]]`.
/// Columns `2j, 2j+1` of `P` are `a_j` and `-J a_j`; the complex frame is
/// `v_j = (a_j - i J a_j)/√2`, so that `J v_j = i v_j` and `Q v_j = e^{iθ_j} v_j`.
#[derive(Debug, Clone)]
pub struct SymplecticRotation {
    n: usize,
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    theta: Vec<f64>,
    frames: Vec<DVector<C64>>,
    fixed_basis: DMatrix<f64>,
    defects: NormalFormDefects,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormalFormDefects {
    pub orth_defect: f64,
    pub symp_defect: f64,
    pub commutation_defect: f64,
    pub reconstruction_defect: f64,
    pub block_j_defect: f64,
}

fn rotation_block(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[c, s], [-s, c]]
}

fn block_diag_rotations(angles: impl Iterator<Item = f64>, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for (j, a) in angles.enumerate() {
        let b = rotation_block(a);
        for r in 0..2 {
            for c in 0..2 {
                m[(2 * j + r, 2 * j + c)] = b[r][c];
            }
        }
    }
    m
}

fn block_diag_j2(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        m[(2 * j, 2 * j + 1)] = 1.0;
        m[(2 * j + 1, 2 * j)] = -1.0;
    }
    m
}

fn wrap_angle(arg: f64) -> f64 {
    let mut a = arg.rem_euclid(TAU);
    if a < ANGLE_SNAP || TAU - a < ANGLE_SNAP {
        a = 0.0;
    }
    a
}

/// Canonical orthonormal basis of the column span of `v` (an `n × m` isometry):
/// Gram–Schmidt over the projections of `e_1, e_2, …` onto the span. Each
/// basis vector has its pivot component real and positive.
fn canonical_basis(v: &DMatrix<C64>) -> Vec<DVector<C64>> {
    let n = v.nrows();
    let m = v.ncols();
    let proj = v * v.adjoint();
    let mut basis: Vec<DVector<C64>> = Vec::with_capacity(m);
    for k in 0..n {
        if basis.len() == m {
            break;
        }
        let mut w: DVector<C64> = proj.column(k).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let coef = b.dotc(&w);
                w -= b * coef;
            }
        }
        let norm = w.norm();
        if norm > 1e-6 {
            w /= C64::new(norm, 0.0);
            for x in w.iter_mut() {
                if x.re.abs() < 1e-15 {
                    x.re = 0.0;
                }
                if x.im.abs() < 1e-15 {
                    x.im = 0.0;
                }
            }
            let norm = w.norm();
            w /= C64::new(norm, 0.0);
            basis.push(w);
        }
    }
    basis
}

impl SymplecticRotation {
    /// Normal form with the default tolerance.
    pub fn new(q: &DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(q, DEFAULT_TOL)
    }

    pub fn with_tolerance(q: &DMatrix<f64>, tol: f64) -> Result<Self> {
        normal_form(q, tol)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Angles `θⱼ ∈ [0, 2π)`, sorted ascending.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn frames(&self) -> &[DVector<C64>] {
        &self.frames
    }

    pub fn frame(&self, plane: usize) -> &DVector<C64> {
        &self.frames[plane]
    }

    /// Real unit vector `a_j` (first column of plane `j` in `P`).
    pub fn plane_vector(&self, plane: usize) -> DVector<f64> {
        self.p.column(2 * plane).into_owned()
    }

    /// Orthonormal basis of `ker(I - Q)` as columns (`2n × 2f`).
    pub fn fixed_basis(&self) -> &DMatrix<f64> {
        &self.fixed_basis
    }

    pub fn is_fixed_plane(&self, plane: usize) -> bool {
        self.theta[plane] == 0.0
    }

    pub fn defects(&self) -> NormalFormDefects {
        self.defects
    }

    /// `θ̃` of a single plane: `θⱼ`, or `2π` when `θⱼ = 0`.
    pub fn tilde_of_plane(&self, plane: usize) -> f64 {
        let t = self.theta[plane];
        if t == 0.0 {
            TAU
        } else {
            t
        }
    }

    /// Complex coordinate `⟨v_j, z⟩ = v_jᴴ z`.
    pub fn frame_coordinate(&self, plane: usize, z: &DVector<f64>) -> C64 {
        let v = &self.frames[plane];
        v.iter()
            .zip(z.iter())
            .fold(C64::new(0.0, 0.0), |acc, (vi, zi)| acc + vi.conj() * *zi)
    }

    /// `Q(t) = P·diag(M₁(θ̃₁t/T), …, Mₙ(θ̃ₙt/T))·Pᵀ`.
    pub fn rotation_path(&self, t: f64, period: f64) -> DMatrix<f64> {
        let angles = (0..self.n).map(|j| self.tilde_of_plane(j) * t / period);
        let d = block_diag_rotations(angles, self.n);
        &self.p * d * self.p.transpose()
    }

    /// Split `v` into `(𝒫v, L_𝒫⁻¹(v − 𝒫v))` where `𝒫` projects onto `ker(I − Q)`
    /// and `L_𝒫 = (I − Q)` restricted to `Im(I − Q)`.
    pub fn fixed_projection(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let f = &self.fixed_basis;
        let pv = if f.ncols() > 0 {
            f * (f.transpose() * v)
        } else {
            DVector::zeros(v.len())
        };
        let rest = v - &pv;
        let coords = self.p.transpose() * rest;
        let mut w_coords = DVector::zeros(2 * self.n);
        for j in 0..self.n {
            if self.is_fixed_plane(j) {
                continue;
            }
            // (I - M(θ)) = [[1-c, -s], [s, 1-c]], det = 2 - 2c
            let (s, c) = self.theta[j].sin_cos();
            let (x0, x1) = (coords[2 * j], coords[2 * j + 1]);
            let det = (1.0 - c) * (1.0 - c) + s * s;
            w_coords[2 * j] = ((1.0 - c) * x0 + s * x1) / det;
            w_coords[2 * j + 1] = (-s * x0 + (1.0 - c) * x1) / det;
        }
        (pv, &self.p * w_coords)
    }
}

/// Compute the rotation normal form of a validated `Q`.
pub fn normal_form(q: &DMatrix<f64>, tol: f64) -> Result<SymplecticRotation> {
    let report = validate_symplectic_orthogonal(q, tol)?;
    let n = q.nrows() / 2;
    let j = j_matrix(n);
    let commutation_defect = (q * &j - &j * q).norm();
    if commutation_defect > tol {
        return Err(Error::Inconsistent {
            defect: commutation_defect,
            tol,
        });
    }

    let u = DMatrix::<C64>::from_fn(n, n, |r, c| {
        let a = 0.5 * (q[(r, c)] + q[(n + r, n + c)]);
        let b = 0.5 * (q[(r, n + c)] - q[(n + r, c)]);
        C64::new(a, b)
    });

    // U is normal, so its Schur form is diagonal up to rounding and the Schur
    // vectors are eigenvectors.
    let schur = Schur::try_new(u.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition of U did not converge".into()))?;
    let (vecs, tri) = schur.unpack();
    let mut pairs: Vec<(f64, DVector<C64>)> = (0..n)
        .map(|k| (wrap_angle(tri[(k, k)].arg()), vecs.column(k).into_owned()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Group numerically equal eigenvalues and canonicalize each eigenspace.
    let mut ordered: Vec<(f64, DVector<C64>)> = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let lam0 = C64::from_polar(1.0, pairs[start].0);
        let mut end = start + 1;
        while end < n && (C64::from_polar(1.0, pairs[end].0) - lam0).norm() <= CLUSTER_TOL {
            end += 1;
        }
        // Wrap-around cluster near 0 / 2π is handled by wrap_angle snapping.
        let block = DMatrix::<C64>::from_columns(
            &pairs[start..end].iter().map(|p| p.1.clone()).collect::<Vec<_>>(),
        );
        let basis = canonical_basis(&block);
        if basis.len() != end - start {
            return Err(Error::Numerical(
                "failed to build an orthonormal eigenbasis".into(),
            ));
        }
        for b in basis {
            let rayleigh = b.dotc(&(&u * &b));
            ordered.push((wrap_angle(rayleigh.arg()), b));
        }
        start = end;
    }
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut p = DMatrix::zeros(2 * n, 2 * n);
    let mut frames = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    let mut fixed_cols: Vec<DVector<f64>> = Vec::new();
    for (k, (angle, uvec)) in ordered.iter().enumerate() {
        let mut a = DVector::zeros(2 * n);
        for i in 0..n {
            a[i] = uvec[i].re;
            a[n + i] = -uvec[i].im;
        }
        let ja = apply_j(&a);
        p.set_column(2 * k, &a);
        p.set_column(2 * k + 1, &(-&ja));
        let frame = DVector::<C64>::from_fn(2 * n, |i, _| {
            C64::new(a[i] * FRAC_1_SQRT_2, -ja[i] * FRAC_1_SQRT_2)
        });
        frames.push(frame);
        theta.push(*angle);
        if *angle == 0.0 {
            fixed_cols.push(a.clone());
            fixed_cols.push(-ja);
        }
    }
    let fixed_basis = if fixed_cols.is_empty() {
        DMatrix::zeros(2 * n, 0)
    } else {
        DMatrix::from_columns(&fixed_cols)
    };

    let recon = &p * block_diag_rotations(theta.iter().copied(), n) * p.transpose();
    let reconstruction_defect = (recon - q).norm();
    let block_j_defect = (p.transpose() * &j * &p - block_diag_j2(n)).norm();
    if reconstruction_defect > tol || block_j_defect > tol {
        return Err(Error::Numerical(format!(
            "normal form check failed: reconstruction {reconstruction_defect:.3e}, \
             J-block {block_j_defect:.3e}"
        )));
    }

    Ok(SymplecticRotation {
        n,
        q: q.clone(),
        p,
        theta,
        frames,
        fixed_basis,
        defects: NormalFormDefects {
            orth_defect: report.orth_defect,
            symp_defect: report.symp_defect,
            commutation_defect,
            reconstruction_defect,
            block_j_defect,
        },
    })
}

/// The `θ̃` angles sorted ascending, remembering which plane each came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TildeAngles {
    pub values: Vec<f64>,
    pub planes: Vec<usize>,
}

impl TildeAngles {
    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("n >= 1")
    }
}

pub fn tilde_angles(sr: &SymplecticRotation) -> TildeAngles {
    let mut idx: Vec<(f64, usize)> = (0..sr.n()).map(|j| (sr.tilde_of_plane(j), j)).collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    TildeAngles {
        values: idx.iter().map(|x| x.0).collect(),
        planes: idx.iter().map(|x| x.1).collect(),
    }
}

/// Parse a named preset: `identity`, `neg-identity`, `rotation:[θ₁,…,θₙ]`.
///
/// `identity` and `neg-identity` need the plane count `n`. Angles may use
/// `pi` (e.g. `2*pi/3`, `pi/2`).
pub fn parse_preset(preset: &str, n: Option<usize>) -> Result<DMatrix<f64>> {
    let s = preset.trim();
    let need_n = || {
        n.filter(|&n| n > 0)
            .ok_or_else(|| Error::Input(format!("preset '{s}' needs the plane count n")))
    };
    match s {
        "identity" => {
            let n = need_n()?;
            Ok(DMatrix::identity(2 * n, 2 * n))
        }
        "neg-identity" => {
            let n = need_n()?;
            Ok(-DMatrix::<f64>::identity(2 * n, 2 * n))
        }
        _ => {
            let body = s
                .strip_prefix("rotation:")
                .ok_or_else(|| Error::Input(format!("unknown matrix preset '{s}'")))?;
            let body = body.trim();
            let inner = body
                .strip_prefix('[')
                .and_then(|b| b.strip_suffix(']'))
                .ok_or_else(|| Error::Input(format!("malformed rotation list '{body}'")))?;
            let angles = inner
                .split(',')
                .map(parse_angle)
                .collect::<Result<Vec<f64>>>()?;
            if angles.is_empty() {
                return Err(Error::Input("rotation preset needs at least one angle".into()));
            }
            if let Some(n) = n {
                if n != angles.len() && angles.len() == 1 {
                    return Ok(plane_rotation(&vec![angles[0]; n]));
                }
                if n != angles.len() {
                    return Err(Error::Input(format!(
                        "rotation preset has {} angles but n = {n}",
                        angles.len()
                    )));
                }
            }
            Ok(plane_rotation(&angles))
        }
    }
}

/// Parse a number that may be written in terms of `pi`: `1.5`, `pi`, `2*pi/3`, `pi/2`, `-pi/4`.
pub fn parse_angle(text: &str) -> Result<f64> {
    let t = text.trim().replace(' ', "");
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let bad = || Error::Input(format!("cannot parse angle '{text}'"));
    let (num, den) = match t.split_once('/') {
        Some((a, b)) => (a.to_string(), b.parse::<f64>().map_err(|_| bad())?),
        None => (t.clone(), 1.0),
    };
    let (sign, num) = match num.strip_prefix('-') {
        Some(rest) => (-1.0, rest.to_string()),
        None => (1.0, num),
    };
    let coef = if num == "pi" || num == "π" {
        1.0
    } else if let Some(c) = num.strip_suffix("*pi").or_else(|| num.strip_suffix("*π")) {
        c.parse::<f64>().map_err(|_| bad())?
    } else if let Some(c) = num.strip_suffix("pi") {
        c.parse::<f64>().map_err(|_| bad())?
    } else {
        return Err(bad());
    };
    Ok(sign * coef * PI / den)
}
