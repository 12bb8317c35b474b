//! Dormand–Prince 5(4) integration of `z' = J∇H(z)`.
//!
//! The fixed-step variant is a smooth map of `(z₀, T)`, which keeps finite
//! difference Jacobians of the flow clean; the adaptive variant is the
//! independent check.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianFn;
use crate::symplectic::apply_j;

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

pub fn vector_field(h: &dyn HamiltonianFn, z: &DVector<f64>) -> DVector<f64> {
    apply_j(&h.gradient(z))
}

/// One step; returns `(z_new, f(z_new), error estimate)`.
fn dp_step(
    h: &dyn HamiltonianFn,
    z: &DVector<f64>,
    f0: &DVector<f64>,
    dt: f64,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(f0.clone());
    for s in 1..7 {
        let mut zs = z.clone();
        for (r, kr) in k.iter().enumerate() {
            let a = A[s][r];
            if a != 0.0 {
                zs.axpy(dt * a, kr, 1.0);
            }
        }
        if s == 6 {
            let f_new = vector_field(h, &zs);
            let mut err = DVector::zeros(z.len());
            for (r, kr) in k.iter().enumerate() {
                err.axpy(dt * (A[6][r] - B4[r]), kr, 1.0);
            }
            err.axpy(-dt * B4[6], &f_new, 1.0);
            return (zs, f_new, err);
        }
        k.push(vector_field(h, &zs));
    }
    unreachable!()
}

fn check_finite(z: &DVector<f64>, t: f64) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite state at t = {t:.6e}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub states: Vec<DVector<f64>>,
    /// `max |H(z(t)) − H(z₀)| / |H(z₀)|` over the computed steps.
    pub energy_drift: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }
}

fn relative_drift(h0: f64, h: f64) -> f64 {
    (h - h0).abs() / h0.abs().max(f64::MIN_POSITIVE)
}

/// Fixed-step integration over `[0, t_end]` (`t_end` may be negative),
/// recording every `record_every`-th step.
pub fn integrate_fixed(
    h: &dyn HamiltonianFn,
    z0: &DVector<f64>,
    t_end: f64,
    steps: usize,
    record_every: usize,
) -> Result<Trajectory> {
    if steps == 0 || record_every == 0 {
        return Err(Error::Input("step counts must be positive".into()));
    }
    if z0.len() != h.dim() {
        return Err(Error::Dimension(format!(
            "initial state of length {} for dimension {}",
            z0.len(),
            h.dim()
        )));
    }
    let dt = t_end / steps as f64;
    let h0 = h.value(z0);
    let mut z = z0.clone();
    let mut f = vector_field(h, &z);
    let mut times = vec![0.0];
    let mut states = vec![z.clone()];
    let mut drift: f64 = 0.0;
    for i in 1..=steps {
        let (zn, fnew, _) = dp_step(h, &z, &f, dt);
        z = zn;
        f = fnew;
        let t = dt * i as f64;
        check_finite(&z, t)?;
        drift = drift.max(relative_drift(h0, h.value(&z)));
        if i % record_every == 0 || i == steps {
            times.push(t);
            states.push(z.clone());
        }
    }
    Ok(Trajectory {
        times,
        states,
        energy_drift: drift,
        steps,
    })
}

/// End point of the fixed-step flow.
pub fn flow(h: &dyn HamiltonianFn, z0: &DVector<f64>, t_end: f64, steps: usize) -> Result<DVector<f64>> {
    if steps == 0 {
        return Err(Error::Input("step count must be positive".into()));
    }
    let dt = t_end / steps as f64;
    let mut z = z0.clone();
    let mut f = vector_field(h, &z);
    for _ in 0..steps {
        let (zn, fnew, _) = dp_step(h, &z, &f, dt);
        z = zn;
        f = fnew;
    }
    check_finite(&z, t_end)?;
    Ok(z)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptiveOptions {
    pub atol: f64,
    pub rtol: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            atol: 1e-11,
            rtol: 1e-11,
            min_step: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

/// Adaptive integration reporting the state at each of `outputs` (monotone in
/// the direction of integration, starting after 0).
pub fn integrate_adaptive(
    h: &dyn HamiltonianFn,
    z0: &DVector<f64>,
    outputs: &[f64],
    opts: &AdaptiveOptions,
) -> Result<Trajectory> {
    let t_end = outputs.last().copied().unwrap_or(0.0);
    let dir = if t_end < 0.0 { -1.0 } else { 1.0 };
    let h0 = h.value(z0);
    let mut z = z0.clone();
    let mut f = vector_field(h, &z);
    let mut t = 0.0;
    let mut dt = dir * (t_end.abs() / 100.0).max(opts.min_step).min(0.1);
    let mut times = vec![0.0];
    let mut states = vec![z.clone()];
    let mut drift: f64 = 0.0;
    let mut steps = 0;
    for &target in outputs {
        while dir * (target - t) > 0.0 {
            if steps >= opts.max_steps {
                return Err(Error::Numerical(format!("step budget exhausted at t = {t:.6e}")));
            }
            let clipped = dir * (t + dt - target) >= 0.0;
            let step = if clipped { target - t } else { dt };
            let (zn, fnew, err) = dp_step(h, &z, &f, step);
            let mut acc = 0.0;
            for i in 0..z.len() {
                let sc = opts.atol + opts.rtol * z[i].abs().max(zn[i].abs());
                acc += (err[i] / sc).powi(2);
            }
            let e = (acc / z.len() as f64).sqrt();
            if !e.is_finite() {
                return Err(Error::Numerical(format!("non-finite error estimate at t = {t:.6e}")));
            }
            let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
            if e <= 1.0 {
                steps += 1;
                t = if clipped { target } else { t + step };
                z = zn;
                f = fnew;
                drift = drift.max(relative_drift(h0, h.value(&z)));
                // a step shortened to hit an output time says nothing about the scale
                if !clipped {
                    dt = step * factor;
                }
            } else {
                dt = step * factor;
                if dt.abs() < opts.min_step {
                    return Err(Error::Numerical(format!(
                        "step size underflow ({:.3e}) at t = {t:.6e}",
                        dt.abs()
                    )));
                }
            }
        }
        times.push(t);
        states.push(z.clone());
    }
    Ok(Trajectory {
        times,
        states,
        energy_drift: drift,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Ellipsoid;
    use std::f64::consts::TAU;

    fn exact_linear(z0: &DVector<f64>, t: f64) -> DVector<f64> {
        // exp(tJ) = cos t I + sin t J
        z0 * t.cos() + apply_j(z0) * t.sin()
    }

    #[test]
    fn linear_flow_is_exact() {
        let h = Ellipsoid::sphere(2);
        let z0 = DVector::from_vec(vec![0.3, -0.1, 0.7, 0.2]);
        let z = flow(&h, &z0, TAU, 10_000).unwrap();
        assert!((z - exact_linear(&z0, TAU)).norm() <= 1e-10);
        let traj = integrate_adaptive(&h, &z0, &[1.0, TAU], &AdaptiveOptions::default()).unwrap();
        assert!((traj.last() - exact_linear(&z0, TAU)).norm() <= 1e-9);
        assert!((&traj.states[1] - exact_linear(&z0, 1.0)).norm() <= 1e-9);
    }

    #[test]
    fn reverse_flow_returns() {
        let h = Ellipsoid::new(&[1.0, 1.1, 1.05, 1.18], 2).unwrap();
        let z0 = DVector::from_vec(vec![0.5, 0.1, -0.3, 0.4]);
        let z1 = flow(&h, &z0, 3.0, 3000).unwrap();
        let back = flow(&h, &z1, -3.0, 3000).unwrap();
        assert!((back - &z0).norm() <= 1e-8);
    }

    #[test]
    fn ellipsoid_energy_drift() {
        let h = Ellipsoid::new(&[1.0, 1.18], 1).unwrap();
        let z0 = DVector::from_vec(vec![0.6, 0.2]);
        let traj = integrate_fixed(&h, &z0, TAU * 1.18, 4000, 100).unwrap();
        assert!(traj.energy_drift <= 1e-9, "{}", traj.energy_drift);
        assert_eq!(traj.states.len(), 41);
    }
}
