//! Nominal transition models: forward propagation and control Jacobians.

use rayon::prelude::*;

use crate::error::{PlanningError, Result};
use crate::space::{Control, ControlSpace, State, StateSpace};
use crate::trajectory::Trajectory;

mod car;
mod double_integrator;

pub use car::KinematicCar;
pub use double_integrator::DoubleIntegrator6D;

/// Dense row-major `state_dims x control_dims` sensitivity matrix
/// `d propagate / d control`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Jacobian {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Jacobian {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `J^T * v` with `v` of length `rows`; the optimizer's gradient kernel.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let vr = v[r];
            for c in 0..self.cols {
                out[c] += self.data[r * self.cols + c] * vr;
            }
        }
        out
    }
}

/// A deterministic nominal transition model with differentiable controls.
///
/// `propagate` applies one piecewise-constant control over `dt`;
/// `jacobian_u` returns the sensitivity of the resulting state to that
/// control. Both are pure and safe to call concurrently.
pub trait DynamicsModel: Send + Sync {
    fn name(&self) -> &str;
    fn state_space(&self) -> &StateSpace;
    fn control_space(&self) -> &ControlSpace;

    fn propagate(&self, x: &State, u: &Control, dt: f64) -> Result<State>;

    fn jacobian_u(&self, x: &State, u: &Control, dt: f64) -> Result<Jacobian>;
}

pub(crate) fn check_propagate_inputs(
    model: &dyn DynamicsModel,
    x: &State,
    u: &Control,
    dt: f64,
) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(PlanningError::InvalidDuration(dt));
    }
    if !x.is_finite() {
        return Err(PlanningError::NonFinite("state"));
    }
    if !u.is_finite() {
        return Err(PlanningError::NonFinite("control"));
    }
    if x.dims() != model.state_space().dims() {
        return Err(PlanningError::DimensionMismatch {
            expected: model.state_space().dims(),
            got: x.dims(),
        });
    }
    if u.dims() != model.control_space().dims() {
        return Err(PlanningError::DimensionMismatch {
            expected: model.control_space().dims(),
            got: u.dims(),
        });
    }
    Ok(())
}

const BATCH_PARALLEL_THRESHOLD: usize = 32;

/// Row-wise propagate over aligned state/control slices. Results are
/// elementwise identical to scalar `propagate` regardless of worker count.
pub fn propagate_batch(
    model: &dyn DynamicsModel,
    states: &[State],
    controls: &[Control],
    dt: f64,
) -> Result<Vec<State>> {
    if states.len() != controls.len() {
        return Err(PlanningError::LengthMismatch(format!(
            "{} states vs {} controls",
            states.len(),
            controls.len()
        )));
    }
    if states.len() < BATCH_PARALLEL_THRESHOLD {
        states
            .iter()
            .zip(controls.iter())
            .map(|(x, u)| model.propagate(x, u, dt))
            .collect()
    } else {
        states
            .par_iter()
            .zip(controls.par_iter())
            .map(|(x, u)| model.propagate(x, u, dt))
            .collect()
    }
}

/// Central finite-difference control Jacobian; the fallback for models
/// without analytic sensitivities and the oracle used to test them.
pub fn fd_jacobian_u(
    model: &dyn DynamicsModel,
    x: &State,
    u: &Control,
    dt: f64,
) -> Result<Jacobian> {
    check_propagate_inputs(model, x, u, dt)?;
    let space = model.state_space().clone();
    let n = space.dims();
    let m = u.dims();
    let mut jac = Jacobian::zeros(n, m);
    for j in 0..m {
        let h = 1e-6 * (1.0 + u.values()[j].abs());
        let mut up = u.values().to_vec();
        let mut um = u.values().to_vec();
        up[j] += h;
        um[j] -= h;
        let xp = model.propagate(x, &Control::new(up), dt)?;
        let xm = model.propagate(x, &Control::new(um), dt)?;
        let diff = space.difference(&xp, &xm);
        for (i, d) in diff.iter().enumerate() {
            jac.set(i, j, d / (2.0 * h));
        }
    }
    Ok(jac)
}

/// Check the kinodynamic consistency of a trajectory: re-propagating every
/// segment must reproduce the stored successor within `tol` (metric units).
pub fn validate_trajectory(model: &dyn DynamicsModel, traj: &Trajectory, tol: f64) -> Result<()> {
    let space = model.state_space();
    for i in 0..traj.len() {
        let predicted = model.propagate(&traj.states()[i], &traj.controls()[i], traj.durations()[i])?;
        let err = space.distance(&predicted, &traj.states()[i + 1])?;
        if err > tol {
            return Err(PlanningError::InvalidTrajectory(format!(
                "segment {i} propagation error {err} exceeds tolerance {tol}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn di() -> DoubleIntegrator6D {
        DoubleIntegrator6D::new([-50.0; 3], [50.0; 3], 5.0, 3.0).unwrap()
    }

    fn car() -> KinematicCar {
        KinematicCar::default()
    }

    fn models() -> Vec<Box<dyn DynamicsModel>> {
        vec![Box::new(di()), Box::new(car())]
    }

    #[test]
    fn zero_control_at_rest_is_fixed_point() {
        let m = di();
        let x = State::new(vec![1.0, -2.0, 3.0, 0.0, 0.0, 0.0]);
        let u = Control::new(vec![0.0, 0.0, 0.0]);
        let y = m.propagate(&x, &u, 0.7).unwrap();
        assert_eq!(y.values(), x.values());

        let c = car();
        let x = State::new(vec![0.5, 0.5, 1.0]);
        let u = Control::new(vec![0.0, 0.0]);
        let y = c.propagate(&x, &u, 0.7).unwrap();
        for (a, b) in y.values().iter().zip(x.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn propagate_rejects_bad_inputs() {
        for m in models() {
            let x = m.state_space().make_state(vec![0.0; m.state_space().dims()]);
            let u = Control::new(vec![0.0; m.control_space().dims()]);
            assert!(m.propagate(&x, &u, 0.0).is_err());
            assert!(m.propagate(&x, &u, -1.0).is_err());
            let mut bad = x.clone();
            bad.values_mut()[0] = f64::NAN;
            assert!(m.propagate(&bad, &u, 1.0).is_err());
        }
    }

    #[test]
    fn batch_matches_scalar() {
        for m in models() {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let states: Vec<State> = (0..64)
                .map(|_| m.state_space().sample_uniform(&mut rng))
                .collect();
            let controls: Vec<Control> = (0..64)
                .map(|_| m.control_space().sample_uniform(&mut rng))
                .collect();
            let batch = propagate_batch(m.as_ref(), &states, &controls, 0.4).unwrap();
            for i in 0..64 {
                let scalar = m.propagate(&states[i], &controls[i], 0.4).unwrap();
                let d = m.state_space().distance(&batch[i], &scalar).unwrap();
                assert!(d <= 1e-12, "row {i} differs by {d}");
            }
        }
    }

    #[test]
    fn batch_edge_cases() {
        let m = di();
        let out = propagate_batch(&m, &[], &[], 0.5).unwrap();
        assert!(out.is_empty());
        let x = State::new(vec![0.0; 6]);
        let u = Control::new(vec![1.0, 0.0, 0.0]);
        let single = propagate_batch(&m, &[x.clone()], std::slice::from_ref(&u), 0.5).unwrap();
        assert_eq!(single[0], m.propagate(&x, &u, 0.5).unwrap());
        assert!(propagate_batch(&m, &[x], &[], 0.5).is_err());
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        for m in models() {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for _ in 0..50 {
                let x = m.state_space().sample_uniform(&mut rng);
                let u = m.control_space().sample_uniform(&mut rng);
                let dt = rng.random_range(0.05..1.5);
                let analytic = m.jacobian_u(&x, &u, dt).unwrap();
                let fd = fd_jacobian_u(m.as_ref(), &x, &u, dt).unwrap();
                for r in 0..analytic.rows() {
                    for c in 0..analytic.cols() {
                        let a = analytic.get(r, c);
                        let f = fd.get(r, c);
                        let rel = (a - f).abs() / f64::max(1.0, a.abs());
                        assert!(
                            rel <= 1e-5,
                            "{} entry ({r},{c}): analytic {a}, fd {f}, rel {rel}",
                            m.name()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn semigroup_property() {
        for m in models() {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for dt in [0.2, 0.5, 1.0] {
                for _ in 0..20 {
                    let x = m.state_space().sample_uniform(&mut rng);
                    let u = m.control_space().sample_uniform(&mut rng);
                    let whole = m.propagate(&x, &u, dt).unwrap();
                    let mid = m.propagate(&x, &u, dt / 2.0).unwrap();
                    let two = m.propagate(&mid, &u, dt / 2.0).unwrap();
                    let d = m.state_space().distance(&whole, &two).unwrap();
                    assert!(d <= 1e-7, "{} dt {dt}: semigroup gap {d}", m.name());
                }
            }
        }
    }

    #[test]
    fn lipschitz_sanity() {
        // empirical Lipschitz ratios stay finite over random pairs
        for m in models() {
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            let mut max_kx: f64 = 0.0;
            let mut max_ku: f64 = 0.0;
            for _ in 0..10_000 {
                let x = m.state_space().sample_uniform(&mut rng);
                let x2 = m.state_space().sample_uniform(&mut rng);
                let u = m.control_space().sample_uniform(&mut rng);
                let u2 = m.control_space().sample_uniform(&mut rng);
                let dt = 0.5;
                let fx = m.propagate(&x, &u, dt).unwrap();
                let fx2 = m.propagate(&x2, &u, dt).unwrap();
                let fu2 = m.propagate(&x, &u2, dt).unwrap();
                let dx = m.state_space().distance(&x, &x2).unwrap();
                let du: f64 = u
                    .values()
                    .iter()
                    .zip(u2.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dx > 1e-9 {
                    let r = m.state_space().distance(&fx, &fx2).unwrap() / dx;
                    assert!(r.is_finite());
                    max_kx = max_kx.max(r);
                }
                if du > 1e-9 {
                    let r = m.state_space().distance(&fx, &fu2).unwrap() / du;
                    assert!(r.is_finite());
                    max_ku = max_ku.max(r);
                }
            }
            assert!(max_kx.is_finite() && max_ku.is_finite());
            println!(
                "{}: empirical Lipschitz constants K_x = {max_kx:.3}, K_u = {max_ku:.3}",
                m.name()
            );
        }
    }

    #[test]
    fn validate_trajectory_catches_wrong_control() {
        let m = di();
        let x0 = State::new(vec![0.0; 6]);
        let u = Control::new(vec![1.0, 0.0, 0.0]);
        let x1 = m.propagate(&x0, &u, 0.5).unwrap();
        let good = Trajectory::new(vec![x0.clone(), x1.clone()], vec![u], vec![0.5]).unwrap();
        assert!(validate_trajectory(&m, &good, 1e-9).is_ok());
        let bad = Trajectory::new(
            vec![x0, x1],
            vec![Control::new(vec![1.1, 0.0, 0.0])],
            vec![0.5],
        )
        .unwrap();
        assert!(validate_trajectory(&m, &bad, 1e-9).is_err());
    }
}
