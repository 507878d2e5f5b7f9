use crate::error::{PlanningError, Result};
use crate::space::{Control, ControlSpace, State, StateSpace, Topology};

use super::{check_propagate_inputs, DynamicsModel, Jacobian};

/// Integration substep ceiling; `dt` is split into equal substeps no longer
/// than this.
const MAX_SUBSTEP: f64 = 0.05;

/// Kinematic bicycle: state `[x, y, theta]`, control `[v, phi]`.
///
/// dx/dt = v cos(theta), dy/dt = v sin(theta), dtheta/dt = (v / L) tan(phi).
/// Propagation runs fixed-substep RK4; the control Jacobian differentiates
/// the same discrete RK4 map, so it matches finite differences of
/// `propagate` rather than the continuous-time sensitivity.
#[derive(Debug, Clone)]
pub struct KinematicCar {
    state_space: StateSpace,
    control_space: ControlSpace,
    wheelbase: f64,
}

impl KinematicCar {
    pub fn new(
        pos_lower: [f64; 2],
        pos_upper: [f64; 2],
        wheelbase: f64,
        max_speed: f64,
        max_steer: f64,
    ) -> Result<Self> {
        if !(wheelbase > 0.0) {
            return Err(PlanningError::InvalidSpace(format!(
                "wheelbase must be positive, got {wheelbase}"
            )));
        }
        if !(max_steer > 0.0 && max_steer < std::f64::consts::FRAC_PI_2) {
            return Err(PlanningError::InvalidSpace(format!(
                "steering bound must lie in (0, pi/2), got {max_steer}"
            )));
        }
        let state_space = StateSpace::new(
            vec![Topology::Real, Topology::Real, Topology::Angular],
            vec![pos_lower[0], pos_lower[1], 0.0],
            vec![pos_upper[0], pos_upper[1], 0.0],
            vec![1.0, 1.0, 0.5],
        )?;
        let control_space =
            ControlSpace::new(vec![-max_speed, -max_steer], vec![max_speed, max_steer])?;
        Ok(KinematicCar {
            state_space,
            control_space,
            wheelbase,
        })
    }

    pub fn wheelbase(&self) -> f64 {
        self.wheelbase
    }

    fn deriv(&self, theta: f64, v: f64, phi: f64) -> [f64; 3] {
        [
            v * theta.cos(),
            v * theta.sin(),
            v / self.wheelbase * phi.tan(),
        ]
    }

    /// d f / d theta at the given sample.
    fn deriv_dtheta(&self, theta: f64, v: f64) -> [f64; 3] {
        [-v * theta.sin(), v * theta.cos(), 0.0]
    }

    /// d f / d [v, phi] at the given sample, row-major 3 x 2.
    fn deriv_du(&self, theta: f64, v: f64, phi: f64) -> [[f64; 2]; 3] {
        let sec = 1.0 / phi.cos();
        [
            [theta.cos(), 0.0],
            [theta.sin(), 0.0],
            [phi.tan() / self.wheelbase, v * sec * sec / self.wheelbase],
        ]
    }

    fn substeps(dt: f64) -> (usize, f64) {
        let n = (dt / MAX_SUBSTEP).ceil().max(1.0) as usize;
        (n, dt / n as f64)
    }
}

impl Default for KinematicCar {
    /// Wheelbase 0.3 m, |v| <= 1 m/s, |phi| <= 1 rad, 20 m square workspace.
    fn default() -> Self {
        KinematicCar::new([-10.0, -10.0], [10.0, 10.0], 0.3, 1.0, 1.0).unwrap()
    }
}

impl DynamicsModel for KinematicCar {
    fn name(&self) -> &str {
        "kinematic_car"
    }

    fn state_space(&self) -> &StateSpace {
        &self.state_space
    }

    fn control_space(&self) -> &ControlSpace {
        &self.control_space
    }

    fn propagate(&self, x: &State, u: &Control, dt: f64) -> Result<State> {
        check_propagate_inputs(self, x, u, dt)?;
        let u = self.control_space.clamped(u.clone());
        let (v, phi) = (u.values()[0], u.values()[1]);
        let (n, h) = Self::substeps(dt);
        let mut s = [x.values()[0], x.values()[1], x.values()[2]];
        for _ in 0..n {
            let k1 = self.deriv(s[2], v, phi);
            let k2 = self.deriv(s[2] + 0.5 * h * k1[2], v, phi);
            let k3 = self.deriv(s[2] + 0.5 * h * k2[2], v, phi);
            let k4 = self.deriv(s[2] + h * k3[2], v, phi);
            for i in 0..3 {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        // wrap the heading once at the end; intermediate trig is periodic anyway
        Ok(self.state_space.make_state(s.to_vec()))
    }

    fn jacobian_u(&self, x: &State, u: &Control, dt: f64) -> Result<Jacobian> {
        check_propagate_inputs(self, x, u, dt)?;
        let u = self.control_space.clamped(u.clone());
        let (v, phi) = (u.values()[0], u.values()[1]);
        let (n, h) = Self::substeps(dt);
        let mut s = [x.values()[0], x.values()[1], x.values()[2]];
        // sens[i][j] = d s_i / d u_j, propagated through the discrete map
        let mut sens = [[0.0f64; 2]; 3];
        for _ in 0..n {
            let t1 = s[2];
            let k1 = self.deriv(t1, v, phi);
            let t2 = s[2] + 0.5 * h * k1[2];
            let k2 = self.deriv(t2, v, phi);
            let t3 = s[2] + 0.5 * h * k2[2];
            let k3 = self.deriv(t3, v, phi);
            let t4 = s[2] + h * k3[2];
            let k4 = self.deriv(t4, v, phi);

            // dki[i][j]: derivative of stage i of the RK4 update w.r.t. u_j.
            // Stage states depend on u through earlier stages' theta rows.
            let mut dk = [[[0.0f64; 2]; 3]; 4];
            let stages = [(t1, 0.0, 0), (t2, 0.5 * h, 0), (t3, 0.5 * h, 1), (t4, h, 2)];
            for (idx, &(theta, coeff, prev)) in stages.iter().enumerate() {
                let da = self.deriv_dtheta(theta, v);
                let db = self.deriv_du(theta, v, phi);
                for j in 0..2 {
                    // d theta_stage / d u_j
                    let dtheta = if idx == 0 {
                        sens[2][j]
                    } else {
                        sens[2][j] + coeff * dk[prev][2][j]
                    };
                    for i in 0..3 {
                        dk[idx][i][j] = da[i] * dtheta + db[i][j];
                    }
                }
            }
            for i in 0..3 {
                for j in 0..2 {
                    sens[i][j] +=
                        h / 6.0 * (dk[0][i][j] + 2.0 * dk[1][i][j] + 2.0 * dk[2][i][j] + dk[3][i][j]);
                }
            }
            for i in 0..3 {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let mut jac = Jacobian::zeros(3, 2);
        for i in 0..3 {
            for j in 0..2 {
                jac.set(i, j, sens[i][j]);
            }
        }
        Ok(jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Constant controls trace a circular arc with radius L / tan(phi);
    /// closed form for the pose at any time from a start at the origin.
    fn arc_oracle(wheelbase: f64, v: f64, phi: f64, t: f64) -> [f64; 3] {
        let omega = v / wheelbase * phi.tan();
        if omega.abs() < 1e-12 {
            return [v * t, 0.0, 0.0];
        }
        let r = v / omega;
        [r * (omega * t).sin(), r * (1.0 - (omega * t).cos()), omega * t]
    }

    #[test]
    fn quarter_circle_arc() {
        let m = KinematicCar::default(); // wheelbase 0.3
        let x = State::new(vec![0.0, 0.0, 0.0]);
        let u = Control::new(vec![1.0, 0.3f64.atan()]); // unit turn rate
        let y = m.propagate(&x, &u, FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(y.values()[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(y.values()[1], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(y.values()[2], FRAC_PI_2, epsilon = 1e-6);
    }

    #[test]
    fn straight_line_and_reverse() {
        let m = KinematicCar::default();
        let x = State::new(vec![1.0, 2.0, FRAC_PI_2]);
        let fwd = m.propagate(&x, &Control::new(vec![1.0, 0.0]), 0.5).unwrap();
        assert_abs_diff_eq!(fwd.values()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fwd.values()[1], 2.5, epsilon = 1e-12);
        let back = m.propagate(&fwd, &Control::new(vec![-1.0, 0.0]), 0.5).unwrap();
        let d = m.state_space().distance(&back, &x).unwrap();
        assert!(d <= 1e-9, "reverse did not return to start: {d}");
    }

    #[test]
    fn arc_oracle_random_controls() {
        let m = KinematicCar::default();
        let x0 = State::new(vec![0.0, 0.0, 0.0]);
        for (v, phi, t) in [
            (1.0, 0.5, 1.3),
            (-0.7, 0.9, 2.0),
            (0.4, -0.8, 0.35),
            (1.0, 0.0, 1.0),
        ] {
            let y = m.propagate(&x0, &Control::new(vec![v, phi]), t).unwrap();
            let expect = arc_oracle(0.3, v, phi, t);
            let wrapped = crate::space::wrap_angle(expect[2]);
            assert_abs_diff_eq!(y.values()[0], expect[0], epsilon = 1e-6);
            assert_abs_diff_eq!(y.values()[1], expect[1], epsilon = 1e-6);
            assert_abs_diff_eq!(y.values()[2], wrapped, epsilon = 1e-6);
        }
    }

    #[test]
    fn heading_stays_wrapped() {
        let m = KinematicCar::default();
        let x = State::new(vec![0.0, 0.0, 3.0]);
        // spin: turn rate tan(1)/0.3 ~ 5.2 rad/s for 4 s ~ 20.8 rad
        let y = m.propagate(&x, &Control::new(vec![1.0, 1.0]), 4.0).unwrap();
        let theta = y.values()[2];
        assert!((-PI..PI).contains(&theta), "theta {theta} not wrapped");
    }

    #[test]
    fn rotational_symmetry() {
        // propagating from a rotated start rotates the displacement
        let m = KinematicCar::default();
        let u = Control::new(vec![0.8, 0.4]);
        let dt = 1.1;
        let from_zero = m.propagate(&State::new(vec![0.0, 0.0, 0.0]), &u, dt).unwrap();
        let alpha = 1.2;
        let from_rot = m.propagate(&State::new(vec![0.0, 0.0, alpha]), &u, dt).unwrap();
        let (dx, dy) = (from_zero.values()[0], from_zero.values()[1]);
        let rx = alpha.cos() * dx - alpha.sin() * dy;
        let ry = alpha.sin() * dx + alpha.cos() * dy;
        assert_abs_diff_eq!(from_rot.values()[0], rx, epsilon = 1e-9);
        assert_abs_diff_eq!(from_rot.values()[1], ry, epsilon = 1e-9);
        assert_abs_diff_eq!(
            from_rot.values()[2],
            crate::space::wrap_angle(from_zero.values()[2] + alpha),
            epsilon = 1e-9
        );
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(KinematicCar::new([-1.0; 2], [1.0; 2], 0.0, 1.0, 1.0).is_err());
        assert!(KinematicCar::new([-1.0; 2], [1.0; 2], 0.3, 1.0, 2.0).is_err());
    }
}
