use crate::error::Result;
use crate::space::{Control, ControlSpace, State, StateSpace, Topology};

use super::{check_propagate_inputs, DynamicsModel, Jacobian};

/// 3D point mass with direct acceleration control.
///
/// State is `[px, py, pz, vx, vy, vz]`, control is `[ax, ay, az]`. The
/// transition is the exact constant-acceleration solution
/// `p' = p + v dt + a dt^2 / 2`, `v' = v + a dt`, so propagation carries no
/// integration error and the control Jacobian is available in closed form.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator6D {
    state_space: StateSpace,
    control_space: ControlSpace,
}

impl DoubleIntegrator6D {
    /// Workspace box for position, symmetric bounds `max_speed` on each
    /// velocity component and `max_accel` on each control component.
    pub fn new(
        pos_lower: [f64; 3],
        pos_upper: [f64; 3],
        max_speed: f64,
        max_accel: f64,
    ) -> Result<Self> {
        let mut lower = pos_lower.to_vec();
        let mut upper = pos_upper.to_vec();
        lower.extend([-max_speed; 3]);
        upper.extend([max_speed; 3]);
        let state_space = StateSpace::new(
            vec![Topology::Real; 6],
            lower,
            upper,
            vec![1.0; 6],
        )?;
        let control_space = ControlSpace::new(vec![-max_accel; 3], vec![max_accel; 3])?;
        Ok(DoubleIntegrator6D {
            state_space,
            control_space,
        })
    }
}

impl Default for DoubleIntegrator6D {
    fn default() -> Self {
        DoubleIntegrator6D::new([-10.0; 3], [10.0; 3], 2.0, 2.0).unwrap()
    }
}

impl DynamicsModel for DoubleIntegrator6D {
    fn name(&self) -> &str {
        "double_integrator_6d"
    }

    fn state_space(&self) -> &StateSpace {
        &self.state_space
    }

    fn control_space(&self) -> &ControlSpace {
        &self.control_space
    }

    fn propagate(&self, x: &State, u: &Control, dt: f64) -> Result<State> {
        check_propagate_inputs(self, x, u, dt)?;
        let a = self.control_space.clamped(u.clone());
        let s = x.values();
        let mut out = vec![0.0; 6];
        for i in 0..3 {
            out[i] = s[i] + s[i + 3] * dt + 0.5 * a.values()[i] * dt * dt;
            out[i + 3] = s[i + 3] + a.values()[i] * dt;
        }
        Ok(State::new(out))
    }

    fn jacobian_u(&self, x: &State, u: &Control, dt: f64) -> Result<Jacobian> {
        check_propagate_inputs(self, x, u, dt)?;
        let mut jac = Jacobian::zeros(6, 3);
        for i in 0..3 {
            jac.set(i, i, 0.5 * dt * dt);
            jac.set(i + 3, i, dt);
        }
        Ok(jac)
    }
}
