use nalgebra::DMatrix;

use super::loadflow::polar_jacobian;
use super::{GridError, GridState, NetworkModel};

/// Voltage-magnitude sensitivities to nodal injections over the non-slack
/// buses: `kp[(i, j)] = dV_i/dP_j`, `kq[(i, j)] = dV_i/dQ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    pub kp: DMatrix<f64>,
    pub kq: DMatrix<f64>,
}

impl SensitivityMatrix {
    pub fn n_nodes(&self) -> usize {
        self.kp.nrows()
    }

    /// Coefficient row of node `i` laid out as `[K^P_i | K^Q_i]`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.kp.row(i).iter().chain(self.kq.row(i).iter()).copied().collect()
    }
}

/// Sensitivities from the inverse polar Jacobian at a converged operating point.
pub fn true_sensitivities(
    model: &NetworkModel,
    state: &GridState,
) -> Result<SensitivityMatrix, GridError> {
    let nodes = model.non_slack_positions();
    let n = nodes.len();
    let jac = polar_jacobian(model.admittance(), &state.v, &state.i, nodes);
    let inv = jac.try_inverse().ok_or(GridError::SingularJacobian)?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(GridError::SingularJacobian);
    }
    // magnitude rows respond to the P columns and Q columns
    let kp = inv.view((n, 0), (n, n)).into_owned();
    let kq = inv.view((n, n), (n, n)).into_owned();
    Ok(SensitivityMatrix { kp, kq })
}

/// Central finite differences of the load flow, one column per injection.
pub fn finite_difference_sensitivities(
    model: &NetworkModel,
    p: &[f64],
    q: &[f64],
    step: f64,
) -> Result<SensitivityMatrix, GridError> {
    let n = model.n_nodes();
    let mut kp = DMatrix::zeros(n, n);
    let mut kq = DMatrix::zeros(n, n);
    for j in 0..n {
        for (target, is_p) in [(&mut kp, true), (&mut kq, false)] {
            let (mut pp, mut qp) = (p.to_vec(), q.to_vec());
            let (mut pm, mut qm) = (p.to_vec(), q.to_vec());
            if is_p {
                pp[j] += step;
                pm[j] -= step;
            } else {
                qp[j] += step;
                qm[j] -= step;
            }
            let up = super::solve_load_flow(model, &pp, &qp)?.node_voltages(model);
            let down = super::solve_load_flow(model, &pm, &qm)?.node_voltages(model);
            for i in 0..n {
                target[(i, j)] = (up[i] - down[i]) / (2.0 * step);
            }
        }
    }
    Ok(SensitivityMatrix { kp, kq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{solve_load_flow, Branch, Bus};

    #[test]
    fn two_bus_no_load_first_order() {
        let (r, x) = (0.01, 0.1);
        let net = NetworkModel::new(
            vec![Bus { id: 1, is_slack: true }, Bus { id: 2, is_slack: false }],
            vec![Branch { from: 0, to: 1, r_pu: r, x_pu: x, b_pu: 0.0 }],
            1e5,
            400.0,
            1.0,
        )
        .unwrap();
        let st = solve_load_flow(&net, &[0.0], &[0.0]).unwrap();
        let k = true_sensitivities(&net, &st).unwrap();
        assert!((k.kp[(0, 0)] - r).abs() < 1e-12);
        assert!((k.kq[(0, 0)] - x).abs() < 1e-12);
        let fd = finite_difference_sensitivities(&net, &[0.0], &[0.0], 1e-4).unwrap();
        assert!((k.kp[(0, 0)] - fd.kp[(0, 0)]).abs() < 1e-4);
        assert!((k.kq[(0, 0)] - fd.kq[(0, 0)]).abs() < 1e-4);
    }
}
