//! Discrete Euler–Lagrange residual of a 1-D minimizing-movement step.
//!
//! Pushing `u⁺` forward by `Id + sζ` moves the cumulative mass at face
//! `x_k` by `δF_k = -s ũ_k ζ(x_k)`, with `ũ_k` the face mobility. The
//! first-order optimality condition says the directional derivative of
//! `d²/(2h) + E` along this perturbation vanishes. With this choice of `ũ`
//! the diffusion part sums by parts to `-∫(u⁺)^m ζ'` exactly, so the
//! transport term balances the diffusion, confinement and electrostatic
//! terms of the continuous identity.

use serde::{Deserialize, Serialize};

use crate::energy::ModelParams;
use crate::grid::{CellField, ScalarField, State};
use crate::testfn::Bump;
use crate::{Error, Result};

use super::newton1d::Problem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElResidual {
    /// `max_ζ |LHS/h - RHS|` for `u`.
    pub res_u: f64,
    pub res_v: f64,
    /// Signed `(u, v)` mismatches, one pair per test field.
    pub per_field: Vec<[f64; 2]>,
}

pub fn euler_lagrange_residual(
    z_prev: &State,
    z_next: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
    zeta: &[Bump],
) -> Result<ElResidual> {
    let grid = *z_next.grid();
    if grid != *z_prev.grid() || grid != *u_pot.grid() || grid != *v_pot.grid() {
        return Err(Error::GridMismatch);
    }
    if grid.dim() != 1 {
        return Err(Error::InvalidArgument("the Euler-Lagrange residual needs the exact 1-D map".into()));
    }
    let prob = Problem::new(grid, params.law, params.h, z_prev, u_pot, v_pot);
    let (mu, mv) = (z_next.u.masses(), z_next.v.masses());
    let fg = prob.gradients(&mu, &mv);
    let n = grid.len();
    let dx = grid.cell_width(0);
    let law = params.law;
    let x0 = grid.lower()[0];
    let mob = |m: &[f64], k: usize| law.mobility(m[k - 1] / dx, m[k] / dx);
    let mut per_field = Vec::with_capacity(zeta.len());
    let (mut res_u, mut res_v) = (0.0f64, 0.0f64);
    for z in zeta {
        let mut acc = [0.0; 2];
        for k in 1..n {
            let zk = z.value([x0 + k as f64 * dx, 0.0], 1);
            if zk == 0.0 {
                continue;
            }
            for (s, (m, (w, e))) in [(&mu, (&fg.w_u, &fg.e_u)), (&mv, (&fg.w_v, &fg.e_v))].into_iter().enumerate() {
                let a = mob(m, k);
                if a > 0.0 {
                    acc[s] -= (w[k - 1] + e[k - 1]) * a * zk;
                }
            }
        }
        res_u = res_u.max(acc[0].abs());
        res_v = res_v.max(acc[1].abs());
        per_field.push(acc);
    }
    Ok(ElResidual { res_u, res_v, per_field })
}
