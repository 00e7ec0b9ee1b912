//! Exact quadratic transport between piecewise-constant densities on a line.
//!
//! A piecewise-constant density has a piecewise-linear CDF, so its quantile
//! function `Q` is piecewise linear in `q ∈ [0, 1]` with breakpoints at the
//! cumulative cell masses. `W₂² = ∫₀¹ (Q_μ - Q_ν)² dq` is then a sum of
//! integrals of squared linear functions over the merged breakpoints, which
//! Simpson's rule integrates exactly.

use crate::grid::{CellField, Density, Grid};

/// One linear piece `q ↦ x0 + (x1 - x0)(q - q0)/(q1 - q0)` of a quantile function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct QuantilePiece {
    pub q0: f64,
    pub q1: f64,
    pub x0: f64,
    pub x1: f64,
}

impl QuantilePiece {
    #[inline]
    pub fn eval(&self, q: f64) -> f64 {
        let len = self.q1 - self.q0;
        if len <= 0.0 {
            return self.x0;
        }
        let s = ((q - self.q0) / len).clamp(0.0, 1.0);
        self.x0 + (self.x1 - self.x0) * s
    }
}

/// Quantile function of a 1-D cell-mass vector.
#[derive(Clone, Debug)]
pub(crate) struct Quantile {
    pieces: Vec<QuantilePiece>,
}

impl Quantile {
    /// `masses` must be nonnegative; they are rescaled to total one.
    pub fn from_masses(grid: &Grid, masses: &[f64]) -> Self {
        let total: f64 = masses.iter().sum();
        let dx = grid.cell_width(0);
        let x_lo = grid.lower()[0];
        let mut pieces = Vec::with_capacity(masses.len());
        let mut cum = 0.0;
        for (k, m) in masses.iter().enumerate() {
            let w = m / total;
            if w > 0.0 {
                let q1 = if k + 1 == masses.len() { 1.0 } else { (cum + w).min(1.0) };
                pieces.push(QuantilePiece { q0: cum, q1, x0: x_lo + k as f64 * dx, x1: x_lo + (k + 1) as f64 * dx });
                cum = q1;
            }
        }
        if let Some(last) = pieces.last_mut() {
            last.q1 = 1.0;
        }
        Self { pieces }
    }

    pub fn from_density(rho: &Density) -> Self {
        Self::from_masses(rho.grid(), &rho.masses())
    }

    pub fn pieces(&self) -> &[QuantilePiece] {
        &self.pieces
    }

    /// `Q(q)`, taking the right limit at jumps.
    pub fn eval(&self, q: f64) -> f64 {
        let idx = self.pieces.partition_point(|p| p.q1 <= q).min(self.pieces.len() - 1);
        self.pieces[idx].eval(q)
    }

    /// Index of the first piece with `q1 > q`.
    pub fn locate(&self, q: f64) -> usize {
        self.pieces.partition_point(|p| p.q1 <= q).min(self.pieces.len() - 1)
    }
}

#[inline]
fn simpson(len: f64, a: f64, m: f64, b: f64) -> f64 {
    len / 6.0 * (a + 4.0 * m + b)
}

/// `∫₀¹ (Q_a - Q_b)² dq`, exact for piecewise-linear quantiles.
pub(crate) fn w2_sq_between(a: &Quantile, b: &Quantile) -> f64 {
    let (pa, pb) = (a.pieces(), b.pieces());
    let (mut i, mut j) = (0, 0);
    let mut q = 0.0;
    let mut acc = 0.0;
    while i < pa.len() && j < pb.len() {
        let q_end = pa[i].q1.min(pb[j].q1);
        if q_end > q {
            let mid = 0.5 * (q + q_end);
            let d0 = pa[i].eval(q) - pb[j].eval(q);
            let dm = pa[i].eval(mid) - pb[j].eval(mid);
            let d1 = pa[i].eval(q_end) - pb[j].eval(q_end);
            acc += simpson(q_end - q, d0 * d0, dm * dm, d1 * d1);
            q = q_end;
        }
        if pa[i].q1 <= q_end {
            i += 1;
        }
        if pb[j].q1 <= q_end {
            j += 1;
        }
    }
    acc
}

/// Per-cell transport integrals used by the minimizing-movement solver.
///
/// For cell `j` of the moving density (faces `a_j`, `a_j + Δx`, mass `m_j`,
/// starting quantile `F_{j-1}`) and `e_j(s) = a_j + Δx s - Q_*(F_{j-1} + s m_j)`:
/// `w[j] = m_j ∫ e_j²`, `i1[j] = ∫ e_j s`, `i0[j] = ∫ e_j (1-s)`, all over `s ∈ [0,1]`.
pub(crate) struct CellIntegrals {
    pub w: Vec<f64>,
    pub i0: Vec<f64>,
    pub i1: Vec<f64>,
}

pub(crate) fn cell_integrals(grid: &Grid, masses: &[f64], target: &Quantile) -> CellIntegrals {
    let n = masses.len();
    let dx = grid.cell_width(0);
    let x_lo = grid.lower()[0];
    let pieces = target.pieces();
    let mut out = CellIntegrals { w: vec![0.0; n], i0: vec![0.0; n], i1: vec![0.0; n] };
    let total: f64 = masses.iter().sum();
    let mut f_lo = 0.0;
    let mut t = 0;
    for j in 0..n {
        let a = x_lo + j as f64 * dx;
        let m = masses[j] / total;
        if m <= 0.0 {
            // Degenerate cell: q is frozen at f_lo, so e(s) = a + Δx s - c is linear.
            t = target.locate(f_lo);
            let c = pieces[t].eval(f_lo);
            let e0 = a - c;
            out.i1[j] = e0 / 2.0 + dx / 3.0;
            out.i0[j] = e0 / 2.0 + dx / 6.0;
            continue;
        }
        let f_hi = if j + 1 == n { 1.0 } else { (f_lo + m).min(1.0) };
        let len_q = f_hi - f_lo;
        while t + 1 < pieces.len() && pieces[t].q1 <= f_lo {
            t += 1;
        }
        let mut q = f_lo;
        let (mut w, mut i0, mut i1) = (0.0, 0.0, 0.0);
        let mut tt = t;
        loop {
            let p = &pieces[tt];
            let q_end = p.q1.min(f_hi);
            if q_end > q {
                let qm = 0.5 * (q + q_end);
                let s0 = (q - f_lo) / len_q;
                let sm = (qm - f_lo) / len_q;
                let s1 = (q_end - f_lo) / len_q;
                let e0 = a + dx * s0 - p.eval(q);
                let em = a + dx * sm - p.eval(qm);
                let e1 = a + dx * s1 - p.eval(q_end);
                let ls = s1 - s0;
                w += simpson(q_end - q, e0 * e0, em * em, e1 * e1);
                i1 += simpson(ls, e0 * s0, em * sm, e1 * s1);
                i0 += simpson(ls, e0 * (1.0 - s0), em * (1.0 - sm), e1 * (1.0 - s1));
                q = q_end;
            }
            if q >= f_hi || tt + 1 >= pieces.len() {
                break;
            }
            tt += 1;
        }
        t = tt;
        out.w[j] = w;
        out.i0[j] = i0;
        out.i1[j] = i1;
        f_lo = f_hi;
    }
    out
}

/// Monotone map `T = Q_ν ∘ F_μ` sampled at the cell midpoints of `μ`.
pub(crate) fn monotone_map(mu: &Density, target: &Quantile) -> Vec<f64> {
    let masses = mu.masses();
    let total: f64 = masses.iter().sum();
    let mut cum = 0.0;
    masses
        .iter()
        .map(|m| {
            let w = m / total;
            let q = (cum + 0.5 * w).clamp(0.0, 1.0);
            cum += w;
            target.eval(q)
        })
        .collect()
}
