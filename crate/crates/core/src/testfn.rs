//! Smooth compactly supported test functions.
//!
//! The profile is `b(t) = e · exp(-1/(1 - t²))` on `|t| < 1`, peak value 1 before
//! scaling by the amplitude.
//! In 2-D the bumps are tensor products `b((x-c₀)/R₀) b((y-c₁)/R₁)`.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, ScalarField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: [f64; 2],
    pub amplitude: f64,
}

/// `(b, b', b'')` in the scaled variable `t`.
fn profile(t: f64) -> (f64, f64, f64) {
    let s = 1.0 - t * t;
    if s <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let b = (1.0 - 1.0 / s).exp();
    let g1 = -2.0 * t / (s * s);
    let g2 = -(2.0 + 6.0 * t * t) / (s * s * s);
    (b, b * g1, b * (g1 * g1 + g2))
}

impl Bump {
    pub fn new(center: [f64; 2], radius: [f64; 2]) -> Self {
        Self { center, radius, amplitude: 1.0 }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { amplitude: a * self.amplitude, ..*self }
    }

    fn axes(&self, x: [f64; 2], dim: usize) -> [(f64, f64, f64); 2] {
        let mut out = [(1.0, 0.0, 0.0); 2];
        for (a, o) in out.iter_mut().enumerate().take(dim) {
            let r = self.radius[a];
            let (b, db, d2b) = profile((x[a] - self.center[a]) / r);
            *o = (b, db / r, d2b / (r * r));
        }
        out
    }

    pub fn value(&self, x: [f64; 2], dim: usize) -> f64 {
        let [a, b] = self.axes(x, dim);
        self.amplitude * a.0 * b.0
    }

    pub fn gradient(&self, x: [f64; 2], dim: usize) -> [f64; 2] {
        let [a, b] = self.axes(x, dim);
        [self.amplitude * a.1 * b.0, self.amplitude * a.0 * b.1]
    }

    pub fn laplacian(&self, x: [f64; 2], dim: usize) -> f64 {
        let [a, b] = self.axes(x, dim);
        self.amplitude * (a.2 * b.0 + a.0 * b.2)
    }

    pub fn sample(&self, grid: &Grid) -> ScalarField {
        let d = grid.dim();
        ScalarField::from_fn(*grid, |x| self.value(x, d))
    }

    /// Whether the support stays inside the closed box.
    pub fn inside(&self, grid: &Grid) -> bool {
        (0..grid.dim()).all(|a| {
            self.center[a] - self.radius[a] >= grid.lower()[a] - 1e-12
                && self.center[a] + self.radius[a] <= grid.upper()[a] + 1e-12
        })
    }
}

/// Relative radii of the standard family.
pub const SCALES: [f64; 3] = [0.1, 0.2, 0.3];

/// Three scales times five centers; radii are clipped so every support fits in the box.
///
/// Centers sit at fractions `1/6, …, 5/6` of each side (along the diagonal in 2-D).
pub fn standard_family(grid: &Grid) -> Vec<Bump> {
    let (lo, hi) = (grid.lower(), grid.upper());
    let mut out = Vec::with_capacity(15);
    for scale in SCALES {
        for k in 1..=5 {
            let frac = k as f64 / 6.0;
            let mut center = [0.0; 2];
            let mut radius = [1.0; 2];
            for a in 0..grid.dim() {
                let len = hi[a] - lo[a];
                center[a] = lo[a] + frac * len;
                let room = (center[a] - lo[a]).min(hi[a] - center[a]);
                radius[a] = (scale * len).min(room);
            }
            out.push(Bump::new(center, radius));
        }
    }
    out
}
