//! Mollified approximations of `M δ₀` and the heat-kernel warm start.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{pairwise_sum, Field, Grid, MAX_DIM};

/// Allowed mass defect between the sampled profile on the grid and on the
/// unbounded lattice.
pub const DOMAIN_DEFECT_TOL: f64 = 1e-6;

/// Initial-data recipe. Widths are nominal diameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialRecipe {
    /// Isotropic Gaussian with standard deviation `width / √12` (the variance of `box(width)`).
    Gaussian { width: f64 },
    /// Cell-averaged indicator of the cube `[-width/2, width/2]^N`.
    Box { width: f64 },
    /// Radial `C^∞` bump `exp(-1/(1 - |x|²/ρ²))`, `ρ = width/2`.
    Bump { width: f64 },
    /// Heat kernel `Γ_N(t0)`, nominal width `√(24 t0)`.
    HeatKernel { t0: f64 },
}

impl InitialRecipe {
    pub fn width(&self) -> f64 {
        match *self {
            InitialRecipe::Gaussian { width }
            | InitialRecipe::Box { width }
            | InitialRecipe::Bump { width } => width,
            InitialRecipe::HeatKernel { t0 } => (24.0 * t0).sqrt(),
        }
    }

    /// Same recipe with the width scaled by `s` (time scaled by `s²` for the heat kernel).
    pub fn scaled(&self, s: f64) -> Self {
        match *self {
            InitialRecipe::Gaussian { width } => InitialRecipe::Gaussian { width: width * s },
            InitialRecipe::Box { width } => InitialRecipe::Box { width: width * s },
            InitialRecipe::Bump { width } => InitialRecipe::Bump { width: width * s },
            InitialRecipe::HeatKernel { t0 } => InitialRecipe::HeatKernel { t0: t0 * s * s },
        }
    }
}

/// Heat kernel `Γ_N(x, t) = (4πt)^{-N/2} exp(-|x|²/(4t))`.
pub fn heat_kernel(x: &[f64], t: f64) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (4.0 * std::f64::consts::PI * t).powf(-0.5 * x.len() as f64) * (-r2 / (4.0 * t)).exp()
}

fn box_overlap(center: f64, h: f64, width: f64) -> f64 {
    let lo = (center - 0.5 * h).max(-0.5 * width);
    let hi = (center + 0.5 * h).min(0.5 * width);
    ((hi - lo) / h).max(0.0)
}

/// Field with `integrate = mass` approximating `mass · δ₀`.
pub fn make_initial(recipe: &InitialRecipe, mass: f64, grid: &Grid) -> Result<Field> {
    if !(mass.is_finite() && mass != 0.0) {
        return Err(Error::InvalidConfig(format!("mass {mass} must be finite and nonzero")));
    }
    let width = recipe.width();
    let hmax = grid.spacings().iter().cloned().fold(0.0, f64::max);
    if !(width.is_finite() && width >= 2.0 * hmax) {
        return Err(Error::UnresolvableWidth { width, min: 2.0 * hmax });
    }
    let dim = grid.dim();
    // Unnormalized density and the radius beyond which it vanishes numerically.
    let (density, radius): (Box<dyn Fn(&[f64]) -> f64>, f64) = match *recipe {
        InitialRecipe::Gaussian { width } => {
            let s2 = width * width / 12.0;
            (Box::new(move |x| (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2)).exp()), 14.0 * s2.sqrt())
        }
        InitialRecipe::HeatKernel { t0 } => {
            if !(t0 > 0.0) {
                return Err(Error::InvalidConfig(format!("heat kernel t0 = {t0} must be positive")));
            }
            (Box::new(move |x| heat_kernel(x, t0)), 14.0 * (2.0 * t0).sqrt())
        }
        InitialRecipe::Bump { width } => {
            let rho2 = 0.25 * width * width;
            (
                Box::new(move |x| {
                    let s = x.iter().map(|v| v * v).sum::<f64>() / rho2;
                    if s < 1.0 {
                        (-1.0 / (1.0 - s)).exp()
                    } else {
                        0.0
                    }
                }),
                0.5 * width,
            )
        }
        InitialRecipe::Box { width } => {
            let g = *grid;
            let vol = width.powi(dim as i32);
            (
                Box::new(move |x| {
                    (0..g.dim()).map(|a| box_overlap(x[a], g.spacing(a), width)).product::<f64>() / vol
                }),
                0.5 * width + hmax,
            )
        }
    };

    // Lattice patch around the origin that contains the whole numerical support.
    let mut reach = [0i64; MAX_DIM];
    for a in 0..dim {
        reach[a] = (radius / grid.spacing(a)).ceil() as i64 + 1;
    }
    let zero: Vec<i64> = (0..dim).map(|a| grid.zero_index(a) as i64).collect();
    let (mut on_lattice, mut on_grid) = (Vec::new(), Vec::new());
    let mut x = [0.0; MAX_DIM];
    let rows = if dim == 2 { reach[0] } else { 0 };
    for i in -rows..=rows {
        for j in -reach[dim - 1]..=reach[dim - 1] {
            let k = if dim == 2 { [i, j] } else { [j, 0] };
            let mut inside = true;
            for a in 0..dim {
                x[a] = k[a] as f64 * grid.spacing(a);
                let idx = zero[a] + k[a];
                inside &= idx >= 0 && idx < grid.n(a) as i64;
            }
            let v = density(&x[..dim]);
            on_lattice.push(v);
            if inside {
                on_grid.push(v);
            }
        }
    }
    let full = pairwise_sum(&on_lattice);
    let defect = 1.0 - pairwise_sum(&on_grid) / full;
    if defect.abs() > DOMAIN_DEFECT_TOL {
        return Err(Error::DomainTooSmall { defect });
    }

    let raw = Field::from_fn(*grid, |x| density(x))?;
    let total = pairwise_sum(raw.values()) * grid.cell_volume();
    raw.scale(mass / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;

    #[test]
    fn every_recipe_has_exact_mass() {
        let g1 = Grid::line(-4.0, 4.0, 0.01).unwrap();
        let g2 = Grid::covering(&[-2.0, -2.0], &[2.0, 2.0], &[0.02, 0.02]).unwrap();
        let recipes = [
            InitialRecipe::Gaussian { width: 0.1 },
            InitialRecipe::Box { width: 0.13 },
            InitialRecipe::Bump { width: 0.2 },
            InitialRecipe::HeatKernel { t0: 0.01 },
        ];
        for g in [g1, g2] {
            for r in &recipes {
                for m in [1.0, -2.5] {
                    let f = make_initial(r, m, &g).unwrap();
                    assert!((integrate(&f) - m).abs() <= 1e-12 * m.abs(), "{r:?}");
                }
            }
        }
    }

    #[test]
    fn box_is_flat_and_symmetric() {
        let h = 0.01;
        let g = Grid::line(-1.0, 1.0, h).unwrap();
        let f = make_initial(&InitialRecipe::Box { width: 4.0 * h }, 2.0, &g).unwrap();
        assert!((f.max() - 2.0 / (4.0 * h)).abs() < 1e-9);
        let v = f.values();
        let n = v.len();
        for i in 0..n {
            assert!((v[i] - v[n - 1 - i]).abs() <= 1e-12 * f.max());
        }
    }

    #[test]
    fn unresolved_width_is_rejected() {
        let g = Grid::line(-1.0, 1.0, 0.1).unwrap();
        let err = make_initial(&InitialRecipe::Gaussian { width: 0.15 }, 1.0, &g);
        assert!(matches!(err, Err(Error::UnresolvableWidth { .. })));
    }

    #[test]
    fn truncated_profile_is_rejected() {
        let g = Grid::line(-1.0, 1.0, 0.01).unwrap();
        let err = make_initial(&InitialRecipe::HeatKernel { t0: 0.5 }, 1.0, &g);
        assert!(matches!(err, Err(Error::DomainTooSmall { .. })));
    }

    #[test]
    fn zero_mass_is_rejected() {
        let g = Grid::line(-1.0, 1.0, 0.01).unwrap();
        assert!(make_initial(&InitialRecipe::Box { width: 0.1 }, 0.0, &g).is_err());
    }
}
