//! Self-similar exponents, profile rescaling, heat-kernel marginals and
//! log-log decay fits.
//!
//! The profile map at time `t` is `g(ξ) = t^α u(t, t^{1/2} ξ', t^β ξ_N)`.

use crate::error::{Error, Result};
use crate::grid::{interpolate_at, lp_norm, marginal_xprime, Field, Grid, Marginal};
use crate::stepper::Trajectory;

/// Scaling exponents of the source-type solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponents {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n: usize,
    pub q: f64,
}

/// `α = (N+1)/(2q)`, `β = (N+1-q(N-1))/(2q)`, `γ = (N-1)/2 + β`.
pub fn exponents(n: usize, q: f64) -> Result<Exponents> {
    if n == 0 {
        return Err(Error::InvalidExponent(0.0));
    }
    let nf = n as f64;
    if !(q.is_finite() && q > 1.0 - 1.0 / nf && q > 0.0) {
        return Err(Error::InvalidFlux(format!("q = {q} must satisfy q > 1 - 1/N = {}", 1.0 - 1.0 / nf)));
    }
    let beta = (nf + 1.0 - q * (nf - 1.0)) / (2.0 * q);
    Ok(Exponents { alpha: (nf + 1.0) / (2.0 * q), beta, gamma: 0.5 * (nf - 1.0) + beta, n, q })
}

impl Exponents {
    /// Heat-equation scaling: `α = γ = N/2`, `β = 1/2`.
    pub fn parabolic(n: usize) -> Exponents {
        let nf = n as f64;
        Exponents { alpha: 0.5 * nf, beta: 0.5, gamma: 0.5 * nf, n, q: f64::NAN }
    }

    /// Predicted slope of `log ‖u(t)‖_p` against `log t`: `-α (1 - 1/p)`.
    pub fn lp_slope(&self, p: f64) -> f64 {
        -self.alpha * (1.0 - 1.0 / p)
    }

    /// Physical stretch factor per axis at time `t`.
    fn stretch(&self, t: f64, dim: usize) -> [f64; 2] {
        let mut s = [t.sqrt(); 2];
        s[dim - 1] = t.powf(self.beta);
        s
    }
}

/// `Γ_{N-1}(t, x') = (4πt)^{-(N-1)/2} e^{-|x'|²/(4t)}`; the empty product for `N = 1`.
pub fn heat_kernel_marginal(t: f64, xprime: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Precondition(format!("heat kernel needs t > 0, got {t}")));
    }
    Ok(crate::stepper::heat_kernel(xprime, t))
}

/// Profile of `f` (taken at time `t`) sampled on `target` in `ξ` coordinates.
pub fn rescale(f: &Field, t: f64, e: &Exponents, target: &Grid) -> Result<Field> {
    if !(t > 0.0) {
        return Err(Error::Precondition(format!("rescale needs t > 0, got {t}")));
    }
    let g = f.grid();
    if target.dim() != g.dim() {
        return Err(Error::DimensionMismatch(target.dim(), g.dim()));
    }
    let dim = g.dim();
    let s = e.stretch(t, dim);
    // Mass of the source that falls outside the physical image of the target box.
    let mut outside = 0.0;
    let mut total = 0.0;
    for i in 0..g.len() {
        let x = g.coords(i);
        let v = f.values()[i].abs();
        total += v;
        let out = (0..dim).any(|a| {
            let xi = x[a] / s[a];
            xi < target.origin(a) || xi > target.upper(a)
        });
        if out {
            outside += v;
        }
    }
    if total > 0.0 && outside > 1e-3 * total {
        return Err(Error::MissedSupport(t));
    }
    let amp = t.powf(e.gamma);
    Field::from_fn(*target, |xi| {
        let mut x = [0.0; 2];
        for a in 0..dim {
            x[a] = xi[a] * s[a];
        }
        amp * interpolate_at(f, &x[..dim])
    })
}

/// Profile grid at time `t`: the physical grid expressed in `ξ` coordinates,
/// rounded to keep a cell centered at the origin.
pub fn profile_grid(grid: &Grid, t: f64, e: &Exponents) -> Result<Grid> {
    let s = e.stretch(t, grid.dim());
    grid.scaled(&s[..grid.dim()].iter().map(|v| 1.0 / v).collect::<Vec<_>>())
}

/// `L¹` distance between the profiles at `t1` and `t2` on the profile grid of `t1`.
///
/// The physical box maps to a shrinking `ξ` box, so the grid of the earlier
/// time contains the image of the later one.
pub fn collapse_distance(traj: &Trajectory, e: &Exponents, t1: f64, t2: f64) -> Result<f64> {
    let target = profile_grid(traj.grid(), t1.min(t2), e)?;
    collapse_distance_on(traj, e, t1, t2, &target)
}

pub fn collapse_distance_on(traj: &Trajectory, e: &Exponents, t1: f64, t2: f64, target: &Grid) -> Result<f64> {
    if !(t1 < t2) {
        return Err(Error::Precondition(format!("collapse needs t1 < t2, got {t1}, {t2}")));
    }
    let a = rescale(&traj.at(t1)?.field, t1, e, target)?;
    let b = rescale(&traj.at(t2)?.field, t2, e, target)?;
    lp_norm(&a.sub(&b)?, 1.0)
}

/// Least-squares line through `(log t, log y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub samples: usize,
    pub window: (f64, f64),
    /// The `(t, y)` points used.
    pub points: Vec<(f64, f64)>,
}

/// Number of log-equispaced bins used to thin dense series.
pub const FIT_BINS: usize = 64;

/// Fits `log y = a + s log t` over `window`, after thinning the points to at
/// most one per log-equispaced bin.
pub fn fit_power_law(points: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InsufficientRange(format!("window [{lo}, {hi}] is not a positive interval")));
    }
    let mut inside: Vec<(f64, f64)> =
        points.iter().copied().filter(|&(t, y)| t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12) && y > 0.0).collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut thinned: Vec<(f64, f64)> = Vec::new();
    let mut last_bin = usize::MAX;
    for &(t, y) in &inside {
        let bin = (((t.ln() - llo) / (lhi - llo)) * FIT_BINS as f64).floor().min(FIT_BINS as f64 - 1.0) as usize;
        if bin != last_bin {
            thinned.push((t, y));
            last_bin = bin;
        }
    }
    let span = match (thinned.first(), thinned.last()) {
        (Some(a), Some(b)) => b.0 / a.0,
        _ => 0.0,
    };
    if thinned.len() < 8 || span < 10.0 * (1.0 - 1e-9) {
        return Err(Error::InsufficientRange(format!(
            "{} samples spanning a factor {span:.3} in t; need >= 8 over a decade",
            thinned.len()
        )));
    }
    let n = thinned.len() as f64;
    let xs: Vec<f64> = thinned.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = thinned.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (sse / (n - 2.0) / sxx).sqrt();
    Ok(DecayFit { slope, stderr, intercept, samples: thinned.len(), window, points: thinned })
}

/// `(t, ‖u(t)‖_p)` from the recorded series for `p ∈ {1, 2, ∞}`, otherwise from snapshots.
pub fn norm_points(traj: &Trajectory, p: f64) -> Result<Vec<(f64, f64)>> {
    let from_series = |g: fn(&crate::stepper::SeriesSample) -> f64| traj.series.iter().map(|s| (s.t, g(s))).collect();
    Ok(if p == 1.0 {
        from_series(|s| s.l1)
    } else if p == 2.0 {
        from_series(|s| s.l2)
    } else if p.is_infinite() && p > 0.0 {
        from_series(|s| s.linf)
    } else {
        traj.snapshots.iter().map(|s| Ok((s.t, lp_norm(&s.field, p)?))).collect::<Result<_>>()?
    })
}

/// Slope of `log ‖u(t)‖_p` against `log t` over `window`.
pub fn decay_fit(traj: &Trajectory, p: f64, window: (f64, f64)) -> Result<DecayFit> {
    fit_power_law(&norm_points(traj, p)?, window)
}

/// Centered standard deviation of `|u|` along `x_N`.
pub fn xn_spread(f: &Field) -> f64 {
    let g = f.grid();
    let axis = g.xn_axis();
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, v) in f.values().iter().enumerate() {
        let x = g.coords(i)[axis];
        let w = v.abs();
        m0 += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let mean = m1 / m0;
    (m2 / m0 - mean * mean).max(0.0).sqrt()
}

/// Power-law fit of the `x_N` spread over `window`; the slope estimates `β`.
pub fn spread_fit(traj: &Trajectory, window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = traj.snapshots.iter().map(|s| (s.t, xn_spread(&s.field))).collect();
    fit_power_law(&pts, window)
}

/// `‖∫u dx_N - M Γ_{N-1}(t_eff, ·)‖₁` over the transversal grid; for `N = 1`
/// the difference of total masses.
pub fn marginal_error(f: &Field, t_eff: f64, mass: f64) -> Result<f64> {
    match marginal_xprime(f) {
        Marginal::Mass(m) => Ok((m - mass).abs()),
        Marginal::Profile(p) => {
            let g = p.grid();
            let h = g.spacing(0);
            let mut err = 0.0;
            for (i, v) in p.values().iter().enumerate() {
                err += (v - mass * heat_kernel_marginal(t_eff, &[g.center(0, i)])?).abs();
            }
            Ok(err * h)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_values() {
        let e = exponents(2, 0.75).unwrap();
        assert!((e.alpha - 2.0).abs() < 1e-15 && (e.beta - 1.5).abs() < 1e-15 && (e.gamma - 2.0).abs() < 1e-15);
        let e = exponents(1, 0.75).unwrap();
        for v in [e.alpha, e.beta, e.gamma] {
            assert!((v - 4.0 / 3.0).abs() < 1e-15);
        }
        let e = exponents(2, 1.0 - 1e-12).unwrap();
        assert!((e.alpha - 1.5).abs() < 1e-9 && (e.beta - 1.0).abs() < 1e-9);
        assert!(exponents(2, 0.4).is_err());
    }

    #[test]
    fn marginal_values() {
        let v = heat_kernel_marginal(1.0, &[0.0]).unwrap();
        assert!((v - (4.0 * std::f64::consts::PI).powf(-0.5)).abs() < 1e-15);
        assert_eq!(heat_kernel_marginal(3.0, &[]).unwrap(), 1.0);
        assert!(heat_kernel_marginal(0.0, &[1.0]).is_err());
    }

    #[test]
    fn marginal_has_unit_mass() {
        // Composite Simpson on [-40, 40].
        for t in [0.1, 1.0, 7.0] {
            let n = 20_000;
            let h = 80.0 / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let x = -40.0 + i as f64 * h;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * heat_kernel_marginal(t, &[x]).unwrap();
            }
            assert!((s * h / 3.0 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_self_similar_field_has_fixed_profile() {
        let e = exponents(2, 0.8).unwrap();
        let profile = |xi: &[f64]| (-xi[0] * xi[0] - (xi[1] - 0.3).powi(2) * 2.0).exp();
        let g = Grid::covering(&[-30.0, -60.0], &[30.0, 60.0], &[0.1, 0.1]).unwrap();
        let target = Grid::covering(&[-4.0, -4.0], &[4.0, 4.0], &[0.05, 0.05]).unwrap();
        let reference = Field::from_fn(target, profile).unwrap();
        for t in [1.0f64, 4.0, 9.0] {
            let u = Field::from_fn(g, |x| {
                t.powf(-e.alpha) * profile(&[x[0] / t.sqrt(), x[1] / t.powf(e.beta)])
            })
            .unwrap();
            let r = rescale(&u, t, &e, &target).unwrap();
            let d = lp_norm(&r.sub(&reference).unwrap(), 1.0).unwrap();
            // Bilinear interpolation from a 0.1 grid; the profile has mass about 1.25.
            assert!(d < 1e-2, "t={t}: {d}");
        }
    }

    #[test]
    fn missed_support_is_reported() {
        let e = Exponents::parabolic(1);
        let g = Grid::line(-10.0, 10.0, 0.05).unwrap();
        let u = Field::from_fn(g, |x| if (x[0] - 5.0).abs() < 1.0 { 1.0 } else { 0.0 }).unwrap();
        let target = Grid::line(-1.0, 1.0, 0.05).unwrap();
        assert!(matches!(rescale(&u, 1.0, &e, &target), Err(Error::MissedSupport(_))));
    }

    #[test]
    fn power_law_fit_recovers_slope() {
        let pts: Vec<(f64, f64)> = (0..200).map(|i| {
            let t = 10f64.powf(i as f64 / 100.0);
            (t, 3.0 * t.powf(-1.25))
        }).collect();
        let fit = fit_power_law(&pts, (1.0, 100.0)).unwrap();
        assert!((fit.slope + 1.25).abs() < 1e-12 && fit.stderr < 1e-10);
        assert!(fit_power_law(&pts, (1.0, 5.0)).is_err());
        assert!(fit_power_law(&pts[..5], (1.0, 100.0)).is_err());
    }

    #[test]
    fn rescale_composes() {
        // Rescaling with exponents (λ then μ) equals rescaling by λμ.
        let e = exponents(1, 0.75).unwrap();
        let g = Grid::line(-20.0, 40.0, 0.01).unwrap();
        let u = Field::from_fn(g, |x| (-(x[0] - 1.0).powi(2)).exp()).unwrap();
        let mid = Grid::line(-15.0, 30.0, 0.01).unwrap();
        let target = Grid::line(-8.0, 16.0, 0.01).unwrap();
        let once = rescale(&rescale(&u, 1.5, &e, &mid).unwrap(), 2.0, &e, &target).unwrap();
        let direct = rescale(&u, 3.0, &e, &target).unwrap();
        let d = lp_norm(&once.sub(&direct).unwrap(), 1.0).unwrap();
        assert!(d < 1e-3, "{d}");
    }
}
