//! Convection nonlinearity `f(u) = |u|^{q-1} u`, its smooth regularization
//! `f_η(u) = (u² + η)^{q/2} - η^{q/2}`, the Godunov numerical flux and the
//! discrete divergence along `x_N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Exponent and regularization of the convection term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxParams {
    pub q: f64,
    /// Regularization `η >= 0`.
    pub eta: f64,
    /// Use `sgn(s) f_η(|s|)` for negative arguments instead of the even formula.
    #[serde(default = "yes")]
    pub odd_extension: bool,
    /// Positive floor on `|u|` used for the CFL bound when `η = 0` and `q < 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_floor: Option<f64>,
}

fn yes() -> bool {
    true
}

impl FluxParams {
    pub fn new(q: f64, eta: f64) -> Self {
        FluxParams { q, eta, odd_extension: true, u_floor: None }
    }

    /// Checks `q > 1 - 1/N` (the mass-conserving range) and `η >= 0`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let q_min = 1.0 - 1.0 / dim as f64;
        if !(self.q.is_finite() && self.q > q_min && self.q > 0.0) {
            return Err(Error::InvalidFlux(format!(
                "q = {} must satisfy q > 1 - 1/N = {q_min}",
                self.q
            )));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::InvalidFlux(format!("eta = {} must be >= 0", self.eta)));
        }
        if let Some(fl) = self.u_floor {
            if !(fl.is_finite() && fl > 0.0) {
                return Err(Error::InvalidFlux(format!("u_floor = {fl} must be positive")));
            }
        }
        Ok(())
    }

    /// Precomputed evaluator for hot loops.
    pub fn evaluator(&self) -> FluxEval {
        FluxEval {
            half_q: 0.5 * self.q,
            eta: self.eta,
            eta_pow: self.eta.powf(0.5 * self.q),
            odd: self.odd_extension,
        }
    }
}

/// `f_η` with `η^{q/2}` cached.
#[derive(Clone, Copy, Debug)]
pub struct FluxEval {
    half_q: f64,
    eta: f64,
    eta_pow: f64,
    odd: bool,
}

impl FluxEval {
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let v = (s * s + self.eta).powf(self.half_q) - self.eta_pow;
        if s < 0.0 && self.odd {
            -v
        } else {
            v
        }
    }
}

/// `|s|^{q-1} s`, with value 0 at the origin.
pub fn flux_exact(s: f64, p: &FluxParams) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.signum() * s.abs().powf(p.q)
    }
}

/// The regularized flux `f_η`.
pub fn flux_eta(s: f64, p: &FluxParams) -> f64 {
    p.evaluator().eval(s)
}

/// Upper bound on `|f_η'|` over `|s| <= umax`.
///
/// From `f_η'(s) = q s (s² + η)^{(q-2)/2} <= q (s² + η)^{(q-1)/2}`; for `q < 1`
/// the supremum sits at `s = 0`, giving `q η^{(q-1)/2}`.
pub fn lipschitz_bound(p: &FluxParams, umax: f64) -> Result<f64> {
    let umax = umax.abs();
    if p.q >= 1.0 {
        return Ok(p.q * (umax * umax + p.eta).powf(0.5 * (p.q - 1.0)));
    }
    if p.eta > 0.0 {
        return Ok(p.q * p.eta.powf(0.5 * (p.q - 1.0)));
    }
    match p.u_floor {
        Some(floor) if floor > 0.0 => Ok(p.q * floor.powf(p.q - 1.0)),
        _ => Err(Error::InvalidFlux(
            "eta = 0 with q < 1 needs a positive u_floor for the CFL bound".into(),
        )),
    }
}

/// Godunov flux of an arbitrary continuous `f` whose interior extrema are
/// among `critical`: the minimum of `f` over `[a, b]` if `a <= b`, else the
/// maximum over `[b, a]`.
pub fn godunov_flux(a: f64, b: f64, f: impl Fn(f64) -> f64, critical: &[f64]) -> f64 {
    if a <= b {
        let mut m = f(a).min(f(b));
        for &c in critical {
            if a < c && c < b {
                m = m.min(f(c));
            }
        }
        m
    } else {
        let mut m = f(a).max(f(b));
        for &c in critical {
            if b < c && c < a {
                m = m.max(f(c));
            }
        }
        m
    }
}

/// Godunov flux from cached endpoint values; the only critical point of
/// `f_η` is `s = 0`, where `f_η(0) = 0`.
#[inline]
pub(crate) fn godunov_cached(a: f64, b: f64, fa: f64, fb: f64) -> f64 {
    if a <= b {
        let m = fa.min(fb);
        if a < 0.0 && 0.0 < b {
            m.min(0.0)
        } else {
            m
        }
    } else {
        let m = fa.max(fb);
        if b < 0.0 && 0.0 < a {
            m.max(0.0)
        } else {
            m
        }
    }
}

/// Monotone numerical flux `F(a, b)` for `f_η`.
pub fn numerical_flux(a: f64, b: f64, p: &FluxParams) -> f64 {
    let ev = p.evaluator();
    godunov_flux(a, b, |s| ev.eval(s), &[0.0])
}

/// Face fluxes along `x_N` with zero flux on the two boundary faces of each line.
///
/// `faces` gets `line_len + 1` entries per line; `fvals` is scratch of the grid size.
pub(crate) fn face_fluxes(
    values: &[f64],
    grid: &Grid,
    ev: &FluxEval,
    fvals: &mut [f64],
    faces: &mut [f64],
) {
    let n = grid.line_len();
    for (fv, &u) in fvals.iter_mut().zip(values) {
        *fv = ev.eval(u);
    }
    for ((line, fline), face) in
        values.chunks(n).zip(fvals.chunks(n)).zip(faces.chunks_mut(n + 1))
    {
        face[0] = 0.0;
        face[n] = 0.0;
        for j in 0..n - 1 {
            face[j + 1] = godunov_cached(line[j], line[j + 1], fline[j], fline[j + 1]);
        }
    }
}

/// Reusable buffers for the explicit convection sub-step.
#[derive(Debug, Default)]
pub struct ConvectionKernel {
    fvals: Vec<f64>,
    faces: Vec<f64>,
}

impl ConvectionKernel {
    /// Writes `u - dt * D(u)` into `out`, where `D` is the discrete divergence.
    pub fn apply(&mut self, u: &[f64], grid: &Grid, p: &FluxParams, dt: f64, out: &mut [f64]) {
        let n = grid.line_len();
        self.fvals.resize(u.len(), 0.0);
        self.faces.resize(grid.n_lines() * (n + 1), 0.0);
        face_fluxes(u, grid, &p.evaluator(), &mut self.fvals, &mut self.faces);
        let lambda = dt / grid.spacing(grid.xn_axis());
        for ((line, face), o) in u.chunks(n).zip(self.faces.chunks(n + 1)).zip(out.chunks_mut(n)) {
            for j in 0..n {
                o[j] = line[j] - lambda * (face[j + 1] - face[j]);
            }
        }
    }
}

/// Discrete `∂_{x_N} f_η(u)`: `(F_{i+1/2} - F_{i-1/2}) / Δx_N`, zero flux at the walls.
pub fn convection_divergence(f: &Field, p: &FluxParams) -> Field {
    let g = *f.grid();
    let n = g.line_len();
    let mut fvals = vec![0.0; g.len()];
    let mut faces = vec![0.0; g.n_lines() * (n + 1)];
    face_fluxes(f.values(), &g, &p.evaluator(), &mut fvals, &mut faces);
    let inv_h = 1.0 / g.spacing(g.xn_axis());
    let mut out = vec![0.0; g.len()];
    for (face, o) in faces.chunks(n + 1).zip(out.chunks_mut(n)) {
        for j in 0..n {
            o[j] = (face[j + 1] - face[j]) * inv_h;
        }
    }
    Field::new(g, out).expect("finite fluxes of finite data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn exact_flux_values() {
        let p = FluxParams::new(0.5, 0.0);
        assert_eq!(flux_exact(1.0, &FluxParams::new(0.3, 0.0)), 1.0);
        assert_eq!(flux_exact(-1.0, &FluxParams::new(0.7, 0.0)), -1.0);
        assert_eq!(flux_exact(4.0, &p), 2.0);
        assert_eq!(flux_exact(0.0, &p), 0.0);
    }

    #[test]
    fn regularized_flux_values() {
        let p = FluxParams::new(0.5, 1.0);
        assert_eq!(flux_eta(0.0, &p), 0.0);
        let v = flux_eta(3f64.sqrt(), &p);
        assert!((v - (2f64.sqrt() - 1.0)).abs() < 1e-12);
        let even = FluxParams { odd_extension: false, ..p };
        assert_eq!(flux_eta(-1.5, &even), flux_eta(1.5, &even));
        assert_eq!(flux_eta(-1.5, &p), -flux_eta(1.5, &p));
    }

    #[test]
    fn regularized_flux_is_below_the_power() {
        for &q in &[0.3, 0.5, 0.75, 0.95] {
            for &eta in &[1e-6, 1e-2, 1.0] {
                let p = FluxParams::new(q, eta);
                for k in 0..2000 {
                    let s = k as f64 * 0.01;
                    let fe = flux_eta(s, &p);
                    assert!(fe >= 0.0 && fe <= s.powf(q) + 1e-15, "q={q} eta={eta} s={s}");
                }
            }
        }
    }

    #[test]
    fn lipschitz_values() {
        let l = lipschitz_bound(&FluxParams::new(0.5, 0.01), 10.0).unwrap();
        assert!((l - 0.5 * 0.01f64.powf(-0.25)).abs() < 1e-12);
        assert!((l - 1.581).abs() < 1e-3);
        let near_linear = lipschitz_bound(&FluxParams::new(1.0 - 1e-9, 0.3), 5.0).unwrap();
        assert!((near_linear - 1.0).abs() < 1e-6);
        assert!(lipschitz_bound(&FluxParams::new(0.5, 0.0), 1.0).is_err());
        let floored = FluxParams { u_floor: Some(1e-4), ..FluxParams::new(0.5, 0.0) };
        assert!((lipschitz_bound(&floored, 1.0).unwrap() - 0.5 * 100.0).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_bound_dominates_sampled_slopes() {
        // Brute-force slope scan over random pairs.
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for &(q, eta, umax) in &[(0.5, 0.01, 3.0), (0.75, 1e-4, 1.0), (0.9, 1e-8, 0.1)] {
            let p = FluxParams::new(q, eta);
            let l = lipschitz_bound(&p, umax).unwrap();
            let mut worst: f64 = 0.0;
            for _ in 0..100_000 {
                let a: f64 = rng.gen_range(-umax..umax);
                let b: f64 = rng.gen_range(-umax..umax);
                if a != b {
                    worst = worst.max((flux_eta(a, &p) - flux_eta(b, &p)).abs() / (a - b).abs());
                }
            }
            assert!(worst <= l * (1.0 + 1e-9), "q={q}: slope {worst} > {l}");
        }
    }

    #[test]
    fn upwind_for_increasing_flux() {
        let p = FluxParams { u_floor: Some(1e-3), ..FluxParams::new(0.5, 0.0) };
        assert_eq!(numerical_flux(1.0, -5.0, &p), 1.0);
        for &s in &[-2.0, -0.1, 0.0, 0.3, 7.0] {
            assert_eq!(numerical_flux(s, s, &p), flux_eta(s, &p));
        }
    }

    #[test]
    fn godunov_matches_brute_force_minimisation() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for (q, eta, odd) in [(0.75, 1e-3, true), (0.6, 0.05, false)] {
            let p = FluxParams { odd_extension: odd, ..FluxParams::new(q, eta) };
            for _ in 0..100_000 {
                let a: f64 = rng.gen_range(-2.0..2.0);
                let b: f64 = rng.gen_range(-2.0..2.0);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let samples = 64;
                let mut mn = f64::INFINITY;
                let mut mx = f64::NEG_INFINITY;
                for k in 0..=samples {
                    let v = flux_eta(lo + (hi - lo) * k as f64 / samples as f64, &p);
                    mn = mn.min(v);
                    mx = mx.max(v);
                }
                // The sampled extremum approaches the true one from the inside;
                // include the critical point so the comparison is exact in the limit.
                if lo < 0.0 && 0.0 < hi {
                    mn = mn.min(0.0);
                    mx = mx.max(0.0);
                }
                let brute = if a <= b { mn } else { mx };
                let g = numerical_flux(a, b, &p);
                assert!((g - brute).abs() < 1e-12, "a={a} b={b}: {g} vs {brute}");
                if odd {
                    assert_eq!(g, flux_eta(a, &p));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn numerical_flux_is_monotone(a in -3.0f64..3.0, b in -3.0f64..3.0, d in 0.0f64..1.0, even in any::<bool>()) {
            let p = FluxParams { odd_extension: !even, ..FluxParams::new(0.7, 1e-2) };
            prop_assert!(numerical_flux(a + d, b, &p) >= numerical_flux(a, b, &p));
            prop_assert!(numerical_flux(a, b + d, &p) <= numerical_flux(a, b, &p));
        }

        #[test]
        fn consistency_and_oddness(s in -5.0f64..5.0, q in 0.2f64..1.0, eta in 0.0f64..1.0) {
            let p = FluxParams::new(q, eta);
            prop_assert_eq!(numerical_flux(s, s, &p), flux_eta(s, &p));
            prop_assert_eq!(flux_eta(-s, &p), -flux_eta(s, &p));
        }

        #[test]
        fn regularization_gap_is_controlled(s in -10.0f64..10.0, q in 0.2f64..1.0, eta in 1e-8f64..1.0) {
            let p = FluxParams::new(q, eta);
            let gap = (flux_eta(s, &p) - flux_exact(s, &p)).abs();
            prop_assert!(gap <= eta.powf(q / 2.0) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn divergence_of_constant_and_total() {
        let g = Grid::line(-2.0, 2.0, 0.1).unwrap();
        let p = FluxParams::new(0.75, 1e-4);
        let d = convection_divergence(&Field::constant(g, 0.7), &p);
        let n = g.n(0);
        assert!(d.values()[1..n - 1].iter().all(|&v| v == 0.0));
        let f = Field::from_fn(g, |x| (3.0 * x[0]).sin() + 0.2 * x[0]).unwrap();
        let total = integrate(&convection_divergence(&f, &p));
        assert!(total.abs() < 1e-13);
    }

    #[test]
    fn divergence_converges_at_first_order() {
        // Oracle: d/dx f_η(u(x)) = f_η'(u) u'(x) for u = 1.5 + sin x.
        let p = FluxParams::new(0.9, 1e-4);
        let u = |x: f64| 1.5 + x.sin();
        let du = |x: f64| x.cos();
        let dfe = |s: f64| p.q * s * (s * s + p.eta).powf(0.5 * p.q - 1.0);
        let mut errs = Vec::new();
        for &h in &[0.02, 0.01, 0.005] {
            let g = Grid::line(-4.0, 4.0, h).unwrap();
            let f = Field::from_fn(g, |x| u(x[0])).unwrap();
            let d = convection_divergence(&f, &p);
            let mut err: f64 = 0.0;
            for i in 0..g.n(0) {
                let x = g.center(0, i);
                if x.abs() < 3.0 {
                    err = err.max((d.values()[i] - dfe(u(x)) * du(x)).abs());
                }
            }
            errs.push(err);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..2.2).contains(&ratio), "ratio {ratio}, errors {errs:?}");
        }
    }
}
