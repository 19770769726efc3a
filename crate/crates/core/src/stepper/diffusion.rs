//! Second-order diffusion stencils with a zero-Neumann closure and the linear
//! solvers for `(I + c A) v = b`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, MAX_DIM};

/// The diffusion operator `𝓛`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorChoice {
    /// `-Δ` in all variables.
    FullLaplacian,
    /// `-Δ_{x'}`; no diffusion along `x_N`. In one dimension this is zero.
    ReducedLaplacian,
    /// `-Δ_{x'} - ε ∂²_{x_N}`.
    ReducedPlusEps { eps: f64 },
}

impl OperatorChoice {
    /// Diffusion weight per axis.
    pub fn axis_weights(&self, dim: usize) -> [f64; MAX_DIM] {
        let mut w = [0.0; MAX_DIM];
        let xn = dim - 1;
        for (axis, wa) in w.iter_mut().enumerate().take(dim) {
            *wa = match (self, axis == xn) {
                (OperatorChoice::FullLaplacian, _) => 1.0,
                (_, false) => 1.0,
                (OperatorChoice::ReducedLaplacian, true) => 0.0,
                (OperatorChoice::ReducedPlusEps { eps }, true) => *eps,
            };
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OperatorChoice::ReducedPlusEps { eps } if !(eps.is_finite() && *eps >= 0.0) => Err(
                Error::InvalidConfig(format!("operator eps = {eps} must be finite and >= 0")),
            ),
            _ => Ok(()),
        }
    }
}

/// Linear solver for the implicit diffusion stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Direct line solves when only one axis diffuses, conjugate gradients otherwise.
    #[default]
    Auto,
    ConjugateGradient,
    /// Tridiagonal elimination along the single diffusing axis.
    LineDirect,
}

/// The matrix `A` of the discrete operator: `(A u)_i = Σ_a w_a/h_a² Σ_nbr (u_i - u_nbr)`,
/// neighbors outside the box omitted. Symmetric positive semidefinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionOperator {
    grid: Grid,
    coef: [f64; MAX_DIM],
}

impl DiffusionOperator {
    pub fn new(grid: Grid, op: OperatorChoice) -> Self {
        let w = op.axis_weights(grid.dim());
        let mut coef = [0.0; MAX_DIM];
        for a in 0..grid.dim() {
            let h = grid.spacing(a);
            coef[a] = w[a] / (h * h);
        }
        DiffusionOperator { grid, coef }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coef(&self, axis: usize) -> f64 {
        self.coef[axis]
    }

    pub fn is_zero(&self) -> bool {
        self.coef[..self.grid.dim()].iter().all(|&c| c == 0.0)
    }

    /// The unique diffusing axis, if exactly one axis diffuses.
    pub fn single_axis(&self) -> Option<usize> {
        let mut active = (0..self.grid.dim()).filter(|&a| self.coef[a] != 0.0);
        match (active.next(), active.next()) {
            (Some(a), None) => Some(a),
            _ => None,
        }
    }

    /// Largest diagonal entry of `A`.
    pub fn max_diagonal(&self) -> f64 {
        (0..self.grid.dim()).map(|a| 2.0 * self.coef[a]).sum()
    }

    /// `out = A u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.accumulate(u, 1.0, out);
    }

    /// `out += s * A u`.
    pub fn accumulate(&self, u: &[f64], s: f64, out: &mut [f64]) {
        let g = &self.grid;
        let n = g.line_len();
        let xn = g.xn_axis();
        let c = s * self.coef[xn];
        if c != 0.0 {
            for (line, o) in u.chunks(n).zip(out.chunks_mut(n)) {
                o[0] += c * (line[0] - line[1]);
                for j in 1..n - 1 {
                    o[j] += c * (2.0 * line[j] - line[j - 1] - line[j + 1]);
                }
                o[n - 1] += c * (line[n - 1] - line[n - 2]);
            }
        }
        if g.dim() == 2 {
            let c = s * self.coef[0];
            let rows = g.n(0);
            if c != 0.0 {
                for i in 0..rows {
                    let o = &mut out[i * n..(i + 1) * n];
                    let cur = &u[i * n..(i + 1) * n];
                    if i > 0 {
                        let prev = &u[(i - 1) * n..i * n];
                        for j in 0..n {
                            o[j] += c * (cur[j] - prev[j]);
                        }
                    }
                    if i + 1 < rows {
                        let next = &u[(i + 1) * n..(i + 2) * n];
                        for j in 0..n {
                            o[j] += c * (cur[j] - next[j]);
                        }
                    }
                }
            }
        }
    }

    /// `⟨A u, u⟩ · vol = vol Σ_faces w/h² (u_i - u_j)²`, the discrete `∫ |∇u|²` for the operator.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let g = &self.grid;
        let n = g.line_len();
        let xn = g.xn_axis();
        let mut total = 0.0;
        if self.coef[xn] != 0.0 {
            let mut s = 0.0;
            for line in u.chunks(n) {
                for j in 0..n - 1 {
                    let d = line[j + 1] - line[j];
                    s += d * d;
                }
            }
            total += self.coef[xn] * s;
        }
        if g.dim() == 2 && self.coef[0] != 0.0 {
            let mut s = 0.0;
            for i in 0..g.n(0) - 1 {
                for j in 0..n {
                    let d = u[(i + 1) * n + j] - u[i * n + j];
                    s += d * d;
                }
            }
            total += self.coef[0] * s;
        }
        total * g.cell_volume()
    }
}

/// Iteration count and final residual of a linear solve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solver for `(I + c A) x = b` with reusable buffers.
#[derive(Debug)]
pub struct DiffusionSolver {
    op: DiffusionOperator,
    kind: SolverKind,
    r: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
    // Tridiagonal factors cached for the last `c`.
    cached_c: f64,
    sweep: Vec<f64>,
    inv_den: Vec<f64>,
}

impl DiffusionSolver {
    pub fn new(op: DiffusionOperator, kind: SolverKind) -> Result<Self> {
        let kind = match kind {
            SolverKind::Auto if op.single_axis().is_some() => SolverKind::LineDirect,
            SolverKind::Auto => SolverKind::ConjugateGradient,
            SolverKind::LineDirect if op.single_axis().is_none() && !op.is_zero() => {
                return Err(Error::InvalidConfig(
                    "line_direct solver needs exactly one diffusing axis".into(),
                ))
            }
            k => k,
        };
        Ok(DiffusionSolver {
            op,
            kind,
            r: Vec::new(),
            p: Vec::new(),
            ap: Vec::new(),
            cached_c: f64::NAN,
            sweep: Vec::new(),
            inv_den: Vec::new(),
        })
    }

    pub fn operator(&self) -> &DiffusionOperator {
        &self.op
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    /// Solves `(I + c A) x = b`, overwriting `x` (which must hold `b` on entry).
    ///
    /// The iterative path stops once `‖r‖₂ <= tol`.
    pub fn solve(&mut self, c: f64, x: &mut [f64], tol: f64, max_iters: usize) -> Result<SolveStats> {
        if c == 0.0 || self.op.is_zero() {
            return Ok(SolveStats::default());
        }
        match self.kind {
            SolverKind::LineDirect => {
                self.solve_lines(c, x);
                Ok(SolveStats { iterations: 1, residual: 0.0 })
            }
            _ => self.solve_cg(c, x, tol, max_iters),
        }
    }

    fn solve_cg(&mut self, c: f64, x: &mut [f64], tol: f64, max_iters: usize) -> Result<SolveStats> {
        let n = x.len();
        self.r.clear();
        self.r.extend_from_slice(x);
        self.ap.resize(n, 0.0);
        self.p.resize(n, 0.0);
        // x0 = b, so r0 = -c A b: every residual and direction has zero sum.
        self.op.apply(x, &mut self.ap);
        for (r, a) in self.r.iter_mut().zip(&self.ap) {
            *r = -c * a;
        }
        self.p.copy_from_slice(&self.r);
        let mut rr = dot(&self.r, &self.r);
        let mut it = 0;
        while rr.sqrt() > tol {
            if it >= max_iters {
                return Err(Error::LinearSolve { iterations: it, residual: rr.sqrt() });
            }
            self.ap.copy_from_slice(&self.p);
            self.op.accumulate(&self.p, c, &mut self.ap);
            let pap = dot(&self.p, &self.ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            for ((xi, pi), (ri, api)) in
                x.iter_mut().zip(&self.p).zip(self.r.iter_mut().zip(&self.ap))
            {
                *xi += alpha * pi;
                *ri -= alpha * api;
            }
            let rr_new = dot(&self.r, &self.r);
            let beta = rr_new / rr;
            for (pi, ri) in self.p.iter_mut().zip(&self.r) {
                *pi = ri + beta * *pi;
            }
            rr = rr_new;
            it += 1;
        }
        Ok(SolveStats { iterations: it, residual: rr.sqrt() })
    }

    fn factor(&mut self, c: f64, len: usize) {
        if self.cached_c == c && self.inv_den.len() == len {
            return;
        }
        // Rows: diag 1 + c·(#neighbors), off-diagonals -c.
        self.sweep.resize(len, 0.0);
        self.inv_den.resize(len, 0.0);
        let mut prev = 0.0;
        for i in 0..len {
            let nbrs = if i == 0 || i + 1 == len { 1.0 } else { 2.0 };
            let den = 1.0 + c * nbrs + c * prev;
            self.inv_den[i] = 1.0 / den;
            prev = -c / den;
            self.sweep[i] = prev;
        }
        self.cached_c = c;
    }

    fn solve_lines(&mut self, c: f64, x: &mut [f64]) {
        let g = *self.op.grid();
        let axis = self.op.single_axis().expect("line solver has one axis");
        let cc = c * self.op.coef(axis);
        let n = g.line_len();
        if axis == g.xn_axis() {
            self.factor(cc, n);
            for line in x.chunks_mut(n) {
                line[0] *= self.inv_den[0];
                for i in 1..n {
                    line[i] = flush((line[i] + cc * line[i - 1]) * self.inv_den[i]);
                }
                for i in (0..n - 1).rev() {
                    line[i] = flush(line[i] - self.sweep[i] * line[i + 1]);
                }
            }
        } else {
            // Transversal axis: sweep whole rows at once.
            let rows = g.n(0);
            self.factor(cc, rows);
            for v in &mut x[..n] {
                *v *= self.inv_den[0];
            }
            for i in 1..rows {
                let (done, rest) = x.split_at_mut(i * n);
                let prev = &done[(i - 1) * n..];
                let d = self.inv_den[i];
                for (v, pv) in rest[..n].iter_mut().zip(prev) {
                    *v = flush((*v + cc * pv) * d);
                }
            }
            for i in (0..rows - 1).rev() {
                let (head, tail) = x.split_at_mut((i + 1) * n);
                let s = self.sweep[i];
                for (v, nv) in head[i * n..].iter_mut().zip(&tail[..n]) {
                    *v = flush(*v - s * nv);
                }
            }
        }
    }
}

/// Subnormal results become zero. The sweeps decay geometrically away from
/// the support and subnormal arithmetic is two orders of magnitude slower.
#[inline]
pub(crate) fn flush(v: f64) -> f64 {
    if v.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(op: &DiffusionOperator, c: f64, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        op.apply(x, &mut ax);
        x.iter().zip(&ax).zip(b).map(|((xi, ai), bi)| (xi + c * ai - bi).powi(2)).sum::<f64>().sqrt()
    }

    fn bumpy(g: &Grid) -> Vec<f64> {
        (0..g.len())
            .map(|i| {
                let x = g.coords(i);
                (1.0 + x[0] * 0.3).sin() + (x[1] * 1.7).cos().powi(2)
            })
            .collect()
    }

    #[test]
    fn line_solver_matches_cg() {
        let g = Grid::covering(&[-2.0, -3.0], &[2.0, 3.0], &[0.1, 0.2]).unwrap();
        let b = bumpy(&g);
        for op in [OperatorChoice::ReducedLaplacian, OperatorChoice::ReducedPlusEps { eps: 0.0 }] {
            let a = DiffusionOperator::new(g, op);
            let mut direct = DiffusionSolver::new(a, SolverKind::LineDirect).unwrap();
            let mut cg = DiffusionSolver::new(a, SolverKind::ConjugateGradient).unwrap();
            let mut x1 = b.clone();
            let mut x2 = b.clone();
            direct.solve(0.05, &mut x1, 0.0, 0).unwrap();
            cg.solve(0.05, &mut x2, 1e-13, 10_000).unwrap();
            assert!(residual(&a, 0.05, &x1, &b) < 1e-11);
            let diff = x1.iter().zip(&x2).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "{diff}");
        }
    }

    #[test]
    fn line_solver_along_xn() {
        let g = Grid::line(-3.0, 3.0, 0.05).unwrap();
        let a = DiffusionOperator::new(g, OperatorChoice::FullLaplacian);
        let b: Vec<f64> = (0..g.len()).map(|i| (g.center(0, i) * 2.0).sin().abs()).collect();
        let mut s = DiffusionSolver::new(a, SolverKind::Auto).unwrap();
        assert_eq!(s.kind(), SolverKind::LineDirect);
        let mut x = b.clone();
        s.solve(0.3, &mut x, 0.0, 0).unwrap();
        assert!(residual(&a, 0.3, &x, &b) < 1e-12);
        let (sb, sx): (f64, f64) = (b.iter().sum(), x.iter().sum());
        assert!((sb - sx).abs() < 1e-12 * sb);
        assert!(x.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cg_conserves_sum_and_converges() {
        let g = Grid::covering(&[-2.0, -2.0], &[2.0, 2.0], &[0.1, 0.1]).unwrap();
        let a = DiffusionOperator::new(g, OperatorChoice::FullLaplacian);
        let b = bumpy(&g);
        let mut s = DiffusionSolver::new(a, SolverKind::Auto).unwrap();
        assert_eq!(s.kind(), SolverKind::ConjugateGradient);
        let mut x = b.clone();
        let stats = s.solve(0.01, &mut x, 1e-12, 10_000).unwrap();
        assert!(stats.residual <= 1e-12);
        assert!(residual(&a, 0.01, &x, &b) < 1e-11);
        let (sb, sx): (f64, f64) = (b.iter().sum(), x.iter().sum());
        assert!((sb - sx).abs() < 1e-12 * sb.abs());
    }

    #[test]
    fn cg_reports_exhausted_budget() {
        let g = Grid::covering(&[-2.0, -2.0], &[2.0, 2.0], &[0.05, 0.05]).unwrap();
        let a = DiffusionOperator::new(g, OperatorChoice::FullLaplacian);
        let mut s = DiffusionSolver::new(a, SolverKind::ConjugateGradient).unwrap();
        let mut x = bumpy(&g);
        assert!(matches!(s.solve(1.0, &mut x, 1e-14, 2), Err(Error::LinearSolve { .. })));
    }

    #[test]
    fn energy_is_quadratic_form() {
        let g = Grid::covering(&[-1.0, -1.0], &[1.0, 1.0], &[0.1, 0.2]).unwrap();
        let a = DiffusionOperator::new(g, OperatorChoice::ReducedPlusEps { eps: 0.3 });
        let u = bumpy(&g);
        let mut au = vec![0.0; u.len()];
        a.apply(&u, &mut au);
        let quad: f64 = au.iter().zip(&u).map(|(p, q)| p * q).sum::<f64>() * g.cell_volume();
        assert!((quad - a.energy(&u)).abs() < 1e-10 * quad);
    }

    #[test]
    fn reduced_is_zero_in_one_dimension() {
        let g = Grid::line(-1.0, 1.0, 0.1).unwrap();
        assert!(DiffusionOperator::new(g, OperatorChoice::ReducedLaplacian).is_zero());
    }
}
