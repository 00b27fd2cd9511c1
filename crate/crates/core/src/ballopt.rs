//! Maximization of `∫ f dμ0` over the ball `{μ0 : 𝒰(μ0, μ1) ≤ λ}`.
//!
//! Candidate atoms of `μ0` sit on the grid angles `2πg/G`. For a multiplier
//! `τ > max f` the Lagrangian is maximized in closed form: the mass of `μ0`
//! at `g` is `m_g = τ η0_g / (τ - f_g)`, which leaves a transport problem
//! with cost `ℓ_gj + ln(1 - f_g/τ)` and entropic marginal penalty on the
//! `μ1` side. Each atom of `μ1` then sends `b_j e^{-c_j}` to its cheapest
//! grid point. Bisection on `τ` saturates the constraint.
//!
//! The solution is turned into a homogeneous coupling and reduced to at most
//! `N + 2` atoms (`N + 4` with a vanishing first moment) by moving along null
//! directions of the linear constraints.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{circ_dist, ell, Angle, DiscreteMeasure};
use crate::wfr::{entropy, solve_let, ConeAtom, ConeCoupling, DEFAULT_TOL};

/// Smallest grid accepted by [`solve_grid`].
pub const MIN_BALL_GRID: usize = 64;
/// Residual tolerance of the coupling constraints.
pub const CONSTRAINT_TOL: f64 = 1e-8;
const BISECTION_STEPS: usize = 200;
const MAX_CUTS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallProblem {
    /// Objective sampled at the angles `2πg/G`.
    pub f: Vec<f64>,
    pub mu1: DiscreteMeasure,
    pub lambda: f64,
    /// Restrict to `μ0` with vanishing first moment.
    pub moment_constrained: bool,
}

impl BallProblem {
    pub fn new(f: Vec<f64>, mu1: DiscreteMeasure, lambda: f64, moment_constrained: bool) -> Result<Self> {
        if f.len() < 4 {
            return Err(Error::GridTooCoarse { got: f.len(), min: 4 });
        }
        if let Some(v) = f.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("objective value {v} is not finite")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("radius must be finite and nonnegative, got {lambda}")));
        }
        if mu1.is_zero() {
            return Err(Error::ZeroMeasure);
        }
        Ok(BallProblem { f, mu1, lambda, moment_constrained })
    }

    pub fn resolution(&self) -> usize {
        self.f.len()
    }

    pub fn angle(&self, g: usize) -> f64 {
        TAU * g as f64 / self.f.len() as f64
    }

    /// Value at the nearest grid angle.
    pub fn f_at(&self, x: Angle) -> f64 {
        let n = self.f.len();
        let g = (x.radians() / TAU * n as f64).round() as usize % n;
        self.f[g]
    }

    pub fn objective(&self, mu: &DiscreteMeasure) -> f64 {
        mu.atoms().iter().map(|a| a.mass * self.f_at(a.angle)).sum()
    }

    fn norm(&self) -> f64 {
        self.f.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `(λ + √|μ1|)²`, the largest total mass in the ball.
pub fn mass_bound(mu1: &DiscreteMeasure, lambda: f64) -> f64 {
    (lambda + mu1.total_mass().sqrt()).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallPair {
    pub g: usize,
    pub j: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    /// Mass of `μ0` at each grid angle.
    pub m: Vec<f64>,
    /// Nonzero entries of the coupling between grid angles and atoms of `μ1`.
    pub eta: Vec<BallPair>,
    pub value: f64,
    /// LET objective of `(m, η)`; at most `λ²`.
    pub constraint_value: f64,
    /// Lagrange multiplier of the ball constraint.
    pub tau: f64,
    /// Dual bound minus `value`.
    pub gap: f64,
    /// Multipliers of the first-moment constraint.
    pub moment_multipliers: Option<[f64; 2]>,
    pub first_moment: [f64; 2],
}

impl GridSolution {
    pub fn mu0(&self, p: &BallProblem) -> DiscreteMeasure {
        let pairs: Vec<(f64, f64)> =
            self.m.iter().enumerate().filter(|(_, &m)| m > 0.0).map(|(g, &m)| (p.angle(g), m)).collect();
        DiscreteMeasure::from_pairs(&pairs).expect("nonnegative grid masses")
    }
}

struct Costs {
    /// `ℓ(d(x_g, y_j))`, `None` when infinite.
    ell: Vec<Option<f64>>,
    n: usize,
}

impl Costs {
    fn new(p: &BallProblem) -> Self {
        let n = p.mu1.len();
        let mut ell_gj = Vec::with_capacity(p.resolution() * n);
        for g in 0..p.resolution() {
            let x = Angle::new(p.angle(g));
            for a in p.mu1.atoms() {
                ell_gj.push(ell(circ_dist(x, a.angle)).finite());
            }
        }
        Costs { ell: ell_gj, n }
    }

    fn at(&self, g: usize, j: usize) -> Option<f64> {
        self.ell[g * self.n + j]
    }
}

#[derive(Debug, Clone)]
struct Point {
    m: Vec<f64>,
    pairs: BTreeMap<(usize, usize), f64>,
    /// `Σ w m` for the weights the point was computed with.
    value: f64,
    constraint: f64,
}

fn let_objective(m: &[f64], pairs: &BTreeMap<(usize, usize), f64>, b: &[f64], costs: &Costs) -> f64 {
    let mut rows = vec![0.0; m.len()];
    let mut cols = vec![0.0; b.len()];
    let mut transport = 0.0;
    for (&(g, j), &w) in pairs {
        rows[g] += w;
        cols[j] += w;
        transport += w * costs.at(g, j).unwrap_or(f64::INFINITY);
    }
    let a: f64 = m.iter().zip(&rows).filter(|(&m, _)| m > 0.0).map(|(&m, &r)| m * entropy(r / m)).sum();
    let c: f64 = b.iter().zip(&cols).map(|(&b, &c)| b * entropy(c / b)).sum();
    a + c + transport
}

/// Maximizer of `Σ w m - τ LET(m, η)` for `τ > max(w, 0)`.
fn lagrangian_point(w: &[f64], b: &[f64], costs: &Costs, tau: f64) -> Point {
    let gn = w.len();
    let shift: Vec<f64> = w.iter().map(|&f| (1.0 - f / tau).ln()).collect();
    let mut m = vec![0.0; gn];
    let mut pairs = BTreeMap::new();
    for (j, &bj) in b.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for g in 0..gn {
            if let Some(c) = costs.at(g, j) {
                let c = c + shift[g];
                if best.map_or(true, |(bc, _)| c < bc) {
                    best = Some((c, g));
                }
            }
        }
        if let Some((c, g)) = best {
            let p = bj * (-c).exp();
            *pairs.entry((g, j)).or_insert(0.0) += p;
            m[g] += tau / (tau - w[g]) * p;
        }
    }
    let value = m.iter().zip(w).map(|(m, w)| m * w).sum();
    let constraint = let_objective(&m, &pairs, b, costs);
    Point { m, pairs, value, constraint }
}

fn mix(points: &[(f64, &Point)], w: &[f64], b: &[f64], costs: &Costs) -> Point {
    let mut m = vec![0.0; w.len()];
    let mut pairs = BTreeMap::new();
    for &(t, p) in points {
        if t == 0.0 {
            continue;
        }
        for (g, v) in p.m.iter().enumerate() {
            m[g] += t * v;
        }
        for (&k, &v) in &p.pairs {
            *pairs.entry(k).or_insert(0.0) += t * v;
        }
    }
    let value = m.iter().zip(w).map(|(m, w)| m * w).sum();
    let constraint = let_objective(&m, &pairs, b, costs);
    Point { m, pairs, value, constraint }
}

struct Solved {
    point: Point,
    tau: f64,
    /// Upper bound on the optimal value for the weights used.
    bound: f64,
}

/// Ball maximization for the weights `w` on the grid.
fn solve_weights(w: &[f64], b: &[f64], costs: &Costs, lambda: f64, norm: f64) -> Result<Solved> {
    let lam2 = lambda * lambda;
    let total: f64 = b.iter().sum();
    let (gmax, fmax) = w.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (g, &v)| if v > acc.1 { (g, v) } else { acc });
    if fmax <= 0.0 && total <= lam2 {
        // The zero measure is feasible and nothing beats it.
        let point = Point { m: vec![0.0; w.len()], pairs: BTreeMap::new(), value: 0.0, constraint: total };
        return Ok(Solved { point, tau: 0.0, bound: 0.0 });
    }
    let base = fmax.max(0.0);
    let lagrangian = |p: &Point, tau: f64| p.value - tau * (p.constraint - lam2);
    let mut lo = base + 1e-9 * (1.0 + norm);
    let mut p_lo = lagrangian_point(w, b, costs, lo);
    if p_lo.constraint <= lam2 {
        // The budget is not exhausted near τ = max f: create mass at the
        // maximum of the objective, at unit cost per unit mass.
        let bound = lagrangian(&p_lo, lo);
        if fmax > 0.0 {
            let c = lam2 - p_lo.constraint;
            p_lo.m[gmax] += c;
            p_lo.value += fmax * c;
            p_lo.constraint = let_objective(&p_lo.m, &p_lo.pairs, b, costs);
        }
        return Ok(Solved { bound: bound.max(p_lo.value), point: p_lo, tau: lo });
    }
    let mut hi = base + 10.0 * (1.0 + norm);
    let mut p_hi = lagrangian_point(w, b, costs, hi);
    let mut expansions = 0;
    while p_hi.constraint > lam2 {
        expansions += 1;
        if expansions > 200 {
            return Err(Error::Infeasible(format!(
                "no grid measure lies within the ball; the closest found has LET value {}",
                p_hi.constraint
            )));
        }
        lo = hi;
        p_lo = p_hi;
        hi = base + 2.0 * (hi - base);
        p_hi = lagrangian_point(w, b, costs, hi);
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let p = lagrangian_point(w, b, costs, mid);
        if p.constraint > lam2 {
            lo = mid;
            p_lo = p;
        } else {
            hi = mid;
            p_hi = p;
        }
    }
    let bound = lagrangian(&p_lo, lo).min(lagrangian(&p_hi, hi));
    // The maximizer switches at the saturating multiplier; mix the two sides
    // up to the budget.
    let (mut a, mut z) = (0.0, 1.0);
    let mut best = p_hi.clone();
    for _ in 0..100 {
        let t = 0.5 * (a + z);
        let p = mix(&[(1.0 - t, &p_hi), (t, &p_lo)], w, b, costs);
        if p.constraint <= lam2 {
            a = t;
            best = p;
        } else {
            z = t;
        }
    }
    Ok(Solved { point: best, tau: hi, bound })
}

fn first_moment(p: &BallProblem, m: &[f64]) -> [f64; 2] {
    let mut s = [0.0, 0.0];
    for (g, &v) in m.iter().enumerate() {
        let (sn, cs) = p.angle(g).sin_cos();
        s[0] += v * cs;
        s[1] += v * sn;
    }
    s
}

fn to_solution(p: &BallProblem, point: Point, tau: f64, bound: f64, multipliers: Option<[f64; 2]>) -> GridSolution {
    let value: f64 = point.m.iter().zip(&p.f).map(|(m, f)| m * f).sum();
    GridSolution {
        first_moment: first_moment(p, &point.m),
        eta: point.pairs.iter().filter(|(_, &v)| v > 0.0).map(|(&(g, j), &mass)| BallPair { g, j, mass }).collect(),
        m: point.m,
        value,
        constraint_value: point.constraint,
        tau,
        gap: (bound - value).max(0.0),
        moment_multipliers: multipliers,
    }
}

/// Maximizes `Σ f_g m_g` over grid measures in the ball.
///
/// Fails with a non-convergence error carrying the best value when the
/// certified gap exceeds `tol·(1 + |value|)`.
pub fn solve_grid(p: &BallProblem, tol: f64) -> Result<GridSolution> {
    if p.resolution() < MIN_BALL_GRID {
        return Err(Error::GridTooCoarse { got: p.resolution(), min: MIN_BALL_GRID });
    }
    if !(p.lambda > 0.0) {
        return Err(Error::InvalidArgument("the ball radius must be positive".into()));
    }
    let sol = if p.moment_constrained { solve_moment(p, tol)? } else { solve_plain(p)? };
    if sol.gap > tol * (1.0 + sol.value.abs()) {
        return Err(Error::NonConvergence { best_value: sol.value, gap: sol.gap });
    }
    Ok(sol)
}

fn solve_plain(p: &BallProblem) -> Result<GridSolution> {
    let costs = Costs::new(p);
    let b: Vec<f64> = p.mu1.atoms().iter().map(|a| a.mass).collect();
    let s = solve_weights(&p.f, &b, &costs, p.lambda, p.norm())?;
    Ok(to_solution(p, s.point, s.tau, s.bound, None))
}

struct Cut {
    z: [f64; 2],
    /// Dual function at `z`, as an upper bound.
    upper: f64,
    /// Value for the multiplied weights, defining the cut.
    value: f64,
    moment: [f64; 2],
    f_value: f64,
    point: Point,
    tau: f64,
}

/// Cutting planes on the moment multipliers `z`: the dual function
/// `V(z) = max Σ (f - z·u) m` is convex with subgradient `-moment`. The
/// restricted primal mixes the cut points with zero moment.
fn solve_moment(p: &BallProblem, tol: f64) -> Result<GridSolution> {
    let costs = Costs::new(p);
    let b: Vec<f64> = p.mu1.atoms().iter().map(|a| a.mass).collect();
    let norm = p.norm();
    let units: Vec<[f64; 2]> = (0..p.resolution()).map(|g| {
        let (s, c) = p.angle(g).sin_cos();
        [c, s]
    }).collect();
    let mut radius = 4.0 * (1.0 + norm);
    let mut cuts: Vec<Cut> = Vec::new();
    let mut z = [0.0, 0.0];
    let mut best: Option<(f64, Point, Vec<(usize, f64)>)> = None;
    for _ in 0..MAX_CUTS {
        let w: Vec<f64> = p.f.iter().zip(&units).map(|(f, u)| f - z[0] * u[0] - z[1] * u[1]).collect();
        let s = solve_weights(&w, &b, &costs, p.lambda, norm + z[0].abs() + z[1].abs())?;
        let moment = first_moment(p, &s.point.m);
        let f_value = s.point.m.iter().zip(&p.f).map(|(m, f)| m * f).sum();
        cuts.push(Cut { z, upper: s.bound, value: s.point.value, moment, f_value, point: s.point, tau: s.tau });
        let upper = cuts.iter().map(|c| c.upper).fold(f64::INFINITY, f64::min);
        if let Some((weights, value)) = zero_moment_mix(&cuts, z) {
            if best.as_ref().map_or(true, |b| value > b.0) {
                let pts: Vec<(f64, &Point)> = weights.iter().map(|&(k, t)| (t, &cuts[k].point)).collect();
                let mixed = mix(&pts, &p.f, &b, &costs);
                best = Some((value, mixed, weights));
            }
            if let Some(bv) = &best {
                if upper - bv.0 <= 0.1 * tol * (1.0 + upper.abs()) {
                    break;
                }
            }
        }
        let (next, on_box) = kelley_step(&cuts, radius)?;
        if on_box {
            radius *= 4.0;
        } else if next == z {
            break;
        }
        z = next;
    }
    let upper = cuts.iter().map(|c| c.upper).fold(f64::INFINITY, f64::min);
    let arg = cuts.iter().min_by(|a, b| a.upper.total_cmp(&b.upper)).expect("at least one cut");
    let (multipliers, tau) = (arg.z, arg.tau);
    match best {
        Some((_, point, _)) => Ok(to_solution(p, point, tau, upper, Some(multipliers))),
        None => Err(Error::Infeasible("no measure in the ball with vanishing first moment was found".into())),
    }
}

/// Minimizer of the cutting-plane model inside the box `|z_i| ≤ radius`.
fn kelley_step(cuts: &[Cut], radius: f64) -> Result<([f64; 2], bool)> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let z0 = lp.add_var(0.0, (-radius, radius));
    let z1 = lp.add_var(0.0, (-radius, radius));
    for c in cuts {
        // t ≥ value - moment·(z - z_c)
        let rhs = c.value + c.moment[0] * c.z[0] + c.moment[1] * c.z[1];
        lp.add_constraint(&[(t, 1.0), (z0, c.moment[0]), (z1, c.moment[1])], ComparisonOp::Ge, rhs);
    }
    let sol = lp.solve().map_err(|e| Error::Infeasible(format!("cutting-plane model: {e}")))?;
    let mut z = [*sol.var_value(z0), *sol.var_value(z1)];
    // The simplex works to a loose tolerance; re-solve the vertex from the
    // nearly active cuts in exact arithmetic and keep the best one.
    let model = |z: [f64; 2]| cuts.iter().map(|c| cut_at(c, z)).fold(f64::NEG_INFINITY, f64::max);
    let mut best = model(z);
    let mut near: Vec<usize> = (0..cuts.len()).collect();
    near.sort_by(|&a, &b| (best - cut_at(&cuts[a], z)).total_cmp(&(best - cut_at(&cuts[b], z))));
    near.truncate(6);
    for (i, &a) in near.iter().enumerate() {
        for (k, &b) in near.iter().enumerate().skip(i + 1) {
            for &c in &near[k + 1..] {
                let m = nalgebra::Matrix3::from_fn(|r, col| match col {
                    0 => 1.0,
                    _ => cuts[[a, b, c][r]].moment[col - 1],
                });
                let rhs = nalgebra::Vector3::from_fn(|r, _| {
                    let q = &cuts[[a, b, c][r]];
                    q.value + q.moment[0] * q.z[0] + q.moment[1] * q.z[1]
                });
                if let Some(x) = m.lu().solve(&rhs) {
                    let cand = [x[1], x[2]];
                    if cand.iter().all(|v| v.is_finite() && v.abs() <= radius) {
                        let v = model(cand);
                        if v < best {
                            best = v;
                            z = cand;
                        }
                    }
                }
            }
        }
    }
    let on_box = z.iter().any(|v| v.abs() >= radius * (1.0 - 1e-9));
    Ok((z, on_box))
}

fn cut_at(c: &Cut, z: [f64; 2]) -> f64 {
    c.value - c.moment[0] * (z[0] - c.z[0]) - c.moment[1] * (z[1] - c.z[1])
}

/// Convex weights on the cut points with zero total moment and the largest
/// objective. The simplex solution and every triple of the cuts most active
/// at `z` are re-solved exactly; the best nonnegative one is kept.
fn zero_moment_mix(cuts: &[Cut], z: [f64; 2]) -> Option<(Vec<(usize, f64)>, f64)> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = cuts.iter().map(|c| lp.add_var(c.f_value, (0.0, f64::INFINITY))).collect();
    lp.add_constraint(vars.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    for axis in 0..2 {
        lp.add_constraint(
            vars.iter().zip(cuts).map(|(&v, c)| (v, c.moment[axis])).collect::<Vec<_>>(),
            ComparisonOp::Eq,
            0.0,
        );
    }
    let mut candidates: Vec<(Vec<usize>, Option<Vec<f64>>)> = Vec::new();
    if let Ok(sol) = lp.solve() {
        let support: Vec<usize> = (0..cuts.len()).filter(|&k| *sol.var_value(vars[k]) > 1e-12).collect();
        let start = support.iter().map(|&k| *sol.var_value(vars[k])).collect();
        candidates.push((support, Some(start)));
    }
    let level = cuts.iter().map(|c| cut_at(c, z)).fold(f64::NEG_INFINITY, f64::max);
    let mut near: Vec<usize> = (0..cuts.len()).collect();
    near.sort_by(|&a, &b| (level - cut_at(&cuts[a], z)).total_cmp(&(level - cut_at(&cuts[b], z))));
    near.truncate(6);
    for (i, &a) in near.iter().enumerate() {
        for (k, &b) in near.iter().enumerate().skip(i + 1) {
            candidates.push((vec![a, b], None));
            for &c in &near[k + 1..] {
                candidates.push((vec![a, b, c], None));
            }
        }
    }
    let target = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
    let mut best: Option<(Vec<(usize, f64)>, f64)> = None;
    for (support, start) in candidates {
        if support.is_empty() {
            continue;
        }
        let a = DMatrix::from_fn(3, support.len(), |r, c| match r {
            0 => 1.0,
            _ => cuts[support[c]].moment[r - 1],
        });
        let Ok(pinv) = a.clone().pseudo_inverse(1e-14) else { continue };
        let mut w = match start {
            Some(s) => DVector::from_vec(s),
            None => DVector::zeros(support.len()),
        };
        for _ in 0..3 {
            let r = &target - &a * &w;
            w += &pinv * r;
        }
        let r = (&target - &a * &w).norm();
        if r > 1e-13 || w.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let weights: Vec<(usize, f64)> = support.iter().zip(w.iter()).map(|(&k, &v)| (k, v.max(0.0))).collect();
        let value = weights.iter().map(|&(k, t)| t * cuts[k].f_value).sum();
        if best.as_ref().map_or(true, |b| value > b.1) {
            best = Some((weights, value));
        }
    }
    best
}

/// Violations of the linear constraints satisfied by a feasible coupling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Residuals {
    /// `|γ(total) - 1|`.
    pub mass: f64,
    /// `max(J(γ) - λ², 0)`.
    pub energy_excess: f64,
    /// `|∫ r1² 𝟙{θ1 = y_j} dγ - μ1({y_j})|` for every atom of `μ1`.
    pub marginals: Vec<f64>,
    /// Second-cone mass outside the support of `μ1`.
    pub stray: f64,
    /// Norm of the first moment of the first marginal, when constrained.
    pub moment: Option<f64>,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.marginals
            .iter()
            .copied()
            .chain([self.mass, self.energy_excess, self.stray, self.moment.unwrap_or(0.0)])
            .fold(0.0, f64::max)
    }
}

fn match_atom(mu1: &DiscreteMeasure, x: Angle) -> Option<usize> {
    mu1.atoms().iter().position(|a| circ_dist(a.angle, x) <= 1e-12)
}

pub fn coupling_residuals(gamma: &ConeCoupling, p: &BallProblem) -> Residuals {
    let mut marg = vec![0.0; p.mu1.len()];
    let mut stray = 0.0;
    let mut moment = [0.0, 0.0];
    for a in &gamma.atoms {
        let s = a.mass * a.r1 * a.r1;
        if s > 0.0 {
            match match_atom(&p.mu1, a.theta1) {
                Some(j) => marg[j] += s,
                None => stray += s,
            }
        }
        let u = a.theta0.unit();
        moment[0] += a.mass * a.r0 * a.r0 * u[0];
        moment[1] += a.mass * a.r0 * a.r0 * u[1];
    }
    Residuals {
        mass: (gamma.total_mass() - 1.0).abs(),
        energy_excess: (gamma.energy() - p.lambda * p.lambda).max(0.0),
        marginals: marg.iter().zip(p.mu1.atoms()).map(|(m, a)| (m - a.mass).abs()).collect(),
        stray,
        moment: p.moment_constrained.then(|| moment[0].hypot(moment[1])),
    }
}

/// `∫ r0² f(θ0) dγ`.
pub fn coupling_objective(gamma: &ConeCoupling, p: &BallProblem) -> f64 {
    gamma.atoms.iter().map(|a| a.mass * a.r0 * a.r0 * p.f_at(a.theta0)).sum()
}

/// Homogeneous coupling of a grid solution, normalized to unit mass.
pub fn to_cone_coupling(sol: &GridSolution, p: &BallProblem) -> Result<ConeCoupling> {
    let y = p.mu1.atoms();
    let mut rows = vec![0.0; sol.m.len()];
    let mut cols = vec![0.0; y.len()];
    for e in &sol.eta {
        rows[e.g] += e.mass;
        cols[e.j] += e.mass;
    }
    let mut atoms = Vec::new();
    for e in &sol.eta {
        atoms.push(ConeAtom {
            r0: (sol.m[e.g] / rows[e.g]).sqrt(),
            theta0: Angle::new(p.angle(e.g)),
            r1: (y[e.j].mass / cols[e.j]).sqrt(),
            theta1: y[e.j].angle,
            mass: e.mass,
        });
    }
    for (g, &m) in sol.m.iter().enumerate() {
        if m > 0.0 && rows[g] == 0.0 {
            let x = Angle::new(p.angle(g));
            atoms.push(ConeAtom { r0: 1.0, theta0: x, r1: 0.0, theta1: x, mass: m });
        }
    }
    for (j, a) in y.iter().enumerate() {
        if cols[j] == 0.0 {
            atoms.push(ConeAtom { r0: 0.0, theta0: a.angle, r1: 1.0, theta1: a.angle, mass: a.mass });
        }
    }
    let total: f64 = atoms.iter().map(|a| a.mass).sum();
    let k = total.sqrt();
    for a in &mut atoms {
        a.mass /= total;
        a.r0 *= k;
        a.r1 *= k;
    }
    let gamma = ConeCoupling { atoms };
    let res = coupling_residuals(&gamma, p);
    if res.max() > CONSTRAINT_TOL {
        return Err(Error::Residual { what: "coupling constraints".into(), residual: res.max(), tol: CONSTRAINT_TOL });
    }
    Ok(gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseSolution {
    pub gamma: ConeCoupling,
    /// First marginal `(θ0)_#(r0² γ)`.
    pub mu0: DiscreteMeasure,
    pub value: f64,
    pub residuals: Residuals,
    /// `N + 2`, or `N + 4` with the moment constraint.
    pub atom_bound: usize,
}

/// Constraint rows evaluated at one cone atom, per unit mass.
fn constraint_column(a: &ConeAtom, p: &BallProblem) -> Vec<f64> {
    let d = circ_dist(a.theta0, a.theta1).min(std::f64::consts::FRAC_PI_2);
    let mut col = vec![1.0, a.r0 * a.r0 + a.r1 * a.r1 - 2.0 * a.r0 * a.r1 * d.cos()];
    let hit = if a.r1 > 0.0 { match_atom(&p.mu1, a.theta1) } else { None };
    col.extend((0..p.mu1.len()).map(|j| if hit == Some(j) { a.r1 * a.r1 } else { 0.0 }));
    if p.moment_constrained {
        let u = a.theta0.unit();
        col.push(a.r0 * a.r0 * u[0]);
        col.push(a.r0 * a.r0 * u[1]);
    }
    col
}

/// Removes atoms along null directions of the constraint matrix until at
/// most `N + 2` (`N + 4`) remain, never decreasing the objective.
pub fn caratheodory_reduce(gamma: &ConeCoupling, p: &BallProblem) -> Result<SparseSolution> {
    let before = coupling_residuals(gamma, p);
    if before.max() > CONSTRAINT_TOL {
        return Err(Error::Residual { what: "input coupling".into(), residual: before.max(), tol: CONSTRAINT_TOL });
    }
    let bound = p.mu1.len() + if p.moment_constrained { 4 } else { 2 };
    let mut atoms: Vec<ConeAtom> = gamma.atoms.iter().copied().filter(|a| a.mass > 0.0).collect();
    let cols: Vec<Vec<f64>> = atoms.iter().map(|a| constraint_column(a, p)).collect();
    let gain: Vec<f64> = atoms.iter().map(|a| a.r0 * a.r0 * p.f_at(a.theta0)).collect();
    let rows = bound;
    let mut active: Vec<usize> = (0..atoms.len()).collect();
    while active.len() > bound {
        let sel = &active[..rows + 1];
        // Rows scaled to unit size; a zero row pads the matrix to square.
        let mut a = DMatrix::<f64>::zeros(rows + 1, rows + 1);
        for r in 0..rows {
            let scale = sel.iter().map(|&k| cols[k][r].abs()).fold(0.0, f64::max);
            if scale > 0.0 {
                for (c, &k) in sel.iter().enumerate() {
                    a[(r, c)] = cols[k][r] / scale;
                }
            }
        }
        let svd = a.clone().svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::RankFailure("singular vectors unavailable".into()))?;
        let (imin, smin) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
        let mut v: Vec<f64> = vt.row(imin).iter().copied().collect();
        let residual = (&a * DVector::from_column_slice(&v)).norm();
        if residual > 1e-10 * smax.max(1.0) {
            return Err(Error::RankFailure(format!(
                "null direction has residual {residual:e} (singular values {smin:e}..{smax:e})"
            )));
        }
        let dir: f64 = sel.iter().zip(&v).map(|(&k, x)| gain[k] * x).sum();
        if dir < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let mut step = f64::INFINITY;
        let mut hit = 0;
        for (c, &k) in sel.iter().enumerate() {
            if v[c] < 0.0 {
                let t = atoms[k].mass / -v[c];
                if t < step {
                    step = t;
                    hit = c;
                }
            }
        }
        if !step.is_finite() {
            return Err(Error::RankFailure("null direction without a decreasing component".into()));
        }
        for (c, &k) in sel.iter().enumerate() {
            atoms[k].mass = if c == hit { 0.0 } else { (atoms[k].mass + step * v[c]).max(0.0) };
        }
        active.retain(|&k| atoms[k].mass > 0.0);
    }
    let kept: Vec<ConeAtom> = active.iter().map(|&k| atoms[k]).collect();
    let gamma = ConeCoupling { atoms: kept };
    let residuals = coupling_residuals(&gamma, p);
    if residuals.max() > CONSTRAINT_TOL {
        return Err(Error::Residual { what: "reduced coupling".into(), residual: residuals.max(), tol: CONSTRAINT_TOL });
    }
    let pairs: Vec<(f64, f64)> =
        gamma.atoms.iter().filter(|a| a.r0 > 0.0).map(|a| (a.theta0.radians(), a.mass * a.r0 * a.r0)).collect();
    let mu0 = DiscreteMeasure::from_pairs(&pairs)?;
    Ok(SparseSolution { value: coupling_objective(&gamma, p), gamma, mu0, residuals, atom_bound: bound })
}

/// Random measures on the grid angles within distance `λ` of `μ1`.
///
/// The first sample is `μ1`. Each further sample mixes `μ1` with a random
/// rescaling of itself plus a few random grid atoms, moving as far towards
/// the perturbation as the ball allows (bisection on the mixing weight, the
/// squared distance being convex along the segment), and is checked with the
/// LET solver.
pub fn random_feasible_sampler(mu1: &DiscreteMeasure, lambda: f64, grid: usize, seed: u64, count: usize) -> Result<Vec<DiscreteMeasure>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("the ball radius must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lam2 = lambda * lambda;
    let dist2 = |mu: &DiscreteMeasure| -> Result<f64> { Ok(solve_let(mu.into(), mu1.into(), DEFAULT_TOL)?.value) };
    let scale = mu1.total_mass() / mu1.len() as f64 + lam2;
    let mut out = vec![mu1.clone()];
    while out.len() < count {
        let s: f64 = rng.gen_range(0.0..2.0);
        let mut pairs: Vec<(f64, f64)> = mu1.atoms().iter().map(|a| (a.angle.radians(), s * a.mass)).collect();
        for _ in 0..rng.gen_range(1..=3) {
            let g = rng.gen_range(0..grid);
            pairs.push((TAU * g as f64 / grid as f64, rng.gen_range(0.0..scale)));
        }
        let rho = DiscreteMeasure::from_pairs(&pairs)?;
        let along = |t: f64| -> Result<DiscreteMeasure> { Ok(mu1.scaled(1.0 - t)?.plus(&rho.scaled(t)?)) };
        let t = if dist2(&rho)? <= lam2 {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if dist2(&along(mid)?)? <= lam2 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        let mu = along(t)?;
        if mu.is_zero() {
            continue;
        }
        if dist2(&mu)?.max(0.0).sqrt() <= lambda + 1e-9 {
            out.push(mu);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn square() -> DiscreteMeasure {
        DiscreteMeasure::from_pairs(&[(0.0, 1.0), (FRAC_PI_2, 1.0), (PI, 1.0), (1.5 * PI, 1.0)]).unwrap()
    }

    fn wavy(g: usize) -> Vec<f64> {
        (0..g).map(|k| {
            let x = TAU * k as f64 / g as f64;
            (x).cos() + 0.5 * (3.0 * x + 0.4).sin()
        }).collect()
    }

    #[test]
    fn mass_bound_examples() {
        assert_eq!(mass_bound(&square(), 0.0), 4.0);
        assert_eq!(mass_bound(&square(), 1.0), 9.0);
        assert_eq!(mass_bound(&DiscreteMeasure::zero(), 0.5), 0.25);
    }

    #[test]
    fn constant_objective_saturates_mass_bound() {
        for lambda in [0.25, 0.5, 1.0] {
            let p = BallProblem::new(vec![1.0; 256], square(), lambda, false).unwrap();
            let sol = solve_grid(&p, 1e-9).unwrap();
            let bound = mass_bound(&square(), lambda);
            assert!((sol.value - bound).abs() < 1e-9 * bound, "{} vs {bound}", sol.value);
            let mu0 = sol.mu0(&p);
            let d = crate::wfr::wfr_squared(&mu0, &square()).unwrap().sqrt();
            assert!((d - lambda).abs() < 1e-8, "{d}");
        }
    }

    #[test]
    fn small_radius_stays_near_center() {
        let f = wavy(256);
        let p0 = BallProblem::new(f.clone(), square(), 1.0, false).unwrap();
        let center = p0.objective(&square());
        let norm = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for lambda in [1e-2, 1e-3] {
            let p = BallProblem::new(f.clone(), square(), lambda, false).unwrap();
            let sol = solve_grid(&p, 1e-9).unwrap();
            assert!((sol.value - center).abs() <= 10.0 * lambda * norm);
        }
    }

    #[test]
    fn bump_far_from_center_is_created() {
        let mu1 = DiscreteMeasure::dirac(0.0, 1.0).unwrap();
        let mut f = vec![0.0; 128];
        f[64] = 1.0;
        let p = BallProblem::new(f, mu1, 0.5f64.sqrt(), false).unwrap();
        let sol = solve_grid(&p, 1e-9).unwrap();
        assert!((sol.value - 0.5).abs() < 1e-9, "{}", sol.value);
        assert!((sol.m[64] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_objective_with_large_ball_gives_zero() {
        let p = BallProblem::new(vec![-1.0; 64], square(), 3.0, false).unwrap();
        let sol = solve_grid(&p, 1e-9).unwrap();
        assert_eq!(sol.value, 0.0);
        assert!(sol.m.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn coupling_reproduces_solution() {
        let p = BallProblem::new(wavy(256), square(), 0.5, false).unwrap();
        let sol = solve_grid(&p, 1e-9).unwrap();
        let gamma = to_cone_coupling(&sol, &p).unwrap();
        assert!((coupling_objective(&gamma, &p) - sol.value).abs() < 1e-9);
        assert!((gamma.energy() - 0.25).abs() < 1e-8, "{}", gamma.energy());
        let r = caratheodory_reduce(&gamma, &p).unwrap();
        assert!(r.gamma.atoms.len() <= 6);
        assert!(r.value >= sol.value - 1e-9);
    }

    #[test]
    fn reduction_of_a_dense_mixture() {
        // Mixing solutions of several objectives and radii gives a feasible
        // coupling with many atoms.
        let p = BallProblem::new(wavy(256), square(), 0.5, false).unwrap();
        let mut atoms = Vec::new();
        let parts = 6;
        for k in 0..parts {
            let f: Vec<f64> = (0..256).map(|g| (TAU * g as f64 / 256.0 + k as f64).sin()).collect();
            let q = BallProblem::new(f, square(), 0.5 - 0.05 * k as f64, false).unwrap();
            let s = solve_grid(&q, 1e-9).unwrap();
            for mut a in to_cone_coupling(&s, &q).unwrap().atoms {
                a.mass /= parts as f64;
                atoms.push(a);
            }
        }
        let gamma = ConeCoupling { atoms };
        assert!(gamma.atoms.len() > 10);
        let before = coupling_objective(&gamma, &p);
        let r = caratheodory_reduce(&gamma, &p).unwrap();
        assert!(r.gamma.atoms.len() <= 6, "{}", r.gamma.atoms.len());
        assert!(r.value >= before - 1e-9);
        assert!(r.residuals.max() <= 1e-9);
    }

    #[test]
    fn sparse_input_is_unchanged() {
        let p = BallProblem::new(vec![1.0; 64], square(), 0.5, false).unwrap();
        let sol = solve_grid(&p, 1e-9).unwrap();
        let gamma = to_cone_coupling(&sol, &p).unwrap();
        assert!(gamma.atoms.len() <= 6);
        assert_eq!(caratheodory_reduce(&gamma, &p).unwrap().gamma, gamma);
    }

    #[test]
    fn moment_constrained_solution() {
        let p = BallProblem::new(wavy(256), square(), 0.5, true).unwrap();
        let sol = solve_grid(&p, 1e-9).unwrap();
        assert!(sol.first_moment[0].hypot(sol.first_moment[1]) < 1e-10);
        let free = solve_grid(&BallProblem { moment_constrained: false, ..p.clone() }, 1e-9).unwrap();
        assert!(sol.value <= free.value + 1e-9);
        let gamma = to_cone_coupling(&sol, &p).unwrap();
        let r = caratheodory_reduce(&gamma, &p).unwrap();
        assert!(r.gamma.atoms.len() <= 8);
        assert!(r.residuals.moment.unwrap() <= 1e-8);
        assert!((r.value - sol.value).abs() < 1e-8 || r.value > sol.value);
    }

    #[test]
    fn value_grows_with_radius() {
        let mut last = f64::NEG_INFINITY;
        for lambda in [0.1, 0.2, 0.4, 0.8, 1.6] {
            let p = BallProblem::new(wavy(128), square(), lambda, false).unwrap();
            let v = solve_grid(&p, 1e-9).unwrap().value;
            assert!(v >= last - 1e-9);
            last = v;
        }
    }

    #[test]
    fn samples_are_feasible_and_dominated() {
        let p = BallProblem::new(wavy(256), square(), 0.5, false).unwrap();
        let best = solve_grid(&p, 1e-9).unwrap().value;
        let samples = random_feasible_sampler(&square(), 0.5, 256, 1, 40).unwrap();
        assert_eq!(samples[0], square());
        for s in &samples {
            let d = crate::wfr::wfr_squared(s, &square()).unwrap().sqrt();
            assert!(d <= 0.5 + 1e-9);
            assert!(p.objective(s) <= best + 1e-6);
            assert!(s.total_mass() <= mass_bound(&square(), 0.5) + 1e-9);
        }
    }
}
