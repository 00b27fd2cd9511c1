//! Optimal transport on the circle for the cost `ℓ ∘ dist`.
//!
//! Measures are represented through quantile lifts `Q: R -> R` with
//! `Q(u + 1) = Q(u) + 2π`. A shift plan couples `Q0(u)` with `Q1(u + θ)`;
//! for this cost some shift plan is optimal, so the search runs over the
//! scalar `θ ∈ [0, 1)`.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::{MonotoneLift, Side};
use crate::measures::{cdf_lift, ell, pseudo_inverse, Angle, ExtReal, GridDensity};

/// Displacements within this distance of `π/2` count as infinite.
pub const SHIFT_GUARD: f64 = 1e-9;
/// Uniform refinement of the quantile grid.
pub const QUANTILE_REFINEMENT: usize = 4096;
/// Candidates of the coarse shift scan.
pub const SHIFT_SCAN: usize = 256;
/// Quantile refinement used while scanning.
const SCAN_REFINEMENT: usize = 512;
/// Scan winners re-ranked at full refinement.
const SCAN_FINALISTS: usize = 4;
/// Target width of the golden-section bracket.
pub const SHIFT_TOL: f64 = 1e-10;
/// Cells below this fraction of the mean density make a CDF non-invertible.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPlanResult {
    pub theta: f64,
    pub cost: ExtReal,
    pub q0: MonotoneLift,
    pub q1: MonotoneLift,
}

/// Quantile lift of a grid density rescaled to unit mass.
pub fn quantile_lift(eta: &GridDensity) -> Result<MonotoneLift> {
    let unit = eta.normalized()?;
    pseudo_inverse(&cdf_lift((&unit).into())?)
}

fn displacement(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(TAU);
    d.min(TAU - d)
}

fn segment_cost(d: f64) -> Option<f64> {
    if d >= PI / 2.0 - SHIFT_GUARD {
        None
    } else {
        ell(d).finite()
    }
}

/// `C(θ) = ∫_0^1 ℓ(dist(Q0(u), Q1(u + θ))) du` by the trapezoidal rule on the
/// union of breakpoints refined by a uniform grid, using one-sided limits at
/// jumps.
pub fn shift_cost_lifts(q0: &MonotoneLift, q1: &MonotoneLift, theta: f64) -> ExtReal {
    let (bad, cost) = split_cost(q0, q1, theta);
    if bad > 0.0 {
        ExtReal::Infinite
    } else {
        ExtReal::Finite(cost)
    }
}

/// Length of the `u` set where the displacement reaches `π/2`, and the
/// integral over the rest.
fn split_cost(q0: &MonotoneLift, q1: &MonotoneLift, theta: f64) -> (f64, f64) {
    split_cost_at(q0, q1, theta, QUANTILE_REFINEMENT)
}

fn split_cost_at(q0: &MonotoneLift, q1: &MonotoneLift, theta: f64, refinement: usize) -> (f64, f64) {
    let mut us: Vec<f64> = Vec::with_capacity(refinement + q0.knots().len() + q1.knots().len() + 2);
    us.extend((0..=refinement).map(|k| k as f64 / refinement as f64));
    us.extend(q0.knots().iter().map(|k| k.0.rem_euclid(1.0)));
    us.extend(q1.knots().iter().map(|k| (k.0 - theta).rem_euclid(1.0)));
    us.sort_by(f64::total_cmp);
    us.dedup();
    let mut total = 0.0;
    let mut bad = 0.0;
    for w in us.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        if u1 - u0 <= 0.0 {
            continue;
        }
        let left = displacement(q0.eval(u0, Side::Right), q1.eval(u0 + theta, Side::Right));
        let right = displacement(q0.eval(u1, Side::Left), q1.eval(u1 + theta, Side::Left));
        match (segment_cost(left), segment_cost(right)) {
            (Some(a), Some(b)) => total += 0.5 * (a + b) * (u1 - u0),
            _ => bad += u1 - u0,
        }
    }
    (bad, total)
}

/// Shift cost between two grid densities, each rescaled to unit mass.
pub fn shift_cost(eta0: &GridDensity, eta1: &GridDensity, theta: f64) -> Result<ExtReal> {
    Ok(shift_cost_lifts(&quantile_lift(eta0)?, &quantile_lift(eta1)?, theta))
}

/// Minimizes [`shift_cost_lifts`] over one period of `θ`.
///
/// A scan of [`SHIFT_SCAN`] candidates at a coarser quadrature seeds a
/// golden-section search; the best few scan points are re-ranked at full
/// resolution first. Ties go to the smallest nonnegative shift.
pub fn optimal_shift_lifts(q0: &MonotoneLift, q1: &MonotoneLift) -> Result<ShiftPlanResult> {
    optimal_shift_tolerant(q0, q1, 0.0)
}

/// Like [`optimal_shift_lifts`], but accepts a shift whose infinite-cost set
/// has length at most `sliver` and reports the cost of the rest.
///
/// When the finite shifts form a single point the search can only land
/// within [`SHIFT_TOL`] of it; the search first minimizes the length of the
/// infinite-cost set, then the cost.
pub fn optimal_shift_tolerant(q0: &MonotoneLift, q1: &MonotoneLift, sliver: f64) -> Result<ShiftPlanResult> {
    let better = |a: (f64, f64), b: (f64, f64)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    let h = 1.0 / SHIFT_SCAN as f64;
    let c = |t: f64| split_cost(q0, q1, t);
    let coarse: Vec<(f64, f64)> = (0..SHIFT_SCAN).map(|k| split_cost_at(q0, q1, k as f64 * h, SCAN_REFINEMENT)).collect();
    let mut order: Vec<usize> = (0..SHIFT_SCAN).collect();
    // stable, so equal costs keep the smaller shift first
    order.sort_by(|&a, &b| if better(coarse[a], coarse[b]) { Ordering::Less } else if better(coarse[b], coarse[a]) { Ordering::Greater } else { Ordering::Equal });
    let mut finalists: Vec<usize> = order[..SCAN_FINALISTS].to_vec();
    finalists.sort_unstable();
    let mut best = finalists[0];
    let mut best_cost = c(best as f64 * h);
    for &k in &finalists[1..] {
        let ck = c(k as f64 * h);
        if better(ck, best_cost) {
            best = k;
            best_cost = ck;
        }
    }
    let (mut lo, mut hi) = (best as f64 * h - h, best as f64 * h + h);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (c(x1), c(x2));
    while hi - lo > SHIFT_TOL {
        if !better(f2, f1) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = c(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = c(x2);
        }
    }
    let mut theta = best as f64 * h;
    let mut cost = best_cost;
    let mid = 0.5 * (lo + hi);
    let cm = c(mid);
    if better(cm, cost) {
        theta = mid;
        cost = cm;
    }
    if cost.0 > sliver {
        return Err(Error::NoAdmissibleShift);
    }
    theta = theta.rem_euclid(1.0);
    if theta > 1.0 - SHIFT_TOL {
        theta = 0.0;
    }
    Ok(ShiftPlanResult { theta, cost: ExtReal::Finite(cost.1), q0: q0.clone(), q1: q1.clone() })
}

/// Optimal shift plan between two grid densities rescaled to unit mass.
pub fn optimal_shift(eta0: &GridDensity, eta1: &GridDensity) -> Result<ShiftPlanResult> {
    optimal_shift_lifts(&quantile_lift(eta0)?, &quantile_lift(eta1)?)
}

/// Exact discrete transport cost between the cell masses (placed at cell
/// centers) of two unit-mass densities, by linear programming.
pub fn kantorovich_lp_cost(eta0: &GridDensity, eta1: &GridDensity) -> Result<f64> {
    let g = eta0.resolution();
    if g != eta1.resolution() {
        return Err(Error::InvalidArgument("grid resolutions differ".into()));
    }
    if g > 64 {
        return Err(Error::InvalidArgument(format!("linear program limited to 64 cells, got {g}")));
    }
    let a = eta0.normalized()?.cell_masses();
    let b = eta1.normalized()?.cell_masses();
    let rows: Vec<usize> = (0..g).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..g).filter(|&j| b[j] > 0.0).collect();
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let mut vars = vec![Vec::new(); g];
    let mut col_vars = vec![Vec::new(); g];
    for &i in &rows {
        for &j in &cols {
            let d = crate::measures::circ_dist(Angle::new(eta0.cell_center(i)), Angle::new(eta1.cell_center(j)));
            if let Some(c) = segment_cost(d) {
                let v = problem.add_var(c, (0.0, f64::INFINITY));
                vars[i].push(v);
                col_vars[j].push(v);
            }
        }
    }
    for &i in &rows {
        if vars[i].is_empty() {
            return Err(Error::Infeasible(format!("source cell {i} has no finite-cost partner")));
        }
        problem.add_constraint(vars[i].iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, a[i]);
    }
    for &j in &cols {
        if col_vars[j].is_empty() {
            return Err(Error::Infeasible(format!("target cell {j} has no finite-cost partner")));
        }
        problem.add_constraint(col_vars[j].iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, b[j]);
    }
    match problem.solve() {
        Ok(sol) => Ok(sol.objective()),
        Err(minilp::Error::Infeasible) => Err(Error::Infeasible("no coupling with finite cost".into())),
        Err(e) => Err(Error::Infeasible(e.to_string())),
    }
}

/// Increasing circle homeomorphism stored as a lift with
/// `φ(t + 2π) = φ(t) + 2π`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reparametrization {
    lift: MonotoneLift,
}

impl Reparametrization {
    pub fn identity() -> Self {
        Reparametrization { lift: MonotoneLift::new(vec![(0.0, 0.0), (TAU, TAU)], TAU, TAU).expect("identity lift") }
    }

    /// From one period of breakpoints `(t, φ(t))`.
    pub fn from_breakpoints(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
            return Err(Error::InvalidArgument("reparametrization must be strictly increasing".into()));
        }
        Ok(Reparametrization { lift: MonotoneLift::new(points, TAU, TAU)? })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        self.lift.knots()
    }

    pub fn lift(&self) -> &MonotoneLift {
        &self.lift
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.lift.eval(t, Side::Right)
    }

    pub fn inverse(&self) -> Self {
        Reparametrization { lift: self.lift.inverse().expect("increment 2π") }
    }

    /// `sup_t |φ(t) - t - c|` minimized over the constant `c`: zero for rotations.
    pub fn rotation_defect(&self) -> f64 {
        let d: Vec<f64> = self.lift.knots().iter().map(|(t, p)| p - t).collect();
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (hi - lo)
    }

    /// Largest deviation of `φ⁻¹ ∘ φ` from the identity over the breakpoints
    /// and a uniform sample.
    pub fn round_trip_error(&self) -> f64 {
        let inv = self.inverse();
        let ts = self.lift.knots().iter().map(|k| k.0).chain((0..1000).map(|k| TAU * k as f64 / 1000.0));
        ts.map(|t| (inv.eval(self.eval(t)) - t).abs()).fold(0.0, f64::max)
    }

    /// Largest cell-wise mismatch between `φ_# ν0` and `ν1`, both rescaled to
    /// unit mass.
    pub fn pushforward_residual(&self, nu0: &GridDensity, nu1: &GridDensity) -> Result<f64> {
        let f0 = cdf_lift((&nu0.normalized()?).into())?;
        let target = nu1.normalized()?;
        let inv = self.inverse();
        let mut worst: f64 = 0.0;
        for k in 0..target.resolution() {
            let a = inv.eval(target.cell_start(k));
            let b = inv.eval(target.cell_start(k + 1));
            let pulled = f0.eval(b, Side::Left) - f0.eval(a, Side::Left);
            worst = worst.max((pulled - target.cell_mass(k)).abs());
        }
        Ok(worst)
    }
}

impl Serialize for Reparametrization {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            breakpoints: Vec<[f64; 2]>,
            #[serde(skip)]
            _p: std::marker::PhantomData<&'a ()>,
        }
        Out { breakpoints: self.breakpoints().iter().map(|&(t, p)| [t, p]).collect(), _p: Default::default() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Reparametrization {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            breakpoints: Vec<[f64; 2]>,
        }
        let raw = Raw::deserialize(d)?;
        Reparametrization::from_breakpoints(raw.breakpoints.into_iter().map(|p| (p[0], p[1])).collect())
            .map_err(serde::de::Error::custom)
    }
}

fn check_floor(nu: &GridDensity) -> Result<()> {
    let mean = nu.total_mass() / TAU;
    let floor = DENSITY_FLOOR * mean;
    for (cell, &value) in nu.values().iter().enumerate() {
        if !(value >= floor) || value == 0.0 {
            return Err(Error::NonInvertibleCdf { cell, value, floor });
        }
    }
    Ok(())
}

/// `φ(t) = F1⁻¹(F0(t) + θ)` for strictly positive densities rescaled to unit
/// mass. It is the map realizing the shift plan with parameter `θ`.
pub fn build_reparametrization(nu0: &GridDensity, nu1: &GridDensity, theta: f64) -> Result<Reparametrization> {
    check_floor(nu0)?;
    check_floor(nu1)?;
    let f0 = cdf_lift((&nu0.normalized()?).into())?;
    let f1 = cdf_lift((&nu1.normalized()?).into())?;
    reparametrization_from_cdfs(&f0, &f1, theta)
}

/// Same construction from two strictly increasing CDF lifts with
/// x-period 2π and unit increment.
pub fn reparametrization_from_cdfs(f0: &MonotoneLift, f1: &MonotoneLift, theta: f64) -> Result<Reparametrization> {
    for f in [f0, f1] {
        if !f.is_strictly_increasing() || (f.x_period() - TAU).abs() > 1e-12 || (f.y_period() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("expected strictly increasing unit-mass CDF lifts".into()));
        }
    }
    let q0 = f0.inverse()?;
    let q1 = f1.inverse()?;
    let phi = |t: f64| q1.eval(f0.eval(t, Side::Right) + theta, Side::Right);
    let phi0 = phi(0.0);
    let mut ts: Vec<f64> = f0.knots().iter().map(|k| k.0.rem_euclid(TAU)).collect();
    // Preimages of the breakpoints of F1.
    for &(_, y) in f1.knots() {
        for shift in [-1.0, 0.0, 1.0] {
            ts.push(q0.eval(y + shift - theta, Side::Right).rem_euclid(TAU));
        }
    }
    ts.retain(|&t| t > 0.0 && t < TAU);
    ts.push(0.0);
    ts.push(TAU);
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
    let n = ts.len();
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(n);
    for (k, &t) in ts.iter().enumerate() {
        let p = if k == 0 {
            phi0
        } else if k == n - 1 {
            phi0 + TAU
        } else {
            phi(t)
        };
        if let Some(last) = knots.last() {
            if !(p > last.1) {
                continue;
            }
        }
        knots.push((t, p));
    }
    let last = knots.len() - 1;
    knots[last] = (TAU, phi0 + TAU);
    Reparametrization::from_breakpoints(knots)
}

/// Normalized density `1 + 0.2 w/1.5` on `g` cells, `w` a sum of three
/// harmonics with random amplitudes in `[0, 1)` and random phases.
pub fn random_positive_density<R: rand::Rng>(rng: &mut R, g: usize) -> GridDensity {
    let c: Vec<(f64, f64)> = (1..4).map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..TAU))).collect();
    let vals = (0..g)
        .map(|k| {
            let x = TAU * (k as f64 + 0.5) / g as f64;
            let wave: f64 = c.iter().enumerate().map(|(f, &(a, p))| a * ((f + 1) as f64 * x + p).sin()).sum();
            1.0 + 0.2 * wave / 1.5
        })
        .collect();
    GridDensity::new(vals).and_then(|d| d.normalized()).expect("strictly positive by construction")
}

/// Random strictly increasing lift with `k` pieces and a random offset.
pub fn random_reparametrization<R: rand::Rng>(rng: &mut R, k: usize) -> Reparametrization {
    let k = k.max(1);
    let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.0..TAU)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut steps: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = steps.iter().sum();
    steps.iter_mut().for_each(|s| *s *= TAU / total);
    let offset = rng.gen_range(0.0..TAU);
    let mut points = vec![(0.0, offset)];
    let mut y = offset;
    for (t, s) in cuts.iter().chain(std::iter::once(&TAU)).zip(&steps) {
        y += s;
        if *t > points[points.len() - 1].0 {
            points.push((*t, y));
        } else if let Some(last) = points.last_mut() {
            last.1 = y;
        }
    }
    let last = points.len() - 1;
    points[last].1 = offset + TAU;
    Reparametrization::from_breakpoints(points).expect("increasing by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_density(rng: &mut impl Rng, g: usize) -> GridDensity {
        let (a1, a2) = (rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.3));
        let (p1, p2) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
        let vals = (0..g)
            .map(|k| {
                let x = TAU * (k as f64 + 0.5) / g as f64;
                1.0 + a1 * (x + p1).sin() + a2 * (2.0 * x + p2).sin()
            })
            .collect();
        GridDensity::new(vals).unwrap().normalized().unwrap()
    }

    // Three harmonics with total amplitude at most 0.2.
    fn arc_density(g: usize, start: usize, len: usize) -> GridDensity {
        let mut v = vec![0.0; g];
        for k in start..start + len {
            v[k % g] = 1.0;
        }
        GridDensity::new(v).unwrap().normalized().unwrap()
    }

    #[test]
    fn identical_uniform_has_zero_cost() {
        let u = GridDensity::uniform(64, 1.0).unwrap();
        assert_eq!(shift_cost(&u, &u, 0.0).unwrap(), ExtReal::Finite(0.0));
        let r = optimal_shift(&u, &u).unwrap();
        assert_eq!(r.cost, ExtReal::Finite(0.0));
        assert_eq!(r.theta, 0.0);
    }

    #[test]
    fn rotated_arc_costs_ell_of_rotation() {
        // an arc of 16 cells and the same arc rotated by 8 cells
        let g = 128;
        let a = arc_density(g, 10, 16);
        let b = arc_density(g, 18, 16);
        let alpha = 8.0 * TAU / g as f64;
        let r = optimal_shift(&a, &b).unwrap();
        assert!((r.cost.to_f64() - ell(alpha).to_f64()).abs() < 1e-9, "{:?}", r.cost);
        assert!(r.theta.abs() < 1e-8 || (1.0 - r.theta).abs() < 1e-8);
    }

    #[test]
    fn periodic_in_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = smooth_density(&mut rng, 64);
        let b = smooth_density(&mut rng, 64);
        for &t in &[0.1, 0.37, 0.8] {
            let c0 = shift_cost(&a, &b, t).unwrap();
            let c1 = shift_cost(&a, &b, t + 1.0).unwrap();
            assert_eq!(c0.is_finite(), c1.is_finite());
            assert!((c0.to_f64() - c1.to_f64()).abs() < 1e-12 || !c0.is_finite());
        }
    }

    #[test]
    fn far_arcs_have_no_admissible_shift() {
        let a = arc_density(64, 0, 4);
        // a single shift must pair the two arcs; place them opposite
        let b = arc_density(64, 32, 4);
        assert_eq!(optimal_shift(&a, &b).unwrap_err(), Error::NoAdmissibleShift);
    }

    #[test]
    fn lp_examples() {
        let u = smooth_density(&mut ChaCha8Rng::seed_from_u64(1), 32);
        assert!(kantorovich_lp_cost(&u, &u).unwrap().abs() < 1e-12);
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        a[0] = 1.0;
        b[1] = 1.0;
        let a = GridDensity::new(a).unwrap();
        let b = GridDensity::new(b).unwrap();
        assert!((kantorovich_lp_cost(&a, &b).unwrap() - 2f64.ln()).abs() < 1e-12);
        let mut c = vec![0.0; 8];
        c[4] = 1.0;
        let c = GridDensity::new(c).unwrap();
        assert!(matches!(kantorovich_lp_cost(&a, &c), Err(Error::Infeasible(_))));
    }

    #[test]
    fn shift_matches_lp_on_mild_densities() {
        // The LP sees cell-center atoms, so it pays for sub-cell displacements
        // that the continuous plan does not; that lattice gap stays near h^2/5.
        let h = TAU / 64.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let a = random_positive_density(&mut rng, 64);
            let b = random_positive_density(&mut rng, 64);
            let s = optimal_shift(&a, &b).unwrap().cost.to_f64();
            let l = kantorovich_lp_cost(&a, &b).unwrap();
            assert!((s - l).abs() <= h * h / 4.0, "{s} vs {l}");
        }
    }

    #[test]
    fn shift_on_cell_atoms_equals_lp() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let a = smooth_density(&mut rng, 32);
            let b = smooth_density(&mut rng, 32);
            let qa = pseudo_inverse(&cdf_lift((&a.to_atoms()).into()).unwrap()).unwrap();
            let qb = pseudo_inverse(&cdf_lift((&b.to_atoms()).into()).unwrap()).unwrap();
            let s = optimal_shift_lifts(&qa, &qb).unwrap().cost.to_f64();
            let l = kantorovich_lp_cost(&a, &b).unwrap();
            assert!((s - l).abs() <= 1e-4, "{s} vs {l}");
        }
    }

    #[test]
    fn scan_is_unimodal_for_positive_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = smooth_density(&mut rng, 64);
        let b = smooth_density(&mut rng, 64);
        let q0 = quantile_lift(&a).unwrap();
        let q1 = quantile_lift(&b).unwrap();
        let c: Vec<ExtReal> = (0..SHIFT_SCAN).map(|k| shift_cost_lifts(&q0, &q1, k as f64 / SHIFT_SCAN as f64)).collect();
        // count strict local minima among the finite values on the cycle
        let n = c.len();
        let mut minima = 0;
        for k in 0..n {
            let (p, x, q) = (c[(k + n - 1) % n], c[k], c[(k + 1) % n]);
            if let ExtReal::Finite(v) = x {
                let below = |o: ExtReal| o.finite().map_or(true, |o| v < o - 1e-9);
                if below(p) && below(q) {
                    minima += 1;
                }
            }
        }
        assert_eq!(minima, 1);
    }

    #[test]
    fn identity_and_rotation_reparametrizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nu = smooth_density(&mut rng, 256);
        let phi = build_reparametrization(&nu, &nu, 0.0).unwrap();
        assert!(phi.rotation_defect() < 1e-12);
        assert!((phi.eval(1.0) - 1.0).abs() < 1e-12);

        let shifted = nu.rotated_cells(16);
        let alpha = 16.0 * TAU / 256.0;
        // the shift matching the rotation is the mass of ν on [-α, 0)
        let f0 = cdf_lift((&nu).into()).unwrap();
        let theta = -f0.eval(-alpha, Side::Left);
        let phi = build_reparametrization(&nu, &shifted, theta).unwrap();
        for &t in &[0.0, 0.5, 2.0, 5.9] {
            assert!((phi.eval(t) - t - alpha).abs() < 1e-6, "{t}: {}", phi.eval(t));
        }
    }

    #[test]
    fn vanishing_density_is_not_invertible() {
        let mut v = vec![1.0; 16];
        v[3] = 0.0;
        let a = GridDensity::new(v).unwrap();
        let b = GridDensity::uniform(16, 1.0).unwrap();
        assert!(matches!(build_reparametrization(&a, &b, 0.0), Err(Error::NonInvertibleCdf { cell: 3, .. })));
    }

    #[test]
    fn json_round_trip() {
        let phi = Reparametrization::from_breakpoints(vec![(0.0, 0.1), (1.0, 2.0), (TAU, TAU + 0.1)]).unwrap();
        let s = serde_json::to_string(&phi).unwrap();
        assert!(s.starts_with("{\"breakpoints\":[[0.0,0.1]"));
        let back: Reparametrization = serde_json::from_str(&s).unwrap();
        assert_eq!(back, phi);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn pushforward_and_round_trip(seed in any::<u64>(), theta in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = smooth_density(&mut rng, 1024);
            let b = smooth_density(&mut rng, 1024);
            let phi = build_reparametrization(&a, &b, theta).unwrap();
            prop_assert!(phi.pushforward_residual(&a, &b).unwrap() <= 1e-6);
            prop_assert!(phi.round_trip_error() <= 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn lifted_cost_is_monge(t0 in -3.0f64..3.0, dt in 0.0f64..1.5, s0 in -3.0f64..3.0, ds in 0.0f64..1.5) {
            let c = |t: f64, s: f64| ell((t - s).abs());
            let (t1, s1) = (t0 + dt, s0 + ds);
            let all = [c(t0, s0), c(t1, s1), c(t0, s1), c(t1, s0)];
            if all.iter().all(|x| x.is_finite()) {
                let lhs = all[0].to_f64() + all[1].to_f64();
                let rhs = all[2].to_f64() + all[3].to_f64();
                prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()));
            }
        }
    }
}
