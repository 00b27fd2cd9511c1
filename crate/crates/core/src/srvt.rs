//! Square root velocity transform and its relation to the WFR distance of
//! length measures.
//!
//! For convex loops `d_SRVT(c0, c1) = 𝒰(μ0, μ1)`. [`srvt_distance_convex`]
//! turns an optimal LET plan into an explicit reparametrization and evaluates
//! the SRVT cost through it, which gives both sides independently.

use std::f64::consts::TAU;

use serde::Serialize;

use crate::circular_ot::{optimal_shift_tolerant, reparametrization_from_cdfs, Reparametrization, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::geometry::{is_degenerate, ConvexLoop, ParamCurve};
use crate::lift::{MonotoneLift, Side};
use crate::measures::{circ_dist, is_weakly_admissible, Angle, DiscreteMeasure, MIN_GRID};
use crate::wfr::{dual_lower_bound, solve_let, DEFAULT_TOL};

/// Rotations of a dipole used when the pair is not weakly admissible.
pub const DIPOLE_ROTATIONS: [f64; 3] = [1e-2, 1e-3, 1e-4];
/// Quantile length that may be matched across `π/2` when the admissible
/// shifts shrink to a point.
pub const SHIFT_SLIVER: f64 = 1e-8;
/// Corner radius of rounded polygons relative to their diameter.
pub const ROUNDING_RELATIVE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SrvtOptions {
    /// Angular resolution for the LET between length measures.
    pub grid: usize,
    pub tol: f64,
}

impl Default for SrvtOptions {
    fn default() -> Self {
        SrvtOptions { grid: 256, tol: DEFAULT_TOL }
    }
}

/// How the reported distance was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SrvtMethod {
    /// Through the reparametrization built from the optimal plan.
    Plan,
    /// Orthogonal segments: every φ gives `|μ0| + |μ1|`.
    OrthogonalDipoles,
    /// Limit of rotated dipoles, linearly extrapolated to zero rotation.
    Extrapolated { rotations: Vec<f64>, srvt_values: Vec<f64>, wfr_values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrvtResult {
    pub distance: f64,
    pub reparam: Option<Reparametrization>,
    /// `𝒰²` of the length measures of the sampled curves, as the dual bound
    /// obtained from the grid solution on the unbinned directions.
    pub wfr_value: f64,
    /// LET value between the length measures binned at the grid resolution.
    pub wfr_grid_value: f64,
    /// `|distance² - wfr_value|`.
    pub gap: f64,
    pub method: SrvtMethod,
}

/// `c'/√|c'|` on every segment.
///
/// A [`ParamCurve`] has no repeated consecutive samples, so every segment has
/// a nonzero velocity.
pub fn srvt_transform(c: &ParamCurve) -> Vec<[f64; 2]> {
    (0..c.len())
        .map(|k| {
            let v = c.velocity(k);
            let s = v[0].hypot(v[1]).sqrt();
            [v[0] / s, v[1] / s]
        })
        .collect()
}

/// `∫ |Φ(c0) - Φ(c1 ∘ φ)|² dt`.
///
/// Both curves and `φ` are piecewise linear, so the integrand is constant
/// between consecutive points of the union of their breakpoints and the sum is
/// exact.
pub fn srvt_cost(c0: &ParamCurve, c1: &ParamCurve, phi: &Reparametrization) -> f64 {
    let q0 = srvt_transform(c0);
    let q1 = srvt_transform(c1);
    let inv = phi.inverse();
    let mut ts: Vec<f64> = Vec::with_capacity(c0.len() + c1.len() + phi.breakpoints().len() + 2);
    ts.extend(c0.params().iter().copied());
    ts.extend(phi.breakpoints().iter().map(|b| b.0.rem_euclid(TAU)));
    ts.extend(c1.params().iter().map(|&p| inv.eval(p).rem_euclid(TAU)));
    ts.retain(|&t| t > 0.0 && t < TAU);
    ts.push(0.0);
    ts.push(TAU);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let lift = phi.lift();
    let mut total = 0.0;
    for w in ts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pa = lift.eval(a, Side::Right);
        let pb = lift.eval(b, Side::Left);
        let slope = (pb - pa) / (b - a);
        if !(slope > 0.0) {
            continue;
        }
        let mid = 0.5 * (a + b);
        let (i, _) = c0.locate(mid);
        let (j, _) = c1.locate(0.5 * (pa + pb));
        let r = slope.sqrt();
        let dx = q0[i][0] - r * q1[j][0];
        let dy = q0[i][1] - r * q1[j][1];
        total += (dx * dx + dy * dy) * (b - a);
    }
    total
}

/// Merges segment directions per cell and remembers which merged atom each
/// segment went to.
fn binned_directions(c: &ParamCurve, grid: usize) -> Result<(DiscreteMeasure, Vec<usize>)> {
    if grid < MIN_GRID {
        return Err(Error::GridTooCoarse { got: grid, min: MIN_GRID });
    }
    let h = TAU / grid as f64;
    let dirs = c.tangent_angles();
    let cell: Vec<usize> =
        dirs.iter().map(|&d| ((Angle::new(d).radians() / h).floor() as usize).min(grid - 1)).collect();
    let mut sums = vec![[0.0f64; 3]; grid];
    for k in 0..c.len() {
        let v = c.segment_vector(k);
        let len = v[0].hypot(v[1]);
        sums[cell[k]][0] += len;
        sums[cell[k]][1] += v[0];
        sums[cell[k]][2] += v[1];
    }
    let mut pairs = Vec::new();
    let mut centers = vec![f64::NAN; grid];
    for (g, s) in sums.iter().enumerate() {
        if s[0] > 0.0 {
            let theta = if s[1].hypot(s[2]) > 1e-300 { s[2].atan2(s[1]) } else { (g as f64 + 0.5) * h };
            centers[g] = theta;
            pairs.push((theta, s[0]));
        }
    }
    let mu = DiscreteMeasure::from_pairs(&pairs)?;
    let index = cell
        .iter()
        .map(|&g| {
            let x = Angle::new(centers[g]);
            mu.atoms()
                .iter()
                .position(|a| circ_dist(a.angle, x) <= 1e-12)
                .ok_or_else(|| Error::InvalidArgument("binned direction lost".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((mu, index))
}

/// Normalized CDF of `ν = (σ ∘ T)|c'|` over the parameter circle.
fn parameter_cdf(c: &ParamCurve, sigma: &[f64], index: &[usize], wfr_value: f64) -> Result<MonotoneLift> {
    let masses: Vec<f64> = (0..c.len())
        .map(|k| {
            let v = c.segment_vector(k);
            sigma[index[k]] * v[0].hypot(v[1])
        })
        .collect();
    let total: f64 = masses.iter().sum();
    let floor = DENSITY_FLOOR * total / c.len() as f64;
    if !(total > 0.0) || masses.iter().any(|&m| !(m > floor)) {
        return Err(Error::NoOptimalReparametrization { wfr_value });
    }
    let mut knots = Vec::with_capacity(c.len() + 1);
    let mut acc = 0.0;
    knots.push((c.params()[0], 0.0));
    for (k, m) in masses.iter().enumerate() {
        acc += m;
        knots.push((c.segment_span(k).1, acc / total));
    }
    let last = knots.len() - 1;
    knots[last].1 = 1.0;
    MonotoneLift::new(knots, TAU, 1.0)
}

/// `T̆ ∘ F⁻¹`: the quantile lift of the pushforward of `ν` by the tangent.
fn shift_map(c: &ParamCurve, cdf: &MonotoneLift) -> Result<MonotoneLift> {
    let gauss = c.gauss_lift()?;
    let knots: Vec<(f64, f64)> = gauss.lift().knots().iter().map(|&(t, y)| (cdf.eval(t, Side::Right), y)).collect();
    MonotoneLift::new(knots, 1.0, TAU)
}

fn direct(c0: &ParamCurve, c1: &ParamCurve, opts: &SrvtOptions) -> Result<SrvtResult> {
    let (b0, i0) = binned_directions(c0, opts.grid)?;
    let (b1, i1) = binned_directions(c1, opts.grid)?;
    let plan = solve_let((&b0).into(), (&b1).into(), opts.tol)?;
    let wfr_grid_value = plan.value;
    let wfr_value = dual_lower_bound(&plan, &c0.length_atoms()?, &c1.length_atoms()?);
    let f0 = parameter_cdf(c0, &plan.sigma0, &i0, wfr_value)?;
    let f1 = parameter_cdf(c1, &plan.sigma1, &i1, wfr_value)?;
    let shift = optimal_shift_tolerant(&shift_map(c0, &f0)?, &shift_map(c1, &f1)?, SHIFT_SLIVER)?;
    let phi = reparametrization_from_cdfs(&f0, &f1, shift.theta)?;
    let d2 = srvt_cost(c0, c1, &phi);
    Ok(SrvtResult {
        distance: d2.max(0.0).sqrt(),
        reparam: Some(phi),
        wfr_value,
        wfr_grid_value,
        gap: (d2 - wfr_value).abs(),
        method: SrvtMethod::Plan,
    })
}

/// `d_SRVT` between two convex sampled loops, with the reparametrization
/// that attains it.
pub fn srvt_distance_convex(c0: &ParamCurve, c1: &ParamCurve, opts: &SrvtOptions) -> Result<SrvtResult> {
    let mu0 = c0.length_atoms()?;
    let mu1 = c1.length_atoms()?;
    if is_weakly_admissible(&mu0, &mu1)? {
        return direct(c0, c1, opts);
    }
    match (is_degenerate(&mu0), is_degenerate(&mu1)) {
        (Some(_), Some(_)) => {
            // Orthogonal segments: the velocities are orthogonal everywhere.
            let phi = Reparametrization::identity();
            let d2 = srvt_cost(c0, c1, &phi);
            let wfr_value = mu0.total_mass() + mu1.total_mass();
            Ok(SrvtResult {
                distance: d2.sqrt(),
                reparam: Some(phi),
                wfr_value,
                wfr_grid_value: wfr_value,
                gap: (d2 - wfr_value).abs(),
                method: SrvtMethod::OrthogonalDipoles,
            })
        }
        (Some(_), None) => extrapolate(c0, c1, opts, true),
        (None, Some(_)) => extrapolate(c0, c1, opts, false),
        (None, None) => Err(Error::NotAdmissible),
    }
}

fn extrapolate(c0: &ParamCurve, c1: &ParamCurve, opts: &SrvtOptions, rotate_first: bool) -> Result<SrvtResult> {
    let mut srvt_values = Vec::new();
    let mut wfr_values = Vec::new();
    let mut grid_values = Vec::new();
    for &delta in &DIPOLE_ROTATIONS {
        let r = if rotate_first { direct(&c0.rotated(delta), c1, opts)? } else { direct(c0, &c1.rotated(delta), opts)? };
        srvt_values.push(r.distance * r.distance);
        wfr_values.push(r.wfr_value);
        grid_values.push(r.wfr_grid_value);
    }
    // Linear in δ through the two smallest rotations.
    let n = DIPOLE_ROTATIONS.len();
    let (d1, d2) = (DIPOLE_ROTATIONS[n - 2], DIPOLE_ROTATIONS[n - 1]);
    let limit = |v: &[f64]| v[n - 1] - (v[n - 2] - v[n - 1]) * d2 / (d1 - d2);
    let s = limit(&srvt_values).max(0.0);
    let w = limit(&wfr_values);
    Ok(SrvtResult {
        distance: s.sqrt(),
        reparam: None,
        wfr_value: w,
        wfr_grid_value: limit(&grid_values),
        gap: (s - w).abs(),
        method: SrvtMethod::Extrapolated { rotations: DIPOLE_ROTATIONS.to_vec(), srvt_values, wfr_values },
    })
}

/// Curve fed to the pipeline for a polygon: corners rounded with radius
/// [`ROUNDING_RELATIVE`] times the diameter, segments left as they are.
pub fn polygon_curve(p: &ConvexLoop, samples: usize) -> Result<ParamCurve> {
    if is_degenerate(&p.length_measure()).is_some() {
        p.sampled(samples)
    } else {
        p.rounded(ROUNDING_RELATIVE * p.diameter(), samples)
    }
}

pub fn srvt_distance_polygons(p0: &ConvexLoop, p1: &ConvexLoop, samples: usize, opts: &SrvtOptions) -> Result<SrvtResult> {
    srvt_distance_convex(&polygon_curve(p0, samples)?, &polygon_curve(p1, samples)?, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// `srvt_cost` through the constructed reparametrization.
    pub srvt: f64,
    /// `𝒰²` of the length measures.
    pub wfr: f64,
    pub gap: f64,
    pub relative_gap: f64,
    /// `srvt ≥ wfr - allowance`.
    pub lower_bound_holds: bool,
    pub allowance: f64,
    pub phi_used: Option<Reparametrization>,
    pub method: SrvtMethod,
}

/// Both sides of `d²_SRVT = 𝒰²` for two convex loops.
pub fn equivalence_report(c0: &ParamCurve, c1: &ParamCurve, opts: &SrvtOptions) -> Result<EquivalenceReport> {
    let r = srvt_distance_convex(c0, c1, opts)?;
    let srvt = r.distance * r.distance;
    let allowance = 1e-3 * r.wfr_value.abs().max(1.0);
    Ok(EquivalenceReport {
        srvt,
        wfr: r.wfr_value,
        gap: r.gap,
        relative_gap: r.gap / r.wfr_value.abs().max(f64::MIN_POSITIVE),
        lower_bound_holds: srvt >= r.wfr_value - allowance,
        allowance,
        phi_used: r.reparam,
        method: r.method,
    })
}

/// Closed form for concentric circles of radii `r0` and `r1`.
pub fn concentric_circles_value(r0: f64, r1: f64) -> f64 {
    TAU * (r0.sqrt() - r1.sqrt()).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circular_ot::random_reparametrization;
    use crate::geometry::sample_ellipse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn circle(r: f64, n: usize) -> ParamCurve {
        sample_ellipse(r, r, n).unwrap()
    }

    #[test]
    fn transform_of_arclength_circle_has_unit_norm() {
        // radius chosen so that every chord has unit speed
        let n = 512;
        let h = std::f64::consts::PI / n as f64;
        let c = circle(h / h.sin(), n);
        for q in srvt_transform(&c) {
            assert!((q[0].hypot(q[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transform_norm_integrates_to_length() {
        let c = sample_ellipse(2.0, 1.0, 4096).unwrap();
        let q = srvt_transform(&c);
        let l: f64 = (0..c.len())
            .map(|k| {
                let (s, e) = c.segment_span(k);
                (q[k][0].powi(2) + q[k][1].powi(2)) * (e - s)
            })
            .sum();
        assert!((l - c.length()).abs() < 1e-9);
        assert!((l - 9.688448220547675).abs() < 1e-5);
    }

    #[test]
    fn scaling_by_four_doubles_transform() {
        let c = sample_ellipse(2.0, 1.0, 64).unwrap();
        let a = srvt_transform(&c);
        let b = srvt_transform(&c.scaled(4.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x[0] - y[0]).abs() < 1e-12 && (2.0 * x[1] - y[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_of_identical_curves_is_zero() {
        let c = sample_ellipse(2.0, 1.0, 256).unwrap();
        assert!(srvt_cost(&c, &c, &Reparametrization::identity()) < 1e-24);
    }

    #[test]
    fn concentric_circles_with_identity() {
        let n = 4096;
        let c0 = circle(1.0, n);
        let c1 = circle(4.0, n);
        let d2 = srvt_cost(&c0, &c1, &Reparametrization::identity());
        // chords shorten the perimeter by a relative (2π/n)²/24
        assert!((d2 - concentric_circles_value(1.0, 4.0)).abs() < 1e-5, "{d2}");
    }

    #[test]
    fn cost_is_rotation_invariant() {
        let c0 = sample_ellipse(2.0, 1.0, 200).unwrap();
        let c1 = circle(1.5, 150);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = random_reparametrization(&mut rng, 7);
        let a = srvt_cost(&c0, &c1, &phi);
        let b = srvt_cost(&c0.rotated(0.7), &c1.rotated(0.7), &phi);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn cost_matches_composed_curve() {
        // Composing exactly and using the identity must agree.
        let c0 = sample_ellipse(2.0, 1.0, 100).unwrap();
        let c1 = circle(1.0, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = random_reparametrization(&mut rng, 5);
        let composed = c1.reparametrized(phi.lift()).unwrap();
        let a = srvt_cost(&c0, &c1, &phi);
        let b = srvt_cost(&c0, &composed, &Reparametrization::identity());
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn identical_ellipses_give_zero() {
        let c = sample_ellipse(2.0, 1.0, 512).unwrap();
        let r = srvt_distance_convex(&c, &c, &SrvtOptions::default()).unwrap();
        assert!(r.distance < 1e-6, "{}", r.distance);
        assert!(r.reparam.unwrap().rotation_defect() < 1e-9);
    }

    #[test]
    fn concentric_circles_pipeline() {
        let r = srvt_distance_convex(&circle(1.0, 1024), &circle(4.0, 1024), &SrvtOptions::default()).unwrap();
        let exact = concentric_circles_value(1.0, 4.0);
        assert!((r.distance.powi(2) - exact).abs() < 1e-3 * exact);
        assert!((r.wfr_value - exact).abs() < 1e-3 * exact);
    }

    #[test]
    fn orthogonal_segments() {
        let a = ParamCurve::uniform(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let b = ParamCurve::uniform(vec![[0.0, 0.0], [0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]).unwrap();
        let r = srvt_distance_convex(&a, &b, &SrvtOptions::default()).unwrap();
        assert_eq!(r.method, SrvtMethod::OrthogonalDipoles);
        assert!((r.distance.powi(2) - 10.0).abs() < 1e-14);
        assert_eq!(r.wfr_value, 10.0);
    }

    #[test]
    fn segment_against_square_is_extrapolated() {
        let seg = ParamCurve::uniform(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let sq = ConvexLoop::from_polygon(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap().sampled(64).unwrap();
        let r = srvt_distance_convex(&seg, &sq, &SrvtOptions::default()).unwrap();
        assert!(matches!(r.method, SrvtMethod::Extrapolated { .. }));
        assert!(r.reparam.is_none());
        // Atoms at π/2, 3π/2 are annihilated; the rest is two pairs of
        // opposite edges of lengths 2 and 1.
        let exact = 2.0 + 2.0 * (3.0 - 2.0 * 2f64.sqrt());
        assert!((r.wfr_value - exact).abs() < 1e-3, "{} vs {exact}", r.wfr_value);
        assert!(r.gap < 1e-2, "{r:?}");
    }

    #[test]
    fn lower_bound_for_random_reparametrizations() {
        let c0 = sample_ellipse(2.0, 1.0, 256).unwrap();
        let c1 = circle(1.0, 256);
        let w = srvt_distance_convex(&c0, &c1, &SrvtOptions::default()).unwrap().wfr_value;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let phi = random_reparametrization(&mut rng, 6);
            assert!(srvt_cost(&c0, &c1, &phi) >= w - 1e-3);
        }
    }
}
