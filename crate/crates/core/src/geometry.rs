//! Convex loops, sampled curves, length measures and Gauss-map lifts.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::{MonotoneLift, Side};
use crate::measures::{bin_to_grid, circ_dist, Angle, DiscreteMeasure, GridDensity};

/// Slack allowed on backwards turns of sampled tangents.
pub const CONVEXITY_SLACK: f64 = 1e-9;

/// Relative first-moment tolerance accepted by [`reconstruct_loop`].
pub const CLOSEDNESS_REL_TOL: f64 = 1e-8;

/// Tolerance for exact antipodality and equal masses in [`is_degenerate`].
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Convex polygon stored as its counterclockwise edge list.
///
/// Edges are sorted by direction in `[0, 2π)`. Loops that differ by a
/// translation are identified; [`ConvexLoop::vertices`] anchors the start of
/// the first edge at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexLoop {
    edges: Vec<(Angle, f64)>,
}

impl ConvexLoop {
    /// Builds a loop from `(direction, length)` pairs in any order.
    ///
    /// Edges sharing a direction are merged. The result must close up to
    /// [`CLOSEDNESS_REL_TOL`] times the perimeter.
    pub fn from_edges(edges: &[(f64, f64)]) -> Result<Self> {
        let mu = DiscreteMeasure::from_pairs(edges)?;
        if mu.is_zero() {
            return Err(Error::ZeroMeasure);
        }
        let residual = mu.first_moment_norm();
        if residual > CLOSEDNESS_REL_TOL * mu.total_mass() {
            return Err(Error::NotClosed { residual });
        }
        if mu.len() < 2 {
            return Err(Error::Degenerate("a closed loop needs at least two edge directions".into()));
        }
        Ok(ConvexLoop { edges: mu.atoms().iter().map(|a| (a.angle, a.mass)).collect() })
    }

    /// Builds a loop from counterclockwise polygon vertices.
    ///
    /// Repeated vertices and collinear runs are collapsed. Two vertices give a
    /// segment traversed both ways.
    pub fn from_polygon(vertices: &[[f64; 2]]) -> Result<Self> {
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("vertex coordinates must be finite".into()));
        }
        let n = vertices.len();
        let mut dirs = Vec::with_capacity(n);
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            if len > 0.0 {
                dirs.push((dy.atan2(dx), len));
            }
        }
        if dirs.len() < 2 {
            return Err(Error::Degenerate("polygon has fewer than two distinct vertices".into()));
        }
        let raw: Vec<f64> = dirs.iter().map(|d| d.0).collect();
        check_turning(&raw)?;
        let edges: Vec<(f64, f64)> = dirs;
        Self::from_edges(&edges)
    }

    pub fn edges(&self) -> &[(Angle, f64)] {
        &self.edges
    }

    pub fn perimeter(&self) -> f64 {
        self.edges.iter().map(|e| e.1).sum()
    }

    /// Vertices in counterclockwise order, the first at the origin.
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        let mut p = [0.0, 0.0];
        let mut out = Vec::with_capacity(self.edges.len());
        for (theta, len) in &self.edges {
            out.push(p);
            let u = theta.unit();
            p = [p[0] + len * u[0], p[1] + len * u[1]];
        }
        out
    }

    /// Norm of `Σ length·(cos θ, sin θ)`.
    pub fn closedness_residual(&self) -> f64 {
        self.length_measure().first_moment_norm()
    }

    /// One atom per edge at its direction, weighted by its length.
    pub fn length_measure(&self) -> DiscreteMeasure {
        let pairs: Vec<(f64, f64)> = self.edges.iter().map(|(a, l)| (a.radians(), *l)).collect();
        DiscreteMeasure::from_pairs(&pairs).expect("edges carry positive finite lengths")
    }

    pub fn diameter(&self) -> f64 {
        let v = self.vertices();
        let mut best: f64 = 0.0;
        for (i, a) in v.iter().enumerate() {
            for b in &v[i + 1..] {
                best = best.max((a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        best
    }

    /// Boundary of the Minkowski sum with a disk of radius `rho`, sampled at
    /// `n` points equally spaced in arc length.
    ///
    /// The rounded loop has length measure `μ + rho·dθ`, which has a strictly
    /// positive density.
    pub fn rounded(&self, rho: f64, n: usize) -> Result<ParamCurve> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!("rounding radius {rho}")));
        }
        let verts = self.vertices();
        let m = self.edges.len();
        let mut pieces = Vec::with_capacity(2 * m);
        for i in 0..m {
            let (theta, len) = self.edges[i];
            let normal = theta.radians() - PI / 2.0;
            let (s, c) = normal.sin_cos();
            let start = [verts[i][0] + rho * c, verts[i][1] + rho * s];
            let u = theta.unit();
            pieces.push(Piece::Line { start, dir: u, len });
            let next = self.edges[(i + 1) % m].0.radians();
            let sweep = (next - theta.radians()).rem_euclid(TAU);
            let center = verts[(i + 1) % m];
            pieces.push(Piece::Arc { center, radius: rho, from: normal, sweep });
        }
        sample_pieces(&pieces, n)
    }

    /// The polygon itself sampled with about `n` points, every vertex
    /// included and the rest spread over the edges by length.
    pub fn sampled(&self, n: usize) -> Result<ParamCurve> {
        let verts = self.vertices();
        let per = self.perimeter() / n.max(self.edges.len()) as f64;
        let mut samples = Vec::with_capacity(n + self.edges.len());
        for (i, &(theta, len)) in self.edges.iter().enumerate() {
            let k = ((len / per).round() as usize).max(1);
            let u = theta.unit();
            for s in 0..k {
                let w = len * s as f64 / k as f64;
                samples.push([verts[i][0] + w * u[0], verts[i][1] + w * u[1]]);
            }
        }
        ParamCurve::uniform(samples)
    }
}

fn sample_pieces(pieces: &[Piece], n: usize) -> Result<ParamCurve> {
    let total: f64 = pieces.iter().map(Piece::length).sum();
    let mut samples = Vec::with_capacity(n);
    let mut idx = 0;
    let mut acc = 0.0;
    for k in 0..n {
        let s = total * k as f64 / n as f64;
        while idx + 1 < pieces.len() && acc + pieces[idx].length() <= s {
            acc += pieces[idx].length();
            idx += 1;
        }
        samples.push(pieces[idx].point(s - acc));
    }
    ParamCurve::uniform(samples)
}

enum Piece {
    Line { start: [f64; 2], dir: [f64; 2], len: f64 },
    Arc { center: [f64; 2], radius: f64, from: f64, sweep: f64 },
}

impl Piece {
    fn length(&self) -> f64 {
        match self {
            Piece::Line { len, .. } => *len,
            Piece::Arc { radius, sweep, .. } => radius * sweep,
        }
    }

    fn point(&self, s: f64) -> [f64; 2] {
        match self {
            Piece::Line { start, dir, .. } => [start[0] + s * dir[0], start[1] + s * dir[1]],
            Piece::Arc { center, radius, from, .. } => {
                let a = from + s / radius;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            }
        }
    }
}

/// Signed turn from `a` to `b` reduced to `(-π, π]`.
/// Signed turn in `(-π, π]`; a reversal counts as `+π` even when rounding
/// puts it slightly past.
fn turn(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(TAU);
    if d > PI + CONVEXITY_SLACK {
        d - TAU
    } else {
        d
    }
}

/// Turns between consecutive (cyclic) directions, checked for convexity.
fn check_turning(dirs: &[f64]) -> Result<Vec<f64>> {
    let n = dirs.len();
    let mut turns = Vec::with_capacity(n);
    for k in 0..n {
        let d = turn(dirs[k], dirs[(k + 1) % n]);
        if d < -CONVEXITY_SLACK {
            return Err(Error::NotConvex(format!("tangent turns backwards by {:e} at segment {k}", -d)));
        }
        turns.push(d.max(0.0));
    }
    let total: f64 = turns.iter().sum();
    if (total - TAU).abs() > 1e-6 {
        return Err(Error::NotConvex(format!("total turning {total} instead of 2π")));
    }
    Ok(turns)
}

/// Closed curve sampled at increasing parameters in `[0, 2π)` and
/// interpolated linearly, the last sample joined to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCurve {
    params: Vec<f64>,
    samples: Vec<[f64; 2]>,
}

impl ParamCurve {
    /// Samples at the uniform parameters `2πk/n`.
    pub fn uniform(samples: Vec<[f64; 2]>) -> Result<Self> {
        let n = samples.len();
        let params = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
        Self::new(params, samples)
    }

    pub fn new(params: Vec<f64>, samples: Vec<[f64; 2]>) -> Result<Self> {
        let n = samples.len();
        if n < 3 {
            return Err(Error::InvalidArgument(format!("a curve needs at least 3 samples, got {n}")));
        }
        if params.len() != n {
            return Err(Error::InvalidArgument("params and samples differ in length".into()));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sample coordinates must be finite".into()));
        }
        if params[0] < 0.0 || params[n - 1] >= TAU || params.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("params must increase strictly within [0, 2π)".into()));
        }
        for k in 0..n {
            if samples[k] == samples[(k + 1) % n] {
                return Err(Error::InvalidArgument(format!("repeated sample at index {k}")));
            }
        }
        Ok(ParamCurve { params, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Parameter interval `[start, end]` of segment `k` (the last one wraps).
    pub fn segment_span(&self, k: usize) -> (f64, f64) {
        let n = self.len();
        let end = if k + 1 == n { self.params[0] + TAU } else { self.params[k + 1] };
        (self.params[k], end)
    }

    /// Displacement of segment `k`.
    pub fn segment_vector(&self, k: usize) -> [f64; 2] {
        let a = self.samples[k];
        let b = self.samples[(k + 1) % self.len()];
        [b[0] - a[0], b[1] - a[1]]
    }

    /// Constant velocity on segment `k`.
    pub fn velocity(&self, k: usize) -> [f64; 2] {
        let (s, e) = self.segment_span(k);
        let d = self.segment_vector(k);
        [d[0] / (e - s), d[1] / (e - s)]
    }

    pub fn length(&self) -> f64 {
        (0..self.len()).map(|k| norm(self.segment_vector(k))).sum()
    }

    /// Segment containing parameter `t` (taken modulo 2π), with `t` reduced
    /// into its span.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.len();
        let mut t = (t - self.params[0]).rem_euclid(TAU) + self.params[0];
        if t >= self.params[0] + TAU {
            t = self.params[0];
        }
        let k = self.params.partition_point(|&p| p <= t);
        let k = if k == 0 { n - 1 } else { k - 1 };
        (k, t)
    }

    /// Position at parameter `t`.
    pub fn eval(&self, t: f64) -> [f64; 2] {
        let (k, t) = self.locate(t);
        let (s, e) = self.segment_span(k);
        let w = (t - s) / (e - s);
        let d = self.segment_vector(k);
        let p = self.samples[k];
        [p[0] + w * d[0], p[1] + w * d[1]]
    }

    /// Direction of every segment.
    pub fn tangent_angles(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let d = self.segment_vector(k);
                d[1].atan2(d[0])
            })
            .collect()
    }

    /// Segment directions weighted by segment lengths, without binning.
    ///
    /// Fails with "not convex" unless the tangent turns monotonically once.
    pub fn length_atoms(&self) -> Result<DiscreteMeasure> {
        check_turning(&self.tangent_angles())?;
        let pairs: Vec<(f64, f64)> =
            (0..self.len()).map(|k| (self.tangent_angles()[k], norm(self.segment_vector(k)))).collect();
        let mu = DiscreteMeasure::from_pairs(&pairs)?;
        if mu.len() < 2 {
            return Err(Error::Degenerate("curve has fewer than two tangent directions".into()));
        }
        Ok(mu)
    }

    /// Length measure binned on a grid of `resolution` cells.
    pub fn length_measure(&self, resolution: usize) -> Result<GridDensity> {
        bin_to_grid(&self.length_atoms()?, resolution)
    }

    /// Left-continuous unwrapped tangent angle.
    pub fn gauss_lift(&self) -> Result<GaussLift> {
        let dirs = self.tangent_angles();
        let turns = check_turning(&dirs)?;
        let n = self.len();
        let base = Angle::new(dirs[n - 1]).radians();
        let t0 = self.params[0];
        let mut knots = Vec::with_capacity(2 * n + 1);
        let mut theta = base;
        knots.push((t0, theta));
        for k in 0..n {
            // turns[n-1] is the turn from the last segment into segment 0
            let jump = if k == 0 { turns[n - 1] } else { turns[k - 1] };
            theta += jump;
            knots.push((self.params[k], theta));
            let (_, e) = self.segment_span(k);
            knots.push((e, theta));
        }
        let end = base + TAU;
        for k in knots.iter_mut() {
            k.1 = k.1.min(end);
        }
        let last = knots.len() - 1;
        knots[last - 1].1 = end;
        knots[last].1 = end;
        let lift = MonotoneLift::new(knots, TAU, TAU)?;
        Ok(GaussLift { lift })
    }

    pub fn rotated(&self, alpha: f64) -> Self {
        let (s, c) = alpha.sin_cos();
        let samples = self.samples.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
        ParamCurve { params: self.params.clone(), samples }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let samples = self.samples.iter().map(|p| [factor * p[0], factor * p[1]]).collect();
        ParamCurve { params: self.params.clone(), samples }
    }

    /// The same geometric curve traversed as `c ∘ φ`, represented exactly by
    /// sampling at the breakpoints of `φ` and the preimages of the samples.
    pub fn reparametrized(&self, phi: &MonotoneLift) -> Result<Self> {
        let inv = phi.inverse()?;
        let mut ts: Vec<f64> = phi.knots().iter().map(|k| k.0.rem_euclid(TAU)).collect();
        ts.extend(self.params.iter().map(|&p| inv.eval(p, Side::Right).rem_euclid(TAU)));
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        if ts.len() > 1 && TAU - ts[ts.len() - 1] + ts[0] < 1e-13 {
            ts.pop();
        }
        let mut params = Vec::with_capacity(ts.len());
        let mut samples: Vec<[f64; 2]> = Vec::with_capacity(ts.len());
        for t in ts {
            let p = self.eval(phi.eval(t, Side::Right));
            if samples.last() == Some(&p) {
                continue;
            }
            params.push(t);
            samples.push(p);
        }
        while samples.len() > 1 && samples[0] == samples[samples.len() - 1] {
            samples.pop();
            params.pop();
        }
        Self::new(params, samples)
    }
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Unwrapped tangent angle `T̆` of a convex curve: nondecreasing,
/// left-continuous, with `T̆(t + 2π) = T̆(t) + 2π` and `T̆(0) ∈ [0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLift {
    lift: MonotoneLift,
}

impl GaussLift {
    pub fn eval(&self, t: f64) -> f64 {
        self.lift.eval(t, Side::Left)
    }

    pub fn eval_right(&self, t: f64) -> f64 {
        self.lift.eval(t, Side::Right)
    }

    pub fn lift(&self) -> &MonotoneLift {
        &self.lift
    }

    pub fn max_jump(&self) -> f64 {
        self.lift.max_jump()
    }
}

/// Polygon with vertices in order of positive orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonJson {
    pub vertices: Vec<[f64; 2]>,
}

/// Sampled curve; `params` defaults to the uniform parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveJson {
    pub samples: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
}

impl TryFrom<CurveJson> for ParamCurve {
    type Error = Error;

    fn try_from(c: CurveJson) -> Result<Self> {
        match c.params {
            Some(p) => ParamCurve::new(p, c.samples),
            None => ParamCurve::uniform(c.samples),
        }
    }
}

impl From<&ParamCurve> for CurveJson {
    fn from(c: &ParamCurve) -> Self {
        CurveJson { samples: c.samples.clone(), params: Some(c.params.clone()) }
    }
}

impl From<&ConvexLoop> for PolygonJson {
    fn from(l: &ConvexLoop) -> Self {
        PolygonJson { vertices: l.vertices() }
    }
}

/// Convex loop with the given length measure, first vertex at the origin.
pub fn reconstruct_loop(mu: &DiscreteMeasure) -> Result<ConvexLoop> {
    if mu.is_zero() {
        return Err(Error::ZeroMeasure);
    }
    let residual = mu.first_moment_norm();
    if residual > CLOSEDNESS_REL_TOL * mu.total_mass() {
        return Err(Error::NotClosed { residual });
    }
    if mu.len() < 2 {
        return Err(Error::Degenerate("a closed loop needs at least two edge directions".into()));
    }
    Ok(ConvexLoop { edges: mu.atoms().iter().map(|a| (a.angle, a.mass)).collect() })
}

/// Direction `x` when `μ = rδ_x + rδ_{x+π}`.
pub fn is_degenerate(mu: &DiscreteMeasure) -> Option<Angle> {
    let [a, b] = mu.atoms() else {
        return None;
    };
    let antipodal = (circ_dist(a.angle, b.angle) - PI).abs() <= DEGENERACY_TOL;
    let equal = (a.mass - b.mass).abs() <= DEGENERACY_TOL * a.mass.max(b.mass).max(1.0);
    (antipodal && equal).then_some(a.angle)
}

/// `n` points of the ellipse `(a cos t, b sin t)` at `t = 2πk/n`.
pub fn sample_ellipse(a: f64, b: f64, n: usize) -> Result<ParamCurve> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidArgument(format!("semi-axes must be positive, got {a}, {b}")));
    }
    if n < 16 {
        return Err(Error::InvalidArgument(format!("need at least 16 samples, got {n}")));
    }
    let samples = (0..n)
        .map(|k| {
            let t = TAU * k as f64 / n as f64;
            [a * t.cos(), b * t.sin()]
        })
        .collect();
    ParamCurve::uniform(samples)
}

/// Random measure with vanishing first moment: `k` random atoms plus the
/// closing atom `-Σ m e^{iθ}`.
pub fn random_closed_measure<R: Rng>(rng: &mut R, k: usize) -> DiscreteMeasure {
    loop {
        let mut pairs: Vec<(f64, f64)> = (0..k.max(1)).map(|_| (rng.gen_range(0.0..TAU), rng.gen_range(0.1..2.0))).collect();
        let m = DiscreteMeasure::from_pairs(&pairs).expect("valid random atoms").first_moment();
        let len = m[0].hypot(m[1]);
        if len < 1e-3 {
            continue;
        }
        pairs.push(((-m[1]).atan2(-m[0]), len));
        let mu = DiscreteMeasure::from_pairs(&pairs).expect("valid random atoms");
        if mu.len() >= 2 {
            return mu;
        }
    }
}
