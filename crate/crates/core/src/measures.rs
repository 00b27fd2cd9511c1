//! Nonnegative measures on the circle and the transport cost between their points.
//!
//! Angles live in `[0, 2π)`. The ground cost is `ℓ(ζ) = -log cos²(ζ)` for
//! `ζ < π/2` and `+∞` beyond, represented by [`ExtReal::Infinite`] so that the
//! boundary of the finite strip stays exact.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::{MonotoneLift, Side};

/// Atoms closer than this (in radians) are merged.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

/// Pairs at circular distance `>= π/2 - FAR_GUARD` carry infinite cost.
pub const FAR_GUARD: f64 = 1e-12;

/// Grid cells with density below this fraction of the maximum are outside the support.
pub const SUPPORT_REL_THRESHOLD: f64 = 1e-14;

/// Smallest supported grid resolution.
pub const MIN_GRID: usize = 4;

/// A point of the circle, canonically in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub struct Angle(f64);

impl Angle {
    pub fn new(radians: f64) -> Self {
        let mut v = radians.rem_euclid(TAU);
        if v >= TAU {
            v = 0.0;
        }
        Angle(v)
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Unit vector `(cos θ, sin θ)`.
    pub fn unit(self) -> [f64; 2] {
        [self.0.cos(), self.0.sin()]
    }

    pub fn rotated(self, alpha: f64) -> Self {
        Angle::new(self.0 + alpha)
    }

    pub fn antipode(self) -> Self {
        self.rotated(PI)
    }
}

impl From<Angle> for f64 {
    fn from(a: Angle) -> f64 {
        a.0
    }
}

impl TryFrom<f64> for Angle {
    type Error = String;

    fn try_from(v: f64) -> std::result::Result<Self, String> {
        if v.is_finite() {
            Ok(Angle::new(v))
        } else {
            Err(format!("angle must be finite, got {v}"))
        }
    }
}

/// Geodesic distance on the unit circle, in `[0, π]`.
pub fn circ_dist(a: Angle, b: Angle) -> f64 {
    let d = (a.0 - b.0).abs();
    d.min(TAU - d)
}

/// Extended nonnegative real with a distinguished `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    /// Finite value, or `f64::INFINITY` for reporting purposes.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl Add for ExtReal {
    type Output = ExtReal;

    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::Infinite,
        }
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
            (ExtReal::Finite(_), ExtReal::Infinite) => Some(Ordering::Less),
            (ExtReal::Infinite, ExtReal::Finite(_)) => Some(Ordering::Greater),
            (ExtReal::Infinite, ExtReal::Infinite) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinite => write!(f, "+inf"),
        }
    }
}

/// Transport cost `ℓ(ζ) = -log(cos² ζ)`, infinite for `ζ >= π/2`.
///
/// # Panics
/// On negative or NaN input.
pub fn ell(zeta: f64) -> ExtReal {
    assert!(zeta >= 0.0, "ell is defined on [0, inf), got {zeta}");
    if zeta >= FRAC_PI_2 {
        return ExtReal::Infinite;
    }
    let c = zeta.cos();
    ExtReal::Finite(-(c * c).ln())
}

/// `ℓ(dist(a, b))` with the guard band of [`FAR_GUARD`] treated as infinite.
pub fn pair_cost(a: Angle, b: Angle) -> ExtReal {
    let d = circ_dist(a, b);
    if is_far(d) {
        ExtReal::Infinite
    } else {
        ell(d)
    }
}

/// Whether a circular distance lies outside the finite strip.
pub fn is_far(d: f64) -> bool {
    d >= FRAC_PI_2 - FAR_GUARD
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "theta")]
    pub angle: Angle,
    pub mass: f64,
}

/// Finitely supported nonnegative measure on the circle.
///
/// Atoms are sorted by angle, carry strictly positive mass, and no two atoms
/// lie within [`ATOM_MERGE_TOL`] of each other.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    /// The zero measure.
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn dirac(angle: f64, mass: f64) -> Result<Self> {
        Self::from_pairs(&[(angle, mass)])
    }

    /// Builds a measure from `(angle, mass)` pairs, merging nearby atoms.
    ///
    /// Zero masses are dropped; negative or non-finite ones are rejected.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let mut atoms = Vec::with_capacity(pairs.len());
        for &(theta, mass) in pairs {
            if !theta.is_finite() {
                return Err(Error::InvalidArgument(format!("angle {theta} is not finite")));
            }
            if !mass.is_finite() || mass < 0.0 {
                return Err(Error::InvalidMass(mass));
            }
            if mass > 0.0 {
                atoms.push(Atom { angle: Angle::new(theta), mass });
            }
        }
        Ok(Self::from_atoms_unchecked(atoms))
    }

    fn from_atoms_unchecked(mut atoms: Vec<Atom>) -> Self {
        atoms.sort_by(|a, b| a.angle.0.total_cmp(&b.angle.0));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match merged.last_mut() {
                Some(last) if atom.angle.0 - last.angle.0 <= ATOM_MERGE_TOL => last.mass += atom.mass,
                _ => merged.push(atom),
            }
        }
        // Atoms just below 2π belong with atoms at 0.
        if merged.len() > 1 {
            let last = merged[merged.len() - 1];
            if TAU - last.angle.0 + merged[0].angle.0 <= ATOM_MERGE_TOL {
                merged[0].mass += last.mass;
                merged.pop();
            }
        }
        DiscreteMeasure { atoms: merged }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// `Σ m (cos θ, sin θ)`.
    pub fn first_moment(&self) -> [f64; 2] {
        self.atoms.iter().fold([0.0, 0.0], |acc, a| {
            let u = a.angle.unit();
            [acc[0] + a.mass * u[0], acc[1] + a.mass * u[1]]
        })
    }

    pub fn first_moment_norm(&self) -> f64 {
        let m = self.first_moment();
        m[0].hypot(m[1])
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !factor.is_finite() || factor < 0.0 {
            return Err(Error::InvalidArgument(format!("scale factor {factor}")));
        }
        if factor == 0.0 {
            return Ok(Self::zero());
        }
        Ok(DiscreteMeasure {
            atoms: self.atoms.iter().map(|a| Atom { angle: a.angle, mass: a.mass * factor }).collect(),
        })
    }

    /// Rescaled to unit total mass.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.total_mass();
        if m <= 0.0 {
            return Err(Error::ZeroMeasure);
        }
        self.scaled(1.0 / m)
    }

    pub fn rotated(&self, alpha: f64) -> Self {
        Self::from_atoms_unchecked(
            self.atoms.iter().map(|a| Atom { angle: a.angle.rotated(alpha), mass: a.mass }).collect(),
        )
    }

    /// Sum of two measures.
    pub fn plus(&self, other: &DiscreteMeasure) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        Self::from_atoms_unchecked(atoms)
    }

    /// Restriction to the atoms selected by `keep`.
    pub fn restrict(&self, mut keep: impl FnMut(&Atom) -> bool) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().copied().filter(|a| keep(a)).collect() }
    }

    /// Circular distance from `x` to the nearest atom, `None` for the zero measure.
    pub fn support_distance(&self, x: Angle) -> Option<f64> {
        self.atoms.iter().map(|a| circ_dist(a.angle, x)).min_by(f64::total_cmp)
    }

    /// Mass of the atom at `x` (within the merge tolerance).
    pub fn mass_at(&self, x: Angle) -> f64 {
        self.atoms
            .iter()
            .filter(|a| circ_dist(a.angle, x) <= ATOM_MERGE_TOL)
            .map(|a| a.mass)
            .sum()
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            atoms: Vec<RawAtom>,
        }
        #[derive(Deserialize)]
        struct RawAtom {
            theta: f64,
            mass: f64,
        }
        let raw = Raw::deserialize(d)?;
        let pairs: Vec<(f64, f64)> = raw.atoms.iter().map(|a| (a.theta, a.mass)).collect();
        DiscreteMeasure::from_pairs(&pairs).map_err(serde::de::Error::custom)
    }
}

/// Piecewise-constant density on `G` equal cells, cell `k` covering
/// `[2πk/G, 2π(k+1)/G)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridDensity {
    resolution: usize,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < MIN_GRID {
            return Err(Error::GridTooCoarse { got: values.len(), min: MIN_GRID });
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidMass(bad));
        }
        Ok(GridDensity { resolution: values.len(), values })
    }

    /// Density with the given cell masses.
    pub fn from_cell_masses(masses: Vec<f64>) -> Result<Self> {
        let g = masses.len();
        let scale = g as f64 / TAU;
        Self::new(masses.into_iter().map(|m| m * scale).collect())
    }

    pub fn uniform(resolution: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; resolution])
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_width(&self) -> f64 {
        TAU / self.resolution as f64
    }

    pub fn cell_start(&self, k: usize) -> f64 {
        TAU * k as f64 / self.resolution as f64
    }

    pub fn cell_center(&self, k: usize) -> f64 {
        TAU * (k as f64 + 0.5) / self.resolution as f64
    }

    pub fn cell_mass(&self, k: usize) -> f64 {
        self.values[k] * self.cell_width()
    }

    pub fn cell_masses(&self) -> Vec<f64> {
        let h = self.cell_width();
        self.values.iter().map(|v| v * h).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.cell_width() * self.values.iter().sum::<f64>()
    }

    /// Index of the cell containing `x` (cells are left-closed).
    pub fn cell_of(&self, x: Angle) -> usize {
        let k = (x.0 / self.cell_width()).floor() as usize;
        k.min(self.resolution - 1)
    }

    /// Cells whose density exceeds [`SUPPORT_REL_THRESHOLD`] times the maximum.
    pub fn support_cells(&self) -> Vec<usize> {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Vec::new();
        }
        let thr = SUPPORT_REL_THRESHOLD * max;
        (0..self.resolution).filter(|&k| self.values[k] > thr).collect()
    }

    /// Cell masses placed at cell centers, restricted to the support.
    pub fn to_atoms(&self) -> DiscreteMeasure {
        let atoms = self
            .support_cells()
            .into_iter()
            .map(|k| Atom { angle: Angle::new(self.cell_center(k)), mass: self.cell_mass(k) })
            .collect();
        DiscreteMeasure::from_atoms_unchecked(atoms)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn normalized(&self) -> Result<Self> {
        let m = self.total_mass();
        if m <= 0.0 {
            return Err(Error::ZeroMeasure);
        }
        self.scaled(1.0 / m)
    }

    /// Rotation by a whole number of cells (counterclockwise).
    pub fn rotated_cells(&self, shift: isize) -> Self {
        let g = self.resolution as isize;
        let mut values = vec![0.0; self.resolution];
        for (k, v) in self.values.iter().enumerate() {
            values[((k as isize + shift).rem_euclid(g)) as usize] = *v;
        }
        GridDensity { resolution: self.resolution, values }
    }

    /// Total variation distance `Σ_k |m_k - m'_k|` between cell masses.
    pub fn tv_distance(&self, other: &GridDensity) -> Result<f64> {
        if self.resolution != other.resolution {
            return Err(Error::InvalidArgument("grid resolutions differ".into()));
        }
        let h = self.cell_width();
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs() * h).sum())
    }
}

impl<'de> Deserialize<'de> for GridDensity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            resolution: usize,
            values: Vec<f64>,
        }
        let raw = Raw::deserialize(d)?;
        if raw.values.len() != raw.resolution {
            return Err(serde::de::Error::custom(format!(
                "resolution {} does not match {} values",
                raw.resolution,
                raw.values.len()
            )));
        }
        GridDensity::new(raw.values).map_err(serde::de::Error::custom)
    }
}

/// Either representation of a measure, where an operation accepts both.
#[derive(Debug, Clone, Copy)]
pub enum MeasureRef<'a> {
    Discrete(&'a DiscreteMeasure),
    Grid(&'a GridDensity),
}

impl<'a> From<&'a DiscreteMeasure> for MeasureRef<'a> {
    fn from(m: &'a DiscreteMeasure) -> Self {
        MeasureRef::Discrete(m)
    }
}

impl<'a> From<&'a GridDensity> for MeasureRef<'a> {
    fn from(m: &'a GridDensity) -> Self {
        MeasureRef::Grid(m)
    }
}

impl MeasureRef<'_> {
    /// Atomic representation (grid cells become atoms at their centers).
    pub fn to_atoms(self) -> DiscreteMeasure {
        match self {
            MeasureRef::Discrete(m) => m.clone(),
            MeasureRef::Grid(g) => g.to_atoms(),
        }
    }

    pub fn total_mass(self) -> f64 {
        match self {
            MeasureRef::Discrete(m) => m.total_mass(),
            MeasureRef::Grid(g) => g.total_mass(),
        }
    }
}

/// Bins a discrete measure into `resolution` left-closed cells.
pub fn bin_to_grid(mu: &DiscreteMeasure, resolution: usize) -> Result<GridDensity> {
    if resolution < MIN_GRID {
        return Err(Error::GridTooCoarse { got: resolution, min: MIN_GRID });
    }
    let mut masses = vec![0.0; resolution];
    let h = TAU / resolution as f64;
    for a in mu.atoms() {
        let k = ((a.angle.0 / h).floor() as usize).min(resolution - 1);
        masses[k] += a.mass;
    }
    GridDensity::from_cell_masses(masses)
}

/// Merges the atoms of each grid cell into one atom at their circular mean.
///
/// Unlike [`bin_to_grid`] followed by [`GridDensity::to_atoms`], an isolated
/// atom keeps its exact position.
pub fn bin_atoms(mu: &DiscreteMeasure, resolution: usize) -> Result<DiscreteMeasure> {
    if resolution < MIN_GRID {
        return Err(Error::GridTooCoarse { got: resolution, min: MIN_GRID });
    }
    let h = TAU / resolution as f64;
    let mut cells: Vec<(f64, f64, f64)> = vec![(0.0, 0.0, 0.0); resolution];
    for a in mu.atoms() {
        let k = ((a.angle.0 / h).floor() as usize).min(resolution - 1);
        let u = a.angle.unit();
        cells[k].0 += a.mass;
        cells[k].1 += a.mass * u[0];
        cells[k].2 += a.mass * u[1];
    }
    let atoms = cells
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.0 > 0.0)
        .map(|(k, (m, x, y))| {
            let theta = if x.hypot(y) > 1e-300 { y.atan2(x) } else { (k as f64 + 0.5) * h };
            Atom { angle: Angle::new(theta), mass: m }
        })
        .collect();
    Ok(DiscreteMeasure::from_atoms_unchecked(atoms))
}

fn require_nonzero(mu: &DiscreteMeasure) -> Result<()> {
    if mu.is_zero() {
        Err(Error::ZeroMeasure)
    } else {
        Ok(())
    }
}

/// Atoms of `mu` lying in the far set `{x : dist(x, supp other) >= π/2}`.
pub fn far_atoms<'a>(mu: &'a DiscreteMeasure, other: &'a DiscreteMeasure) -> impl Iterator<Item = &'a Atom> {
    mu.atoms()
        .iter()
        .filter(move |a| other.support_distance(a.angle).map_or(true, is_far))
}

/// Neither measure charges the far set of the other.
pub fn is_weakly_admissible(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<bool> {
    require_nonzero(mu0)?;
    require_nonzero(mu1)?;
    let far_mass: f64 = far_atoms(mu0, mu1).chain(far_atoms(mu1, mu0)).map(|a| a.mass).sum();
    Ok(far_mass == 0.0)
}

/// Directed sup–inf of `ℓ(dist)` from the support of `a` to the support of `b`.
pub fn directed_ell_hausdorff(a: &DiscreteMeasure, b: &DiscreteMeasure) -> ExtReal {
    let mut worst = ExtReal::Finite(0.0);
    for x in a.atoms() {
        let best = b
            .atoms()
            .iter()
            .map(|y| pair_cost(x.angle, y.angle))
            .fold(ExtReal::Infinite, |acc, c| if c < acc { c } else { acc });
        if best > worst {
            worst = best;
        }
    }
    worst
}

/// Both directed `ℓ`-Hausdorff values are finite.
pub fn is_admissible(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<bool> {
    require_nonzero(mu0)?;
    require_nonzero(mu1)?;
    Ok(directed_ell_hausdorff(mu0, mu1).is_finite() && directed_ell_hausdorff(mu1, mu0).is_finite())
}

/// Cumulative distribution function `F(t) = ζ([0, t))` over one period,
/// extended with `F(t + 2π) = F(t) + |ζ|`.
pub fn cdf_lift(rho: MeasureRef<'_>) -> Result<MonotoneLift> {
    let mut knots = vec![(0.0, 0.0)];
    let total = match rho {
        MeasureRef::Discrete(mu) => {
            let mut acc = 0.0;
            for a in mu.atoms() {
                knots.push((a.angle.0, acc));
                acc += a.mass;
                knots.push((a.angle.0, acc));
            }
            knots.push((TAU, acc));
            acc
        }
        MeasureRef::Grid(g) => {
            let mut acc = 0.0;
            for k in 0..g.resolution() {
                acc += g.cell_mass(k);
                knots.push((g.cell_start(k + 1), acc));
            }
            acc
        }
    };
    if total == 0.0 {
        // Zero measure: F ≡ 0.
        return MonotoneLift::new(vec![(0.0, 0.0), (TAU, 0.0)], TAU, 0.0);
    }
    let n = knots.len();
    knots[n - 1] = (TAU, total);
    MonotoneLift::new(knots, TAU, total)
}

/// `F^{[-1]}(t) = inf { s : F(s) > t }`, evaluated with [`Side::Right`].
pub fn pseudo_inverse(cdf: &MonotoneLift) -> Result<MonotoneLift> {
    cdf.inverse()
}

/// Pushes Lebesgue measure on one period of `quantile` onto a grid.
///
/// Each linear piece of the quantile function spreads its length uniformly
/// over the angular interval it covers; vertical pieces contribute nothing.
pub fn pushforward_lebesgue(quantile: &MonotoneLift, resolution: usize) -> Result<GridDensity> {
    if resolution < MIN_GRID {
        return Err(Error::GridTooCoarse { got: resolution, min: MIN_GRID });
    }
    let h = TAU / resolution as f64;
    let mut masses = vec![0.0; resolution];
    for w in quantile.knots().windows(2) {
        let (u0, a) = w[0];
        let (u1, b) = w[1];
        let len = u1 - u0;
        if len <= 0.0 {
            continue;
        }
        if b <= a {
            let k = ((a.rem_euclid(TAU) / h).floor() as usize).min(resolution - 1);
            masses[k] += len;
            continue;
        }
        // Split [a, b) at cell boundaries.
        let density = len / (b - a);
        let mut s = a;
        while s < b {
            let mut cell = (s / h).floor();
            if (cell + 1.0) * h - s <= 1e-12 * h {
                cell += 1.0;
            }
            let e = ((cell + 1.0) * h).min(b);
            let k = ((cell as i64).rem_euclid(resolution as i64)) as usize;
            masses[k] += (e - s) * density;
            s = e;
        }
    }
    GridDensity::from_cell_masses(masses)
}

/// Convenience: evaluate a CDF with its native (left-continuous) convention.
pub fn cdf_eval(cdf: &MonotoneLift, t: f64) -> f64 {
    cdf.eval(t, Side::Left)
}

/// Convenience: evaluate a pseudo-inverse with its defining convention.
pub fn quantile_eval(q: &MonotoneLift, t: f64) -> f64 {
    q.eval(t, Side::Right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn square() -> DiscreteMeasure {
        DiscreteMeasure::from_pairs(&[(0.0, 1.0), (FRAC_PI_2, 1.0), (PI, 1.0), (3.0 * FRAC_PI_2, 1.0)]).unwrap()
    }

    #[test]
    fn circ_dist_examples() {
        assert_eq!(circ_dist(Angle::new(0.0), Angle::new(0.0)), 0.0);
        assert!((circ_dist(Angle::new(0.0), Angle::new(1.5 * PI)) - FRAC_PI_2).abs() < 1e-15);
        assert!((circ_dist(Angle::new(PI / 6.0), Angle::new(11.0 * PI / 6.0)) - PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn ell_examples() {
        assert_eq!(ell(0.0), ExtReal::Finite(0.0));
        assert!((ell(FRAC_PI_4).to_f64() - 2f64.ln()).abs() < 1e-14);
        assert_eq!(ell(FRAC_PI_2), ExtReal::Infinite);
        assert_eq!(ell(3.0), ExtReal::Infinite);
    }

    #[test]
    #[should_panic]
    fn ell_rejects_negative() {
        ell(-0.1);
    }

    #[test]
    fn ext_real_saturates() {
        assert_eq!(ExtReal::Finite(1.0) + ExtReal::Infinite, ExtReal::Infinite);
        assert!(ExtReal::Finite(1e300) < ExtReal::Infinite);
    }

    #[test]
    fn duplicate_atoms_merge() {
        let mu = DiscreteMeasure::from_pairs(&[(0.5, 1.0), (0.5, 2.0), (TAU - 1e-13, 1.0), (0.0, 1.0)]).unwrap();
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.mass_at(Angle::new(0.5)), 3.0);
        assert_eq!(mu.mass_at(Angle::new(0.0)), 2.0);
    }

    #[test]
    fn negative_mass_rejected() {
        assert_eq!(DiscreteMeasure::from_pairs(&[(0.0, -1.0)]), Err(Error::InvalidMass(-1.0)));
    }

    #[test]
    fn weak_admissibility_examples() {
        let d0 = DiscreteMeasure::dirac(0.0, 1.0).unwrap();
        let d1 = DiscreteMeasure::dirac(FRAC_PI_4, 1.0).unwrap();
        assert!(is_weakly_admissible(&d0, &d1).unwrap());

        let seg = DiscreteMeasure::from_pairs(&[(0.0, 3.0), (PI, 3.0)]).unwrap();
        assert!(!is_weakly_admissible(&seg, &square()).unwrap());
        let tilted = DiscreteMeasure::from_pairs(&[(0.1, 3.0), (PI + 0.1, 3.0)]).unwrap();
        assert!(is_weakly_admissible(&tilted, &square()).unwrap());

        assert_eq!(is_weakly_admissible(&DiscreteMeasure::zero(), &d0), Err(Error::ZeroMeasure));
    }

    #[test]
    fn admissibility_examples() {
        let ellipse_like = DiscreteMeasure::from_pairs(&[(0.3, 1.0), (2.0, 1.5), (4.0, 1.2)]).unwrap();
        assert!(is_admissible(&ellipse_like, &square()).unwrap());
        // dipole along x, other measure charges the orthogonal direction
        let dipole = DiscreteMeasure::from_pairs(&[(0.0, 2.0), (PI, 2.0)]).unwrap();
        let charges_i = DiscreteMeasure::from_pairs(&[(FRAC_PI_2, 1.0), (3.0, 1.0), (5.0, 1.0)]).unwrap();
        assert!(!is_admissible(&dipole, &charges_i).unwrap());
        assert!(is_admissible(&dipole, &ellipse_like).unwrap());
    }

    #[test]
    fn cdf_of_uniform_is_linear() {
        let g = GridDensity::uniform(64, 1.0 / TAU).unwrap();
        let f = cdf_lift((&g).into()).unwrap();
        for &t in &[0.0, 0.7, 3.0, 6.0] {
            assert!((cdf_eval(&f, t) - t / TAU).abs() < 1e-14);
        }
        let q = pseudo_inverse(&f).unwrap();
        for &u in &[0.1, 0.5, 0.93] {
            assert!((quantile_eval(&q, u) - u * TAU).abs() < 1e-13);
        }
    }

    #[test]
    fn cdf_of_dirac_is_step() {
        let mu = DiscreteMeasure::dirac(PI, 2.0).unwrap();
        let f = cdf_lift((&mu).into()).unwrap();
        assert_eq!(cdf_eval(&f, 0.0), 0.0);
        assert_eq!(cdf_eval(&f, PI), 0.0);
        assert_eq!(cdf_eval(&f, PI + 1e-9), 2.0);
        assert_eq!(cdf_eval(&f, 6.0), 2.0);
        let q = pseudo_inverse(&f).unwrap();
        assert_eq!(quantile_eval(&q, 0.3), PI);
        assert_eq!(quantile_eval(&q, 1.9), PI);
    }

    #[test]
    fn cdf_periodic_increment() {
        let mu = DiscreteMeasure::from_pairs(&[(0.2, 1.0), (2.0, 0.5), (5.0, 0.25)]).unwrap();
        let f = cdf_lift((&mu).into()).unwrap();
        for &t in &[-7.0, -1.0, 0.1, 1.0, 4.0, 12.0] {
            let d = cdf_eval(&f, t + TAU) - cdf_eval(&f, t);
            assert!((d - 1.75).abs() < 1e-14);
        }
        assert!(cdf_eval(&f, -1e-9) <= 0.0 && cdf_eval(&f, 0.0) >= 0.0);
    }

    #[test]
    fn bin_to_grid_examples() {
        let mu = DiscreteMeasure::dirac(0.0, 1.0).unwrap();
        let g = bin_to_grid(&mu, 4).unwrap();
        assert!((g.values()[0] - 4.0 / TAU).abs() < 1e-15);
        let two = DiscreteMeasure::from_pairs(&[(0.1, 1.0), (0.2, 0.5)]).unwrap();
        let g = bin_to_grid(&two, 8).unwrap();
        assert!((g.cell_mass(0) - 1.5).abs() < 1e-15);
        assert!((g.total_mass() - two.total_mass()).abs() < 1e-15);
        assert_eq!(bin_to_grid(&mu, 3), Err(Error::GridTooCoarse { got: 3, min: 4 }));
    }

    #[test]
    fn bin_atoms_keeps_isolated_positions() {
        let mu = DiscreteMeasure::from_pairs(&[(0.1, 1.0), (2.0, 0.5), (2.001, 0.5)]).unwrap();
        let b = bin_atoms(&mu, 64).unwrap();
        assert_eq!(b.len(), 2);
        assert!((b.atoms()[0].angle.radians() - 0.1).abs() < 1e-14);
        assert!((b.atoms()[1].angle.radians() - 2.0005).abs() < 1e-6);
    }

    #[test]
    fn grid_support_threshold() {
        let g = GridDensity::new(vec![1.0, 1e-15, 0.0, 2.0]).unwrap();
        assert_eq!(g.support_cells(), vec![0, 3]);
    }

    #[test]
    fn quantile_pushforward_recovers_grid() {
        let vals: Vec<f64> = (0..32).map(|k| if k % 5 == 0 { 0.0 } else { 1.0 + (k as f64).sin().abs() }).collect();
        let g = GridDensity::new(vals).unwrap();
        let q = pseudo_inverse(&cdf_lift((&g).into()).unwrap()).unwrap();
        let back = pushforward_lebesgue(&q, 32).unwrap();
        assert!(g.tv_distance(&back).unwrap() < 1e-12);
    }

    #[test]
    fn json_formats() {
        let mu: DiscreteMeasure =
            serde_json::from_str(r#"{"atoms":[{"theta":3.0,"mass":1.0},{"theta":0.5,"mass":2.0}]}"#).unwrap();
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.atoms()[0].angle.radians(), 0.5);
        let text = serde_json::to_string(&mu).unwrap();
        assert_eq!(text, r#"{"atoms":[{"theta":0.5,"mass":2.0},{"theta":3.0,"mass":1.0}]}"#);
        let g: GridDensity = serde_json::from_str(r#"{"resolution":4,"values":[1,0,0,1]}"#).unwrap();
        assert_eq!(g.resolution(), 4);
        assert!(serde_json::from_str::<GridDensity>(r#"{"resolution":5,"values":[1,0,0,1]}"#).is_err());
    }

    fn random_measure() -> impl Strategy<Value = DiscreteMeasure> {
        prop::collection::vec((0.0..TAU, 0.01f64..3.0), 1..6)
            .prop_map(|pairs| DiscreteMeasure::from_pairs(&pairs).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn admissible_implies_weakly_admissible(a in random_measure(), b in random_measure()) {
            if is_admissible(&a, &b).unwrap() {
                prop_assert!(is_weakly_admissible(&a, &b).unwrap());
            }
        }

        #[test]
        fn circ_dist_triangle(x in 0.0..TAU, y in 0.0..TAU, z in 0.0..TAU) {
            let (x, y, z) = (Angle::new(x), Angle::new(y), Angle::new(z));
            prop_assert!(circ_dist(x, z) <= circ_dist(x, y) + circ_dist(y, z) + 1e-12);
            prop_assert_eq!(circ_dist(x, y), circ_dist(y, x));
            prop_assert!(circ_dist(x, y) <= PI);
        }

        #[test]
        fn ell_midpoint_convex(a in 0.0..(FRAC_PI_2 - 1e-3), b in 0.0..(FRAC_PI_2 - 1e-3)) {
            let mid = ell(0.5 * (a + b)).to_f64();
            let avg = 0.5 * (ell(a).to_f64() + ell(b).to_f64());
            prop_assert!(mid <= avg + 1e-12);
            if a < b {
                prop_assert!(ell(a).to_f64() <= ell(b).to_f64());
            }
        }
    }
}
