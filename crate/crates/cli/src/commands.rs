use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, to_value, Value};
use wfr_shapes::ballopt::{caratheodory_reduce, mass_bound, solve_grid, to_cone_coupling, BallProblem};
use wfr_shapes::circular_ot::{kantorovich_lp_cost, optimal_shift, random_positive_density};
use wfr_shapes::geometry::{reconstruct_loop, ParamCurve, PolygonJson};
use wfr_shapes::measures::{DiscreteMeasure, MeasureRef};
use wfr_shapes::srvt::{polygon_curve, srvt_distance_convex, srvt_distance_polygons, SrvtOptions};
use wfr_shapes::wfr::{homogenized_energy, wfr_distance};

use crate::input::{load, load_measure, Input};
use crate::output::Report;
use crate::{CliError, RunConfig};

/// Gap allowed between the shift plan and the LP in `verify-shift`.
pub const SHIFT_TOLERANCE: f64 = 2e-3;

fn measure_rows(mu: &DiscreteMeasure) -> Vec<Vec<f64>> {
    mu.atoms().iter().map(|a| vec![a.angle.radians(), a.mass]).collect()
}

fn value<T: serde::Serialize>(x: &T) -> Value {
    to_value(x).expect("serializable result")
}

pub fn lm_extract(path: &Path) -> Result<Report, CliError> {
    let mu = match load(path)? {
        Input::Polygon(p) => p.length_measure(),
        Input::Curve(c) => c.length_atoms()?,
        other => return Err(CliError::input(format!("{}: expected a polygon or curve, got a {}", path.display(), other.kind()))),
    };
    let summary = json!({ "total_mass": mu.total_mass(), "first_moment_norm": mu.first_moment_norm(), "atoms": mu.len() });
    Ok(Report { result: json!({ "measure": value(&mu), "summary": summary }), summary, header: vec!["theta", "mass"], rows: measure_rows(&mu) })
}

pub fn lm_reconstruct(path: &Path) -> Result<Report, CliError> {
    let mu = load_measure(path)?;
    let lp = reconstruct_loop(&mu)?;
    let polygon = PolygonJson::from(&lp);
    let summary = json!({ "perimeter": lp.perimeter(), "closedness_residual": lp.closedness_residual(), "vertices": polygon.vertices.len() });
    let rows = polygon.vertices.iter().map(|v| v.to_vec()).collect();
    Ok(Report { result: json!({ "polygon": value(&polygon), "summary": summary }), summary, header: vec!["x", "y"], rows })
}

fn measure_ref<'a>(path: &Path, input: &'a Input) -> Result<MeasureRef<'a>, CliError> {
    match input {
        Input::Measure(m) => Ok(m.into()),
        Input::Grid(g) => Ok(g.into()),
        other => Err(CliError::input(format!("{}: expected a measure or grid, got a {}", path.display(), other.kind()))),
    }
}

pub fn wfr_dist(a: &Path, b: &Path, cfg: &RunConfig) -> Result<Report, CliError> {
    let (ia, ib) = (load(a)?, load(b)?);
    let r = wfr_distance(measure_ref(a, &ia)?, measure_ref(b, &ib)?, cfg.tol)?;
    let (s0, s1) = r.plan.singular_measures();
    let x = r.plan.atoms0.atoms();
    let y = r.plan.atoms1.atoms();
    let pairs: Vec<Value> = r
        .plan
        .pairs
        .iter()
        .map(|p| json!({ "theta0": x[p.i].angle, "theta1": y[p.j].angle, "mass": p.mass, "i": p.i, "j": p.j }))
        .collect();
    let rows = r.plan.pairs.iter().map(|p| vec![x[p.i].angle.radians(), y[p.j].angle.radians(), p.mass]).collect();
    let summary = json!({
        "distance": r.distance,
        "value": r.plan.value,
        "gap": r.plan.gap,
        "singular_mass0": s0.total_mass(),
        "singular_mass1": s1.total_mass(),
    });
    let result = json!({
        "distance": r.distance,
        "value": r.plan.value,
        "gap": r.plan.gap,
        "singular0": value(&s0),
        "singular1": value(&s1),
        "plan": pairs,
        "sigma0": r.plan.sigma0,
        "sigma1": r.plan.sigma1,
        "certificate": value(&r.certificate),
    });
    Ok(Report { result, summary, header: vec!["theta0", "theta1", "mass"], rows })
}

fn curve_of(path: &Path, input: Input, samples: usize) -> Result<ParamCurve, CliError> {
    match input {
        Input::Curve(c) => Ok(c),
        Input::Polygon(p) => Ok(polygon_curve(&p, samples)?),
        other => Err(CliError::input(format!("{}: expected a polygon or curve, got a {}", path.display(), other.kind()))),
    }
}

pub fn srvt_dist(a: &Path, b: &Path, cfg: &RunConfig) -> Result<Report, CliError> {
    let opts = SrvtOptions { grid: cfg.grid, tol: cfg.tol };
    let r = match (load(a)?, load(b)?) {
        (Input::Polygon(p0), Input::Polygon(p1)) => srvt_distance_polygons(&p0, &p1, cfg.samples, &opts)?,
        (i0, i1) => srvt_distance_convex(&curve_of(a, i0, cfg.samples)?, &curve_of(b, i1, cfg.samples)?, &opts)?,
    };
    let rows = r.reparam.as_ref().map_or_else(Vec::new, |phi| phi.breakpoints().iter().map(|&(t, p)| vec![t, p]).collect());
    let summary = json!({ "distance": r.distance, "wfr_value": r.wfr_value, "gap": r.gap, "method": value(&r.method) });
    Ok(Report { result: value(&r), summary, header: vec!["t", "phi"], rows })
}

#[derive(Deserialize)]
struct Objective {
    resolution: usize,
    values: Vec<f64>,
}

fn load_objective(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let o: Objective = serde_json::from_str(&text).map_err(|e| CliError::parse(path, &e))?;
    if o.values.len() != o.resolution {
        return Err(CliError::input(format!(
            "{}: resolution {} does not match {} values",
            path.display(),
            o.resolution,
            o.values.len()
        )));
    }
    Ok(o.values)
}

pub fn ball_maximize(mu1: &Path, objective: &Path, lambda: f64, moment: bool, cfg: &RunConfig) -> Result<Report, CliError> {
    let mu1 = load_measure(mu1)?;
    let f = load_objective(objective)?;
    let p = BallProblem::new(f, mu1, lambda, moment)?;
    let sol = solve_grid(&p, cfg.tol)?;
    let gamma = to_cone_coupling(&sol, &p)?;
    let sparse = caratheodory_reduce(&gamma, &p)?;
    let bound = mass_bound(&p.mu1, lambda);
    let summary = json!({
        "value": sparse.value,
        "grid_value": sol.value,
        "gap": sol.gap,
        "atoms": sparse.gamma.atoms.len(),
        "atom_bound": sparse.atom_bound,
        "mass": sparse.mu0.total_mass(),
        "mass_bound": bound,
    });
    let result = json!({
        "mu0": value(&sparse.mu0),
        "value": sparse.value,
        "coupling": value(&sparse.gamma),
        "residuals": value(&sparse.residuals),
        "atom_bound": sparse.atom_bound,
        "mass_bound": bound,
        "grid": {
            "value": sol.value,
            "gap": sol.gap,
            "tau": sol.tau,
            "constraint_value": sol.constraint_value,
            "first_moment": sol.first_moment,
            "moment_multipliers": sol.moment_multipliers,
            "support": sol.m.iter().filter(|&&m| m > 0.0).count(),
        },
    });
    Ok(Report { result, summary, header: vec!["theta", "mass"], rows: measure_rows(&sparse.mu0) })
}

pub fn homog_eval(mu: &Path, nu: &Path) -> Result<Report, CliError> {
    let (mu, nu) = (load_measure(mu)?, load_measure(nu)?);
    let e = homogenized_energy(&mu, &nu)?;
    let summary = json!({ "energy": e, "mass": mu.total_mass() });
    Ok(Report { result: summary.clone(), summary, header: vec!["energy", "mass"], rows: vec![vec![e, mu.total_mass()]] })
}

pub fn verify_shift(pairs: usize, cfg: &RunConfig) -> Result<Report, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(pairs);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = random_positive_density(&mut rng, cfg.grid);
        let b = random_positive_density(&mut rng, cfg.grid);
        let shift = optimal_shift(&a, &b)?;
        let lp = kantorovich_lp_cost(&a, &b)?;
        let cost = shift.cost.to_f64();
        worst = worst.max((cost - lp).abs());
        rows.push(vec![shift.theta, cost, lp, cost - lp]);
    }
    let summary = json!({ "pairs": pairs, "max_gap": worst, "tolerance": SHIFT_TOLERANCE, "passed": worst <= SHIFT_TOLERANCE });
    let table: Vec<Value> = rows.iter().map(|r| json!({ "theta": r[0], "shift_cost": r[1], "lp_cost": r[2], "gap": r[3] })).collect();
    Ok(Report {
        result: json!({ "summary": summary, "pairs": table }),
        summary,
        header: vec!["theta", "shift_cost", "lp_cost", "gap"],
        rows,
    })
}
