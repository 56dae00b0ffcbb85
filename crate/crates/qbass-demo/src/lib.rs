//! Browser demo bindings: three interactive operations over JSON strings.
//!
//! Every function takes and returns JSON text so the page stays a single
//! static file with no framework; errors come back as `{"error": "..."}`
//! objects rather than exceptions. The same functions compile and run
//! natively, which is how they are unit tested.

use qbass::bass::{self, FixedPointConfig};
use qbass::convexfn::ConvexFunction;
use qbass::measures::DiscreteMeasure;
use qbass::quantize;
use qbass::solver::{self, DualConfig};
use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoInstance {
    #[serde(default)]
    #[allow(dead_code)]
    schema: Option<u32>,
    mu: DiscreteMeasure,
    #[serde(default)]
    nu: Option<DiscreteMeasure>,
    q: DiscreteMeasure,
    #[serde(default)]
    potential: Option<ConvexFunction>,
    #[serde(default)]
    config: Option<Value>,
}

fn parse_instance(text: &str) -> Result<DemoInstance, String> {
    serde_json::from_str(text).map_err(|e| format!("instance JSON: {e}"))
}

fn err_json(msg: impl std::fmt::Display) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

/// Measure flattened for charting: parallel atom/weight arrays (d = 1).
fn measure_series(m: &DiscreteMeasure) -> Value {
    json!({
        "atoms": m.atoms().iter().map(|a| a[0]).collect::<Vec<f64>>(),
        "weights": m.weights(),
    })
}

/// Solve both sides of the martingale transport problem and report the
/// gap, the optimal kernel, and the dual potential for plotting.
#[wasm_bindgen]
pub fn solve_duality(instance_json: &str) -> String {
    match solve_duality_impl(instance_json) {
        Ok(v) => v.to_string(),
        Err(e) => err_json(e),
    }
}

fn solve_duality_impl(instance_json: &str) -> Result<Value, String> {
    let inst = parse_instance(instance_json)?;
    let nu = inst.nu.as_ref().ok_or("instance needs nu")?;
    if inst.mu.dim() != 1 {
        return Err("the demo drives one-dimensional instances".into());
    }
    let primal = solver::solve_primal_lp(&inst.mu, nu, &inst.q).map_err(|e| e.to_string())?;
    let dual = solver::solve_dual(
        &inst.mu,
        nu,
        &inst.q,
        &DualConfig {
            primal_value: Some(primal.value),
            ..DualConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(json!({
        "primal": primal.value,
        "dual": dual.value,
        "gap": dual.gap,
        "iterations": dual.iterations,
        "kernel_rows": primal.kernel.rows(),
        "kernel_target": primal.kernel.target_support().iter().map(|y| y[0]).collect::<Vec<f64>>(),
        "mu": measure_series(&inst.mu),
        "nu": measure_series(nu),
        "q": measure_series(&inst.q),
        "psi": {
            "points": dual.psi.support().iter().map(|y| y[0]).collect::<Vec<f64>>(),
            "values": dual.psi.values(),
        },
    }))
}

/// Generate the q-Bass martingale of the instance potential, simulate
/// paths, and return everything a chart needs: the latent measure, the
/// terminal law, the generating curve, and per-start conditional means.
#[wasm_bindgen]
pub fn build_bass_and_simulate(instance_json: &str, n_paths: u32, seed: u32) -> String {
    match build_bass_impl(instance_json, n_paths as usize, u64::from(seed)) {
        Ok(v) => v.to_string(),
        Err(e) => err_json(e),
    }
}

fn build_bass_impl(instance_json: &str, n_paths: usize, seed: u64) -> Result<Value, String> {
    let inst = parse_instance(instance_json)?;
    if inst.mu.dim() != 1 {
        return Err("the demo drives one-dimensional instances".into());
    }
    let v = inst
        .potential
        .clone()
        .unwrap_or_else(|| ConvexFunction::quadratic(1));
    let g = bass::generate_from_v(&v, &inst.mu, &inst.q).map_err(|e| e.to_string())?;
    let rows = bass::simulate(&g.pair, &inst.q, n_paths.max(1), seed).map_err(|e| e.to_string())?;

    // Conditional means of X1 per distinct start point.
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for r in &rows {
        match groups.iter_mut().find(|(x0, _, _)| (*x0 - r.x0[0]).abs() < 1e-12) {
            Some((_, sum, count)) => {
                *sum += r.x1[0];
                *count += 1;
            }
            None => groups.push((r.x0[0], r.x1[0], 1)),
        }
    }
    let conditional: Vec<Value> = groups
        .iter()
        .map(|&(x0, sum, count)| {
            json!({"x0": x0, "mean_x1": sum / count as f64, "count": count})
        })
        .collect();

    // Empirical terminal histogram from the simulated paths.
    let x1_atoms: Vec<Vec<f64>> = rows.iter().map(|r| r.x1.clone()).collect();
    let weights = vec![1.0 / rows.len() as f64; rows.len()];
    let empirical = DiscreteMeasure::new(x1_atoms, weights).map_err(|e| e.to_string())?;

    // Sample the generating function over the terminal support.
    let lo = g.nu.atom(0)[0] - 0.5;
    let hi = g.nu.atom(g.nu.len() - 1)[0] + 0.5;
    let curve: Vec<Value> = (0..=120)
        .filter_map(|i| {
            let x = lo + (hi - lo) * i as f64 / 120.0;
            v.evaluate(&[x]).ok().filter(|val| val.is_finite()).map(|val| json!([x, val]))
        })
        .collect();

    Ok(json!({
        "alpha": measure_series(&g.pair.alpha_hat),
        "nu": measure_series(&g.nu),
        "q": measure_series(&inst.q),
        "mu": measure_series(&inst.mu),
        "empirical_x1": measure_series(&empirical),
        "v_curve": curve,
        "w2_mu": g.pair.diagnostics.w2_mu,
        "conditional_means": conditional,
        "n_paths": rows.len(),
    }))
}

/// Run the fixed-point search for a pair with the prescribed marginals
/// and return the residual series plus the final generating curve.
#[wasm_bindgen]
pub fn run_fixpoint(instance_json: &str, max_iter: u32, seed: u32) -> String {
    match run_fixpoint_impl(instance_json, max_iter as usize, u64::from(seed)) {
        Ok(v) => v.to_string(),
        Err(e) => err_json(e),
    }
}

fn run_fixpoint_impl(instance_json: &str, max_iter: usize, seed: u64) -> Result<Value, String> {
    let inst = parse_instance(instance_json)?;
    let nu = inst.nu.as_ref().ok_or("instance needs nu")?;
    let mut cfg = FixedPointConfig {
        seed,
        ..FixedPointConfig::default()
    };
    if max_iter > 0 {
        cfg.max_iter = max_iter;
    }
    if let Some(c) = &inst.config {
        if let Some(t) = c.get("tol").and_then(Value::as_f64) {
            cfg.tol = t;
        }
        if let Some(p) = c.get("pieces").and_then(Value::as_u64) {
            cfg.pieces = p as usize;
        }
        if let Some(e) = c.get("epsilon").and_then(Value::as_f64) {
            cfg.epsilon = e;
        }
        if let Some(b) = c.get("beta").and_then(Value::as_f64) {
            cfg.beta = b;
        }
    }
    let r = bass::fixed_point_solve(&inst.mu, nu, &inst.q, &cfg).map_err(|e| e.to_string())?;
    let conv = r
        .pair
        .alpha_hat
        .convolve(&inst.q)
        .map_err(|e| e.to_string())?;
    let lo = conv.atom(0)[0];
    let hi = conv.atom(conv.len() - 1)[0];
    let map_curve: Vec<Value> = (0..=120)
        .filter_map(|i| {
            let x = lo + (hi - lo) * i as f64 / 120.0;
            r.pair
                .v_hat
                .grad_select(&[x])
                .ok()
                .map(|gv| json!([x, gv[0]]))
        })
        .collect();
    Ok(json!({
        "converged": r.converged,
        "iterations": r.iterations,
        "residuals": r.residuals,
        "alpha": measure_series(&r.pair.alpha_hat),
        "mu": measure_series(&inst.mu),
        "nu": measure_series(nu),
        "transport_map": map_curve,
    }))
}

/// Quantile quantization of the centered Gaussian, for building reference
/// measures from the page controls.
#[wasm_bindgen]
pub fn gaussian_measure(m: u32, sigma: f64) -> String {
    match quantize::quantize_gaussian(m as usize, sigma) {
        Ok(q) => serde_json::to_string(&q).expect("measure serializes"),
        Err(e) => err_json(e),
    }
}
