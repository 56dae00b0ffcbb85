//! q-Bass martingales: pairs `(v_hat, alpha_hat)` of a convex function and
//! a latent measure satisfying the pushforward identities
//!
//! `(grad v_hat star q)(alpha_hat) = mu` and
//! `grad v_hat(alpha_hat conv q) = nu`.
//!
//! Generation from a smooth strictly convex `v_hat` inverts the strictly
//! monotone map `grad(v_hat star q)` atom by atom; verification measures
//! both identities in the quadratic Wasserstein distance; simulation draws
//! the two-period martingale `X_0 = (grad v_hat star q)(A)`,
//! `X_1 = grad v_hat(A + Z)`. The fixed-point solver for the inverse
//! problem (given marginals, find the pair) alternates a monotone
//! rearrangement step with a smoothing step that refits the transport map
//! into the admissible generating family; no convergence claim is made,
//! the residual series is the product.

use crate::convexfn::{self, ConvexError, ConvexFunction};
use crate::geom;
use crate::measures::{self, DiscreteMeasure, MeasureError};
use crate::ot::{self, OtError};
use crate::solver::{MartingaleKernel, SolverError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Residual tolerance of the per-atom inversion of `grad(v star q)`.
const INVERT_TOL: f64 = 1e-10;
const INVERT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BassError {
    #[error("mu and nu are not in convex order")]
    NotInConvexOrder,
    #[error("v_hat is not q-Bass generating: {0}")]
    NotGenerating(String),
    #[error("inversion of grad(v star q) failed at atom {atom} (residual {residual:.3e})")]
    InversionFailed { atom: usize, residual: f64 },
    #[error("target measure is degenerate (single atom) while mu is not")]
    DegenerateTarget,
    #[error("fixed-point solving is implemented in dimension one only")]
    OneDimensionalOnly,
    #[error("number of paths must be positive")]
    NoPaths,
    #[error("generated atom has no match in the target support")]
    SupportMatchFailed,
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Diagnostics attached to a generated or verified pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BassDiagnostics {
    /// Distance of `(grad v star q)(alpha)` from the declared `mu`.
    pub w2_mu: f64,
    /// Distance of `grad v(alpha conv q)` from the declared `nu`.
    pub w2_nu: f64,
    /// Lower bound on the Hessian of the generating function.
    pub strict_convexity_margin: f64,
}

/// A candidate q-Bass martingale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BassPair {
    pub v_hat: ConvexFunction,
    pub alpha_hat: DiscreteMeasure,
    pub diagnostics: BassDiagnostics,
}

/// Report of the generating-function conditions: interior condition on the
/// conjugate domain, strict convexity with the gradient-exchange identity,
/// and finiteness of the terminal second moment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratingReport {
    pub interior_ok: bool,
    pub strict_convexity_margin: f64,
    pub strictly_convex: bool,
    pub gradient_exchange_ok: bool,
    pub max_exchange_residual: f64,
    pub terminal_second_moment_finite: bool,
}

impl GeneratingReport {
    pub fn pass(&self) -> bool {
        self.interior_ok
            && self.strictly_convex
            && self.gradient_exchange_ok
            && self.terminal_second_moment_finite
    }

    fn failure_summary(&self) -> String {
        let mut parts = Vec::new();
        if !self.interior_ok {
            parts.push("mu charges the boundary of dom(v*)".to_string());
        }
        if !self.strictly_convex {
            parts.push(format!(
                "strict convexity margin is {}",
                self.strict_convexity_margin
            ));
        }
        if !self.gradient_exchange_ok {
            parts.push(format!(
                "gradient exchange residual {:.3e}",
                self.max_exchange_residual
            ));
        }
        parts.join("; ")
    }
}

/// Check the three generating conditions for `v` against `mu` and `q`.
/// Failures are reported, not raised.
pub fn check_generating(
    v: &ConvexFunction,
    mu: &DiscreteMeasure,
    q: &DiscreteMeasure,
) -> Result<GeneratingReport, BassError> {
    let d = mu.dim();
    let (margin, beta, slope_spread) = match v {
        ConvexFunction::SmoothQuadLse {
            epsilon,
            beta,
            slopes,
            ..
        } => {
            let spread = slopes
                .iter()
                .flat_map(|s| s.iter().copied())
                .fold(0.0f64, |acc, s| acc.max(s.abs()));
            (*epsilon, *beta, 2.0 * spread)
        }
        // Polyhedral and values representations have no curvature.
        _ => (0.0, 1.0, 1.0),
    };
    let strictly_convex = margin > 0.0;

    // (i): with a strictly convex quadratic part the gradient range is all
    // of R^d, so every mu-atom is interior. Otherwise the domain of the
    // conjugate is the closed hull of the slopes, and we report the
    // non-strict membership (the margin already fails in that case).
    let interior_ok = if strictly_convex {
        true
    } else {
        match v {
            ConvexFunction::MaxAffine { slopes, .. }
            | ConvexFunction::SmoothQuadLse { slopes, .. } => {
                let lo = slopes
                    .iter()
                    .map(|s| s[0])
                    .fold(f64::INFINITY, f64::min);
                let hi = slopes
                    .iter()
                    .map(|s| s[0])
                    .fold(f64::NEG_INFINITY, f64::max);
                d == 1
                    && mu
                        .atoms()
                        .iter()
                        .all(|x| x[0] > lo + 1e-12 && x[0] < hi - 1e-12)
            }
            _ => false,
        }
    };

    // (ii): grad(v star q) = (grad v) star q, checked by central finite
    // differences of the star value against the summed gradients at 50
    // seeded points. The probe step balances truncation against roundoff
    // using the curvature scale of the smoothing.
    let star_fn = v.star(q)?;
    let mut rng = ChaCha12Rng::seed_from_u64(0x9ba55);
    let third_deriv_scale = (1.0 + slope_spread.powi(3)) / (beta * beta);
    let scale = 1.0
        + mu.atoms()
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
    let mut max_residual = 0.0f64;
    let mut exchange_ok = true;
    for _ in 0..50 {
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-scale..scale)).collect();
        let summed = match star_fn.grad_select(&y) {
            Ok(g) => g,
            Err(_) => {
                exchange_ok = false;
                break;
            }
        };
        let h = (3.0 * f64::EPSILON / third_deriv_scale).cbrt().max(1e-9);
        for t in 0..d {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[t] += h;
            ym[t] -= h;
            let fd = (star_fn.evaluate(&yp)? - star_fn.evaluate(&ym)?) / (2.0 * h);
            let res = (fd - summed[t]).abs();
            max_residual = max_residual.max(res);
            if res > 1e-8 * (1.0 + summed[t].abs()) {
                exchange_ok = false;
            }
        }
    }

    Ok(GeneratingReport {
        interior_ok,
        strict_convexity_margin: margin,
        strictly_convex,
        gradient_exchange_ok: exchange_ok,
        max_exchange_residual: max_residual,
        // Finite support makes every image measure square integrable.
        terminal_second_moment_finite: true,
    })
}

/// Output of [`generate_from_v`].
#[derive(Debug, Clone)]
pub struct BassGeneration {
    pub pair: BassPair,
    pub nu: DiscreteMeasure,
    pub kernel: MartingaleKernel,
}

/// Generate the q-Bass martingale of a generating `v`: invert
/// `grad(v star q)` on every atom of `mu` to obtain `alpha_hat`, push the
/// convolution forward through `grad v` to obtain `nu`, and read the
/// optimal kernel off the same family of maps.
pub fn generate_from_v(
    v: &ConvexFunction,
    mu: &DiscreteMeasure,
    q: &DiscreteMeasure,
) -> Result<BassGeneration, BassError> {
    let report = check_generating(v, mu, q)?;
    if !report.pass() {
        return Err(BassError::NotGenerating(report.failure_summary()));
    }
    let star_fn = v.star(q)?;
    let mut latent = Vec::with_capacity(mu.len());
    for (i, x) in mu.atoms().iter().enumerate() {
        let a = convexfn::solve_gradient_equation(&star_fn, x, INVERT_TOL, INVERT_MAX_ITER)
            .map_err(|e| match e {
                ConvexError::InnerMaximization { residual } => {
                    BassError::InversionFailed { atom: i, residual }
                }
                other => BassError::Convex(other),
            })?;
        latent.push(a);
    }
    let alpha = DiscreteMeasure::new(latent.clone(), mu.weights().to_vec())?;
    let conv = alpha.convolve(q)?;
    let nu = conv.pushforward(|y| {
        v.grad_select(y)
            .expect("smooth generating functions have gradients everywhere")
    })?;

    // Kernel rows directly from the per-atom latent points, so merges in
    // alpha cannot desynchronize row indices.
    let mut rows = Vec::with_capacity(mu.len());
    for a in &latent {
        let mut row = vec![0.0; nu.len()];
        for (z, &u) in q.atoms().iter().zip(q.weights()) {
            let image = v.grad_select(&geom::add(a, z))?;
            let (idx, dist) = nu.nearest_atom(&image);
            if dist > 1e-9 {
                return Err(BassError::SupportMatchFailed);
            }
            row[idx] += u;
        }
        rows.push(row);
    }
    let kernel = MartingaleKernel::new(mu.clone(), nu.atoms().to_vec(), rows)?;

    let mu_image = alpha.pushforward(|a| {
        star_fn
            .grad_select(a)
            .expect("star of a smooth function is smooth")
    })?;
    let w2_mu = ot::wasserstein2(&mu_image, mu)?;
    let diagnostics = BassDiagnostics {
        w2_mu,
        w2_nu: 0.0,
        strict_convexity_margin: report.strict_convexity_margin,
    };
    Ok(BassGeneration {
        pair: BassPair {
            v_hat: v.clone(),
            alpha_hat: alpha,
            diagnostics,
        },
        nu,
        kernel,
    })
}

/// Verification report for a pair against declared marginals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub w2_mu: f64,
    pub w2_nu: f64,
    pub max_kernel_bary_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Measure both pushforward identities of the pair in `W2` and the kernel
/// barycenter residuals (which re-invert `grad(v star q)` at every atom of
/// `mu`).
pub fn verify_bass(
    pair: &BassPair,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    q: &DiscreteMeasure,
    tol: f64,
) -> Result<VerifyReport, BassError> {
    let v = &pair.v_hat;
    let star_fn = v.star(q)?;
    let mu_image = pair.alpha_hat.pushforward(|a| {
        star_fn
            .grad_select(a)
            .expect("star gradient exists for smooth v")
    })?;
    let w2_mu = ot::wasserstein2(&mu_image, mu)?;
    let nu_image = pair.alpha_hat.convolve(q)?.pushforward(|y| {
        v.grad_select(y)
            .expect("gradient exists for smooth v")
    })?;
    let w2_nu = ot::wasserstein2(&nu_image, nu)?;

    let mut max_bary = 0.0f64;
    for x in mu.atoms() {
        match convexfn::solve_gradient_equation(&star_fn, x, INVERT_TOL, INVERT_MAX_ITER) {
            Ok(y_hat) => {
                // bary(pi_x) = (grad v star q)(y_hat), so the residual is
                // the defect of the inversion.
                let bary = star_fn.grad_select(&y_hat)?;
                max_bary = max_bary.max(geom::sup_dist(&bary, x));
            }
            Err(_) => {
                max_bary = f64::INFINITY;
            }
        }
    }
    let pass = w2_mu <= tol && w2_nu <= tol && max_bary <= tol;
    Ok(VerifyReport {
        w2_mu,
        w2_nu,
        max_kernel_bary_residual: max_bary,
        tol,
        pass,
    })
}

/// One simulated path of the two-period martingale.
#[derive(Debug, Clone, Serialize)]
pub struct PathRow {
    pub a: Vec<f64>,
    pub z: Vec<f64>,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
}

/// Simulate `n_paths` independent draws `(A, Z, X0, X1)` with `A ~ alpha`,
/// `Z ~ q`, `X0 = (grad v star q)(A)` and `X1 = grad v(A + Z)`.
/// Deterministic for a fixed seed.
pub fn simulate(
    pair: &BassPair,
    q: &DiscreteMeasure,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathRow>, BassError> {
    if n_paths == 0 {
        return Err(BassError::NoPaths);
    }
    let alpha = &pair.alpha_hat;
    let star_fn = pair.v_hat.star(q)?;
    // Image tables per atom pair; sampling then only indexes.
    let mut x0_table = Vec::with_capacity(alpha.len());
    for a in alpha.atoms() {
        x0_table.push(star_fn.grad_select(a)?);
    }
    let mut x1_table = vec![vec![Vec::new(); q.len()]; alpha.len()];
    for (i, a) in alpha.atoms().iter().enumerate() {
        for (k, z) in q.atoms().iter().enumerate() {
            x1_table[i][k] = pair.v_hat.grad_select(&geom::add(a, z))?;
        }
    }
    let alpha_cum = cumulative(alpha.weights());
    let q_cum = cumulative(q.weights());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let i = sample_index(&alpha_cum, rng.random::<f64>());
        let k = sample_index(&q_cum, rng.random::<f64>());
        rows.push(PathRow {
            a: alpha.atom(i).to_vec(),
            z: q.atom(k).to_vec(),
            x0: x0_table[i].clone(),
            x1: x1_table[i][k].clone(),
        });
    }
    Ok(rows)
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn sample_index(cum: &[f64], u: f64) -> usize {
    match cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) => (i + 1).min(cum.len() - 1),
        Err(i) => i.min(cum.len() - 1),
    }
}

/// Configuration of the fixed-point solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointConfig {
    /// Residual threshold declaring convergence.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of affine pieces refitted to the monotone map per iteration.
    pub pieces: usize,
    /// Quadratic coefficient of every iterate.
    pub epsilon: f64,
    /// Initial smoothing temperature; annealed geometrically each
    /// iteration so step-like maps can be resolved.
    pub beta: f64,
    /// Jitters the initial latent measure; distinct seeds probe distinct
    /// basins.
    pub seed: u64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            tol: 5e-3,
            max_iter: 500,
            pieces: 32,
            epsilon: 1e-3,
            beta: 1e-2,
            seed: 0,
        }
    }
}

const BETA_DECAY: f64 = 0.85;
const BETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub pair: BassPair,
    pub converged: bool,
    pub iterations: usize,
    /// `w2_nu + w2_mu` per iteration.
    pub residuals: Vec<f64>,
}

/// Alternating scheme for the inverse problem in dimension one: convolve
/// the latent iterate with `q`, transport the result onto `nu` by the
/// monotone rearrangement, refit that map into the smooth generating
/// family, and pull `mu` back through the refitted star-gradient.
/// Non-convergence within the iteration budget is an outcome, not an
/// error; the residual series is returned either way.
pub fn fixed_point_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    q: &DiscreteMeasure,
    config: &FixedPointConfig,
) -> Result<FixedPointResult, BassError> {
    if mu.dim() != 1 || nu.dim() != 1 || q.dim() != 1 {
        return Err(BassError::OneDimensionalOnly);
    }
    if nu.len() == 1 && mu.len() > 1 {
        return Err(BassError::DegenerateTarget);
    }
    let order = measures::check_convex_order(mu, nu)?;
    if !order.ordered {
        return Err(BassError::NotInConvexOrder);
    }

    // Seeded jitter of the initial latent measure, small enough to stay
    // well inside the attraction region of the scheme.
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let jitter = 1e-3;
    let init_atoms: Vec<Vec<f64>> = mu
        .atoms()
        .iter()
        .map(|a| vec![a[0] + rng.random_range(-jitter..jitter)])
        .collect();
    let mut alpha = DiscreteMeasure::new(init_atoms, mu.weights().to_vec())?;

    let mut beta_n = config.beta;
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut last: Option<(ConvexFunction, DiscreteMeasure, f64, f64)> = None;
    let mut iterations = 0usize;
    for _ in 0..config.max_iter {
        iterations += 1;
        let beta_meas = alpha.convolve(q)?;
        let map = ot::brenier_map(&beta_meas, nu)?;
        let v = fit_generating(&beta_meas, &map, config.pieces, config.epsilon, beta_n)?;
        let star_fn = v.star(q)?;
        let mut latent = Vec::with_capacity(mu.len());
        for (i, x) in mu.atoms().iter().enumerate() {
            let a = convexfn::solve_gradient_equation(&star_fn, x, INVERT_TOL, INVERT_MAX_ITER)
                .map_err(|e| match e {
                    ConvexError::InnerMaximization { residual } => {
                        BassError::InversionFailed { atom: i, residual }
                    }
                    other => BassError::Convex(other),
                })?;
            latent.push(a);
        }
        let alpha_next = DiscreteMeasure::new(latent, mu.weights().to_vec())?;

        let nu_image = beta_meas.pushforward(|y| v.grad_select(y).expect("smooth gradient"))?;
        let w2_nu = ot::wasserstein2(&nu_image, nu)?;
        let mu_image =
            alpha_next.pushforward(|a| star_fn.grad_select(a).expect("smooth gradient"))?;
        let w2_mu = ot::wasserstein2(&mu_image, mu)?;
        let r = w2_nu + w2_mu;
        residuals.push(r);

        last = Some((v, alpha_next.clone(), w2_mu, w2_nu));
        alpha = alpha_next;
        if r <= config.tol {
            converged = true;
            break;
        }
        beta_n = (beta_n * BETA_DECAY).max(BETA_FLOOR);
    }
    let (v, alpha, w2_mu, w2_nu) = last.expect("max_iter >= 1");
    Ok(FixedPointResult {
        pair: BassPair {
            v_hat: v,
            alpha_hat: alpha,
            diagnostics: BassDiagnostics {
                w2_mu,
                w2_nu,
                strict_convexity_margin: config.epsilon,
            },
        },
        converged,
        iterations,
        residuals,
    })
}

/// Refit a monotone transport map defined on the support of `base` into
/// the smooth generating family: tangent pieces at quantile knots of the
/// integrated map, slopes clamped monotone, a quadratic floor `epsilon`.
fn fit_generating(
    base: &DiscreteMeasure,
    map: &ot::SupportMap,
    pieces: usize,
    epsilon: f64,
    beta: f64,
) -> Result<ConvexFunction, BassError> {
    let n = base.len();
    let p = pieces.clamp(1, n);
    // Quantile knots over the (sorted) support.
    let cum = cumulative(base.weights());
    let mut knot_idx = Vec::with_capacity(p);
    for r in 0..p {
        let u = (r as f64 + 0.5) / p as f64;
        let i = sample_index(&cum, u);
        if knot_idx.last() != Some(&i) {
            knot_idx.push(i);
        }
    }
    let ts: Vec<f64> = knot_idx.iter().map(|&i| base.atom(i)[0]).collect();
    // Residual slopes after removing the quadratic part, clamped monotone.
    let mut hs: Vec<f64> = knot_idx
        .iter()
        .map(|&i| map.image_of(i)[0] - epsilon * base.atom(i)[0])
        .collect();
    for r in 1..hs.len() {
        if hs[r] < hs[r - 1] {
            hs[r] = hs[r - 1];
        }
    }
    // Integrate the residual slope field along the knots (trapezoid) to
    // recover intercepts of the tangent pieces.
    let mut values = vec![0.0; ts.len()];
    for r in 1..ts.len() {
        values[r] = values[r - 1] + 0.5 * (hs[r] + hs[r - 1]) * (ts[r] - ts[r - 1]);
    }
    let slopes: Vec<Vec<f64>> = hs.iter().map(|&h| vec![h]).collect();
    let intercepts: Vec<f64> = hs
        .iter()
        .zip(&values)
        .zip(&ts)
        .map(|((h, v), t)| v - h * t)
        .collect();
    Ok(ConvexFunction::smooth_quad_lse(
        epsilon, beta, slopes, intercepts,
    )?)
}
