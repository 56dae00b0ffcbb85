//! Convex functions and their calculus: conjugation, the star operation
//! against a measure, convex hulls, and subgradient selection.
//!
//! Three input representations (max-of-affine, values-at-points, smoothed
//! quadratic log-sum-exp) plus two derived ones. In dimension one the
//! polyhedral calculus is exact and closes on itself:
//!
//! * conjugate of values-at-points  -> max-of-affine,
//! * conjugate of max-of-affine     -> piecewise affine on a bounded
//!   domain (`Piecewise1d`, plus infinity outside),
//! * conjugate of `Piecewise1d`     -> max-of-affine again,
//! * star of max-of-affine          -> max-of-affine (merged breakpoints).
//!
//! Smooth and higher-dimensional cases return evaluation oracles
//! (`ConjugateOracle`, `StarOracle`) that solve the inner problem per query:
//! damped Newton for smooth bases, a small LP for polyhedral ones.

use crate::geom;
use crate::lp::dense::{self, LpError, StandardLp};
use crate::lp::Mat;
use crate::measures::DiscreteMeasure;
use serde::{Deserialize, Serialize};

/// Default smoothing temperature for the quadratic log-sum-exp family.
pub const DEFAULT_BETA: f64 = 1e-2;
/// Default quadratic coefficient guaranteeing strict convexity.
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Gradient-residual tolerance of the inner maximizations.
const INNER_TOL: f64 = 1e-10;
/// Iteration cap of the inner maximizations.
const INNER_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConvexError {
    #[error("point has dimension {got}, function expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("representation needs at least one piece or point")]
    Empty,
    #[error("points of a values-at-points function must be pairwise distinct")]
    DuplicatePoints,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point lies outside the domain interior")]
    OutsideDomain,
    #[error("star of a values-at-points function is undefined (domain too thin)")]
    ThinDomain,
    #[error("inner maximization did not converge (gradient residual {residual:.3e})")]
    InnerMaximization { residual: f64 },
    #[error("operation not supported for this representation: {0}")]
    Unsupported(&'static str),
    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),
}

/// A convex function on `R^d` in one of the supported representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConvexFunction {
    /// `y -> max_k <s_k, y> + b_k`; finite everywhere.
    MaxAffine {
        slopes: Vec<Vec<f64>>,
        intercepts: Vec<f64>,
    },
    /// Lower-semicontinuous function equal to `values[j]` at `points[j]`
    /// and plus infinity elsewhere.
    Values {
        points: Vec<Vec<f64>>,
        values: Vec<f64>,
    },
    /// `y -> eps |y|^2 / 2 + beta log sum_k exp((<s_k, y> + b_k) / beta)`;
    /// strictly convex and smooth when `epsilon > 0`.
    SmoothQuadLse {
        epsilon: f64,
        beta: f64,
        slopes: Vec<Vec<f64>>,
        intercepts: Vec<f64>,
    },
    /// Continuous piecewise-affine convex function on `[knots[0], knots[last]]`
    /// interpolating `(knots[i], values[i])`, plus infinity outside.
    /// Arises as the exact conjugate of a one-dimensional max-affine.
    Piecewise1d { knots: Vec<f64>, values: Vec<f64> },
    /// Numeric conjugate of `base`: each evaluation solves the concave
    /// inner maximization.
    ConjugateOracle { base: Box<ConvexFunction> },
    /// The star operation `y -> sum_k u_k base(y + z_k)` against the atoms
    /// `z_k`, weights `u_k` of `shifts`.
    StarOracle {
        base: Box<ConvexFunction>,
        shifts: DiscreteMeasure,
    },
}

impl ConvexFunction {
    pub fn max_affine(
        slopes: Vec<Vec<f64>>,
        intercepts: Vec<f64>,
    ) -> Result<Self, ConvexError> {
        if slopes.is_empty() || slopes.len() != intercepts.len() {
            return Err(ConvexError::Empty);
        }
        let d = slopes[0].len();
        if slopes.iter().any(|s| s.len() != d) {
            return Err(ConvexError::InvalidParameter(
                "slope dimensions differ".into(),
            ));
        }
        Ok(ConvexFunction::MaxAffine { slopes, intercepts })
    }

    pub fn values_at_points(
        points: Vec<Vec<f64>>,
        values: Vec<f64>,
    ) -> Result<Self, ConvexError> {
        if points.is_empty() || points.len() != values.len() {
            return Err(ConvexError::Empty);
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(ConvexError::InvalidParameter(
                "point dimensions differ".into(),
            ));
        }
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if geom::sup_dist(&points[i], &points[j]) <= 1e-12 {
                    return Err(ConvexError::DuplicatePoints);
                }
            }
        }
        Ok(ConvexFunction::Values { points, values })
    }

    pub fn smooth_quad_lse(
        epsilon: f64,
        beta: f64,
        slopes: Vec<Vec<f64>>,
        intercepts: Vec<f64>,
    ) -> Result<Self, ConvexError> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(ConvexError::InvalidParameter(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        if beta.is_nan() || beta <= 0.0 {
            return Err(ConvexError::InvalidParameter(format!(
                "beta must be > 0, got {beta}"
            )));
        }
        if slopes.is_empty() || slopes.len() != intercepts.len() {
            return Err(ConvexError::Empty);
        }
        Ok(ConvexFunction::SmoothQuadLse {
            epsilon,
            beta,
            slopes,
            intercepts,
        })
    }

    pub fn piecewise_1d(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, ConvexError> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(ConvexError::Empty);
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConvexError::InvalidParameter(
                "knots must be strictly increasing".into(),
            ));
        }
        // Convexity: chord slopes must not decrease.
        let slopes: Vec<f64> = knots
            .windows(2)
            .zip(values.windows(2))
            .map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0]))
            .collect();
        if slopes.windows(2).any(|w| w[1] < w[0] - 1e-9) {
            return Err(ConvexError::InvalidParameter(
                "knot values are not convex".into(),
            ));
        }
        Ok(ConvexFunction::Piecewise1d { knots, values })
    }

    /// `|y|^2 / 2` as a single-piece smooth representation (exact: the
    /// log-sum-exp of one zero piece vanishes identically).
    pub fn quadratic(dim: usize) -> Self {
        ConvexFunction::SmoothQuadLse {
            epsilon: 1.0,
            beta: DEFAULT_BETA,
            slopes: vec![vec![0.0; dim]],
            intercepts: vec![0.0],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexFunction::MaxAffine { slopes, .. } => slopes[0].len(),
            ConvexFunction::Values { points, .. } => points[0].len(),
            ConvexFunction::SmoothQuadLse { slopes, .. } => slopes[0].len(),
            ConvexFunction::Piecewise1d { .. } => 1,
            ConvexFunction::ConjugateOracle { base } => base.dim(),
            ConvexFunction::StarOracle { base, .. } => base.dim(),
        }
    }

    fn check_dim(&self, y: &[f64]) -> Result<(), ConvexError> {
        if y.len() != self.dim() {
            return Err(ConvexError::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// Value at `y`; plus infinity is a legitimate result for bounded
    /// domains (values-at-points off support, conjugates outside their
    /// domain).
    pub fn evaluate(&self, y: &[f64]) -> Result<f64, ConvexError> {
        self.check_dim(y)?;
        match self {
            ConvexFunction::MaxAffine { slopes, intercepts } => Ok(slopes
                .iter()
                .zip(intercepts)
                .map(|(s, b)| geom::dot(s, y) + b)
                .fold(f64::NEG_INFINITY, f64::max)),
            ConvexFunction::Values { points, values } => {
                for (p, v) in points.iter().zip(values) {
                    if geom::sup_dist(p, y) <= 1e-12 {
                        return Ok(*v);
                    }
                }
                Ok(f64::INFINITY)
            }
            ConvexFunction::SmoothQuadLse {
                epsilon,
                beta,
                slopes,
                intercepts,
            } => {
                let quad = 0.5 * epsilon * geom::norm_sq(y);
                let acts: Vec<f64> = slopes
                    .iter()
                    .zip(intercepts)
                    .map(|(s, b)| geom::dot(s, y) + b)
                    .collect();
                let m = acts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse: f64 = acts.iter().map(|a| ((a - m) / beta).exp()).sum();
                Ok(quad + m + beta * lse.ln())
            }
            ConvexFunction::Piecewise1d { knots, values } => {
                let x = y[0];
                let lo = knots[0];
                let hi = *knots.last().unwrap();
                if x < lo - 1e-12 || x > hi + 1e-12 {
                    return Ok(f64::INFINITY);
                }
                let x = x.clamp(lo, hi);
                match knots.binary_search_by(|k| k.total_cmp(&x)) {
                    Ok(i) => Ok(values[i]),
                    Err(i) => {
                        let (x0, x1) = (knots[i - 1], knots[i]);
                        let (v0, v1) = (values[i - 1], values[i]);
                        Ok(v0 + (v1 - v0) * (x - x0) / (x1 - x0))
                    }
                }
            }
            ConvexFunction::ConjugateOracle { base } => {
                base.conjugate_value_and_argmax(y).map(|(v, _)| v)
            }
            ConvexFunction::StarOracle { base, shifts } => {
                let mut acc = 0.0;
                for (z, &u) in shifts.atoms().iter().zip(shifts.weights()) {
                    let v = base.evaluate(&geom::add(y, z))?;
                    if v == f64::INFINITY {
                        return Ok(f64::INFINITY);
                    }
                    acc += u * v;
                }
                Ok(acc)
            }
        }
    }

    /// A selected subgradient at `y`. At max-affine (and piecewise) ties
    /// this is the average of the active slopes; smooth representations
    /// return the exact gradient; conjugate oracles return the attaining
    /// point of the inner maximization.
    pub fn grad_select(&self, y: &[f64]) -> Result<Vec<f64>, ConvexError> {
        self.check_dim(y)?;
        match self {
            ConvexFunction::MaxAffine { slopes, intercepts } => {
                let acts: Vec<f64> = slopes
                    .iter()
                    .zip(intercepts)
                    .map(|(s, b)| geom::dot(s, y) + b)
                    .collect();
                let m = acts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let tol = 1e-12 * (1.0 + m.abs());
                let mut g = vec![0.0; y.len()];
                let mut count = 0usize;
                for (s, &a) in slopes.iter().zip(&acts) {
                    if a >= m - tol {
                        for (gi, si) in g.iter_mut().zip(s) {
                            *gi += si;
                        }
                        count += 1;
                    }
                }
                Ok(geom::scale(&g, 1.0 / count as f64))
            }
            ConvexFunction::Values { .. } => Err(ConvexError::OutsideDomain),
            ConvexFunction::SmoothQuadLse { .. } => Ok(self.smooth_grad(y)),
            ConvexFunction::Piecewise1d { knots, values } => {
                let x = y[0];
                let lo = knots[0];
                let hi = *knots.last().unwrap();
                if knots.len() == 1 || x <= lo || x >= hi {
                    return Err(ConvexError::OutsideDomain);
                }
                let seg_slope = |i: usize| (values[i + 1] - values[i]) / (knots[i + 1] - knots[i]);
                match knots.binary_search_by(|k| k.total_cmp(&x)) {
                    Ok(i) => Ok(vec![0.5 * (seg_slope(i - 1) + seg_slope(i))]),
                    Err(i) => Ok(vec![seg_slope(i - 1)]),
                }
            }
            ConvexFunction::ConjugateOracle { base } => {
                base.conjugate_value_and_argmax(y).map(|(_, arg)| arg)
            }
            ConvexFunction::StarOracle { base, shifts } => {
                let mut g = vec![0.0; y.len()];
                for (z, &u) in shifts.atoms().iter().zip(shifts.weights()) {
                    let gk = base.grad_select(&geom::add(y, z))?;
                    for (gi, v) in g.iter_mut().zip(&gk) {
                        *gi += u * v;
                    }
                }
                Ok(g)
            }
        }
    }

    /// Exact gradient of the smooth representation; callers guarantee the
    /// variant.
    fn smooth_grad(&self, y: &[f64]) -> Vec<f64> {
        let ConvexFunction::SmoothQuadLse {
            epsilon,
            beta,
            slopes,
            intercepts,
        } = self
        else {
            unreachable!("smooth_grad on non-smooth representation")
        };
        let weights = softmax_weights(slopes, intercepts, *beta, y);
        let mut g = geom::scale(y, *epsilon);
        for (s, w) in slopes.iter().zip(&weights) {
            for (gi, si) in g.iter_mut().zip(s) {
                *gi += w * si;
            }
        }
        g
    }

    /// Hessian where the representation is twice differentiable.
    pub(crate) fn hessian(&self, y: &[f64]) -> Option<Mat> {
        match self {
            ConvexFunction::SmoothQuadLse {
                epsilon,
                beta,
                slopes,
                intercepts,
            } => {
                let d = y.len();
                let w = softmax_weights(slopes, intercepts, *beta, y);
                let mut mean = vec![0.0; d];
                for (s, &wk) in slopes.iter().zip(&w) {
                    for (mi, si) in mean.iter_mut().zip(s) {
                        *mi += wk * si;
                    }
                }
                let mut h = Mat::zeros(d, d);
                for i in 0..d {
                    for j in 0..d {
                        let mut cov = 0.0;
                        for (s, &wk) in slopes.iter().zip(&w) {
                            cov += wk * s[i] * s[j];
                        }
                        cov -= mean[i] * mean[j];
                        let mut v = cov / beta;
                        if i == j {
                            v += epsilon;
                        }
                        h.set(i, j, v);
                    }
                }
                Some(h)
            }
            ConvexFunction::StarOracle { base, shifts } => {
                let d = y.len();
                let mut h = Mat::zeros(d, d);
                for (z, &u) in shifts.atoms().iter().zip(shifts.weights()) {
                    let hk = base.hessian(&geom::add(y, z))?;
                    for i in 0..d {
                        for j in 0..d {
                            h.set(i, j, h.get(i, j) + u * hk.get(i, j));
                        }
                    }
                }
                Some(h)
            }
            _ => None,
        }
    }

    /// Convex conjugate `f*(x) = sup_y (<x, y> - f(y))`. Exact polyhedral
    /// results in the one-dimensional and values-at-points cases; an
    /// evaluation oracle otherwise.
    pub fn conjugate(&self) -> Result<ConvexFunction, ConvexError> {
        match self {
            ConvexFunction::Values { points, values } => Ok(ConvexFunction::MaxAffine {
                slopes: points.clone(),
                intercepts: values.iter().map(|v| -v).collect(),
            }),
            ConvexFunction::Piecewise1d { knots, values } => Ok(ConvexFunction::MaxAffine {
                slopes: knots.iter().map(|&k| vec![k]).collect(),
                intercepts: values.iter().map(|v| -v).collect(),
            }),
            ConvexFunction::MaxAffine { slopes, intercepts } => {
                if self.dim() == 1 {
                    let env = Envelope1d::build(slopes, intercepts);
                    Ok(env.conjugate())
                } else {
                    Ok(ConvexFunction::ConjugateOracle {
                        base: Box::new(self.clone()),
                    })
                }
            }
            ConvexFunction::SmoothQuadLse { .. } | ConvexFunction::StarOracle { .. } => {
                Ok(ConvexFunction::ConjugateOracle {
                    base: Box::new(self.clone()),
                })
            }
            // The bases we wrap are closed convex, so conjugating twice
            // returns the base itself.
            ConvexFunction::ConjugateOracle { base } => Ok(base.as_ref().clone()),
        }
    }

    /// Star operation `(f star q)(y) = sum_k u_k f(y + z_k)`. Exact
    /// max-affine output in dimension one, an oracle otherwise.
    pub fn star(&self, q: &DiscreteMeasure) -> Result<ConvexFunction, ConvexError> {
        if q.dim() != self.dim() {
            return Err(ConvexError::DimensionMismatch {
                expected: self.dim(),
                got: q.dim(),
            });
        }
        match self {
            ConvexFunction::Values { .. } => Err(ConvexError::ThinDomain),
            ConvexFunction::MaxAffine { slopes, intercepts } if self.dim() == 1 => {
                let env = Envelope1d::build(slopes, intercepts);
                Ok(env.star(q))
            }
            _ => Ok(ConvexFunction::StarOracle {
                base: Box::new(self.clone()),
                shifts: q.clone(),
            }),
        }
    }

    /// Value and attaining point of `sup_y (<x, y> - f(y))`.
    fn conjugate_value_and_argmax(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ConvexError> {
        match self {
            ConvexFunction::MaxAffine { slopes, intercepts } => {
                conjugate_polyhedral_lp(slopes, intercepts, x)
            }
            _ => {
                let y = solve_gradient_equation(self, x, INNER_TOL, INNER_MAX_ITER)?;
                let v = geom::dot(x, &y) - self.evaluate(&y)?;
                Ok((v, y))
            }
        }
    }
}

/// Softmax weights of the log-sum-exp part at `y`.
fn softmax_weights(
    slopes: &[Vec<f64>],
    intercepts: &[f64],
    beta: f64,
    y: &[f64],
) -> Vec<f64> {
    let acts: Vec<f64> = slopes
        .iter()
        .zip(intercepts)
        .map(|(s, b)| geom::dot(s, y) + b)
        .collect();
    let m = acts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = acts.iter().map(|a| ((a - m) / beta).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Upper envelope of affine pieces in dimension one: slopes strictly
/// increasing, consecutive pieces meeting at increasing breakpoints.
pub(crate) struct Envelope1d {
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// `breaks[i]` is where piece `i` hands over to piece `i + 1`.
    pub breaks: Vec<f64>,
}

impl Envelope1d {
    pub fn build(slopes: &[Vec<f64>], intercepts: &[f64]) -> Self {
        let mut lines: Vec<(f64, f64)> = slopes
            .iter()
            .zip(intercepts)
            .map(|(s, &b)| (s[0], b))
            .collect();
        lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        // Equal slopes: only the largest intercept can be active.
        lines.dedup_by(|next, prev| {
            if (next.0 - prev.0).abs() <= 1e-15 {
                if next.1 > prev.1 {
                    prev.1 = next.1;
                }
                true
            } else {
                false
            }
        });
        let cross = |a: (f64, f64), b: (f64, f64)| (a.1 - b.1) / (b.0 - a.0);
        let mut hull: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
        for l in lines {
            while hull.len() >= 2 {
                let p = hull[hull.len() - 2];
                let q = hull[hull.len() - 1];
                // q never reaches the maximum if l overtakes p before q does.
                if cross(p, l) <= cross(p, q) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(l);
        }
        let breaks: Vec<f64> = hull.windows(2).map(|w| cross(w[0], w[1])).collect();
        Envelope1d {
            slopes: hull.iter().map(|l| l.0).collect(),
            intercepts: hull.iter().map(|l| l.1).collect(),
            breaks,
        }
    }

    fn value(&self, y: f64) -> f64 {
        self.slopes
            .iter()
            .zip(&self.intercepts)
            .map(|(s, b)| s * y + b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn active_slope(&self, y: f64) -> f64 {
        // Index of the active piece at y (strictly between breakpoints).
        let mut i = 0;
        while i < self.breaks.len() && y > self.breaks[i] {
            i += 1;
        }
        self.slopes[i]
    }

    /// Exact conjugate: piecewise affine on `[min slope, max slope]` with
    /// knots at the slopes; the value at the smallest slope is minus its
    /// intercept and each breakpoint is the derivative on the next knot
    /// interval.
    pub fn conjugate(&self) -> ConvexFunction {
        let mut vals = Vec::with_capacity(self.slopes.len());
        vals.push(-self.intercepts[0]);
        for (i, &t) in self.breaks.iter().enumerate() {
            let prev = vals[i];
            vals.push(prev + t * (self.slopes[i + 1] - self.slopes[i]));
        }
        ConvexFunction::Piecewise1d {
            knots: self.slopes.clone(),
            values: vals,
        }
    }

    /// Exact star against a one-dimensional measure: the weighted sum of
    /// shifted copies is again piecewise affine with breakpoints at every
    /// shifted breakpoint of the envelope.
    pub fn star(&self, q: &DiscreteMeasure) -> ConvexFunction {
        let mut brk: Vec<f64> = Vec::new();
        for z in q.atoms() {
            for &t in &self.breaks {
                brk.push(t - z[0]);
            }
        }
        brk.sort_by(f64::total_cmp);
        brk.dedup_by(|a, b| (*a - *b).abs() <= 0.0);

        let sum_at = |y: f64| -> f64 {
            q.atoms()
                .iter()
                .zip(q.weights())
                .map(|(z, &u)| u * self.value(y + z[0]))
                .sum()
        };
        let slope_at = |y: f64| -> f64 {
            q.atoms()
                .iter()
                .zip(q.weights())
                .map(|(z, &u)| u * self.active_slope(y + z[0]))
                .sum()
        };

        // One affine piece per interval between consecutive breakpoints,
        // probed at an interior point where every shifted argmax is fixed.
        let mut probes = Vec::with_capacity(brk.len() + 1);
        if brk.is_empty() {
            probes.push(0.0);
        } else {
            probes.push(brk[0] - 1.0);
            for w in brk.windows(2) {
                probes.push(0.5 * (w[0] + w[1]));
            }
            probes.push(brk[brk.len() - 1] + 1.0);
        }
        let mut slopes: Vec<Vec<f64>> = Vec::new();
        let mut intercepts = Vec::new();
        for p in probes {
            let s = slope_at(p);
            let b = sum_at(p) - s * p;
            if slopes.last().is_none_or(|ls| (ls[0] - s).abs() > 1e-15) {
                slopes.push(vec![s]);
                intercepts.push(b);
            }
        }
        ConvexFunction::MaxAffine { slopes, intercepts }
    }
}

/// Conjugate of a polyhedral max-affine function in any dimension, as the
/// linear program `max <x, y> - t  s.t.  t >= <s_k, y> + b_k`. Unbounded
/// means `x` lies outside the closed convex hull of the slopes.
fn conjugate_polyhedral_lp(
    slopes: &[Vec<f64>],
    intercepts: &[f64],
    x: &[f64],
) -> Result<(f64, Vec<f64>), ConvexError> {
    let d = x.len();
    let k = slopes.len();
    // Columns: y+ (d), y- (d), t+ , t-, slack per piece.
    let cols = 2 * d + 2 + k;
    let mut rows = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for (i, (s, &bi)) in slopes.iter().zip(intercepts).enumerate() {
        let mut r = vec![0.0; cols];
        for t in 0..d {
            r[t] = s[t];
            r[d + t] = -s[t];
        }
        r[2 * d] = -1.0;
        r[2 * d + 1] = 1.0;
        r[2 * d + 2 + i] = 1.0;
        rows.push(r);
        b.push(-bi);
    }
    let mut costs = vec![0.0; cols];
    for t in 0..d {
        costs[t] = -x[t];
        costs[d + t] = x[t];
    }
    costs[2 * d] = 1.0;
    costs[2 * d + 1] = -1.0;
    match dense::solve(&StandardLp {
        costs,
        a: Mat::from_rows(rows),
        b,
    }) {
        Ok(sol) => {
            let y: Vec<f64> = (0..d).map(|t| sol.x[t] - sol.x[d + t]).collect();
            Ok((-sol.value, y))
        }
        Err(LpError::Unbounded) => Err(ConvexError::OutsideDomain),
        Err(e) => Err(ConvexError::Lp(e)),
    }
}

/// Solve `grad f(y) = target` for a smooth strictly convex `f`: safeguarded
/// Newton in dimension one (the gradient is monotone), damped Newton with a
/// residual line search otherwise.
pub(crate) fn solve_gradient_equation(
    f: &ConvexFunction,
    target: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, ConvexError> {
    if f.dim() == 1 {
        return solve_gradient_equation_1d(f, target[0], tol, max_iter).map(|y| vec![y]);
    }
    let d = target.len();
    let mut y = vec![0.0; d];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let g = f.grad_select(&y)?;
        let r = geom::sub(target, &g);
        residual = geom::norm_sq(&r).sqrt();
        if residual <= tol {
            return Ok(y);
        }
        let h = f
            .hessian(&y)
            .ok_or(ConvexError::Unsupported("Newton needs a Hessian"))?;
        let step = solve_linear_system(&h, &r)
            .ok_or(ConvexError::InnerMaximization { residual })?;
        // Halve the step until the residual actually decreases.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = y.iter().zip(&step).map(|(yi, si)| yi + t * si).collect();
            let gc = f.grad_select(&cand)?;
            let rc = geom::norm_sq(&geom::sub(target, &gc)).sqrt();
            if rc < residual {
                y = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(ConvexError::InnerMaximization { residual });
        }
    }
    Err(ConvexError::InnerMaximization { residual })
}

/// One-dimensional monotone solve of `f'(y) = target`: geometric bracket
/// growth from the target, then Newton safeguarded by bisection.
pub(crate) fn solve_gradient_equation_1d(
    f: &ConvexFunction,
    target: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64, ConvexError> {
    let slope_at = |y: f64| -> Result<f64, ConvexError> { Ok(f.grad_select(&[y])?[0]) };
    let mut lo = target.min(0.0) - 1.0;
    let mut hi = target.max(0.0) + 1.0;
    let mut width = hi - lo;
    for _ in 0..200 {
        let (slo, shi) = (slope_at(lo)?, slope_at(hi)?);
        if slo <= target && target <= shi {
            break;
        }
        width *= 2.0;
        if slo > target {
            lo -= width;
        }
        if shi < target {
            hi += width;
        }
        if width > 1e18 {
            return Err(ConvexError::InnerMaximization {
                residual: (slope_at(0.0)? - target).abs(),
            });
        }
    }
    let mut y = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let g = slope_at(y)?;
        residual = (g - target).abs();
        if residual <= tol {
            return Ok(y);
        }
        if g < target {
            lo = y;
        } else {
            hi = y;
        }
        let mut next = None;
        if let Some(h) = f.hessian(&[y]) {
            let h = h.get(0, 0);
            if h > 0.0 {
                let cand = y + (target - g) / h;
                if cand > lo && cand < hi {
                    next = Some(cand);
                }
            }
        }
        y = next.unwrap_or(0.5 * (lo + hi));
    }
    Err(ConvexError::InnerMaximization { residual })
}

/// Solve `H x = r` for a small symmetric positive definite matrix by
/// Gaussian elimination with partial pivoting.
fn solve_linear_system(h: &Mat, r: &[f64]) -> Option<Vec<f64>> {
    let n = r.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = h.get(i, j);
        }
        a[i][n] = r[i];
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        for i in 0..n {
            if i != col {
                let fac = a[i][col] / a[col][col];
                for j in col..=n {
                    a[i][j] -= fac * a[col][j];
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// Greatest convex minorant of a finite grid function. In dimension one
/// this is the lower convex envelope by monotone chain; in higher
/// dimensions each grid point contributes the tight affine minorant
/// obtained from the dual of the convex-combination program.
pub fn convex_hull(g: &ConvexFunction) -> Result<ConvexFunction, ConvexError> {
    let ConvexFunction::Values { points, values } = g else {
        return Err(ConvexError::Unsupported(
            "convex_hull expects a values-at-points function",
        ));
    };
    let d = g.dim();
    if d == 1 {
        let mut pts: Vec<(f64, f64)> =
            points.iter().zip(values).map(|(p, &v)| (p[0], v)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Monotone chain, lower hull only.
        let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
        for p in pts {
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                // Drop b when it lies on or above chord a-p.
                if (b.1 - a.1) * (p.0 - a.0) >= (p.1 - a.1) * (b.0 - a.0) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        ConvexFunction::piecewise_1d(
            hull.iter().map(|p| p.0).collect(),
            hull.iter().map(|p| p.1).collect(),
        )
    } else {
        // For each point, the dual of
        //   min sum_i lambda_i v_i  s.t.  sum_i lambda_i y_i = y_j, sum lambda = 1
        // is an affine function tight at the hull value and below every v_i.
        let n = points.len();
        let mut slopes = Vec::with_capacity(n);
        let mut intercepts = Vec::with_capacity(n);
        for j in 0..n {
            let mut rows = Vec::with_capacity(d + 1);
            let mut b = Vec::with_capacity(d + 1);
            for t in 0..d {
                rows.push(points.iter().map(|p| p[t]).collect::<Vec<f64>>());
                b.push(points[j][t]);
            }
            rows.push(vec![1.0; n]);
            b.push(1.0);
            let sol = dense::solve(&StandardLp {
                costs: values.clone(),
                a: Mat::from_rows(rows),
                b,
            })?;
            let s = sol.duals[..d].to_vec();
            let t = sol.duals[d];
            slopes.push(s);
            intercepts.push(t);
        }
        Ok(ConvexFunction::MaxAffine { slopes, intercepts })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn abs_1d() -> ConvexFunction {
        ConvexFunction::max_affine(vec![vec![-1.0], vec![1.0]], vec![0.0, 0.0]).unwrap()
    }

    fn two_point_q() -> DiscreteMeasure {
        DiscreteMeasure::from_1d(&[(-1.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(abs_1d().evaluate(&[2.0]).unwrap(), 2.0);
        let vap = ConvexFunction::values_at_points(
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            vec![1.0, 0.0, 1.0],
        )
        .unwrap();
        assert_eq!(vap.evaluate(&[0.5]).unwrap(), f64::INFINITY);
        assert_eq!(vap.evaluate(&[1.0]).unwrap(), 1.0);
        let quad = ConvexFunction::quadratic(1);
        assert!((quad.evaluate(&[3.0]).unwrap() - 4.5).abs() < 1e-15);
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch() {
        assert!(matches!(
            abs_1d().evaluate(&[1.0, 2.0]).unwrap_err(),
            ConvexError::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn conjugate_of_three_point_values() {
        // psi on {-1, 0, 1} with values (1, 0, 1) conjugates to
        // max(|x| - 1, 0).
        let vap = ConvexFunction::values_at_points(
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            vec![1.0, 0.0, 1.0],
        )
        .unwrap();
        let conj = vap.conjugate().unwrap();
        for (x, want) in [(-3.0, 2.0), (-1.0, 0.0), (0.0, 0.0), (0.5, 0.0), (2.0, 1.0)] {
            assert!((conj.evaluate(&[x]).unwrap() - want).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn conjugate_of_abs_is_indicator() {
        let conj = abs_1d().conjugate().unwrap();
        assert_eq!(conj.evaluate(&[0.5]).unwrap(), 0.0);
        assert_eq!(conj.evaluate(&[1.0]).unwrap(), 0.0);
        assert_eq!(conj.evaluate(&[1.5]).unwrap(), f64::INFINITY);
        assert_eq!(conj.evaluate(&[-2.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn quadratic_is_self_conjugate() {
        // Analytic: (|.|^2/2)* = |.|^2/2.
        let quad = ConvexFunction::quadratic(1);
        let conj = quad.conjugate().unwrap();
        for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let got = conj.evaluate(&[x]).unwrap();
            assert!((got - 0.5 * x * x).abs() < 1e-8, "x={x} got={got}");
        }
    }

    #[test]
    fn quadratic_self_conjugate_in_2d() {
        let quad = ConvexFunction::quadratic(2);
        let conj = quad.conjugate().unwrap();
        let x = [1.5, -0.5];
        let want = 0.5 * geom::norm_sq(&x);
        assert!((conj.evaluate(&x).unwrap() - want).abs() < 1e-8);
        let arg = conj.grad_select(&x).unwrap();
        assert!(geom::sup_dist(&arg, &x) < 1e-8);
    }

    #[test]
    fn star_of_abs_with_two_atoms() {
        // 0.5|y+1| + 0.5|y-1| = max(|y|, 1).
        let st = abs_1d().star(&two_point_q()).unwrap();
        for (y, want) in [(-3.0, 3.0), (-1.0, 1.0), (0.0, 1.0), (0.5, 1.0), (2.0, 2.0)] {
            assert!((st.evaluate(&[y]).unwrap() - want).abs() < 1e-12, "y={y}");
        }
    }

    #[test]
    fn star_with_dirac_is_translation() {
        let f = abs_1d();
        let c = DiscreteMeasure::dirac(vec![0.7]);
        let st = f.star(&c).unwrap();
        for y in [-2.0, -0.7, 0.0, 1.3] {
            assert!(
                (st.evaluate(&[y]).unwrap() - f.evaluate(&[y + 0.7]).unwrap()).abs() < 1e-12
            );
        }
    }

    #[test]
    fn star_of_quadratic_expands_analytically() {
        // (y^2/2) star q = y^2/2 + m y + s/2 with m the barycenter and s
        // the second moment of q.
        let q = DiscreteMeasure::from_1d(&[(-1.0, 0.25), (0.5, 0.5), (2.0, 0.25)]).unwrap();
        let m = q.barycenter()[0];
        let s = q.second_moment();
        let st = ConvexFunction::quadratic(1).star(&q).unwrap();
        for y in [-2.0, 0.0, 0.3, 1.7] {
            let want = 0.5 * y * y + m * y + 0.5 * s;
            assert!((st.evaluate(&[y]).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn star_rejects_values_at_points() {
        let vap =
            ConvexFunction::values_at_points(vec![vec![0.0]], vec![0.0]).unwrap();
        assert_eq!(
            vap.star(&two_point_q()).unwrap_err(),
            ConvexError::ThinDomain
        );
    }

    #[test]
    fn grad_examples() {
        let f = abs_1d();
        assert_eq!(f.grad_select(&[2.0]).unwrap(), vec![1.0]);
        // Tie at zero averages the active slopes.
        assert_eq!(f.grad_select(&[0.0]).unwrap(), vec![0.0]);
        let quad = ConvexFunction::quadratic(1);
        assert!((quad.grad_select(&[1.3]).unwrap()[0] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn grad_outside_domain_interior_errors() {
        // Conjugate of |y| is the indicator of [-1, 1]: subgradients are
        // only selected strictly inside.
        let conj = abs_1d().conjugate().unwrap();
        assert!(conj.grad_select(&[0.5]).is_ok());
        for x in [-1.0, 1.0, 1.5] {
            assert_eq!(
                conj.grad_select(&[x]).unwrap_err(),
                ConvexError::OutsideDomain,
                "x={x}"
            );
        }
        let vap = ConvexFunction::values_at_points(vec![vec![0.0]], vec![0.0]).unwrap();
        assert_eq!(
            vap.grad_select(&[0.0]).unwrap_err(),
            ConvexError::OutsideDomain
        );
    }

    #[test]
    fn grad_monotone_in_1d() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.random_range(2..6);
            let slopes: Vec<Vec<f64>> =
                (0..k).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
            let intercepts: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = ConvexFunction::max_affine(slopes, intercepts).unwrap();
            let mut ys: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
            ys.sort_by(f64::total_cmp);
            let grads: Vec<f64> = ys.iter().map(|&y| f.grad_select(&[y]).unwrap()[0]).collect();
            for w in grads.windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }
        }
    }

    #[test]
    fn convex_hull_removes_sag() {
        let g = ConvexFunction::values_at_points(
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            vec![0.0, 1.0, 0.0],
        )
        .unwrap();
        let hull = convex_hull(&g).unwrap();
        for y in [-1.0, -0.3, 0.0, 0.8, 1.0] {
            assert!((hull.evaluate(&[y]).unwrap() - 0.0).abs() < 1e-12);
        }
        assert_eq!(hull.evaluate(&[1.5]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn convex_hull_fixes_convex_input() {
        let pts: Vec<Vec<f64>> = (-3..=3).map(|i| vec![i as f64]).collect();
        let vals: Vec<f64> = pts.iter().map(|p| p[0] * p[0]).collect();
        let g = ConvexFunction::values_at_points(pts.clone(), vals.clone()).unwrap();
        let hull = convex_hull(&g).unwrap();
        for (p, v) in pts.iter().zip(&vals) {
            assert!((hull.evaluate(p).unwrap() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn convex_hull_matches_pairwise_oracle() {
        // In dimension one the Caratheodory bound is two points, so the
        // hull value at every grid point is the cheapest two-point convex
        // combination landing there.
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(23);
        let n = 20;
        let pts: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
        let g = ConvexFunction::values_at_points(
            pts.iter().map(|&p| vec![p]).collect(),
            vals.clone(),
        )
        .unwrap();
        let hull = convex_hull(&g).unwrap();
        for j in 0..n {
            let mut best = vals[j];
            for a in 0..n {
                for b in 0..n {
                    let (xa, xb) = (pts[a], pts[b]);
                    if (xa - xb).abs() < 1e-12 {
                        continue;
                    }
                    let lam = (pts[j] - xb) / (xa - xb);
                    if (-1e-12..=1.0 + 1e-12).contains(&lam) {
                        best = best.min(lam * vals[a] + (1.0 - lam) * vals[b]);
                    }
                }
            }
            let got = hull.evaluate(&[pts[j]]).unwrap();
            assert!((got - best).abs() < 1e-9, "point {j}: {got} vs {best}");
            assert!(got <= vals[j] + 1e-9);
        }
    }

    #[test]
    fn convex_hull_2d_minorizes_and_touches_vertices() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        ];
        let vals = vec![0.0, 0.0, 0.0, 0.0, 1.0];
        let g = ConvexFunction::values_at_points(pts.clone(), vals.clone()).unwrap();
        let hull = convex_hull(&g).unwrap();
        for (p, &v) in pts.iter().zip(&vals) {
            assert!(hull.evaluate(p).unwrap() <= v + 1e-9);
        }
        // Corners are hull vertices; the midpoint sag is flattened to zero.
        assert!((hull.evaluate(&[0.0, 0.0]).unwrap()).abs() < 1e-9);
        assert!((hull.evaluate(&[0.5, 0.5]).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn fenchel_young_inequality_random() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = rng.random_range(2..5);
            let slopes: Vec<Vec<f64>> =
                (0..k).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
            let intercepts: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = ConvexFunction::max_affine(slopes, intercepts).unwrap();
            let fstar = f.conjugate().unwrap();
            for _ in 0..20 {
                let y = rng.random_range(-3.0..3.0);
                let x = rng.random_range(-3.0..3.0);
                let lhs = f.evaluate(&[y]).unwrap() + fstar.evaluate(&[x]).unwrap();
                assert!(lhs >= x * y - 1e-9);
            }
        }
        // Equality at x = grad f(y) for the smooth representation.
        let quad = ConvexFunction::quadratic(1);
        let conj = quad.conjugate().unwrap();
        for y in [-1.5, 0.2, 2.0] {
            let x = quad.grad_select(&[y]).unwrap()[0];
            let gap =
                quad.evaluate(&[y]).unwrap() + conj.evaluate(&[x]).unwrap() - x * y;
            assert!(gap.abs() < 1e-7);
        }
    }

    #[test]
    fn double_conjugation_recovers_max_affine() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        for _ in 0..10 {
            let k = rng.random_range(2..6);
            let slopes: Vec<Vec<f64>> =
                (0..k).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
            let intercepts: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = ConvexFunction::max_affine(slopes, intercepts).unwrap();
            let ff = f.conjugate().unwrap().conjugate().unwrap();
            for _ in 0..50 {
                let y = rng.random_range(-4.0..4.0);
                let a = f.evaluate(&[y]).unwrap();
                let b = ff.evaluate(&[y]).unwrap();
                assert!((a - b).abs() < 1e-7, "f**({y}) = {b}, f({y}) = {a}");
            }
        }
    }

    #[test]
    fn star_preserves_convexity_random_midpoints() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
        let f = ConvexFunction::smooth_quad_lse(
            0.5,
            0.1,
            vec![vec![-1.0], vec![0.5], vec![2.0]],
            vec![0.0, 0.3, -0.5],
        )
        .unwrap();
        let st = f.star(&two_point_q()).unwrap();
        // Random-midpoint convexity of the base, its max-affine cousin,
        // and the starred function.
        let ma = abs_1d();
        for _ in 0..50 {
            let y1 = rng.random_range(-3.0..3.0);
            let y2 = rng.random_range(-3.0..3.0);
            let lam: f64 = rng.random_range(0.0..1.0);
            let mid = lam * y1 + (1.0 - lam) * y2;
            for g in [&f, &ma, &st] {
                let lhs = g.evaluate(&[mid]).unwrap();
                let rhs = lam * g.evaluate(&[y1]).unwrap()
                    + (1.0 - lam) * g.evaluate(&[y2]).unwrap();
                assert!(lhs <= rhs + 1e-9);
            }
        }
    }

    #[test]
    fn conjugate_oracle_reports_nonconvergence_outside_domain() {
        // Pure LSE with a single piece has constant gradient; conjugating
        // at any other point cannot converge.
        let f =
            ConvexFunction::smooth_quad_lse(0.0, 0.1, vec![vec![1.0]], vec![0.0]).unwrap();
        let conj = f.conjugate().unwrap();
        assert!(matches!(
            conj.evaluate(&[2.0]).unwrap_err(),
            ConvexError::InnerMaximization { .. }
        ));
    }

    #[test]
    fn json_round_trip() {
        let f = ConvexFunction::smooth_quad_lse(
            1e-3,
            1e-2,
            vec![vec![0.0], vec![1.0]],
            vec![0.0, -0.5],
        )
        .unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"type\":\"smooth_quad_lse\""));
        let back: ConvexFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(f, back);
    }
}
