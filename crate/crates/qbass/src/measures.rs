//! Finitely supported probability measures on `R^d` and the order-structure
//! predicates used by martingale transport: convex order (via an LP
//! feasibility certificate) and irreducibility (via per-atom-pair LPs).

use crate::geom;
use crate::lp::dense::{self, LpError, StandardLp};
use crate::lp::Mat;
use crate::solver::MartingaleKernel;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize};

/// Default sup-norm tolerance below which atoms are merged. Keeps repeated
/// convolutions from exploding the support with numerically equal points.
pub const MERGE_TOL: f64 = 1e-12;

/// Inputs whose total mass is farther than this from one are rejected
/// rather than silently rescaled.
const MASS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("measure must have at least one atom")]
    EmptySupport,
    #[error("atom {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("weight {index} is not strictly positive (got {value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("weights sum to {total}, more than 1e-6 away from 1")]
    MassNotOne { total: f64 },
    #[error("non-finite coordinate or weight")]
    NonFinite,
    #[error("atoms and weights have different lengths ({atoms} vs {weights})")]
    LengthMismatch { atoms: usize, weights: usize },
    #[error("measures live in different dimensions ({0} vs {1})")]
    CrossDimension(usize, usize),
    #[error("{0} and {1} are not in convex order")]
    NotInConvexOrder(String, String),
    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),
}

/// A finitely supported probability measure: pairwise distinct atoms in
/// `R^d` with strictly positive weights summing to one. Atoms are kept
/// sorted lexicographically, so equal measures have equal representations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Build a measure, validating mass, positivity and dimensions, then
    /// normalizing and dedup-merging atoms closer than [`MERGE_TOL`].
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        Self::new_with_tol(atoms, weights, MERGE_TOL)
    }

    /// Same as [`DiscreteMeasure::new`] with an explicit merge tolerance.
    pub fn new_with_tol(
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        merge_tol: f64,
    ) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::EmptySupport);
        }
        if atoms.len() != weights.len() {
            return Err(MeasureError::LengthMismatch {
                atoms: atoms.len(),
                weights: weights.len(),
            });
        }
        let dim = atoms[0].len();
        for (index, a) in atoms.iter().enumerate() {
            if a.len() != dim {
                return Err(MeasureError::DimensionMismatch {
                    index,
                    expected: dim,
                    got: a.len(),
                });
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(MeasureError::NonFinite);
            }
        }
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(MeasureError::NonFinite);
            }
            if w <= 0.0 {
                return Err(MeasureError::NonPositiveWeight { index, value: w });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(MeasureError::MassNotOne { total });
        }

        let mut idx: Vec<usize> = (0..atoms.len()).collect();
        idx.sort_by(|&a, &b| geom::lex_cmp(&atoms[a], &atoms[b]));

        let mut merged_atoms: Vec<Vec<f64>> = Vec::with_capacity(atoms.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for k in idx {
            if let Some(last) = merged_atoms.last() {
                if geom::sup_dist(last, &atoms[k]) <= merge_tol {
                    *merged_weights.last_mut().unwrap() += weights[k];
                    continue;
                }
            }
            merged_atoms.push(atoms[k].clone());
            merged_weights.push(weights[k]);
        }
        for w in merged_weights.iter_mut() {
            *w /= total;
        }
        Ok(DiscreteMeasure {
            dim,
            atoms: merged_atoms,
            weights: merged_weights,
        })
    }

    /// Point mass at `x`.
    pub fn dirac(x: Vec<f64>) -> Self {
        DiscreteMeasure {
            dim: x.len(),
            atoms: vec![x],
            weights: vec![1.0],
        }
    }

    /// Convenience constructor for one-dimensional measures.
    pub fn from_1d(pairs: &[(f64, f64)]) -> Result<Self, MeasureError> {
        let atoms = pairs.iter().map(|&(x, _)| vec![x]).collect();
        let weights = pairs.iter().map(|&(_, w)| w).collect();
        Self::new(atoms, weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// `sum_i w_i a_i`.
    pub fn barycenter(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            for (o, x) in out.iter_mut().zip(a) {
                *o += w * x;
            }
        }
        out
    }

    /// `sum_i w_i |a_i|^2`.
    pub fn second_moment(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, &w)| w * geom::norm_sq(a))
            .sum()
    }

    /// Measure of the sums `a_i + z_k` with product weights, dedup-merged.
    pub fn convolve(&self, other: &DiscreteMeasure) -> Result<Self, MeasureError> {
        if self.dim != other.dim {
            return Err(MeasureError::CrossDimension(self.dim, other.dim));
        }
        let mut atoms = Vec::with_capacity(self.len() * other.len());
        let mut weights = Vec::with_capacity(self.len() * other.len());
        for (a, &wa) in self.atoms.iter().zip(&self.weights) {
            for (z, &wz) in other.atoms.iter().zip(&other.weights) {
                atoms.push(geom::add(a, z));
                weights.push(wa * wz);
            }
        }
        Self::new(atoms, weights)
    }

    /// Image measure under a total map, dedup-merged.
    pub fn pushforward(&self, map: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self, MeasureError> {
        let atoms = self.atoms.iter().map(|a| map(a)).collect();
        Self::new(atoms, self.weights.clone())
    }

    /// Image measure under a partial map; `None` on any atom is an error.
    pub fn try_pushforward(
        &self,
        map: impl Fn(&[f64]) -> Option<Vec<f64>>,
    ) -> Result<Self, MeasureError> {
        let mut atoms = Vec::with_capacity(self.len());
        for a in &self.atoms {
            match map(a) {
                Some(img) => atoms.push(img),
                None => return Err(MeasureError::NonFinite),
            }
        }
        Self::new(atoms, self.weights.clone())
    }

    /// Translate every atom by `c`.
    pub fn shift(&self, c: &[f64]) -> Result<Self, MeasureError> {
        if c.len() != self.dim {
            return Err(MeasureError::CrossDimension(self.dim, c.len()));
        }
        self.pushforward(|a| geom::add(a, c))
    }

    /// Index of the atom nearest to `x` in sup-norm, with the distance.
    pub fn nearest_atom(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, a) in self.atoms.iter().enumerate() {
            let d = geom::sup_dist(a, x);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

/// Equality-constraint system of the martingale transport polytope
/// `MT(mu, nu)` in the variables `pi_ij` (row-major): row sums, column
/// sums, and per-atom barycenter constraints.
pub(crate) fn mt_constraints(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> (Mat, Vec<f64>) {
    let (m, n, d) = (mu.len(), nu.len(), mu.dim());
    let cols = m * n;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m + n + m * d);
    let mut b = Vec::with_capacity(m + n + m * d);
    for i in 0..m {
        let mut r = vec![0.0; cols];
        for j in 0..n {
            r[i * n + j] = 1.0;
        }
        rows.push(r);
        b.push(mu.weight(i));
    }
    for j in 0..n {
        let mut r = vec![0.0; cols];
        for i in 0..m {
            r[i * n + j] = 1.0;
        }
        rows.push(r);
        b.push(nu.weight(j));
    }
    for i in 0..m {
        for t in 0..d {
            let mut r = vec![0.0; cols];
            for j in 0..n {
                r[i * n + j] = nu.atom(j)[t];
            }
            rows.push(r);
            b.push(mu.weight(i) * mu.atom(i)[t]);
        }
    }
    (Mat::from_rows(rows), b)
}

/// Outcome of the convex-order check: feasibility of `MT(mu, nu)` with a
/// Strassen witness kernel when the answer is yes.
#[derive(Debug, Clone)]
pub struct ConvexOrderResult {
    pub ordered: bool,
    pub witness: Option<MartingaleKernel>,
}

/// Decide `mu <=_c nu` by LP feasibility of the martingale transport
/// polytope. Infeasibility is a negative answer, not an error.
pub fn check_convex_order(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<ConvexOrderResult, MeasureError> {
    if mu.dim() != nu.dim() {
        return Err(MeasureError::CrossDimension(mu.dim(), nu.dim()));
    }
    let (a, b) = mt_constraints(mu, nu);
    match dense::feasible_point(a, b)? {
        Some(x) => {
            let n = nu.len();
            let rows: Vec<Vec<f64>> = (0..mu.len())
                .map(|i| {
                    (0..n)
                        .map(|j| (x[i * n + j] / mu.weight(i)).max(0.0))
                        .collect()
                })
                .collect();
            let witness = MartingaleKernel::new(mu.clone(), nu.atoms().to_vec(), rows)
                .expect("LP-feasible plan yields a valid kernel");
            Ok(ConvexOrderResult {
                ordered: true,
                witness: Some(witness),
            })
        }
        None => Ok(ConvexOrderResult {
            ordered: false,
            witness: None,
        }),
    }
}

/// Outcome of the irreducibility scan. `blocking_pair` names atoms
/// `(x, y)` that no martingale transport can connect with positive mass.
#[derive(Debug, Clone)]
pub struct IrreducibilityResult {
    pub irreducible: bool,
    pub blocking_pair: Option<(Vec<f64>, Vec<f64>)>,
}

/// Mass threshold below which an atom pair counts as unreachable.
const IRREDUCIBLE_TOL: f64 = 1e-12;

/// Check irreducibility of `(mu, nu)` by maximizing the mass on every atom
/// pair over `MT(mu, nu)`. For finite supports this pairwise positivity is
/// equivalent to the set-based definition. Runs `|mu| * |nu|` LPs, so it is
/// the expensive predicate of this module.
pub fn check_irreducible(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<IrreducibilityResult, MeasureError> {
    let order = check_convex_order(mu, nu)?;
    if !order.ordered {
        return Err(MeasureError::NotInConvexOrder(
            "mu".into(),
            "nu".into(),
        ));
    }
    let (a, b) = mt_constraints(mu, nu);
    let n = nu.len();
    for i in 0..mu.len() {
        for j in 0..n {
            let mut costs = vec![0.0; mu.len() * n];
            costs[i * n + j] = -1.0;
            let sol = dense::solve(&StandardLp {
                costs,
                a: a.clone(),
                b: b.clone(),
            })?;
            if -sol.value <= IRREDUCIBLE_TOL {
                return Ok(IrreducibilityResult {
                    irreducible: false,
                    blocking_pair: Some((mu.atom(i).to_vec(), nu.atom(j).to_vec())),
                });
            }
        }
    }
    Ok(IrreducibilityResult {
        irreducible: true,
        blocking_pair: None,
    })
}

// JSON schema: {"d": int, "atoms": [[f64; d]...], "weights": [f64...]},
// exact field names, unknown fields rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureJson {
    d: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<MeasureJson> for DiscreteMeasure {
    type Error = MeasureError;

    fn try_from(raw: MeasureJson) -> Result<Self, Self::Error> {
        for (index, a) in raw.atoms.iter().enumerate() {
            if a.len() != raw.d {
                return Err(MeasureError::DimensionMismatch {
                    index,
                    expected: raw.d,
                    got: a.len(),
                });
            }
        }
        DiscreteMeasure::new(raw.atoms, raw.weights)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let raw = MeasureJson::deserialize(deserializer)?;
        DiscreteMeasure::try_from(raw).map_err(serde::de::Error::custom)
    }
}

impl Serialize for DiscreteMeasure {
    fn serialize<S>(&self, serializer: S) -> Result<S::Ok, S::Error>
    where
        S: serde::Serializer,
    {
        let mut s = serializer.serialize_struct("DiscreteMeasure", 3)?;
        s.serialize_field("d", &self.dim)?;
        s.serialize_field("atoms", &self.atoms)?;
        s.serialize_field("weights", &self.weights)?;
        s.end()
    }
}
