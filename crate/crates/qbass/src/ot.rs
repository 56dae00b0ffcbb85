//! Maximal covariance, optimal couplings, Brenier maps and the quadratic
//! Wasserstein distance between discrete measures.
//!
//! Dimension one is handled by the comonotone (quantile) coupling built
//! from sorted supports; higher dimensions go through the in-repo network
//! simplex. The two routes are cross-checked against each other in tests.

use crate::geom;
use crate::lp::network::{self, TransportError};
use crate::lp::Mat;
use crate::measures::DiscreteMeasure;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OtError {
    #[error("measures live in different dimensions ({0} vs {1})")]
    CrossDimension(usize, usize),
    #[error("coupling marginal deviates by {0:.3e} (tolerance 1e-9)")]
    MarginalMismatch(f64),
    #[error("coupling has negative entry {0:.3e}")]
    NegativeMass(f64),
    #[error("point is not an atom of the map's source measure")]
    PointNotInSupport,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Joint mass matrix over two supports with prescribed marginals.
#[derive(Debug, Clone)]
pub struct Coupling {
    left: DiscreteMeasure,
    right: DiscreteMeasure,
    mass: Mat,
}

impl Coupling {
    /// Validate marginals to 1e-9 and clamp tiny negative entries
    /// (>= -1e-15) to zero.
    pub fn new(
        left: DiscreteMeasure,
        right: DiscreteMeasure,
        mut mass: Mat,
    ) -> Result<Self, OtError> {
        assert_eq!(mass.rows(), left.len());
        assert_eq!(mass.cols(), right.len());
        for i in 0..mass.rows() {
            for j in 0..mass.cols() {
                let v = mass.get(i, j);
                if v < -1e-15 {
                    return Err(OtError::NegativeMass(v));
                }
                if v < 0.0 {
                    mass.set(i, j, 0.0);
                }
            }
        }
        let rows = mass.row_sums();
        let cols = mass.col_sums();
        for (got, want) in rows.iter().zip(left.weights()) {
            if (got - want).abs() > 1e-9 {
                return Err(OtError::MarginalMismatch((got - want).abs()));
            }
        }
        for (got, want) in cols.iter().zip(right.weights()) {
            if (got - want).abs() > 1e-9 {
                return Err(OtError::MarginalMismatch((got - want).abs()));
            }
        }
        Ok(Coupling { left, right, mass })
    }

    pub fn left(&self) -> &DiscreteMeasure {
        &self.left
    }

    pub fn right(&self) -> &DiscreteMeasure {
        &self.right
    }

    pub fn mass(&self) -> &Mat {
        &self.mass
    }

    /// Integrate a cost over the coupling.
    pub fn integrate(&self, cost: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.mass.rows() {
            for j in 0..self.mass.cols() {
                let m = self.mass.get(i, j);
                if m > 0.0 {
                    acc += m * cost(self.left.atom(i), self.right.atom(j));
                }
            }
        }
        acc
    }

    /// Rows as `(i, j, mass)` triples, skipping zero entries.
    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.mass.rows() {
            for j in 0..self.mass.cols() {
                let m = self.mass.get(i, j);
                if m > 0.0 {
                    out.push((i, j, m));
                }
            }
        }
        out
    }
}

/// Comonotone (quantile) coupling of one-dimensional measures: sort both
/// supports and match mass in order. Exact optimizer of the maximal
/// covariance and of the quadratic Wasserstein problem in dimension one.
pub fn comonotone_coupling(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<Coupling, OtError> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(OtError::CrossDimension(p.dim(), q.dim()));
    }
    // Atoms are stored sorted, so index order is quantile order.
    let mut mass = Mat::zeros(p.len(), q.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut rp = p.weight(0);
    let mut rq = q.weight(0);
    loop {
        let f = rp.min(rq).max(0.0);
        mass.set(i, j, mass.get(i, j) + f);
        rp -= f;
        rq -= f;
        if rp <= rq {
            i += 1;
            if i == p.len() {
                break;
            }
            rp = p.weight(i);
        } else {
            j += 1;
            if j == q.len() {
                break;
            }
            rq = q.weight(j);
        }
    }
    Coupling::new(p.clone(), q.clone(), mass)
}

#[derive(Debug, Clone)]
pub struct McovResult {
    pub value: f64,
    pub coupling: Coupling,
}

/// Maximal covariance `sup over couplings of the integral of <y, z>`.
/// Dimension one uses the comonotone coupling in `O(n log n)`; higher
/// dimensions solve the transportation LP with cost `-<y, z>`.
pub fn mcov(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<McovResult, OtError> {
    if p.dim() != q.dim() {
        return Err(OtError::CrossDimension(p.dim(), q.dim()));
    }
    if p.dim() == 1 {
        let coupling = comonotone_coupling(p, q)?;
        let value = coupling.integrate(geom::dot);
        Ok(McovResult { value, coupling })
    } else {
        mcov_lp(p, q)
    }
}

/// Maximal covariance through the network simplex in any dimension. This
/// is the cross-check route for the comonotone fast path.
pub fn mcov_lp(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<McovResult, OtError> {
    if p.dim() != q.dim() {
        return Err(OtError::CrossDimension(p.dim(), q.dim()));
    }
    let mut cost = Mat::zeros(p.len(), q.len());
    for i in 0..p.len() {
        for j in 0..q.len() {
            cost.set(i, j, -geom::dot(p.atom(i), q.atom(j)));
        }
    }
    let t = network::solve_transport(p.weights(), q.weights(), &cost)?;
    let coupling = Coupling::new(p.clone(), q.clone(), t.plan)?;
    Ok(McovResult {
        value: -t.value,
        coupling,
    })
}

/// Barycentric transport map defined on the atoms of its source measure.
/// Discrete sources make Brenier maps non-unique and possibly
/// mass-splitting, so the honest representation is one image point per
/// source atom; compare pushforwards, not maps.
#[derive(Debug, Clone)]
pub struct SupportMap {
    source: DiscreteMeasure,
    images: Vec<Vec<f64>>,
}

impl SupportMap {
    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn images(&self) -> &[Vec<f64>] {
        &self.images
    }

    pub fn image_of(&self, atom_index: usize) -> &[f64] {
        &self.images[atom_index]
    }

    /// Evaluate at a support point (within 1e-9 sup-norm).
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>, OtError> {
        let (idx, dist) = self.source.nearest_atom(z);
        if dist > 1e-9 {
            return Err(OtError::PointNotInSupport);
        }
        Ok(self.images[idx].clone())
    }

    /// Image measure: source weights at the image points, merged.
    pub fn pushforward(&self) -> DiscreteMeasure {
        DiscreteMeasure::new(self.images.clone(), self.source.weights().to_vec())
            .expect("image of a probability measure is a probability measure")
    }
}

/// Brenier map from `q` to `p` in barycentric form, extracted from the
/// optimal covariance coupling: each source atom maps to the conditional
/// mean of its coupled targets.
pub fn brenier_map(q: &DiscreteMeasure, p: &DiscreteMeasure) -> Result<SupportMap, OtError> {
    let result = mcov(q, p)?;
    let mass = result.coupling.mass();
    let d = p.dim();
    let mut images = Vec::with_capacity(q.len());
    for k in 0..q.len() {
        let mut img = vec![0.0; d];
        for j in 0..p.len() {
            let m = mass.get(k, j);
            if m > 0.0 {
                for (acc, y) in img.iter_mut().zip(p.atom(j)) {
                    *acc += m * y;
                }
            }
        }
        images.push(geom::scale(&img, 1.0 / q.weight(k)));
    }
    Ok(SupportMap {
        source: q.clone(),
        images,
    })
}

/// Quadratic Wasserstein distance; zero exactly when the measures merge to
/// the same support and weights.
pub fn wasserstein2(p: &DiscreteMeasure, r: &DiscreteMeasure) -> Result<f64, OtError> {
    if p.dim() != r.dim() {
        return Err(OtError::CrossDimension(p.dim(), r.dim()));
    }
    let sq = if p.dim() == 1 {
        let coupling = comonotone_coupling(p, r)?;
        coupling.integrate(geom::dist_sq)
    } else {
        let mut cost = Mat::zeros(p.len(), r.len());
        for i in 0..p.len() {
            for j in 0..r.len() {
                cost.set(i, j, geom::dist_sq(p.atom(i), r.atom(j)));
            }
        }
        network::solve_transport(p.weights(), r.weights(), &cost)?.value
    };
    Ok(sq.max(0.0).sqrt())
}
