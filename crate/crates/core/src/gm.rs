//! Gaussian-mixture intensities.
//!
//! A [`GaussianMixture`] is a weighted sum of Gaussian densities and is used
//! to represent PHD intensities: its integral is the expected number of
//! targets. All operations are pure and return new values.
//!
//! The L2 geometry (inner products, norms, distances and the Cauchy-Schwarz
//! divergence) is evaluated in closed form using
//! `∫ N(x; a, A) N(x; b, B) dx = N(a; b, A + B)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{gaussian_density, is_positive_definite, is_symmetric, symmetrized};

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// One weighted Gaussian term `w · N(x; m, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianComponent {
    /// Validated constructor: `weight >= 0`, matching dimensions, symmetric
    /// positive-definite covariance.
    pub fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "component weight must be finite and nonnegative, got {weight}"
            )));
        }
        if !covariance.is_square() {
            return Err(Error::InvalidArgument("covariance must be square".into()));
        }
        check_dim(mean.len(), covariance.nrows())?;
        if !is_symmetric(&covariance, SYMMETRY_TOLERANCE) {
            return Err(Error::InvalidArgument("covariance is not symmetric".into()));
        }
        if !is_positive_definite(&covariance) {
            return Err(Error::InvalidArgument(
                "covariance is not positive definite".into(),
            ));
        }
        Ok(Self::from_parts(weight, mean, covariance))
    }

    /// Trusted constructor for values produced by internal arithmetic whose
    /// invariants hold by construction. Re-symmetrizes the covariance.
    pub(crate) fn from_parts(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self {
            weight,
            mean,
            covariance: symmetrized(covariance),
        }
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn with_weight(&self, weight: f64) -> Self {
        Self {
            weight,
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
        }
    }

    /// Unweighted density `N(x; m, P)`.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        gaussian_density(x, &self.mean, &self.covariance)
    }

    /// Bit pattern of mean and upper-triangular covariance, used to detect
    /// exactly repeated components.
    fn shape_key(&self) -> Vec<u64> {
        let d = self.dim();
        let mut key = Vec::with_capacity(d + d * (d + 1) / 2);
        key.extend(self.mean.iter().map(|v| v.to_bits()));
        for i in 0..d {
            for j in i..d {
                key.push(self.covariance[(i, j)].to_bits());
            }
        }
        key
    }
}

/// Which covariance the merge distance uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMetric {
    /// Each candidate's own covariance.
    #[default]
    Candidate,
    /// The covariance of the component doing the absorbing.
    Absorbing,
}

/// A Gaussian-mixture intensity over a `dim`-dimensional state space.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "mixture dimension must be positive");
        Self {
            dim,
            components: Vec::new(),
        }
    }

    pub fn from_components(dim: usize, components: Vec<GaussianComponent>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("mixture dimension must be positive".into()));
        }
        for c in &components {
            check_dim(dim, c.dim())?;
        }
        Ok(Self { dim, components })
    }

    pub(crate) fn from_components_unchecked(dim: usize, components: Vec<GaussianComponent>) -> Self {
        debug_assert!(components.iter().all(|c| c.dim() == dim));
        Self { dim, components }
    }

    pub fn push(&mut self, component: GaussianComponent) -> Result<()> {
        check_dim(self.dim, component.dim())?;
        self.components.push(component);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GaussianComponent> {
        self.components.iter()
    }

    pub fn into_components(self) -> Vec<GaussianComponent> {
        self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Sum of component weights, which is the integral of the intensity.
    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn evaluate_at(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight * gaussian_density(x, &c.mean, &c.covariance)?;
        }
        Ok(acc)
    }

    /// Multiplies every weight by `factor`.
    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be finite and nonnegative, got {factor}"
            )));
        }
        Ok(Self {
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| c.with_weight(c.weight * factor))
                .collect(),
        })
    }

    /// Concatenates the component lists of `mixtures`.
    pub fn sum<'a, I>(mixtures: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a GaussianMixture>,
    {
        let mut iter = mixtures.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("cannot sum an empty collection of mixtures".into()))?;
        let mut out = first.clone();
        for gm in iter {
            check_dim(out.dim, gm.dim)?;
            out.components.extend(gm.components.iter().cloned());
        }
        Ok(out)
    }

    /// Drops components with weight strictly below `threshold`.
    pub fn prune(&self, threshold: f64) -> Self {
        assert!(threshold >= 0.0, "prune threshold must be nonnegative");
        Self {
            dim: self.dim,
            components: self
                .components
                .iter()
                .filter(|c| c.weight >= threshold)
                .cloned()
                .collect(),
        }
    }

    /// Greedy moment-matching merge with the candidate-covariance metric.
    pub fn merge(&self, threshold: f64) -> Result<Self> {
        self.merge_with(threshold, MergeMetric::Candidate)
    }

    /// Greedy moment-matching merge.
    ///
    /// Repeatedly picks the heaviest remaining component (earliest on ties)
    /// and absorbs every remaining component whose squared Mahalanobis
    /// distance from it is at most `threshold`, measured as `metric` says.
    pub fn merge_with(&self, threshold: f64, metric: MergeMetric) -> Result<Self> {
        assert!(threshold >= 0.0, "merge threshold must be nonnegative");
        let not_pd = || Error::Numerical("merge: covariance is not positive definite".into());
        let factors = match metric {
            MergeMetric::Candidate => Some(
                self.components
                    .iter()
                    .map(|c| c.covariance.clone().cholesky().ok_or_else(not_pd))
                    .collect::<Result<Vec<_>>>()?,
            ),
            MergeMetric::Absorbing => None,
        };
        let mut remaining: Vec<usize> = (0..self.components.len()).collect();
        let mut merged = Vec::new();

        while !remaining.is_empty() {
            let mut best = 0;
            for (pos, &idx) in remaining.iter().enumerate() {
                if self.components[idx].weight > self.components[remaining[best]].weight {
                    best = pos;
                }
            }
            let head = &self.components[remaining[best]];
            let head_chol = match &factors {
                Some(_) => None,
                None => Some(head.covariance.clone().cholesky().ok_or_else(not_pd)?),
            };

            let mut cluster = Vec::new();
            let mut rest = Vec::with_capacity(remaining.len());
            for &idx in &remaining {
                let diff = &self.components[idx].mean - &head.mean;
                let chol = match (&factors, &head_chol) {
                    (Some(f), _) => &f[idx],
                    (None, Some(h)) => h,
                    (None, None) => unreachable!(),
                };
                if diff.dot(&chol.solve(&diff)) <= threshold {
                    cluster.push(idx);
                } else {
                    rest.push(idx);
                }
            }
            merged.push(self.moment_match(&cluster));
            remaining = rest;
        }

        Ok(Self {
            dim: self.dim,
            components: merged,
        })
    }

    fn moment_match(&self, cluster: &[usize]) -> GaussianComponent {
        if cluster.len() == 1 {
            return self.components[cluster[0]].clone();
        }
        let total: f64 = cluster.iter().map(|&i| self.components[i].weight).sum();
        // all-zero clusters fall back to an unweighted average
        let coef = |i: usize| {
            if total > 0.0 {
                self.components[i].weight / total
            } else {
                1.0 / cluster.len() as f64
            }
        };
        let mut mean = DVector::zeros(self.dim);
        for &i in cluster {
            mean += &self.components[i].mean * coef(i);
        }
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for &i in cluster {
            let c = &self.components[i];
            let d = &mean - &c.mean;
            cov += (&c.covariance + &d * d.transpose()) * coef(i);
        }
        GaussianComponent::from_parts(total, mean, cov)
    }

    /// Keeps the `max_components` heaviest components (earliest on ties),
    /// preserving their original relative order.
    pub fn cap(&self, max_components: usize) -> Self {
        assert!(max_components >= 1, "component cap must be at least 1");
        if self.components.len() <= max_components {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..self.components.len()).collect();
        order.sort_by(|&a, &b| {
            self.components[b]
                .weight
                .total_cmp(&self.components[a].weight)
                .then(a.cmp(&b))
        });
        let mut keep: Vec<usize> = order.into_iter().take(max_components).collect();
        keep.sort_unstable();
        Self {
            dim: self.dim,
            components: keep.into_iter().map(|i| self.components[i].clone()).collect(),
        }
    }

    /// Lossless reduction: components with bit-identical mean and covariance
    /// are combined by adding their weights. The result is the same function.
    pub fn coalesce(&self) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(self.components.len());
        let mut out: Vec<GaussianComponent> = Vec::with_capacity(self.components.len());
        for c in &self.components {
            match index.get(&c.shape_key()) {
                Some(&slot) => out[slot].weight += c.weight,
                None => {
                    index.insert(c.shape_key(), out.len());
                    out.push(c.clone());
                }
            }
        }
        Self {
            dim: self.dim,
            components: out,
        }
    }
}

/// `N(m_a; m_b, P_a + P_b)`, the integral of the product of two unit-weight
/// Gaussians.
fn product_integral(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    let sum = &a.covariance + &b.covariance;
    gaussian_density(&a.mean, &b.mean, &sum)
        .map_err(|_| Error::Numerical("covariance sum is not positive definite".into()))
}

/// `⟨f, g⟩ = ∫ f(x) g(x) dx`.
pub fn l2_inner_product(f: &GaussianMixture, g: &GaussianMixture) -> Result<f64> {
    check_dim(f.dim, g.dim)?;
    let mut acc = 0.0;
    for a in &f.components {
        for b in &g.components {
            acc += a.weight * b.weight * product_integral(a, b)?;
        }
    }
    Ok(acc)
}

pub fn l2_norm(f: &GaussianMixture) -> Result<f64> {
    Ok(l2_inner_product(f, f)?.max(0.0).sqrt())
}

/// `‖f − g‖₂`.
///
/// Evaluated as the quadratic form of the signed mixture `f − g` after
/// combining bit-identical components, which equals
/// `√(⟨f,f⟩ − 2⟨f,g⟩ + ⟨g,g⟩)` but keeps shared components from cancelling
/// catastrophically. Negative round-off is clamped to zero.
pub fn l2_distance(f: &GaussianMixture, g: &GaussianMixture) -> Result<f64> {
    check_dim(f.dim, g.dim)?;
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut terms: Vec<(f64, &GaussianComponent)> = Vec::new();
    let signed = f
        .components
        .iter()
        .map(|c| (c.weight, c))
        .chain(g.components.iter().map(|c| (-c.weight, c)));
    for (w, c) in signed {
        match index.get(&c.shape_key()) {
            Some(&slot) => terms[slot].0 += w,
            None => {
                index.insert(c.shape_key(), terms.len());
                terms.push((w, c));
            }
        }
    }
    terms.retain(|(w, _)| *w != 0.0);

    let mut acc = 0.0;
    for (i, (wa, a)) in terms.iter().enumerate() {
        acc += wa * wa * product_integral(a, a)?;
        for (wb, b) in &terms[i + 1..] {
            acc += 2.0 * wa * wb * product_integral(a, b)?;
        }
    }
    Ok(acc.max(0.0).sqrt())
}

/// Cauchy-Schwarz divergence `−ln(⟨f,g⟩ / (‖f‖·‖g‖))`.
pub fn cs_divergence(f: &GaussianMixture, g: &GaussianMixture) -> Result<f64> {
    let nf = l2_norm(f)?;
    let ng = l2_norm(g)?;
    if nf <= 0.0 || ng <= 0.0 {
        return Err(Error::InvalidArgument(
            "Cauchy-Schwarz divergence needs mixtures with positive L2 norm".into(),
        ));
    }
    let cross = l2_inner_product(f, g)?;
    Ok((-(cross / (nf * ng)).ln()).max(0.0))
}

/// Convenience for tests and scenario construction: a component with a
/// diagonal covariance.
pub fn diagonal_component(weight: f64, mean: &[f64], variances: &[f64]) -> Result<GaussianComponent> {
    GaussianComponent::new(
        weight,
        DVector::from_column_slice(mean),
        DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
    )
}
