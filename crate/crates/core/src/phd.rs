//! Single-sensor GM-PHD recursion: prediction with survival, spawning and
//! birth; measurement update with missed detections and clutter; target
//! extraction.
//!
//! State-dependent survival and detection probabilities are evaluated at the
//! component mean (the predicted mean for detection), which keeps every
//! intensity a Gaussian mixture.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gm::{GaussianComponent, GaussianMixture, MergeMetric};
use crate::linalg::{is_positive_definite, is_positive_semidefinite, is_symmetric, symmetrized};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Axis-aligned rectangle over the first two state (or measurement)
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let r = Self { x_min, x_max, y_min, y_max };
        r.validate()?;
        Ok(r)
    }

    /// Square of the given side length centred on the origin.
    pub fn centered_square(side: f64) -> Self {
        let h = side / 2.0;
        Self { x_min: -h, x_max: h, y_min: -h, y_max: h }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min && self.y_max > self.y_min) || !self.area().is_finite() {
            return Err(Error::InvalidArgument("region must have positive finite area".into()));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Uses the first two entries of `v` as the position.
    pub fn contains_vector(&self, v: &DVector<f64>) -> bool {
        v.len() >= 2 && self.contains(v[0], v[1])
    }
}

/// A probability that depends on the target state (survival or detection).
#[derive(Clone)]
pub enum StateProbability {
    Constant(f64),
    /// `inside` within the region, `outside` elsewhere.
    Region { region: Region, inside: f64, outside: f64 },
    Custom(Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>),
}

impl StateProbability {
    pub fn at(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Constant(p) => *p,
            Self::Region { region, inside, outside } => {
                if region.contains_vector(x) {
                    *inside
                } else {
                    *outside
                }
            }
            Self::Custom(f) => f(x).clamp(0.0, 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        match self {
            Self::Constant(p) if !ok(*p) => Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]"))),
            Self::Region { inside, outside, region } => {
                region.validate()?;
                if ok(*inside) && ok(*outside) {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("region probabilities must lie in [0, 1]".into()))
                }
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Debug for StateProbability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(p) => f.debug_tuple("Constant").field(p).finish(),
            Self::Region { region, inside, outside } => f
                .debug_struct("Region")
                .field("region", region)
                .field("inside", inside)
                .field("outside", outside)
                .finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Clutter intensity `κ(z)` over the measurement space.
#[derive(Clone)]
pub enum ClutterIntensity {
    Constant(f64),
    /// Poisson clutter uniform over `region` with `rate` expected returns per
    /// unit area: `κ(z) = rate` inside the region and zero outside.
    Uniform { rate: f64, region: Region },
    Custom(Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>),
}

impl ClutterIntensity {
    pub fn at(&self, z: &DVector<f64>) -> f64 {
        match self {
            Self::Constant(k) => *k,
            Self::Uniform { rate, region } => {
                if region.contains_vector(z) {
                    *rate
                } else {
                    0.0
                }
            }
            Self::Custom(f) => f(z).max(0.0),
        }
    }

    /// Expected clutter returns per scan, when known.
    pub fn expected_count(&self) -> Option<f64> {
        match self {
            Self::Uniform { rate, region } => Some(rate * region.area()),
            _ => None,
        }
    }
}

impl fmt::Debug for ClutterIntensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(k) => f.debug_tuple("Constant").field(k).finish(),
            Self::Uniform { rate, region } => f
                .debug_struct("Uniform")
                .field("rate", rate)
                .field("region", region)
                .finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Linear-Gaussian single-target dynamics with state-dependent survival.
#[derive(Debug, Clone)]
pub struct MotionModel {
    transition: DMatrix<f64>,
    process_noise: DMatrix<f64>,
    survival: StateProbability,
}

impl MotionModel {
    pub fn new(transition: DMatrix<f64>, process_noise: DMatrix<f64>, survival: StateProbability) -> Result<Self> {
        if !transition.is_square() || !process_noise.is_square() {
            return Err(Error::InvalidArgument("transition and process noise must be square".into()));
        }
        check_dim(transition.nrows(), process_noise.nrows())?;
        if !is_symmetric(&process_noise, 1e-12) || !is_positive_semidefinite(&process_noise) {
            return Err(Error::InvalidArgument(
                "process noise must be symmetric positive semidefinite".into(),
            ));
        }
        survival.validate()?;
        Ok(Self {
            transition,
            process_noise: symmetrized(process_noise),
            survival,
        })
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.process_noise
    }

    pub fn survival(&self) -> &StateProbability {
        &self.survival
    }
}

/// Birth intensity `γ`, appended to every prediction.
#[derive(Debug, Clone)]
pub struct BirthModel {
    pub intensity: GaussianMixture,
}

impl BirthModel {
    pub fn new(intensity: GaussianMixture) -> Self {
        Self { intensity }
    }

    pub fn none(dim: usize) -> Self {
        Self {
            intensity: GaussianMixture::empty(dim),
        }
    }
}

/// One spawn term: a parent at `x` spawns intensity
/// `weight · N(·; transition·x + offset, covariance)`.
#[derive(Debug, Clone)]
pub struct SpawnTerm {
    weight: f64,
    transition: DMatrix<f64>,
    offset: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl SpawnTerm {
    pub fn new(weight: f64, transition: DMatrix<f64>, offset: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidArgument("spawn weight must be nonnegative".into()));
        }
        if !transition.is_square() || !covariance.is_square() {
            return Err(Error::InvalidArgument("spawn matrices must be square".into()));
        }
        check_dim(transition.nrows(), offset.len())?;
        check_dim(transition.nrows(), covariance.nrows())?;
        if !is_symmetric(&covariance, 1e-12) || !is_positive_semidefinite(&covariance) {
            return Err(Error::InvalidArgument(
                "spawn covariance must be symmetric positive semidefinite".into(),
            ));
        }
        Ok(Self {
            weight,
            transition,
            offset,
            covariance: symmetrized(covariance),
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

#[derive(Debug, Clone, Default)]
pub struct SpawnModel {
    pub terms: Vec<SpawnTerm>,
}

impl SpawnModel {
    pub fn none() -> Self {
        Self { terms: Vec::new() }
    }
}

/// Linear-Gaussian sensor with state-dependent detection and clutter.
#[derive(Debug, Clone)]
pub struct SensorModel {
    observation: DMatrix<f64>,
    noise: DMatrix<f64>,
    detection: StateProbability,
    clutter: ClutterIntensity,
}

impl SensorModel {
    pub fn new(
        observation: DMatrix<f64>,
        noise: DMatrix<f64>,
        detection: StateProbability,
        clutter: ClutterIntensity,
    ) -> Result<Self> {
        if !noise.is_square() {
            return Err(Error::InvalidArgument("measurement noise must be square".into()));
        }
        check_dim(observation.nrows(), noise.nrows())?;
        if !is_symmetric(&noise, 1e-12) || !is_positive_definite(&noise) {
            return Err(Error::InvalidArgument(
                "measurement noise must be symmetric positive definite".into(),
            ));
        }
        detection.validate()?;
        Ok(Self {
            observation,
            noise: symmetrized(noise),
            detection,
            clutter,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.observation.ncols()
    }

    pub fn measurement_dim(&self) -> usize {
        self.observation.nrows()
    }

    pub fn observation(&self) -> &DMatrix<f64> {
        &self.observation
    }

    pub fn noise(&self) -> &DMatrix<f64> {
        &self.noise
    }

    pub fn detection(&self) -> &StateProbability {
        &self.detection
    }

    pub fn clutter(&self) -> &ClutterIntensity {
        &self.clutter
    }
}

/// Mixture-management and extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhdConfig {
    pub prune_threshold: f64,
    pub merge_threshold: f64,
    pub merge_metric: MergeMetric,
    pub max_components: usize,
    pub extraction_threshold: f64,
    /// Use the Joseph form for the covariance update.
    pub joseph_form: bool,
}

impl Default for PhdConfig {
    fn default() -> Self {
        Self {
            prune_threshold: 1e-5,
            merge_threshold: 15.0,
            merge_metric: MergeMetric::Candidate,
            max_components: 50,
            extraction_threshold: 0.5,
            joseph_form: false,
        }
    }
}

impl PhdConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("prune_threshold", self.prune_threshold),
            ("merge_threshold", self.merge_threshold),
            ("extraction_threshold", self.extraction_threshold),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.max_components == 0 {
            return Err(Error::Config("max_components must be at least 1".into()));
        }
        Ok(())
    }

    /// Prune, then merge, then cap.
    pub fn reduce(&self, gm: &GaussianMixture) -> Result<GaussianMixture> {
        Ok(gm
            .prune(self.prune_threshold)
            .merge_with(self.merge_threshold, self.merge_metric)?
            .cap(self.max_components))
    }
}

/// Prediction: survivors, spawns, then the birth intensity.
pub fn predict(
    posterior: &GaussianMixture,
    motion: &MotionModel,
    birth: &BirthModel,
    spawn: &SpawnModel,
) -> Result<GaussianMixture> {
    let d = posterior.dim();
    check_dim(d, motion.dim())?;
    check_dim(d, birth.intensity.dim())?;
    for t in &spawn.terms {
        check_dim(d, t.transition.nrows())?;
    }

    let f = &motion.transition;
    let ft = f.transpose();
    let mut out = Vec::with_capacity(posterior.len() * (1 + spawn.terms.len()) + birth.intensity.len());

    for c in posterior.iter() {
        let ps = motion.survival.at(c.mean());
        let mean = f * c.mean();
        let cov = &motion.process_noise + f * c.covariance() * &ft;
        out.push(GaussianComponent::from_parts(ps * c.weight(), mean, cov));
    }
    for term in &spawn.terms {
        let ft = term.transition.transpose();
        for c in posterior.iter() {
            let mean = &term.transition * c.mean() + &term.offset;
            let cov = &term.covariance + &term.transition * c.covariance() * &ft;
            out.push(GaussianComponent::from_parts(c.weight() * term.weight, mean, cov));
        }
    }
    out.extend(birth.intensity.iter().cloned());
    Ok(GaussianMixture::from_components_unchecked(d, out))
}

/// Per-component quantities reused across all measurements.
struct UpdateTerm {
    detect_weight: f64,
    predicted_measurement: DVector<f64>,
    innovation_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    log_norm: f64,
    gain: DMatrix<f64>,
    covariance: DMatrix<f64>,
}

/// Measurement update with the simple covariance form.
pub fn update(prior: &GaussianMixture, sensor: &SensorModel, measurements: &[DVector<f64>]) -> Result<GaussianMixture> {
    update_with(prior, sensor, measurements, false)
}

/// Measurement update; `joseph` selects the Joseph covariance form.
pub fn update_with(
    prior: &GaussianMixture,
    sensor: &SensorModel,
    measurements: &[DVector<f64>],
    joseph: bool,
) -> Result<GaussianMixture> {
    let d = prior.dim();
    check_dim(d, sensor.state_dim())?;
    let dz = sensor.measurement_dim();
    for z in measurements {
        check_dim(dz, z.len())?;
    }

    let h = &sensor.observation;
    let ht = h.transpose();
    let eye = DMatrix::<f64>::identity(d, d);

    let mut out = Vec::new();
    let mut terms = Vec::new();
    for c in prior.iter() {
        let pd = sensor.detection.at(c.mean());
        if pd < 1.0 {
            out.push(c.with_weight((1.0 - pd) * c.weight()));
        }
        if pd <= 0.0 || measurements.is_empty() {
            continue;
        }
        let p = c.covariance();
        let s = symmetrized(h * p * &ht + &sensor.noise);
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?;
        // K = P Hᵀ S⁻¹  ⇔  S Kᵀ = H P
        let gain = chol.solve(&(h * p)).transpose();
        let ikh = &eye - &gain * h;
        let covariance = if joseph {
            &ikh * p * ikh.transpose() + &gain * &sensor.noise * gain.transpose()
        } else {
            &ikh * p
        };
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        terms.push((
            c,
            UpdateTerm {
                detect_weight: pd * c.weight(),
                predicted_measurement: h * c.mean(),
                innovation_chol: chol,
                log_norm: -0.5 * (log_det + dz as f64 * LN_2PI),
                gain,
                covariance: symmetrized(covariance),
            },
        ));
    }

    let mut likelihood = vec![0.0; terms.len()];
    for z in measurements {
        let mut total = sensor.clutter.at(z);
        for ((_, t), q) in terms.iter().zip(likelihood.iter_mut()) {
            let innov = z - &t.predicted_measurement;
            let maha = innov.dot(&t.innovation_chol.solve(&innov));
            *q = t.detect_weight * (t.log_norm - 0.5 * maha).exp();
            total += *q;
        }
        for ((c, t), q) in terms.iter().zip(likelihood.iter()) {
            let weight = if total > 0.0 { q / total } else { 0.0 };
            let innov = z - &t.predicted_measurement;
            let mean = c.mean() + &t.gain * innov;
            out.push(GaussianComponent::from_parts(weight, mean, t.covariance.clone()));
        }
    }
    Ok(GaussianMixture::from_components_unchecked(d, out))
}

/// Means of components whose weight reaches the extraction threshold,
/// heaviest first.
pub fn extract_targets(posterior: &GaussianMixture, config: &PhdConfig) -> Vec<DVector<f64>> {
    let mut picked: Vec<&GaussianComponent> = posterior
        .iter()
        .filter(|c| c.weight() >= config.extraction_threshold)
        .collect();
    picked.sort_by(|a, b| b.weight().total_cmp(&a.weight()));
    picked.into_iter().map(|c| c.mean().clone()).collect()
}

/// Predict, update, then prune/merge/cap.
#[allow(clippy::too_many_arguments)]
pub fn filter_step(
    posterior: &GaussianMixture,
    motion: &MotionModel,
    birth: &BirthModel,
    spawn: &SpawnModel,
    sensor: &SensorModel,
    measurements: &[DVector<f64>],
    config: &PhdConfig,
) -> Result<GaussianMixture> {
    let prior = predict(posterior, motion, birth, spawn)?;
    let post = update_with(&prior, sensor, measurements, config.joseph_form)?;
    config.reduce(&post)
}
