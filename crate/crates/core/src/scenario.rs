//! Ground-truth trajectories and synthetic per-sensor measurements.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusWeights, SensorNetwork};
use crate::error::{Error, Result};
use crate::gm::{diagonal_component, GaussianMixture};
use crate::linalg::psd_factor;
use crate::phd::{BirthModel, ClutterIntensity, MotionModel, Region, SensorModel, SpawnModel, SpawnTerm, StateProbability};
use crate::seed::SeedTree;

pub const STATE_DIM: usize = 4;
pub const MEASUREMENT_DIM: usize = 2;

/// A target's initial state `[x, y, vx, vy]` and its lifetime (inclusive,
/// timesteps start at 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub initial_state: [f64; 4],
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub region: Region,
    pub step_time: f64,
    /// Acceleration noise intensity multiplying the constant-velocity block.
    pub process_noise_scale: f64,
    /// Drive the ground truth with the same process noise as the filter.
    pub truth_process_noise: bool,
    pub measurement_noise_variance: f64,
    pub detection_probability: f64,
    pub survival_probability: f64,
    /// Clutter returns per square metre per scan.
    pub clutter_rate: f64,
    pub horizon: usize,
    pub sensor_count: usize,
    pub birth_weight: f64,
    pub birth_variances: [f64; 4],
    pub spawn_weight: f64,
    pub spawn_variances: [f64; 4],
    pub targets: Vec<TargetSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::reference()
    }
}

#[rustfmt::skip]
const REFERENCE_TARGETS: [([f64; 4], usize, usize); 10] = [
    ([-120.0, -150.0,  3.9,  1.6],  1, 34),
    ([ -10.0,    0.0,  1.9,  2.1],  1, 40),
    ([ 160.0,  120.0, -1.9,  1.1],  1, 40),
    ([ -20.0, -140.0,  2.7,  1.2],  1, 37),
    ([ -70.0, -100.0,  0.1,  3.6],  1, 40),
    ([ -70.0,  150.0, -2.4, -4.3],  1, 19),
    ([  60.0,   20.0,  1.8, -1.6], 10, 40),
    ([ 110.0, -110.0, -1.8,  3.6], 20, 40),
    ([ -30.0,   40.0,  2.0,  0.6], 16, 40),
    ([ -80.0,   70.0, -2.3,  1.1], 23, 40),
];

impl ScenarioConfig {
    /// Ten targets in a 400 m square watched by six sensors over 40 scans.
    pub fn reference() -> Self {
        Self {
            region: Region::centered_square(400.0),
            step_time: 1.0,
            process_noise_scale: 9.0,
            truth_process_noise: false,
            measurement_noise_variance: 25.0,
            detection_probability: 0.98,
            survival_probability: 0.99,
            clutter_rate: 3.125e-5,
            horizon: 40,
            sensor_count: 6,
            birth_weight: 0.2,
            birth_variances: [100.0, 100.0, 25.0, 25.0],
            spawn_weight: 0.1,
            spawn_variances: [100.0, 100.0, 400.0, 400.0],
            targets: REFERENCE_TARGETS
                .iter()
                .map(|&(initial_state, start, end)| TargetSpec { initial_state, start, end })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate().map_err(|e| Error::Config(e.to_string()))?;
        let positive = [
            ("step_time", self.step_time),
            ("measurement_noise_variance", self.measurement_noise_variance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let nonneg = [
            ("process_noise_scale", self.process_noise_scale),
            ("clutter_rate", self.clutter_rate),
            ("birth_weight", self.birth_weight),
            ("spawn_weight", self.spawn_weight),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be nonnegative")));
            }
        }
        for (name, p) in [("detection_probability", self.detection_probability), ("survival_probability", self.survival_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.birth_variances.iter().chain(&self.spawn_variances).any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Config("birth and spawn variances must be positive".into()));
        }
        if self.horizon == 0 || self.sensor_count == 0 {
            return Err(Error::Config("horizon and sensor_count must be positive".into()));
        }
        for (id, t) in self.targets.iter().enumerate() {
            if t.start == 0 || t.start >= t.end {
                return Err(Error::Config(format!("target {} needs 1 <= start < end", id + 1)));
            }
            if t.initial_state.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("target {} has a non-finite state", id + 1)));
            }
        }
        Ok(())
    }

    pub fn transition(&self) -> DMatrix<f64> {
        let mut f = DMatrix::identity(4, 4);
        f[(0, 2)] = self.step_time;
        f[(1, 3)] = self.step_time;
        f
    }

    pub fn process_noise(&self) -> DMatrix<f64> {
        let h = self.step_time;
        let (a, b, c) = (h.powi(4) / 4.0, h.powi(3) / 2.0, h * h);
        let mut q = DMatrix::zeros(4, 4);
        for i in 0..2 {
            q[(i, i)] = a;
            q[(i, i + 2)] = b;
            q[(i + 2, i)] = b;
            q[(i + 2, i + 2)] = c;
        }
        q * self.process_noise_scale
    }

    pub fn observation(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(2, 4);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        h
    }

    pub fn measurement_noise(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.measurement_noise_variance
    }

    pub fn expected_clutter(&self) -> f64 {
        self.clutter_rate * self.region.area()
    }

    /// Filter models matching this scenario.
    pub fn models(&self) -> Result<ScenarioModels> {
        self.validate()?;
        let motion = MotionModel::new(
            self.transition(),
            self.process_noise(),
            StateProbability::Region {
                region: self.region,
                inside: self.survival_probability,
                outside: 0.0,
            },
        )?;
        let birth_parts = self
            .targets
            .iter()
            .map(|t| {
                let s = t.initial_state;
                diagonal_component(self.birth_weight, &[s[0], s[1], 0.0, 0.0], &self.birth_variances)
            })
            .collect::<Result<Vec<_>>>()?;
        let birth = BirthModel::new(GaussianMixture::from_components(STATE_DIM, birth_parts)?);
        let spawn = SpawnModel {
            terms: vec![SpawnTerm::new(
                self.spawn_weight,
                DMatrix::identity(4, 4),
                DVector::zeros(4),
                DMatrix::from_diagonal(&DVector::from_column_slice(&self.spawn_variances)),
            )?],
        };
        let sensor = SensorModel::new(
            self.observation(),
            self.measurement_noise(),
            StateProbability::Region {
                region: self.region,
                inside: self.detection_probability,
                outside: 0.0,
            },
            ClutterIntensity::Uniform {
                rate: self.clutter_rate,
                region: self.region,
            },
        )?;
        Ok(ScenarioModels { motion, birth, spawn, sensor })
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioModels {
    pub motion: MotionModel,
    pub birth: BirthModel,
    pub spawn: SpawnModel,
    pub sensor: SensorModel,
}

/// The scenario configuration together with its six-sensor network.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub models: ScenarioModels,
    pub network: SensorNetwork,
    pub weights: ConsensusWeights,
}

impl Scenario {
    pub fn reference() -> Self {
        Self::with_config(ScenarioConfig::reference()).expect("reference scenario is valid")
    }

    /// Uses the reference network, which requires six sensors.
    pub fn with_config(config: ScenarioConfig) -> Result<Self> {
        let network = SensorNetwork::reference();
        if config.sensor_count != network.vertex_count() {
            return Err(Error::Config(format!(
                "the built-in network has {} sensors, configuration asks for {}",
                network.vertex_count(),
                config.sensor_count
            )));
        }
        Ok(Self {
            models: config.models()?,
            config,
            network,
            weights: ConsensusWeights::reference(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthFrame {
    pub timestep: usize,
    /// `(target id, state)`, ids are zero-based indices into the target list.
    pub targets: Vec<(usize, DVector<f64>)>,
}

impl TruthFrame {
    pub fn ids(&self) -> Vec<usize> {
        self.targets.iter().map(|(id, _)| *id).collect()
    }

    pub fn positions(&self) -> Vec<DVector<f64>> {
        self.targets.iter().map(|(_, x)| x.rows(0, 2).into_owned()).collect()
    }

    pub fn cardinality(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub frames: Vec<TruthFrame>,
}

impl GroundTruth {
    pub fn cardinalities(&self) -> Vec<usize> {
        self.frames.iter().map(TruthFrame::cardinality).collect()
    }
}

/// Advances `prev` by one timestep: live targets move, targets past their
/// end or outside the region disappear, scheduled targets appear.
pub fn step_ground_truth<R: Rng + ?Sized>(prev: &TruthFrame, config: &ScenarioConfig, rng: &mut R) -> TruthFrame {
    let k = prev.timestep + 1;
    let f = config.transition();
    let noise = config.truth_process_noise.then(|| psd_factor(&config.process_noise()));
    let mut targets = Vec::with_capacity(prev.targets.len() + 1);
    for (id, x) in &prev.targets {
        let mut next = &f * x;
        if let Some(l) = &noise {
            let n = DVector::from_iterator(STATE_DIM, (0..STATE_DIM).map(|_| rng.sample::<f64, _>(StandardNormal)));
            next += l * n;
        }
        if k <= config.targets[*id].end && config.region.contains_vector(&next) {
            targets.push((*id, next));
        }
    }
    for (id, t) in config.targets.iter().enumerate() {
        if t.start == k {
            targets.push((id, DVector::from_column_slice(&t.initial_state)));
        }
    }
    targets.sort_by_key(|(id, _)| *id);
    TruthFrame { timestep: k, targets }
}

/// Frames for timesteps `1..=horizon`; step `k` draws from `seeds.at("truth", k)`.
pub fn generate_ground_truth(config: &ScenarioConfig, seeds: &SeedTree) -> GroundTruth {
    let mut frame = TruthFrame { timestep: 0, targets: Vec::new() };
    let mut frames = Vec::with_capacity(config.horizon);
    for k in 1..=config.horizon {
        let mut rng = seeds.at("truth", k as u64).rng();
        frame = step_ground_truth(&frame, config, &mut rng);
        frames.push(frame.clone());
    }
    GroundTruth { frames }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub timestep: usize,
    pub per_sensor: Vec<Vec<DVector<f64>>>,
}

/// Detections and clutter for every sensor at one timestep. Each sensor has
/// separate substreams for detection, noise, clutter count, clutter position
/// and ordering, under `seeds.at("sensor", i)`.
pub fn generate_measurements(truth: &TruthFrame, config: &ScenarioConfig, seeds: &SeedTree) -> MeasurementFrame {
    let r_factor = psd_factor(&config.measurement_noise());
    let h = config.observation();
    let clutter = Poisson::new(config.expected_clutter()).ok();
    let region = config.region;
    let per_sensor = (0..config.sensor_count)
        .map(|i| {
            let s = seeds.at("sensor", i as u64);
            let (mut det, mut noise, mut count, mut place, mut order) = (
                s.child("detection").rng(),
                s.child("noise").rng(),
                s.child("clutter-count").rng(),
                s.child("clutter-position").rng(),
                s.child("order").rng(),
            );
            let mut zs = Vec::new();
            for (_, x) in &truth.targets {
                let detected = region.contains_vector(x) && det.random::<f64>() < config.detection_probability;
                if detected {
                    let n = DVector::from_iterator(MEASUREMENT_DIM, (0..MEASUREMENT_DIM).map(|_| noise.sample::<f64, _>(StandardNormal)));
                    zs.push(&h * x + &r_factor * n);
                }
            }
            let n_clutter = clutter.as_ref().map_or(0, |p| p.sample(&mut count) as usize);
            for _ in 0..n_clutter {
                let x = place.random_range(region.x_min..region.x_max);
                let y = place.random_range(region.y_min..region.y_max);
                zs.push(DVector::from_vec(vec![x, y]));
            }
            zs.shuffle(&mut order);
            zs
        })
        .collect();
    MeasurementFrame { timestep: truth.timestep, per_sensor }
}

/// Measurement frames for every truth frame; timestep `k` uses
/// `seeds.at("measurements", k)`.
pub fn generate_measurement_stream(truth: &GroundTruth, config: &ScenarioConfig, seeds: &SeedTree) -> Vec<MeasurementFrame> {
    truth
        .frames
        .iter()
        .map(|f| generate_measurements(f, config, &seeds.at("measurements", f.timestep as u64)))
        .collect()
}

// Line-oriented text formats. Blank lines and lines starting with `#` are
// ignored; fields are whitespace separated.

fn write_vector<W: Write>(out: &mut W, head: [usize; 2], v: &DVector<f64>) -> Result<()> {
    write!(out, "{} {}", head[0], head[1])?;
    for x in v.iter() {
        write!(out, " {x}")?;
    }
    writeln!(out)?;
    Ok(())
}

/// `timestep target x1 .. x4`, target ids one-based.
pub fn write_truth<W: Write>(out: &mut W, truth: &GroundTruth) -> Result<()> {
    writeln!(out, "# timestep target x y vx vy")?;
    for f in &truth.frames {
        for (id, x) in &f.targets {
            write_vector(out, [f.timestep, id + 1], x)?;
        }
    }
    Ok(())
}

/// `timestep sensor z1 z2`, sensor ids one-based.
pub fn write_measurements<W: Write>(out: &mut W, frames: &[MeasurementFrame]) -> Result<()> {
    writeln!(out, "# timestep sensor z1 z2")?;
    for f in frames {
        for (i, zs) in f.per_sensor.iter().enumerate() {
            for z in zs {
                write_vector(out, [f.timestep, i + 1], z)?;
            }
        }
    }
    Ok(())
}

/// `timestep sensor x1 .. xn` for extracted estimates, one line per estimate.
pub fn write_estimates<W: Write>(out: &mut W, timestep: usize, per_sensor: &[Vec<DVector<f64>>]) -> Result<()> {
    for (i, xs) in per_sensor.iter().enumerate() {
        for x in xs {
            write_vector(out, [timestep, i + 1], x)?;
        }
    }
    Ok(())
}

/// One data row: two one-based integer keys and `width` reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub line: usize,
    pub timestep: usize,
    pub key: usize,
    pub values: DVector<f64>,
}

pub fn read_records<R: BufRead>(input: R, width: usize) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != width + 2 {
            return Err(err(format!("expected {} fields, found {}", width + 2, fields.len())));
        }
        let int = |s: &str, what: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(err(format!("{what} must be a positive integer, got {s:?}"))),
            }
        };
        let timestep = int(fields[0], "timestep")?;
        let key = int(fields[1], "id")?;
        let values = fields[2..]
            .iter()
            .map(|s| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("invalid number {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Record { line: line_no, timestep, key, values: DVector::from_vec(values) });
    }
    Ok(out)
}

pub fn read_truth<R: BufRead>(input: R, horizon: usize) -> Result<GroundTruth> {
    let mut frames: Vec<TruthFrame> = (1..=horizon).map(|k| TruthFrame { timestep: k, targets: Vec::new() }).collect();
    for r in read_records(input, STATE_DIM)? {
        if r.timestep > horizon {
            return Err(Error::Parse { line: r.line, message: format!("timestep {} beyond horizon {horizon}", r.timestep) });
        }
        frames[r.timestep - 1].targets.push((r.key - 1, r.values));
    }
    for f in &mut frames {
        f.targets.sort_by_key(|(id, _)| *id);
    }
    Ok(GroundTruth { frames })
}

pub fn read_measurements<R: BufRead>(input: R, horizon: usize, sensor_count: usize) -> Result<Vec<MeasurementFrame>> {
    let mut frames: Vec<MeasurementFrame> = (1..=horizon)
        .map(|k| MeasurementFrame { timestep: k, per_sensor: vec![Vec::new(); sensor_count] })
        .collect();
    for r in read_records(input, MEASUREMENT_DIM)? {
        if r.timestep > horizon || r.key > sensor_count {
            return Err(Error::Parse {
                line: r.line,
                message: format!("timestep {} / sensor {} out of range", r.timestep, r.key),
            });
        }
        frames[r.timestep - 1].per_sensor[r.key - 1].push(r.values);
    }
    Ok(frames)
}
