//! Monte Carlo campaigns: simulate, filter, fuse, score, and write CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{BandwidthPolicy, DrawMode, SamplingConfig, TransmissionCost};
use crate::consensus::{run_consensus, ConsensusOptions, TransmissionRecord};
use crate::error::{Error, Result};
use crate::gm::GaussianMixture;
use crate::metrics::{ospa, time_averaged, OspaConfig};
use crate::phd::{extract_targets, filter_step, PhdConfig};
use crate::scenario::{
    generate_ground_truth, generate_measurement_stream, MeasurementFrame, Scenario, ScenarioConfig, STATE_DIM,
};
use crate::seed::SeedTree;

pub const SCHEMA_VERSION: u32 = 1;
pub const RUN_CSV_HEADER: &str = "run,timestep,sensor,ospa_m,card_est,extracted,tx_floats,tx_ints,tx_components";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    NoConsensus,
    Full,
    PartialRank,
    PartialThreshold,
    SampleReplacement,
    SampleNoReplacement,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Self::NoConsensus,
        Self::Full,
        Self::PartialRank,
        Self::PartialThreshold,
        Self::SampleReplacement,
        Self::SampleNoReplacement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoConsensus => "no_consensus",
            Self::Full => "full",
            Self::PartialRank => "partial_rank",
            Self::PartialThreshold => "partial_threshold",
            Self::SampleReplacement => "sample_replacement",
            Self::SampleNoReplacement => "sample_no_replacement",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match key.as_str() {
            "none" => Some(Self::NoConsensus),
            "proposed" => Some(Self::SampleReplacement),
            "partial" => Some(Self::PartialRank),
            _ => None,
        };
        alias
            .or_else(|| Self::ALL.into_iter().find(|a| a.name() == key))
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// Either a named preset or an inline scenario table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Preset(String),
    Inline(Box<ScenarioConfig>),
}

impl Default for ScenarioSource {
    fn default() -> Self {
        Self::Preset("reference".into())
    }
}

impl ScenarioSource {
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        match self {
            Self::Preset(name) if name == "reference" => Ok(ScenarioConfig::reference()),
            Self::Preset(name) => Err(Error::Config(format!("unknown scenario preset {name:?}"))),
            Self::Inline(cfg) => Ok((**cfg).clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSettings {
    pub draw_mode: DrawMode,
    pub inclusion_replicates: usize,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        Self {
            draw_mode: DrawMode::StopAtBDistinct,
            inclusion_replicates: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSource,
    pub algorithm: Algorithm,
    pub alpha: usize,
    pub bandwidth: usize,
    /// Weight threshold for `partial_threshold`.
    pub threshold: f64,
    pub sampling: SamplingSettings,
    pub mc_runs: usize,
    pub master_seed: u64,
    pub output_path: PathBuf,
    /// Worker threads for Monte Carlo runs; 0 uses every core.
    pub jobs: usize,
    pub phd: PhdConfig,
    pub ospa: OspaConfig,
    /// Keep every transmission record in memory (for audits).
    #[serde(skip)]
    pub record_transmissions: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl ExperimentConfig {
    /// Six sensors, `B = 5`, 100 runs, the proposed sampling rule.
    pub fn reference() -> Self {
        Self {
            scenario: ScenarioSource::default(),
            algorithm: Algorithm::SampleReplacement,
            alpha: 3,
            bandwidth: 5,
            threshold: 0.5,
            sampling: SamplingSettings::default(),
            mc_runs: 100,
            master_seed: 0,
            output_path: PathBuf::from("results"),
            jobs: 0,
            phd: PhdConfig::default(),
            ospa: OspaConfig::default(),
            record_transmissions: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_runs == 0 {
            return Err(Error::Config("mc_runs must be at least 1".into()));
        }
        if self.bandwidth == 0 {
            return Err(Error::Config("bandwidth must be at least 1".into()));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::Config("threshold must be finite and nonnegative".into()));
        }
        self.phd.validate()?;
        self.ospa.validate()?;
        if let Some(BandwidthPolicy::SampleReplacement(c) | BandwidthPolicy::SampleNoReplacement(c)) = self.policy() {
            c.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Scenario::with_config(self.scenario.resolve()?)?;
        Ok(())
    }

    /// The transmission rule, or `None` when sensors do not fuse.
    pub fn policy(&self) -> Option<BandwidthPolicy> {
        let sampling = |replacement: bool| SamplingConfig {
            bandwidth: self.bandwidth,
            draw_mode: self.sampling.draw_mode,
            replacement,
            inclusion_replicates: self.sampling.inclusion_replicates,
        };
        Some(match self.algorithm {
            Algorithm::NoConsensus => return None,
            Algorithm::Full => BandwidthPolicy::Full,
            Algorithm::PartialRank => BandwidthPolicy::Rank { bandwidth: self.bandwidth },
            Algorithm::PartialThreshold => BandwidthPolicy::Threshold { tau: self.threshold },
            Algorithm::SampleReplacement => BandwidthPolicy::SampleReplacement(sampling(true)),
            Algorithm::SampleNoReplacement => BandwidthPolicy::SampleNoReplacement(sampling(false)),
        })
    }

    /// Rounds actually performed.
    pub fn effective_alpha(&self) -> usize {
        if self.algorithm == Algorithm::NoConsensus {
            0
        } else {
            self.alpha
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub run: usize,
    pub timestep: usize,
    pub sensor: usize,
    pub ospa_m: f64,
    pub card_est: f64,
    pub extracted: usize,
    pub tx_floats: u64,
    pub tx_ints: u64,
    pub tx_components: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub steps: Vec<StepRecord>,
    /// Network OSPA per timestep.
    pub network_ospa: Vec<f64>,
    pub time_averaged_ospa: f64,
    pub total_cost: TransmissionCost,
    /// Prior components times (measurements + 1), summed over sensors and steps.
    pub filter_operations: u64,
    /// Components entering fusion sums, summed over rounds and steps.
    pub consensus_operations: u64,
    pub transmissions: Vec<TransmissionRecord>,
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub run: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub runs: usize,
    pub failed_runs: usize,
    pub ospa_mean: f64,
    pub ospa_se: f64,
    pub tx_floats_mean: f64,
    pub tx_floats_se: f64,
    pub filter_operations_mean: f64,
    pub consensus_operations_mean: f64,
}

/// Sample mean and standard error of the mean (zero error below two values).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl ExperimentResult {
    pub fn summary(&self) -> Summary {
        let ospa: Vec<f64> = self.runs.iter().map(|r| r.time_averaged_ospa).collect();
        let floats: Vec<f64> = self.runs.iter().map(|r| r.total_cost.floats as f64).collect();
        let (ospa_mean, ospa_se) = mean_and_se(&ospa);
        let (tx_floats_mean, tx_floats_se) = mean_and_se(&floats);
        let n = self.runs.len().max(1) as f64;
        Summary {
            runs: self.runs.len(),
            failed_runs: self.failures.len(),
            ospa_mean,
            ospa_se,
            tx_floats_mean,
            tx_floats_se,
            filter_operations_mean: self.runs.iter().map(|r| r.filter_operations as f64).sum::<f64>() / n,
            consensus_operations_mean: self.runs.iter().map(|r| r.consensus_operations as f64).sum::<f64>() / n,
        }
    }

    /// Time-averaged network OSPA keyed by run index.
    pub fn per_run_ospa(&self) -> BTreeMap<usize, f64> {
        self.runs.iter().map(|r| (r.run, r.time_averaged_ospa)).collect()
    }

    pub fn write_runs_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.runs {
            for s in &r.steps {
                w.serialize(s)?;
            }
        }
        if self.runs.iter().all(|r| r.steps.is_empty()) {
            w.write_record(RUN_CSV_HEADER.split(','))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Filter and fusion output for one timestep.
#[derive(Debug, Clone)]
pub struct TrackStep {
    pub timestep: usize,
    pub posteriors: Vec<GaussianMixture>,
    pub estimates: Vec<Vec<DVector<f64>>>,
    /// Cost of what each sensor sent during this step's rounds.
    pub sent: Vec<TransmissionCost>,
    pub transmissions: Vec<TransmissionRecord>,
    pub filter_operations: u64,
    pub consensus_operations: u64,
}

/// Runs the local filters and the configured fusion over a measurement
/// stream. Consensus at timestep `k` draws from `seeds.at("consensus", k)`.
pub fn track(
    config: &ExperimentConfig,
    scenario: &Scenario,
    measurements: &[MeasurementFrame],
    seeds: &SeedTree,
) -> Result<Vec<TrackStep>> {
    let models = &scenario.models;
    let n = scenario.config.sensor_count;
    let policy = config.policy();
    let alpha = config.effective_alpha();
    let limit = policy.and_then(|p| p.bandwidth());
    let options = ConsensusOptions { reduce: Some(config.phd), track_divergence: false };
    let prior_growth = 1 + models.spawn.terms.len();

    let mut posteriors = vec![GaussianMixture::empty(STATE_DIM); n];
    let mut steps = Vec::with_capacity(measurements.len());
    for meas in measurements {
        if meas.per_sensor.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: meas.per_sensor.len() });
        }
        let k = meas.timestep;
        let mut filter_operations = 0;
        let mut local = Vec::with_capacity(n);
        for (post, zs) in posteriors.iter().zip(&meas.per_sensor) {
            let prior_len = post.len() * prior_growth + models.birth.intensity.len();
            filter_operations += (prior_len * (zs.len() + 1)) as u64;
            local.push(filter_step(post, &models.motion, &models.birth, &models.spawn, &models.sensor, zs, &config.phd)?);
        }

        let mut sent = vec![TransmissionCost::default(); n];
        let mut transmissions = Vec::new();
        let mut consensus_operations = 0;
        posteriors = match policy {
            Some(p) if alpha > 0 => {
                let out = run_consensus(&local, &scenario.weights, &p, alpha, &seeds.at("consensus", k as u64), &options)?;
                for round in &out.rounds {
                    consensus_operations += round.fused_inputs as u64;
                    for t in &round.transmissions {
                        if let Some(b) = limit {
                            if t.distinct > b {
                                return Err(Error::Numerical(format!(
                                    "sensor {} sent {} distinct components with bandwidth {b}",
                                    t.sender + 1,
                                    t.distinct
                                )));
                            }
                        }
                        sent[t.sender] += t.cost;
                    }
                    if config.record_transmissions {
                        transmissions.extend_from_slice(&round.transmissions);
                    }
                }
                out.intensities
            }
            _ => local,
        };
        let estimates = posteriors.iter().map(|p| extract_targets(p, &config.phd)).collect();
        steps.push(TrackStep {
            timestep: k,
            posteriors: posteriors.clone(),
            estimates,
            sent,
            transmissions,
            filter_operations,
            consensus_operations,
        });
    }
    Ok(steps)
}

/// One Monte Carlo run. Truth and measurements depend only on the run seed,
/// so runs with the same index are paired across algorithms.
pub fn simulate_run(config: &ExperimentConfig, scenario: &Scenario, run: usize) -> Result<RunRecord> {
    let seeds = SeedTree::new(config.master_seed).at("run", run as u64);
    let sc = &scenario.config;
    let truth = generate_ground_truth(sc, &seeds);
    let measurements = generate_measurement_stream(&truth, sc, &seeds);
    let steps = track(config, scenario, &measurements, &seeds)?;
    let n = sc.sensor_count;

    let mut rec = RunRecord {
        run,
        steps: Vec::with_capacity(n * sc.horizon),
        network_ospa: Vec::with_capacity(sc.horizon),
        time_averaged_ospa: 0.0,
        total_cost: TransmissionCost::default(),
        filter_operations: 0,
        consensus_operations: 0,
        transmissions: Vec::new(),
    };
    for (frame, step) in truth.frames.iter().zip(steps) {
        rec.filter_operations += step.filter_operations;
        rec.consensus_operations += step.consensus_operations;
        rec.transmissions.extend(step.transmissions);
        let truth_pos = frame.positions();
        let mut net = 0.0;
        for (i, (post, est)) in step.posteriors.iter().zip(&step.estimates).enumerate() {
            let d = ospa(est, &truth_pos, &config.ospa)?.distance;
            net += d;
            rec.total_cost += step.sent[i];
            rec.steps.push(StepRecord {
                run,
                timestep: frame.timestep,
                sensor: i + 1,
                ospa_m: d,
                card_est: post.total_weight(),
                extracted: est.len(),
                tx_floats: step.sent[i].floats,
                tx_ints: step.sent[i].integers,
                tx_components: step.sent[i].components,
            });
        }
        rec.network_ospa.push(net / n as f64);
    }
    rec.time_averaged_ospa = time_averaged(&rec.network_ospa)?;
    Ok(rec)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Validates, then runs every Monte Carlo replicate. A failing run is
/// reported without stopping the others.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let scenario = Scenario::with_config(config.scenario.resolve()?)?;
    let outcomes: Vec<(usize, Result<RunRecord>)> = thread_pool(config.jobs)?.install(|| {
        (0..config.mc_runs)
            .into_par_iter()
            .map(|r| (r, simulate_run(config, &scenario, r)))
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (run, o) in outcomes {
        match o {
            Ok(rec) => runs.push(rec),
            Err(e) => failures.push(RunFailure { run, message: e.to_string() }),
        }
    }
    Ok(ExperimentResult { config: config.clone(), runs, failures })
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub algorithm: Algorithm,
    pub alpha: usize,
    pub bandwidth: usize,
    pub summary: Summary,
}

/// Paired difference `lhs − rhs` of time-averaged network OSPA over runs
/// that succeeded in both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedDifference {
    pub lhs: usize,
    pub rhs: usize,
    pub pairs: usize,
    pub mean: f64,
    pub se: f64,
}

impl PairedDifference {
    pub fn between(lhs: &ExperimentResult, rhs: &ExperimentResult) -> Self {
        Self::from_maps(0, 1, &lhs.per_run_ospa(), &rhs.per_run_ospa())
    }

    fn from_maps(li: usize, ri: usize, a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> Self {
        let d: Vec<f64> = a.iter().filter_map(|(run, x)| b.get(run).map(|y| x - y)).collect();
        let (mean, se) = mean_and_se(&d);
        Self { lhs: li, rhs: ri, pairs: d.len(), mean, se }
    }

    /// `lhs ≤ rhs` within `k` standard errors.
    pub fn not_worse(&self, k: f64) -> bool {
        self.mean <= k * self.se
    }

    /// `lhs < rhs` with the gap exceeding `k` standard errors.
    pub fn separated(&self, k: f64) -> bool {
        self.mean + k * self.se < 0.0
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub variants: Vec<VariantSummary>,
    pub results: Vec<ExperimentResult>,
    /// Every ordered pair of variants.
    pub differences: Vec<PairedDifference>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderingCheck {
    pub better: Algorithm,
    pub worse: Algorithm,
    pub alpha: usize,
    pub mean_difference: f64,
    pub se: f64,
    pub holds: bool,
    pub separated_2se: bool,
}

impl Comparison {
    pub fn find(&self, algorithm: Algorithm, alpha: usize) -> Option<usize> {
        self.variants.iter().position(|v| v.algorithm == algorithm && v.alpha == alpha)
    }

    pub fn difference(&self, lhs: usize, rhs: usize) -> Option<&PairedDifference> {
        self.differences.iter().find(|d| d.lhs == lhs && d.rhs == rhs)
    }

    /// Checks `full ≤ proposed ≤ partial ≤ none` at each alpha, between
    /// consecutive variants of that chain that are present.
    pub fn ordering_checks(&self) -> Vec<OrderingCheck> {
        let chain = [Algorithm::Full, Algorithm::SampleReplacement, Algorithm::PartialRank, Algorithm::NoConsensus];
        let mut alphas: Vec<usize> = self.variants.iter().map(|v| v.alpha).collect();
        alphas.sort_unstable();
        alphas.dedup();
        let mut out = Vec::new();
        for &alpha in &alphas {
            let present: Vec<(Algorithm, usize)> =
                chain.iter().filter_map(|&a| self.find(a, alpha).map(|i| (a, i))).collect();
            for pair in present.windows(2) {
                let d = self.difference(pair[0].1, pair[1].1).expect("all pairs are computed");
                out.push(OrderingCheck {
                    better: pair[0].0,
                    worse: pair[1].0,
                    alpha,
                    mean_difference: d.mean,
                    se: d.se,
                    holds: d.mean <= 0.0,
                    separated_2se: d.separated(2.0),
                });
            }
        }
        out
    }

    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_summary_csv(out, &self.variants)
    }

    pub fn write_differences_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lhs_algorithm", "lhs_alpha", "rhs_algorithm", "rhs_alpha", "pairs", "mean_diff", "se"])?;
        for d in &self.differences {
            let (l, r) = (&self.variants[d.lhs], &self.variants[d.rhs]);
            w.write_record([
                l.algorithm.to_string(),
                l.alpha.to_string(),
                r.algorithm.to_string(),
                r.alpha.to_string(),
                d.pairs.to_string(),
                d.mean.to_string(),
                d.se.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn write_summary_csv<W: std::io::Write>(out: W, variants: &[VariantSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "algorithm",
        "alpha",
        "bandwidth",
        "runs",
        "failed_runs",
        "ospa_mean",
        "ospa_se",
        "tx_floats_mean",
        "tx_floats_se",
        "filter_operations_mean",
        "consensus_operations_mean",
    ])?;
    for v in variants {
        let s = &v.summary;
        w.write_record([
            v.algorithm.to_string(),
            v.alpha.to_string(),
            v.bandwidth.to_string(),
            s.runs.to_string(),
            s.failed_runs.to_string(),
            s.ospa_mean.to_string(),
            s.ospa_se.to_string(),
            s.tx_floats_mean.to_string(),
            s.tx_floats_se.to_string(),
            s.filter_operations_mean.to_string(),
            s.consensus_operations_mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn comparable(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    a.scenario == b.scenario
        && a.master_seed == b.master_seed
        && a.mc_runs == b.mc_runs
        && a.phd == b.phd
        && a.ospa == b.ospa
}

/// Runs each configuration and pairs the results by run index. All
/// configurations must share scenario, seed, run count and filter settings.
pub fn compare_algorithms(configs: &[ExperimentConfig]) -> Result<Comparison> {
    let Some(first) = configs.first() else {
        return Err(Error::Config("nothing to compare".into()));
    };
    if let Some(bad) = configs.iter().find(|c| !comparable(first, c)) {
        return Err(Error::Config(format!(
            "configuration for {} (alpha {}) does not share the scenario, seed and run count",
            bad.algorithm, bad.alpha
        )));
    }
    for c in configs {
        c.validate()?;
    }
    let results = configs.iter().map(run_experiment).collect::<Result<Vec<_>>>()?;
    let variants: Vec<VariantSummary> = results
        .iter()
        .map(|r| VariantSummary {
            algorithm: r.config.algorithm,
            alpha: r.config.alpha,
            bandwidth: r.config.bandwidth,
            summary: r.summary(),
        })
        .collect();
    let maps: Vec<_> = results.iter().map(ExperimentResult::per_run_ospa).collect();
    let mut differences = Vec::new();
    for i in 0..maps.len() {
        for j in 0..maps.len() {
            if i != j {
                differences.push(PairedDifference::from_maps(i, j, &maps[i], &maps[j]));
            }
        }
    }
    Ok(Comparison { variants, results, differences })
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub master_seed: u64,
    pub configs: Vec<ExperimentConfig>,
    pub files: Vec<String>,
    pub failed_runs: Vec<(String, usize, String)>,
}

impl Manifest {
    pub fn new(results: &[ExperimentResult], files: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            master_seed: results.first().map_or(0, |r| r.config.master_seed),
            configs: results.iter().map(|r| r.config.clone()).collect(),
            files,
            failed_runs: results
                .iter()
                .flat_map(|r| {
                    r.failures
                        .iter()
                        .map(move |f| (format!("{}/alpha={}", r.config.algorithm, r.config.alpha), f.run, f.message.clone()))
                })
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Writes `runs_<algorithm>_a<alpha>.csv` per result, `summary.csv`
/// and `manifest.json` into `dir`; returns the file names written.
pub fn write_outputs(dir: &Path, results: &[ExperimentResult], comparison: Option<&Comparison>) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for r in results {
        let name = format!("runs_{}_a{}.csv", r.config.algorithm, r.config.alpha);
        r.write_runs_csv(fs::File::create(dir.join(&name))?)?;
        files.push(name);
    }
    let variants: Vec<VariantSummary> = results
        .iter()
        .map(|r| VariantSummary {
            algorithm: r.config.algorithm,
            alpha: r.config.alpha,
            bandwidth: r.config.bandwidth,
            summary: r.summary(),
        })
        .collect();
    write_summary_csv(fs::File::create(dir.join("summary.csv"))?, &variants)?;
    files.push("summary.csv".into());
    if let Some(c) = comparison {
        c.write_differences_csv(fs::File::create(dir.join("paired_differences.csv"))?)?;
        files.push("paired_differences.csv".into());
        let mut w = csv::Writer::from_writer(fs::File::create(dir.join("ordering.csv"))?);
        for check in c.ordering_checks() {
            w.serialize(check)?;
        }
        w.flush()?;
        files.push("ordering.csv".into());
    }
    files.push("manifest.json".into());
    Manifest::new(results, files.clone()).write(&dir.join("manifest.json"))?;
    Ok(files)
}
