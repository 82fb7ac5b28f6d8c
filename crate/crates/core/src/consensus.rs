//! Iterated weighted-arithmetic-average fusion over a sensor network.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;

use crate::bandwidth::{reconstruct, BandwidthPolicy, TransmissionCost};
use crate::error::{Error, Result};
use crate::gm::{l2_distance, GaussianMixture};
use crate::phd::PhdConfig;
use crate::seed::SeedTree;

const TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightCondition {
    Nonnegative,
    RowStochastic,
    LeftEigenvector,
    Contraction,
    Sparsity,
}

impl fmt::Display for WeightCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nonnegative => "nonnegativity",
            Self::RowStochastic => "row-stochasticity",
            Self::LeftEigenvector => "left-eigenvector",
            Self::Contraction => "contraction",
            Self::Sparsity => "sparsity",
        })
    }
}

/// Directed communication graph; an edge `(j, i)` means `j` can send to `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorNetwork {
    vertex_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl SensorNetwork {
    pub fn new(vertex_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::InvalidArgument("network needs at least one sensor".into()));
        }
        let mut set = BTreeSet::new();
        for (j, i) in edges {
            if j >= vertex_count || i >= vertex_count {
                return Err(Error::InvalidArgument(format!("edge ({j}, {i}) references a missing sensor")));
            }
            if j != i {
                set.insert((j, i));
            }
        }
        let mut g = DiGraph::<(), ()>::new();
        let nodes: Vec<_> = (0..vertex_count).map(|_| g.add_node(())).collect();
        for &(j, i) in &set {
            g.add_edge(nodes[j], nodes[i], ());
        }
        if kosaraju_scc(&g).len() != 1 {
            return Err(Error::InvalidArgument("network is not strongly connected".into()));
        }
        Ok(Self { vertex_count, edges: set })
    }

    /// Each undirected pair becomes two directed edges.
    pub fn bidirectional(vertex_count: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(vertex_count, pairs.into_iter().flat_map(|(a, b)| [(a, b), (b, a)]))
    }

    /// Six sensors linked 1-2, 2-3, 2-4, 3-6, 4-5, 4-6, 5-6 (zero-based here).
    pub fn reference() -> Self {
        Self::bidirectional(6, [(0, 1), (1, 2), (1, 3), (2, 5), (3, 4), (3, 5), (4, 5)])
            .expect("reference topology is connected")
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(_, t)| t == i).map(|&(s, _)| s).collect()
    }

    pub fn out_neighbors(&self, j: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(s, _)| s == j).map(|&(_, t)| t).collect()
    }

    pub fn is_bidirectional(&self) -> bool {
        self.edges.iter().all(|&(j, i)| self.edges.contains(&(i, j)))
    }
}

/// Consensus matrix `Ω` and fusion weights `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusWeights {
    omega: DMatrix<f64>,
    fusion_weights: DVector<f64>,
}

impl ConsensusWeights {
    /// Checks shapes and that `ω` is a probability vector; the remaining
    /// conditions are checked by [`validate_weights`].
    pub fn new(omega: DMatrix<f64>, fusion_weights: DVector<f64>) -> Result<Self> {
        if !omega.is_square() || omega.nrows() != fusion_weights.len() || omega.nrows() == 0 {
            return Err(Error::DimensionMismatch {
                expected: omega.nrows(),
                found: fusion_weights.len(),
            });
        }
        if omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("consensus matrix has non-finite entries".into()));
        }
        check_probability_vector(fusion_weights.as_slice())?;
        Ok(Self { omega, fusion_weights })
    }

    pub fn uniform(omega: DMatrix<f64>) -> Result<Self> {
        let n = omega.nrows();
        Self::new(omega, DVector::from_element(n, 1.0 / n as f64))
    }

    /// The six-sensor matrix used by the reference scenario, with uniform `ω`.
    pub fn reference() -> Self {
        #[rustfmt::skip]
        let rows = [
            0.8, 0.2, 0.0, 0.0, 0.0, 0.0,
            0.2, 0.4, 0.2, 0.2, 0.0, 0.0,
            0.0, 0.2, 0.6, 0.0, 0.0, 0.2,
            0.0, 0.2, 0.0, 0.4, 0.2, 0.2,
            0.0, 0.0, 0.0, 0.2, 0.6, 0.2,
            0.0, 0.0, 0.2, 0.2, 0.2, 0.4,
        ];
        Self::uniform(DMatrix::from_row_slice(6, 6, &rows)).expect("reference weights are well formed")
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn fusion_weights(&self) -> &DVector<f64> {
        &self.fusion_weights
    }

    pub fn sensor_count(&self) -> usize {
        self.omega.nrows()
    }

    /// Largest singular value of `Ω − 1ωᵀ`.
    pub fn contraction_factor(&self) -> f64 {
        let n = self.sensor_count();
        let ones = DVector::from_element(n, 1.0);
        let dev = &self.omega - ones * self.fusion_weights.transpose();
        dev.singular_values().max()
    }
}

fn check_probability_vector(w: &[f64]) -> Result<()> {
    if w.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::InvalidArgument("fusion weights must be nonnegative".into()));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > TOL {
        return Err(Error::InvalidArgument(format!("fusion weights sum to {s}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightReport {
    pub nonnegative: bool,
    pub row_stochastic: bool,
    pub left_eigenvector: bool,
    pub contraction: bool,
    pub sparsity: bool,
    /// Largest singular value of `Ω − 1ωᵀ`.
    pub sigma: f64,
}

impl WeightReport {
    /// The first failing condition, in checking order.
    pub fn first_failure(&self) -> Option<WeightCondition> {
        [
            (self.nonnegative, WeightCondition::Nonnegative),
            (self.row_stochastic, WeightCondition::RowStochastic),
            (self.left_eigenvector, WeightCondition::LeftEigenvector),
            (self.contraction, WeightCondition::Contraction),
            (self.sparsity, WeightCondition::Sparsity),
        ]
        .into_iter()
        .find(|(ok, _)| !ok)
        .map(|(_, c)| c)
    }
}

/// Computes every condition without stopping at the first failure.
pub fn weight_report(cw: &ConsensusWeights, net: &SensorNetwork) -> Result<WeightReport> {
    let n = cw.sensor_count();
    if n != net.vertex_count() {
        return Err(Error::DimensionMismatch { expected: net.vertex_count(), found: n });
    }
    let om = &cw.omega;
    let w = &cw.fusion_weights;
    let nonnegative = om.iter().all(|&v| v >= 0.0);
    let row_stochastic = (0..n).all(|i| (om.row(i).sum() - 1.0).abs() <= TOL);
    let left = om.transpose() * w;
    let left_eigenvector = (0..n).all(|i| (left[i] - w[i]).abs() <= TOL);
    let sigma = cw.contraction_factor();
    let contraction = sigma < 1.0 - TOL;
    let sparsity = (0..n).all(|i| (0..n).all(|j| i == j || om[(i, j)] == 0.0 || net.has_edge(j, i)));
    Ok(WeightReport {
        nonnegative,
        row_stochastic,
        left_eigenvector,
        contraction,
        sparsity,
        sigma,
    })
}

/// Returns the report when all conditions hold, otherwise an error naming
/// the first failing one.
pub fn validate_weights(cw: &ConsensusWeights, net: &SensorNetwork) -> Result<WeightReport> {
    let report = weight_report(cw, net)?;
    match report.first_failure() {
        None => Ok(report),
        Some(condition) => Err(Error::WeightCondition {
            condition,
            detail: format!("contraction factor {:.6}", report.sigma),
        }),
    }
}

/// `Ω_ij = 1 / (1 + max(d_i, d_j))` on edges, diagonal fills each row to one,
/// uniform fusion weights.
pub fn metropolis_weights(net: &SensorNetwork) -> Result<ConsensusWeights> {
    if !net.is_bidirectional() {
        return Err(Error::InvalidArgument("Metropolis weights need a bidirectional network".into()));
    }
    let n = net.vertex_count();
    let degree: Vec<usize> = (0..n).map(|i| net.in_neighbors(i).len()).collect();
    let mut om = DMatrix::zeros(n, n);
    for (j, i) in net.edges() {
        om[(i, j)] = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| om[(i, j)]).sum();
        om[(i, i)] = 1.0 - off;
    }
    ConsensusWeights::uniform(om)
}

/// `Σ_i ω_i v_i` as a concatenation of scaled mixtures. Sensors with zero
/// weight contribute nothing.
pub fn waa(intensities: &[GaussianMixture], fusion_weights: &[f64]) -> Result<GaussianMixture> {
    if intensities.is_empty() || intensities.len() != fusion_weights.len() {
        return Err(Error::DimensionMismatch {
            expected: intensities.len(),
            found: fusion_weights.len(),
        });
    }
    check_probability_vector(fusion_weights)?;
    let dim = intensities[0].dim();
    let mut out = GaussianMixture::empty(dim);
    for (v, &w) in intensities.iter().zip(fusion_weights) {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: v.dim() });
        }
        if w > 0.0 {
            out = GaussianMixture::sum([&out, &v.scale(w)?])?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConsensusOptions {
    /// Prune/merge/cap applied to each fused intensity; `None` keeps every
    /// component (only bit-identical duplicates are combined).
    pub reduce: Option<PhdConfig>,
    /// Record L2 distances to the initial weighted average each round.
    pub track_divergence: bool,
}

/// What one sensor sent in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionRecord {
    pub sender: usize,
    pub cost: TransmissionCost,
    pub distinct: usize,
    /// Components in the sender's intensity when it transmitted.
    pub source_components: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RoundDiagnostics {
    pub transmissions: Vec<TransmissionRecord>,
    pub cost: TransmissionCost,
    pub l2_to_waa: Option<Vec<f64>>,
    /// Components held by each sensor after the round.
    pub components: Vec<usize>,
    /// Components entering the fusion sums, over all sensors.
    pub fused_inputs: usize,
}

#[derive(Debug, Clone)]
pub struct ConsensusOutcome {
    pub intensities: Vec<GaussianMixture>,
    pub initial_l2_to_waa: Option<Vec<f64>>,
    pub rounds: Vec<RoundDiagnostics>,
}

fn in_neighbors_from_omega(om: &DMatrix<f64>, i: usize) -> impl Iterator<Item = usize> + '_ {
    (0..om.ncols()).filter(move |&j| j != i && om[(i, j)] != 0.0)
}

/// One synchronous exchange-and-fuse step. Transmissions are all produced
/// from the round-start intensities; sensor `j` draws from `seeds.index(j)`.
pub fn consensus_round(
    intensities: &[GaussianMixture],
    cw: &ConsensusWeights,
    policy: &BandwidthPolicy,
    seeds: &SeedTree,
    options: &ConsensusOptions,
) -> Result<(Vec<GaussianMixture>, RoundDiagnostics)> {
    let n = cw.sensor_count();
    if intensities.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: intensities.len() });
    }
    let om = cw.omega();

    let mut diag = RoundDiagnostics::default();
    let mut received: Vec<Option<GaussianMixture>> = vec![None; n];
    for j in 0..n {
        let sends = (0..n).any(|i| i != j && om[(i, j)] != 0.0);
        if !sends {
            continue;
        }
        let mut rng = seeds.index(j as u64).rng();
        let t = policy.apply(&intensities[j], &mut rng)?;
        let cost = t.cost();
        diag.transmissions.push(TransmissionRecord {
            sender: j,
            cost,
            distinct: t.distinct_components(),
            source_components: intensities[j].len(),
        });
        diag.cost += cost;
        received[j] = Some(reconstruct(&t)?);
    }

    let mut fused = Vec::with_capacity(n);
    for i in 0..n {
        let mut parts = vec![intensities[i].scale(om[(i, i)])?];
        for j in in_neighbors_from_omega(om, i) {
            let r = received[j].as_ref().expect("every in-neighbour transmitted");
            parts.push(r.scale(om[(i, j)])?);
        }
        diag.fused_inputs += parts.iter().map(GaussianMixture::len).sum::<usize>();
        let mut v = GaussianMixture::sum(parts.iter())?.coalesce();
        if let Some(cfg) = &options.reduce {
            v = cfg.reduce(&v)?;
        }
        fused.push(v);
    }
    diag.components = fused.iter().map(GaussianMixture::len).collect();
    Ok((fused, diag))
}

/// Applies `alpha` consensus rounds; round `l` uses the substream
/// `seeds.index(l)`.
pub fn run_consensus(
    intensities: &[GaussianMixture],
    cw: &ConsensusWeights,
    policy: &BandwidthPolicy,
    alpha: usize,
    seeds: &SeedTree,
    options: &ConsensusOptions,
) -> Result<ConsensusOutcome> {
    let reference = if options.track_divergence {
        Some(waa(intensities, cw.fusion_weights().as_slice())?)
    } else {
        None
    };
    let distances = |vs: &[GaussianMixture]| -> Result<Option<Vec<f64>>> {
        reference
            .as_ref()
            .map(|r| vs.iter().map(|v| l2_distance(v, r)).collect())
            .transpose()
    };

    let initial_l2_to_waa = distances(intensities)?;
    let mut current = intensities.to_vec();
    let mut rounds = Vec::with_capacity(alpha);
    for l in 0..alpha {
        let (next, mut diag) = consensus_round(&current, cw, policy, &seeds.index(l as u64), options)?;
        diag.l2_to_waa = distances(&next)?;
        rounds.push(diag);
        current = next;
    }
    Ok(ConsensusOutcome {
        intensities: current,
        initial_l2_to_waa,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandwidth::SamplingConfig;
    use crate::gm::diagonal_component;

    fn blob(weight: f64, x: f64) -> GaussianMixture {
        GaussianMixture::from_components(2, vec![diagonal_component(weight, &[x, 0.0], &[1.0, 2.0]).unwrap()]).unwrap()
    }

    #[test]
    fn reference_weights_pass() {
        let r = validate_weights(&ConsensusWeights::reference(), &SensorNetwork::reference()).unwrap();
        assert!(r.sigma < 1.0);
    }

    #[test]
    fn identity_fails_contraction() {
        let cw = ConsensusWeights::uniform(DMatrix::identity(6, 6)).unwrap();
        let r = weight_report(&cw, &SensorNetwork::reference()).unwrap();
        assert!(r.row_stochastic && r.left_eigenvector);
        assert!((r.sigma - 1.0).abs() < 1e-12);
        match validate_weights(&cw, &SensorNetwork::reference()) {
            Err(Error::WeightCondition { condition, .. }) => assert_eq!(condition, WeightCondition::Contraction),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_stochastic_fails_row_condition() {
        let mut om = ConsensusWeights::reference().omega().clone();
        om[(0, 0)] = 0.7;
        let cw = ConsensusWeights::uniform(om).unwrap();
        match validate_weights(&cw, &SensorNetwork::reference()) {
            Err(Error::WeightCondition { condition, .. }) => assert_eq!(condition, WeightCondition::RowStochastic),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weights_off_the_graph_fail_sparsity() {
        let net = SensorNetwork::bidirectional(3, [(0, 1), (1, 2)]).unwrap();
        let cw = ConsensusWeights::uniform(DMatrix::from_element(3, 3, 1.0 / 3.0)).unwrap();
        let r = weight_report(&cw, &net).unwrap();
        assert_eq!(r.first_failure(), Some(WeightCondition::Sparsity));
    }

    #[test]
    fn metropolis_examples() {
        let two = metropolis_weights(&SensorNetwork::bidirectional(2, [(0, 1)]).unwrap()).unwrap();
        assert_eq!(two.omega(), &DMatrix::from_element(2, 2, 0.5));
        let k3 = SensorNetwork::bidirectional(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let cw = metropolis_weights(&k3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((cw.omega()[(i, j)] - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let net = SensorNetwork::reference();
        let cw = metropolis_weights(&net).unwrap();
        assert_eq!(cw.omega(), &cw.omega().transpose());
        validate_weights(&cw, &net).unwrap();
        // sensor 1 (degree 1) with sensor 2 (degree 3)
        assert_eq!(cw.omega()[(0, 1)], 0.25);
        let one_way = SensorNetwork::new(2, [(0, 1), (1, 0)]).unwrap();
        assert!(metropolis_weights(&one_way).is_ok());
        let cycle = SensorNetwork::new(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        assert!(metropolis_weights(&cycle).is_err());
    }

    #[test]
    fn disconnected_network_is_rejected() {
        assert!(SensorNetwork::bidirectional(3, [(0, 1)]).is_err());
        assert!(SensorNetwork::new(2, [(0, 1)]).is_err());
    }

    #[test]
    fn waa_examples() {
        let a = blob(6.0, 0.0);
        let b = blob(9.0, 3.0);
        assert_eq!(waa(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap().total_weight(), 7.5);
        assert_eq!(waa(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap(), a);
        assert!(waa(&[a.clone(), b], &[0.6, 0.6]).is_err());
        let same = waa(&[a.clone(), a.clone(), a.clone()], &[0.25, 0.25, 0.5]).unwrap();
        for x in [-1.0, 0.0, 2.5] {
            let p = DVector::from_vec(vec![x, 0.3]);
            assert!((same.evaluate_at(&p).unwrap() - a.evaluate_at(&p).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_point_and_zero_rounds() {
        let cw = ConsensusWeights::reference();
        let f = GaussianMixture::sum([&blob(0.7, 1.0), &blob(1.3, -4.0)]).unwrap();
        let vs = vec![f.clone(); 6];
        let seeds = SeedTree::new(0);
        let out = run_consensus(&vs, &cw, &BandwidthPolicy::Full, 3, &seeds, &ConsensusOptions::default()).unwrap();
        for v in &out.intensities {
            for x in [-4.0, 0.0, 1.0, 7.0] {
                let p = DVector::from_vec(vec![x, 1.0]);
                assert!((v.evaluate_at(&p).unwrap() - f.evaluate_at(&p).unwrap()).abs() < 1e-12);
            }
        }
        let none = run_consensus(&vs, &cw, &BandwidthPolicy::Full, 0, &seeds, &ConsensusOptions::default()).unwrap();
        assert_eq!(none.intensities, vs);
        assert!(none.rounds.is_empty());
    }

    #[test]
    fn sampled_cardinalities_follow_omega() {
        let cw = ConsensusWeights::reference();
        let vs: Vec<_> = (0..6)
            .map(|i| {
                let parts: Vec<_> = (0..8).map(|k| blob(0.1 + 0.07 * ((i * 8 + k) % 5) as f64, k as f64 * 3.0)).collect();
                GaussianMixture::sum(parts.iter()).unwrap()
            })
            .collect();
        let policy = BandwidthPolicy::SampleReplacement(SamplingConfig::with_replacement(3));
        let out = run_consensus(&vs, &cw, &policy, 5, &SeedTree::new(11), &ConsensusOptions::default()).unwrap();
        let mut expect = DVector::from_iterator(6, vs.iter().map(GaussianMixture::total_weight));
        for _ in 0..5 {
            expect = cw.omega() * expect;
        }
        for (v, e) in out.intensities.iter().zip(expect.iter()) {
            assert!((v.total_weight() - e).abs() < 1e-10);
        }
        for r in &out.rounds {
            assert!(r.transmissions.iter().all(|t| t.distinct <= 3));
        }
    }

    #[test]
    fn rounds_are_reproducible() {
        let cw = ConsensusWeights::reference();
        let vs: Vec<_> = (0..6).map(|i| GaussianMixture::sum([&blob(0.5, i as f64), &blob(0.2, 10.0), &blob(0.3, -3.0 * i as f64)]).unwrap()).collect();
        let policy = BandwidthPolicy::SampleReplacement(SamplingConfig::with_replacement(2));
        let a = run_consensus(&vs, &cw, &policy, 3, &SeedTree::new(5), &ConsensusOptions::default()).unwrap();
        let b = run_consensus(&vs, &cw, &policy, 3, &SeedTree::new(5), &ConsensusOptions::default()).unwrap();
        assert_eq!(a.intensities, b.intensities);
    }
}
