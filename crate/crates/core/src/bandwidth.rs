//! Component selection under a bandwidth limit, the resulting transmission
//! records, their cost and their binary encoding.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample_weighted;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gm::{GaussianComponent, GaussianMixture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    Full,
    Rank,
    Threshold,
    SampleReplacement,
    SampleNoReplacement,
}

impl PolicyTag {
    fn code(self) -> u8 {
        match self {
            Self::Full => 0,
            Self::Rank => 1,
            Self::Threshold => 2,
            Self::SampleReplacement => 3,
            Self::SampleNoReplacement => 4,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Full,
            1 => Self::Rank,
            2 => Self::Threshold,
            3 => Self::SampleReplacement,
            4 => Self::SampleNoReplacement,
            _ => return None,
        })
    }
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Rank => "rank",
            Self::Threshold => "threshold",
            Self::SampleReplacement => "sample_replacement",
            Self::SampleNoReplacement => "sample_no_replacement",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryWeight {
    /// Multiplicity of a sampled index; the weight is `count × shared_weight`.
    Count(u64),
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionEntry {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub weight: EntryWeight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub dim: usize,
    pub tag: PolicyTag,
    pub shared_weight: Option<f64>,
    pub entries: Vec<TransmissionEntry>,
}

/// Communication cost of one transmission.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionCost {
    pub floats: u64,
    pub integers: u64,
    pub components: u64,
}

impl TransmissionCost {
    /// Cost of `components` entries that each carry their own weight.
    pub fn explicit(components: usize, dim: usize) -> Self {
        let per = (dim + dim * (dim + 1) / 2 + 1) as u64;
        Self {
            floats: components as u64 * per,
            integers: 0,
            components: components as u64,
        }
    }

    /// Size of the encoded record in bytes, length prefix included.
    pub fn wire_bytes(&self) -> u64 {
        4 + 1 + 4 + 8 * self.floats + 4 * self.integers
    }
}

impl std::ops::AddAssign for TransmissionCost {
    fn add_assign(&mut self, rhs: Self) {
        self.floats += rhs.floats;
        self.integers += rhs.integers;
        self.components += rhs.components;
    }
}

impl Transmission {
    pub fn empty(dim: usize, tag: PolicyTag) -> Self {
        Self { dim, tag, shared_weight: None, entries: Vec::new() }
    }

    fn explicit(gm: &GaussianMixture, tag: PolicyTag, indices: impl IntoIterator<Item = usize>) -> Self {
        let comps = gm.components();
        let entries = indices
            .into_iter()
            .map(|i| TransmissionEntry {
                mean: comps[i].mean().clone(),
                covariance: comps[i].covariance().clone(),
                weight: EntryWeight::Explicit(comps[i].weight()),
            })
            .collect();
        Self { dim: gm.dim(), tag, shared_weight: None, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct components carried.
    pub fn distinct_components(&self) -> usize {
        self.entries.len()
    }

    pub fn cost(&self) -> TransmissionCost {
        transmission_cost(self)
    }
}

pub fn transmission_cost(t: &Transmission) -> TransmissionCost {
    let d = t.dim as u64;
    let per_entry = d + d * (d + 1) / 2;
    let n = t.entries.len() as u64;
    if n == 0 {
        return TransmissionCost::default();
    }
    let explicit = t
        .entries
        .iter()
        .filter(|e| matches!(e.weight, EntryWeight::Explicit(_)))
        .count() as u64;
    TransmissionCost {
        floats: n * per_entry + explicit + u64::from(t.shared_weight.is_some()),
        integers: n - explicit,
        components: n,
    }
}

pub fn select_full(gm: &GaussianMixture) -> Transmission {
    Transmission::explicit(gm, PolicyTag::Full, 0..gm.len())
}

/// The `bandwidth` heaviest components; ties go to the earlier component.
pub fn select_rank(gm: &GaussianMixture, bandwidth: usize) -> Result<Transmission> {
    if bandwidth == 0 {
        return Err(Error::InvalidArgument("bandwidth must be at least 1".into()));
    }
    let w = gm.weights();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    order.truncate(bandwidth);
    Ok(Transmission::explicit(gm, PolicyTag::Rank, order))
}

/// Components with weight strictly above `tau`.
pub fn select_threshold(gm: &GaussianMixture, tau: f64) -> Result<Transmission> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidArgument("threshold must be finite and nonnegative".into()));
    }
    let keep: Vec<usize> = gm.iter().enumerate().filter(|(_, c)| c.weight() > tau).map(|(i, _)| i).collect();
    Ok(Transmission::explicit(gm, PolicyTag::Threshold, keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// Draw until the next draw would add a `B+1`-th distinct index.
    StopAtBDistinct,
    /// Exactly `n` independent draws.
    FixedDraws(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub bandwidth: usize,
    pub draw_mode: DrawMode,
    pub replacement: bool,
    /// Monte Carlo replicates used to estimate inclusion probabilities when
    /// sampling without replacement.
    pub inclusion_replicates: usize,
}

impl SamplingConfig {
    pub fn with_replacement(bandwidth: usize) -> Self {
        Self {
            bandwidth,
            draw_mode: DrawMode::StopAtBDistinct,
            replacement: true,
            inclusion_replicates: 10_000,
        }
    }

    /// Fixed-draw sampling with the default draw count (`bandwidth`).
    pub fn fixed_draws(bandwidth: usize) -> Self {
        Self {
            draw_mode: DrawMode::FixedDraws(bandwidth as u64),
            ..Self::with_replacement(bandwidth)
        }
    }

    pub fn without_replacement(bandwidth: usize) -> Self {
        Self {
            replacement: false,
            ..Self::with_replacement(bandwidth)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidth == 0 {
            return Err(Error::InvalidArgument("bandwidth must be at least 1".into()));
        }
        if self.draw_mode == DrawMode::FixedDraws(0) {
            return Err(Error::InvalidArgument("fixed draw count must be at least 1".into()));
        }
        if !self.replacement && self.inclusion_replicates == 0 {
            return Err(Error::InvalidArgument("inclusion_replicates must be at least 1".into()));
        }
        Ok(())
    }
}

fn positive_weights(gm: &GaussianMixture) -> Result<(Vec<f64>, f64)> {
    let w = gm.weights();
    let total: f64 = w.iter().sum();
    if gm.is_empty() || !(total > 0.0) || !total.is_finite() {
        return Err(Error::InvalidArgument("sampling requires a mixture with positive total weight".into()));
    }
    Ok((w, total))
}

/// Splits `n` draws among `members` with probabilities proportional to
/// `w[member]` (sequential binomials give the exact multinomial law).
fn distribute<R: Rng + ?Sized>(rng: &mut R, n: u64, members: &[usize], w: &[f64], counts: &mut [u64]) -> Result<()> {
    let mut remaining = n;
    let mut mass: f64 = members.iter().map(|&m| w[m]).sum();
    for (k, &m) in members.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let take = if k + 1 == members.len() {
            remaining
        } else {
            let p = (w[m] / mass).clamp(0.0, 1.0);
            Binomial::new(remaining, p)
                .map_err(|e| Error::Numerical(format!("binomial draw: {e}")))?
                .sample(rng)
        };
        counts[m] += take;
        remaining -= take;
        mass -= w[m];
    }
    Ok(())
}

/// Random sampling with replacement. Entries carry draw counts and the
/// transmission carries one shared weight `Σw / draws`, so the reconstructed
/// total weight equals the sender's.
pub fn sample_with_replacement<R: Rng + ?Sized>(
    gm: &GaussianMixture,
    config: &SamplingConfig,
    rng: &mut R,
) -> Result<Transmission> {
    config.validate()?;
    if !config.replacement {
        return Err(Error::InvalidArgument("configuration is for sampling without replacement".into()));
    }
    let (w, total) = positive_weights(gm)?;
    let positive: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let b = config.bandwidth;

    let mut counts = vec![0u64; w.len()];
    match config.draw_mode {
        DrawMode::FixedDraws(n) => {
            if positive.len() > b && n > b as u64 {
                return Err(Error::InvalidArgument(format!(
                    "{n} draws over {} candidates can exceed the bandwidth {b}",
                    positive.len()
                )));
            }
            distribute(rng, n, &positive, &w, &mut counts)?;
        }
        DrawMode::StopAtBDistinct => {
            if positive.len() <= b {
                return Ok(Transmission::explicit(gm, PolicyTag::SampleReplacement, positive));
            }
            // Each phase: a geometric number of draws that land on already
            // chosen indices, then one draw outside the chosen set. The draw
            // that would add index B+1 ends the process and is discarded.
            let mut chosen: Vec<usize> = Vec::with_capacity(b);
            let mut in_chosen = vec![false; w.len()];
            loop {
                let outside: f64 = positive.iter().filter(|&&i| !in_chosen[i]).map(|&i| w[i]).sum();
                let q = outside / total;
                if !chosen.is_empty() {
                    let repeats = Geometric::new(q.min(1.0))
                        .map_err(|e| Error::Numerical(format!("geometric draw: {e}")))?
                        .sample(rng);
                    distribute(rng, repeats, &chosen, &w, &mut counts)?;
                }
                if chosen.len() == b {
                    break;
                }
                let mut u = rng.random::<f64>() * outside;
                let mut pick = None;
                for &i in positive.iter().filter(|&&i| !in_chosen[i]) {
                    pick = Some(i);
                    if u < w[i] {
                        break;
                    }
                    u -= w[i];
                }
                let pick = pick.expect("outside mass is positive while fewer than B indices are chosen");
                chosen.push(pick);
                in_chosen[pick] = true;
                counts[pick] += 1;
            }
        }
    }

    let draws: u64 = counts.iter().sum();
    let shared = total / draws as f64;
    let comps = gm.components();
    let entries = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| TransmissionEntry {
            mean: comps[i].mean().clone(),
            covariance: comps[i].covariance().clone(),
            weight: EntryWeight::Count(c),
        })
        .collect();
    Ok(Transmission {
        dim: gm.dim(),
        tag: PolicyTag::SampleReplacement,
        shared_weight: Some(shared),
        entries,
    })
}

/// Weighted sampling of `bandwidth` distinct indices by exponential keys.
/// Transmitted weights are `w / P(index selected)` with the inclusion
/// probabilities estimated by a Monte Carlo pre-pass.
pub fn sample_without_replacement<R: Rng + ?Sized>(
    gm: &GaussianMixture,
    config: &SamplingConfig,
    rng: &mut R,
) -> Result<Transmission> {
    config.validate()?;
    if config.replacement {
        return Err(Error::InvalidArgument("configuration is for sampling with replacement".into()));
    }
    let (w, _) = positive_weights(gm)?;
    let b = config.bandwidth;
    if b > w.len() {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {b} exceeds the {} available components",
            w.len()
        )));
    }
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("sampling without replacement needs positive weights".into()));
    }
    if b == w.len() {
        return Ok(Transmission::explicit(gm, PolicyTag::SampleNoReplacement, 0..w.len()));
    }

    let draw = |rng: &mut R| {
        sample_weighted(rng, w.len(), |i| w[i], b).map_err(|e| Error::Numerical(format!("weighted sampling: {e}")))
    };
    let selected = draw(rng)?;

    // the transmitted draw counts as one replicate, so no selected
    // component can have a zero estimate
    let mut hits = vec![0u64; w.len()];
    for i in selected.iter() {
        hits[i] += 1;
    }
    for _ in 0..config.inclusion_replicates {
        for i in draw(rng)?.iter() {
            hits[i] += 1;
        }
    }
    let replicates = (config.inclusion_replicates + 1) as f64;

    let comps = gm.components();
    let mut picked: Vec<usize> = selected.into_vec();
    picked.sort_unstable();
    let mut entries = Vec::with_capacity(b);
    for i in picked {
        let p = hits[i] as f64 / replicates;
        entries.push(TransmissionEntry {
            mean: comps[i].mean().clone(),
            covariance: comps[i].covariance().clone(),
            weight: EntryWeight::Explicit(w[i] / p),
        });
    }
    Ok(Transmission {
        dim: gm.dim(),
        tag: PolicyTag::SampleNoReplacement,
        shared_weight: None,
        entries,
    })
}

/// Rebuilds the mixture a receiver sees.
pub fn reconstruct(t: &Transmission) -> Result<GaussianMixture> {
    let mut comps = Vec::with_capacity(t.entries.len());
    for e in &t.entries {
        check_dim(t.dim, e.mean.len())?;
        if e.covariance.nrows() != t.dim || e.covariance.ncols() != t.dim {
            return Err(Error::MalformedTransmission("covariance shape does not match dimension".into()));
        }
        let weight = match (e.weight, t.shared_weight) {
            (EntryWeight::Count(0), _) => {
                return Err(Error::MalformedTransmission("zero draw count".into()));
            }
            (EntryWeight::Count(c), Some(s)) => c as f64 * s,
            (EntryWeight::Count(_), None) => {
                return Err(Error::MalformedTransmission("count entry without a shared weight".into()));
            }
            (EntryWeight::Explicit(_), Some(_)) => {
                return Err(Error::MalformedTransmission("explicit weight alongside a shared weight".into()));
            }
            (EntryWeight::Explicit(w), None) => w,
        };
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::MalformedTransmission(format!("invalid weight {weight}")));
        }
        comps.push(GaussianComponent::from_parts(weight, e.mean.clone(), e.covariance.clone()));
    }
    Ok(GaussianMixture::from_components_unchecked(t.dim, comps))
}

/// Runtime choice of selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthPolicy {
    Full,
    Rank { bandwidth: usize },
    Threshold { tau: f64 },
    SampleReplacement(SamplingConfig),
    SampleNoReplacement(SamplingConfig),
}

impl BandwidthPolicy {
    pub fn tag(&self) -> PolicyTag {
        match self {
            Self::Full => PolicyTag::Full,
            Self::Rank { .. } => PolicyTag::Rank,
            Self::Threshold { .. } => PolicyTag::Threshold,
            Self::SampleReplacement(_) => PolicyTag::SampleReplacement,
            Self::SampleNoReplacement(_) => PolicyTag::SampleNoReplacement,
        }
    }

    /// Distinct-component limit, if the policy has one.
    pub fn bandwidth(&self) -> Option<usize> {
        match self {
            Self::Rank { bandwidth } => Some(*bandwidth),
            Self::SampleReplacement(c) | Self::SampleNoReplacement(c) => Some(c.bandwidth),
            Self::Full | Self::Threshold { .. } => None,
        }
    }

    /// Produces the broadcast for `gm`. Empty or weightless mixtures yield an
    /// empty transmission under every rule, and sampling without replacement
    /// sends everything when there are no more than `B` components.
    pub fn apply<R: Rng + ?Sized>(&self, gm: &GaussianMixture, rng: &mut R) -> Result<Transmission> {
        let weightless = !(gm.total_weight() > 0.0);
        match self {
            Self::Full => Ok(select_full(gm)),
            Self::Rank { bandwidth } => select_rank(gm, *bandwidth),
            Self::Threshold { tau } => select_threshold(gm, *tau),
            Self::SampleReplacement(_) | Self::SampleNoReplacement(_) if weightless => {
                Ok(Transmission::empty(gm.dim(), self.tag()))
            }
            Self::SampleReplacement(c) => sample_with_replacement(gm, c, rng),
            Self::SampleNoReplacement(c) => {
                let positive: Vec<usize> = (0..gm.len()).filter(|&i| gm.components()[i].weight() > 0.0).collect();
                if positive.len() <= c.bandwidth {
                    return Ok(Transmission::explicit(gm, PolicyTag::SampleNoReplacement, positive));
                }
                if positive.len() < gm.len() {
                    let kept = GaussianMixture::from_components_unchecked(
                        gm.dim(),
                        positive.iter().map(|&i| gm.components()[i].clone()).collect(),
                    );
                    return sample_without_replacement(&kept, c, rng);
                }
                sample_without_replacement(gm, c, rng)
            }
        }
    }
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Binary record: `u32` length of the rest, tag byte (bit 7 set when a
/// shared weight follows), `u32` entry count, optional `f64` shared weight,
/// then per entry the mean, the upper-triangular covariance (row-major) and
/// a `u32` count or `f64` weight. All little-endian.
pub fn encode(t: &Transmission) -> Result<Vec<u8>> {
    let counted = t.shared_weight.is_some();
    let cost = transmission_cost(t);
    let mut buf = Vec::with_capacity(cost.wire_bytes() as usize);
    buf.extend_from_slice(&[0; 4]);
    buf.push(t.tag.code() | if counted { 0x80 } else { 0 });
    let n = u32::try_from(t.entries.len()).map_err(|_| Error::MalformedTransmission("too many entries".into()))?;
    buf.extend_from_slice(&n.to_le_bytes());
    if let Some(s) = t.shared_weight {
        put_f64(&mut buf, s);
    }
    for e in &t.entries {
        check_dim(t.dim, e.mean.len())?;
        e.mean.iter().for_each(|&v| put_f64(&mut buf, v));
        for i in 0..t.dim {
            for j in i..t.dim {
                put_f64(&mut buf, e.covariance[(i, j)]);
            }
        }
        match (e.weight, counted) {
            (EntryWeight::Count(c), true) => {
                let c = u32::try_from(c).map_err(|_| Error::MalformedTransmission(format!("count {c} exceeds 32 bits")))?;
                buf.extend_from_slice(&c.to_le_bytes());
            }
            (EntryWeight::Explicit(w), false) => put_f64(&mut buf, w),
            _ => return Err(Error::MalformedTransmission("entry weights must all be counts or all explicit".into())),
        }
    }
    let len = (buf.len() - 4) as u32;
    buf[..4].copy_from_slice(&len.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::MalformedTransmission("record truncated".into()))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice has length N"))
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take()?);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::MalformedTransmission("non-finite value".into()))
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
}

/// Decodes one record produced by [`encode`]; `dim` is the state dimension.
pub fn decode(bytes: &[u8], dim: usize) -> Result<Transmission> {
    let mut r = Reader { bytes, pos: 0 };
    let len = r.u32()? as usize;
    if bytes.len() != len + 4 {
        return Err(Error::MalformedTransmission(format!(
            "length prefix {len} disagrees with {} payload bytes",
            bytes.len().saturating_sub(4)
        )));
    }
    let [tag_byte] = r.take::<1>()?;
    let counted = tag_byte & 0x80 != 0;
    let tag = PolicyTag::from_code(tag_byte & 0x7f)
        .ok_or_else(|| Error::MalformedTransmission(format!("unknown policy tag {tag_byte:#x}")))?;
    let n = r.u32()? as usize;
    let shared_weight = if counted { Some(r.f64()?) } else { None };
    let mut entries = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let mean = DVector::from_vec((0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        let mut covariance = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = r.f64()?;
                covariance[(i, j)] = v;
                covariance[(j, i)] = v;
            }
        }
        let weight = if counted {
            EntryWeight::Count(u64::from(r.u32()?))
        } else {
            EntryWeight::Explicit(r.f64()?)
        };
        entries.push(TransmissionEntry { mean, covariance, weight });
    }
    if r.pos != bytes.len() {
        return Err(Error::MalformedTransmission("trailing bytes".into()));
    }
    let t = Transmission { dim, tag, shared_weight, entries };
    reconstruct(&t)?;
    Ok(t)
}
