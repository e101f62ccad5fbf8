//! Tile-pattern KL divergence, diversity measures, latent/phenotype
//! correlation, reconstruction-error matrices and their CSV forms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::{Autoencoder, AutoencoderError, LatentVector};
use crate::novelty::euclidean;
use crate::tensor::Scalar;
use crate::voxel::{Material, MaterialLattice};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("window {window} does not fit lattice {dims} (supported windows are 1..=3)")]
    Window { window: usize, dims: String },
    #[error("{op} needs at least {needed} lattices, got {got}")]
    TooFew { op: &'static str, needed: usize, got: usize },
    #[error("{0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    pub window: usize,
    pub epsilon: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            window: 2,
            epsilon: 1e-6,
        }
    }
}

/// Window counts of one lattice, sorted by pattern key.
///
/// A pattern is the material ids of a `w`x`w`x`w` window read with x fastest,
/// then z, then y, packed base 5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternCounts {
    counts: Vec<(u64, u64)>,
    total: u64,
}

impl PatternCounts {
    pub fn new(lattice: &MaterialLattice, window: usize) -> Result<Self, MetricsError> {
        let d = lattice.dims();
        if window == 0 || window > 3 || window > d.x || window > d.y || window > d.z {
            return Err(MetricsError::Window {
                window,
                dims: d.to_string(),
            });
        }
        let cells = lattice.cells();
        let mut keys = Vec::with_capacity((d.x - window + 1) * (d.y - window + 1) * (d.z - window + 1));
        for y in 0..=d.y - window {
            for z in 0..=d.z - window {
                for x in 0..=d.x - window {
                    let mut key = 0u64;
                    for dy in 0..window {
                        for dz in 0..window {
                            for dx in 0..window {
                                key = key * Material::COUNT as u64 + cells[d.index(x + dx, y + dy, z + dz)] as u64;
                            }
                        }
                    }
                    keys.push(key);
                }
            }
        }
        keys.sort_unstable();
        let total = keys.len() as u64;
        let mut counts: Vec<(u64, u64)> = Vec::new();
        for k in keys {
            match counts.last_mut() {
                Some((last, c)) if *last == k => *c += 1,
                _ => counts.push((k, 1)),
            }
        }
        Ok(Self { counts, total })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, key: u64) -> u64 {
        self.counts
            .binary_search_by_key(&key, |&(k, _)| k)
            .map_or(0, |i| self.counts[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().copied()
    }
}

/// Smoothed probabilities over a shared support.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternDistribution {
    pub support: Vec<u64>,
    pub probabilities: Vec<f64>,
    pub epsilon: f64,
}

impl PatternDistribution {
    /// `(count + eps) / (total + eps * |support|)` for each support pattern.
    pub fn smoothed(counts: &PatternCounts, support: &[u64], epsilon: f64) -> Self {
        let denom = counts.total as f64 + epsilon * support.len() as f64;
        let probabilities = support.iter().map(|&k| (counts.count(k) as f64 + epsilon) / denom).collect();
        Self {
            support: support.to_vec(),
            probabilities,
            epsilon,
        }
    }

    /// Both distributions of a pair over the union of their observed patterns.
    pub fn pair(a: &PatternCounts, b: &PatternCounts, epsilon: f64) -> (Self, Self) {
        let support = union_support(a, b);
        (Self::smoothed(a, &support, epsilon), Self::smoothed(b, &support, epsilon))
    }
}

fn union_support(a: &PatternCounts, b: &PatternCounts) -> Vec<u64> {
    let mut keys: Vec<u64> = a.counts.iter().chain(&b.counts).map(|&(k, _)| k).collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

pub fn pattern_distribution(lattice: &MaterialLattice, config: &PatternConfig) -> Result<PatternDistribution, MetricsError> {
    let counts = PatternCounts::new(lattice, config.window)?;
    let support: Vec<u64> = counts.counts.iter().map(|&(k, _)| k).collect();
    Ok(PatternDistribution::smoothed(&counts, &support, config.epsilon))
}

/// `sum p ln(p / q)` over the shared support.
pub fn kl_divergence(p: &PatternDistribution, q: &PatternDistribution) -> f64 {
    assert_eq!(p.support, q.support, "distributions must share a support");
    p.probabilities
        .iter()
        .zip(&q.probabilities)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum()
}

/// `KL(P_a || P_b)` with pair-support smoothing, without materializing the
/// distributions.
pub fn pair_kl(a: &PatternCounts, b: &PatternCounts, epsilon: f64) -> f64 {
    let support = a.counts.len() + b.counts.len() - shared(a, b);
    let da = a.total as f64 + epsilon * support as f64;
    let db = b.total as f64 + epsilon * support as f64;
    let (mut i, mut j) = (0, 0);
    let mut kl = 0.0;
    let mut term = |ca: u64, cb: u64| {
        let p = (ca as f64 + epsilon) / da;
        let q = (cb as f64 + epsilon) / db;
        kl += p * (p / q).ln();
    };
    while i < a.counts.len() || j < b.counts.len() {
        match (a.counts.get(i), b.counts.get(j)) {
            (Some(&(ka, ca)), Some(&(kb, cb))) if ka == kb => {
                term(ca, cb);
                i += 1;
                j += 1;
            }
            (Some(&(ka, ca)), Some(&(kb, _))) if ka < kb => {
                term(ca, 0);
                i += 1;
            }
            (Some(&(_, ca)), None) => {
                term(ca, 0);
                i += 1;
            }
            (_, Some(&(_, cb))) => {
                term(0, cb);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    kl
}

fn shared(a: &PatternCounts, b: &PatternCounts) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.counts.len() && j < b.counts.len() {
        match a.counts[i].0.cmp(&b.counts[j].0) {
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    n
}

pub fn all_counts(lattices: &[MaterialLattice], window: usize) -> Result<Vec<PatternCounts>, MetricsError> {
    lattices.par_iter().map(|l| PatternCounts::new(l, window)).collect()
}

/// `KL(i || j)` for every ordered pair; the diagonal is 0.
pub fn kl_matrix(counts: &[PatternCounts], epsilon: f64) -> Vec<Vec<f64>> {
    (0..counts.len())
        .into_par_iter()
        .map(|i| {
            (0..counts.len())
                .map(|j| if i == j { 0.0 } else { pair_kl(&counts[i], &counts[j], epsilon) })
                .collect()
        })
        .collect()
}

/// Sums in ascending order so the result does not depend on member order.
fn ordered_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

/// Mean KL divergence of each individual to every other member.
pub fn population_diversity(population: &[MaterialLattice], config: &PatternConfig) -> Result<Vec<f64>, MetricsError> {
    if population.len() < 2 {
        return Err(MetricsError::TooFew {
            op: "population_diversity",
            needed: 2,
            got: population.len(),
        });
    }
    let counts = all_counts(population, config.window)?;
    let n = counts.len();
    Ok(kl_matrix(&counts, config.epsilon)
        .into_iter()
        .map(|row| ordered_sum(row) / (n - 1) as f64)
        .collect())
}

/// Mean KL divergence of each individual to every member of `seed`.
pub fn divergence_from_seed(
    population: &[MaterialLattice],
    seed: &[MaterialLattice],
    config: &PatternConfig,
) -> Result<Vec<f64>, MetricsError> {
    if seed.is_empty() {
        return Err(MetricsError::TooFew {
            op: "divergence_from_seed",
            needed: 1,
            got: 0,
        });
    }
    let pop = all_counts(population, config.window)?;
    let seed = all_counts(seed, config.window)?;
    Ok(pop
        .par_iter()
        .map(|p| ordered_sum(seed.iter().map(|s| pair_kl(p, s, config.epsilon)).collect()) / seed.len() as f64)
        .collect())
}

/// Pearson correlation; `None` when either series has zero variance or
/// fewer than two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// `None` when undefined (zero variance).
    pub r: Option<f64>,
    pub pairs: usize,
}

/// Pearson r between latent distance and `KL(i || j)` over ordered pairs `i != j`.
pub fn correlation_from_latents(
    lattices: &[MaterialLattice],
    latents: &[LatentVector],
    config: &PatternConfig,
) -> Result<Correlation, MetricsError> {
    if lattices.len() < 3 {
        return Err(MetricsError::TooFew {
            op: "latent_phenotype_correlation",
            needed: 3,
            got: lattices.len(),
        });
    }
    if lattices.len() != latents.len() {
        return Err(MetricsError::Mismatch(format!(
            "{} lattices but {} latent vectors",
            lattices.len(),
            latents.len()
        )));
    }
    let counts = all_counts(lattices, config.window)?;
    let kl = kl_matrix(&counts, config.epsilon);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..lattices.len() {
        for j in 0..lattices.len() {
            if i != j {
                xs.push(euclidean(&latents[i], &latents[j]));
                ys.push(kl[i][j]);
            }
        }
    }
    Ok(Correlation {
        r: pearson(&xs, &ys),
        pairs: xs.len(),
    })
}

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] AutoencoderError),
}

pub fn latent_phenotype_correlation<T: Scalar>(
    population: &[MaterialLattice],
    model: &Autoencoder<T>,
    config: &PatternConfig,
) -> Result<Correlation, CorrelationError> {
    let latents = model.encode_all(population)?;
    Ok(correlation_from_latents(population, &latents, config)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for fewer than two values).
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std, n }
    }

    /// Half-width of the normal-approximation 95% confidence interval.
    pub fn ci95(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            1.96 * self.std / (self.n as f64).sqrt()
        }
    }
}

/// Rows are models, columns population sets; each population set is a list
/// of populations. A cell holds mean and std over that set's populations of
/// the per-population reconstruction error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMatrix {
    pub models: Vec<String>,
    pub sets: Vec<String>,
    pub cells: Vec<Vec<MeanStd>>,
    /// Per model, over every population of every set.
    pub overall: Vec<MeanStd>,
}

pub fn reconstruction_matrix<T: Scalar>(
    models: &[(String, &Autoencoder<T>)],
    sets: &[(String, Vec<Vec<MaterialLattice>>)],
) -> Result<ReconstructionMatrix, AutoencoderError> {
    let mut cells = Vec::new();
    let mut overall = Vec::new();
    for (_, model) in models {
        let mut row = Vec::new();
        let mut pooled = Vec::new();
        for (_, populations) in sets {
            let errors = populations
                .iter()
                .map(|p| model.reconstruction_error(p))
                .collect::<Result<Vec<_>, _>>()?;
            row.push(MeanStd::of(&errors));
            pooled.extend(errors);
        }
        cells.push(row);
        overall.push(MeanStd::of(&pooled));
    }
    Ok(ReconstructionMatrix {
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        sets: sets.iter().map(|(n, _)| n.clone()).collect(),
        cells,
        overall,
    })
}

impl ReconstructionMatrix {
    /// `model,population_set,mean,std,count`; the pooled column uses the set
    /// name `overall`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,population_set,mean,std,count\n");
        for (m, row) in self.models.iter().zip(&self.cells) {
            for (s, c) in self.sets.iter().zip(row) {
                out.push_str(&format!("{m},{s},{},{},{}\n", c.mean, c.std, c.n));
            }
        }
        for (m, c) in self.models.iter().zip(&self.overall) {
            out.push_str(&format!("{m},overall,{},{},{}\n", c.mean, c.std, c.n));
        }
        out
    }
}
