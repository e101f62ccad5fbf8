//! Novelty as the mean Euclidean latent distance to the `k` nearest
//! neighbours, and the per-population archive of novel individuals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::{Autoencoder, AutoencoderError, LatentVector};
use crate::tensor::Scalar;
use crate::voxel::MaterialLattice;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoveltyError {
    #[error("latent dimension mismatch: subject has {subject}, neighbour has {other}")]
    DimensionMismatch { subject: usize, other: usize },
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance from `subject` to its `k` nearest vectors in `pool`, or to
/// the whole pool when it holds fewer than `k`. An empty pool scores 0.
/// The caller leaves the subject itself out of the pool.
pub fn knn_novelty<'a>(
    subject: &[f64],
    pool: impl IntoIterator<Item = &'a [f64]>,
    k: usize,
) -> Result<f64, NoveltyError> {
    let mut dists = Vec::new();
    for v in pool {
        if v.len() != subject.len() {
            return Err(NoveltyError::DimensionMismatch {
                subject: subject.len(),
                other: v.len(),
            });
        }
        dists.push(euclidean(subject, v));
    }
    if dists.is_empty() || k == 0 {
        return Ok(0.0);
    }
    let take = k.min(dists.len());
    if take < dists.len() {
        dists.select_nth_unstable_by(take - 1, f64::total_cmp);
    }
    let mut nearest = dists[..take].to_vec();
    nearest.sort_by(f64::total_cmp);
    Ok(nearest.iter().sum::<f64>() / take as f64)
}

/// Novelty of `subject` against the other population members and the archive.
pub fn novelty_score(
    subject: &[f64],
    population: &[LatentVector],
    archive: &NoveltyArchive,
    k: usize,
) -> Result<f64, NoveltyError> {
    let pool = population
        .iter()
        .map(Vec::as_slice)
        .chain(archive.entries.iter().map(|e| e.latent.as_slice()));
    knn_novelty(subject, pool, k)
}

/// Scores every feasible member (`Some` latent) of a population; each one's
/// pool is the other feasible members plus the archive. Infeasible members
/// score 0.
pub fn score_population(
    latents: &[Option<LatentVector>],
    archive: &NoveltyArchive,
    k: usize,
) -> Result<Vec<f64>, NoveltyError> {
    latents
        .iter()
        .enumerate()
        .map(|(i, subject)| match subject {
            None => Ok(0.0),
            Some(s) => {
                let others = latents
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .filter_map(|(_, v)| v.as_deref());
                let pool = others.chain(archive.entries.iter().map(|e| e.latent.as_slice()));
                knn_novelty(s, pool, k)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub phase: u32,
    pub generation: u32,
    pub lattice: MaterialLattice,
    pub latent: LatentVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoveltyArchive {
    pub entries: Vec<ArchiveEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub lattice: MaterialLattice,
    pub latent: LatentVector,
    pub score: f64,
}

impl NoveltyArchive {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, lattice: &MaterialLattice) -> bool {
        self.entries.iter().any(|e| &e.lattice == lattice)
    }

    pub fn lattices(&self) -> impl Iterator<Item = &MaterialLattice> {
        self.entries.iter().map(|e| &e.lattice)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("archive serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

/// Takes the `alpha` highest-scoring candidates (ties by input order) and
/// inserts those whose lattice is not archived yet. A skipped candidate is not
/// replaced by a lower-ranked one. Returns the number inserted.
pub fn update_archive(
    archive: &mut NoveltyArchive,
    candidates: Vec<Candidate>,
    alpha: usize,
    phase: u32,
    generation: u32,
) -> usize {
    let mut ranked: Vec<(usize, Candidate)> = candidates.into_iter().enumerate().collect();
    ranked.sort_by(|(i, a), (j, b)| b.score.total_cmp(&a.score).then(i.cmp(j)));
    let mut inserted = 0;
    for (_, c) in ranked.into_iter().take(alpha) {
        if archive.contains(&c.lattice) {
            continue;
        }
        archive.entries.push(ArchiveEntry {
            phase,
            generation,
            lattice: c.lattice,
            latent: c.latent,
        });
        inserted += 1;
    }
    inserted
}

/// Replaces every latent vector with its encoding under `model`.
pub fn reencode_archive<T: Scalar>(
    archive: &mut NoveltyArchive,
    model: &Autoencoder<T>,
) -> Result<(), AutoencoderError> {
    let lattices: Vec<MaterialLattice> = archive.lattices().cloned().collect();
    let latents = model.encode_all(&lattices)?;
    for (e, z) in archive.entries.iter_mut().zip(latents) {
        e.latent = z;
    }
    Ok(())
}
