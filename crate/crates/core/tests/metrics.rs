use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxnox::metrics::{
    correlation_from_latents, divergence_from_seed, kl_divergence, pair_kl, pattern_distribution, pearson,
    population_diversity, MeanStd, PatternConfig, PatternCounts, PatternDistribution,
};
use voxnox::voxel::{Dims, Material, MaterialLattice};

fn random_lattice(rng: &mut ChaCha8Rng, d: Dims, materials: u8) -> MaterialLattice {
    let ids: Vec<u8> = (0..d.len()).map(|_| rng.random_range(0..materials)).collect();
    MaterialLattice::from_ids(d, &ids).unwrap()
}

/// Windows as explicit material vectors, counted in a map.
fn window_oracle(l: &MaterialLattice, w: usize) -> BTreeMap<Vec<Material>, u64> {
    let d = l.dims();
    let mut counts = BTreeMap::new();
    for x0 in 0..=d.x - w {
        for y0 in 0..=d.y - w {
            for z0 in 0..=d.z - w {
                let mut key = Vec::new();
                for dy in 0..w {
                    for dz in 0..w {
                        for dx in 0..w {
                            key.push(l.get(x0 + dx, y0 + dy, z0 + dz));
                        }
                    }
                }
                *counts.entry(key).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// KL from the map oracle with pair-support smoothing.
fn kl_oracle(a: &MaterialLattice, b: &MaterialLattice, w: usize, eps: f64) -> f64 {
    let (ca, cb) = (window_oracle(a, w), window_oracle(b, w));
    let support: BTreeSet<&Vec<Material>> = ca.keys().chain(cb.keys()).collect();
    let (ta, tb): (u64, u64) = (ca.values().sum(), cb.values().sum());
    let s = support.len() as f64;
    support
        .iter()
        .map(|k| {
            let p = (*ca.get(*k).unwrap_or(&0) as f64 + eps) / (ta as f64 + eps * s);
            let q = (*cb.get(*k).unwrap_or(&0) as f64 + eps) / (tb as f64 + eps * s);
            p * (p / q).ln()
        })
        .sum()
}

#[test]
fn window_counts_match_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for w in 1..=3 {
        let l = random_lattice(&mut rng, Dims::new(6, 5, 4), 3);
        let counts = PatternCounts::new(&l, w).unwrap();
        let oracle = window_oracle(&l, w);
        assert_eq!(counts.distinct(), oracle.len());
        assert_eq!(counts.total(), oracle.values().sum::<u64>());
        let mut got: Vec<u64> = counts.iter().map(|(_, c)| c).collect();
        let mut want: Vec<u64> = oracle.values().copied().collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }
}

#[test]
fn uniform_lattice_and_window_count() {
    let l = MaterialLattice::filled(Dims::cube(20), Material::ExteriorAir);
    let c = PatternCounts::new(&l, 2).unwrap();
    assert_eq!(c.total(), 19 * 19 * 19);
    assert_eq!(c.distinct(), 1);
    let p = pattern_distribution(&l, &PatternConfig::default()).unwrap();
    assert_eq!(p.probabilities, vec![1.0]);
    assert!(PatternCounts::new(&MaterialLattice::filled(Dims::cube(1), Material::Wall), 2).is_err());
}

#[test]
fn hand_built_two_pattern_kl() {
    let p = PatternDistribution {
        support: vec![0, 1],
        probabilities: vec![0.75, 0.25],
        epsilon: 0.0,
    };
    let q = PatternDistribution {
        support: vec![0, 1],
        probabilities: vec![0.5, 0.5],
        epsilon: 0.0,
    };
    let want = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
    assert!((kl_divergence(&p, &q) - want).abs() < 1e-15);
    assert!((want - 0.1308).abs() < 1e-4);
    assert_eq!(kl_divergence(&p, &p), 0.0);
}

#[test]
fn merged_kl_matches_map_oracle_and_distribution_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let d = Dims::cube(7);
    for _ in 0..30 {
        let (a, b) = (random_lattice(&mut rng, d, 2), random_lattice(&mut rng, d, 3));
        let (ca, cb) = (PatternCounts::new(&a, 2).unwrap(), PatternCounts::new(&b, 2).unwrap());
        let got = pair_kl(&ca, &cb, 1e-6);
        assert!((got - kl_oracle(&a, &b, 2, 1e-6)).abs() < 1e-9 * got.max(1.0));
        let (p, q) = PatternDistribution::pair(&ca, &cb, 1e-6);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.probabilities.iter().all(|&x| x > 0.0));
        assert!((kl_divergence(&p, &q) - got).abs() < 1e-9 * got.max(1.0));
    }
}

#[test]
fn diversity_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let pop: Vec<MaterialLattice> = (0..5).map(|i| random_lattice(&mut rng, Dims::cube(6), 2 + i % 3)).collect();
    let cfg = PatternConfig::default();
    let got = population_diversity(&pop, &cfg).unwrap();
    for i in 0..5 {
        let want = (0..5).filter(|&j| j != i).map(|j| kl_oracle(&pop[i], &pop[j], 2, 1e-6)).sum::<f64>() / 4.0;
        assert!((got[i] - want).abs() < 1e-9 * want.max(1.0));
    }
    let mut rev = pop.clone();
    rev.reverse();
    let mut back = population_diversity(&rev, &cfg).unwrap();
    back.reverse();
    assert_eq!(back, got);
    assert!(population_diversity(&pop[..1], &cfg).is_err());
    let same = vec![pop[0].clone(); 4];
    assert!(population_diversity(&same, &cfg).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn divergence_from_seed_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let cfg = PatternConfig::default();
    let pop: Vec<MaterialLattice> = (0..4).map(|_| random_lattice(&mut rng, Dims::cube(5), 3)).collect();
    let seed: Vec<MaterialLattice> = (0..3).map(|_| random_lattice(&mut rng, Dims::cube(5), 2)).collect();
    let got = divergence_from_seed(&pop, &seed, &cfg).unwrap();
    for (i, p) in pop.iter().enumerate() {
        let want = seed.iter().map(|s| kl_oracle(p, s, 2, 1e-6)).sum::<f64>() / 3.0;
        assert!((got[i] - want).abs() < 1e-9 * want.max(1.0));
    }
    let single = divergence_from_seed(&pop, &seed[..1], &cfg).unwrap();
    for (i, p) in pop.iter().enumerate() {
        assert!((single[i] - kl_oracle(p, &seed[0], 2, 1e-6)).abs() < 1e-9);
    }
    // Against itself, the mean includes the zero self term.
    let own = divergence_from_seed(&pop, &pop, &cfg).unwrap();
    let div = population_diversity(&pop, &cfg).unwrap();
    for i in 0..4 {
        assert!((own[i] - div[i] * 3.0 / 4.0).abs() < 1e-12);
    }
    assert!(divergence_from_seed(&pop, &[], &cfg).is_err());
}

/// n*sum(xy) - sum(x)sum(y) over the root of the matching variance terms.
fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn pearson_cases() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&x, &[3.0, 5.0, 7.0, 9.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(pearson(&x, &[2.0; 4]), None);
    assert_eq!(pearson(&[1.0], &[1.0]), None);
}

#[test]
fn latent_correlation_matches_textbook_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let pop: Vec<MaterialLattice> = (0..10).map(|i| random_lattice(&mut rng, Dims::cube(5), 2 + (i % 4) as u8)).collect();
    let latents: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let c = correlation_from_latents(&pop, &latents, &PatternConfig::default()).unwrap();
    assert_eq!(c.pairs, 90);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..10 {
        for j in 0..10 {
            if i != j {
                xs.push(latents[i].iter().zip(&latents[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
                ys.push(kl_oracle(&pop[i], &pop[j], 2, 1e-6));
            }
        }
    }
    assert!((c.r.unwrap() - textbook_pearson(&xs, &ys)).abs() < 1e-9);
    assert!(correlation_from_latents(&pop[..2], &latents[..2], &PatternConfig::default()).is_err());
}

#[test]
fn mean_std_and_interval() {
    let s = MeanStd::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
    assert_eq!(s.mean, 5.0);
    assert!((s.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    assert!((s.ci95() - 1.96 * s.std / 8f64.sqrt()).abs() < 1e-12);
    assert_eq!(MeanStd::of(&[3.0]).std, 0.0);
}

proptest! {
    #[test]
    fn kl_is_non_negative_and_zero_on_self(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_lattice(&mut rng, Dims::cube(5), 3);
        let b = random_lattice(&mut rng, Dims::cube(5), 3);
        let (ca, cb) = (PatternCounts::new(&a, 2).unwrap(), PatternCounts::new(&b, 2).unwrap());
        prop_assert!(pair_kl(&ca, &cb, 1e-6) >= 0.0);
        prop_assert_eq!(pair_kl(&ca, &ca, 1e-6), 0.0);
    }
}
