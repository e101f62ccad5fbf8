//! NEAT reproduction: innovation bookkeeping, speciation, crossover,
//! mutation and fitness-shared offspring allocation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cppn::{
    seed_genome_from, Activation, ConnectionGene, CppnGenome, NodeGene, NodeKind, FIRST_HIDDEN_ID, INPUT_IDS,
    OUTPUT_ID,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeatParams {
    pub population_size: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub compatibility_threshold: f64,
    pub threshold_step: f64,
    pub threshold_min: f64,
    pub target_species: usize,
    pub weight_mutation_prob: f64,
    pub weight_perturb_sigma: f64,
    pub weight_replace_prob: f64,
    pub add_connection_prob: f64,
    pub add_node_prob: f64,
    pub activation_mutation_prob: f64,
    pub crossover_prob: f64,
    pub disable_inherited_prob: f64,
    pub elitism: usize,
    pub elitism_min_species_size: usize,
    pub survival_fraction: f64,
    pub stagnation_limit: u32,
}

impl Default for NeatParams {
    fn default() -> Self {
        Self {
            population_size: 200,
            c1: 1.0,
            c2: 1.0,
            c3: 0.4,
            compatibility_threshold: 3.0,
            threshold_step: 0.1,
            threshold_min: 0.3,
            target_species: 10,
            weight_mutation_prob: 0.8,
            weight_perturb_sigma: 0.5,
            weight_replace_prob: 0.1,
            add_connection_prob: 0.1,
            add_node_prob: 0.05,
            activation_mutation_prob: 0.1,
            crossover_prob: 0.75,
            disable_inherited_prob: 0.75,
            elitism: 1,
            elitism_min_species_size: 5,
            survival_fraction: 0.4,
            stagnation_limit: 20,
        }
    }
}

impl NeatParams {
    pub fn validate(&self) -> Result<(), String> {
        let probs = [
            ("weight_mutation_prob", self.weight_mutation_prob),
            ("weight_replace_prob", self.weight_replace_prob),
            ("add_connection_prob", self.add_connection_prob),
            ("add_node_prob", self.add_node_prob),
            ("activation_mutation_prob", self.activation_mutation_prob),
            ("crossover_prob", self.crossover_prob),
            ("disable_inherited_prob", self.disable_inherited_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("neat.{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.population_size < 2 {
            return Err("neat.population_size must be at least 2".into());
        }
        if !(self.survival_fraction > 0.0 && self.survival_fraction <= 1.0) {
            return Err("neat.survival_fraction must lie in (0, 1]".into());
        }
        if !(self.weight_perturb_sigma >= 0.0 && self.weight_perturb_sigma.is_finite()) {
            return Err("neat.weight_perturb_sigma must be finite and non-negative".into());
        }
        if !(self.compatibility_threshold > 0.0 && self.threshold_min > 0.0 && self.threshold_step >= 0.0) {
            return Err("neat compatibility threshold settings must be positive".into());
        }
        if self.target_species == 0 {
            return Err("neat.target_species must be positive".into());
        }
        Ok(())
    }
}

/// Connection innovations are keyed by `(from, to)` for the whole run, so the
/// same edge always carries the same number. Split nodes are keyed by the
/// split connection's innovation and forgotten at each generation boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationRegistry {
    #[serde(with = "pair_map")]
    connections: BTreeMap<(u32, u32), u64>,
    splits: BTreeMap<u64, u32>,
    next_innovation: u64,
    next_node: u32,
}

impl Default for InnovationRegistry {
    fn default() -> Self {
        let connections = INPUT_IDS.iter().map(|&i| ((i, OUTPUT_ID), i as u64)).collect();
        Self {
            connections,
            splits: BTreeMap::new(),
            next_innovation: INPUT_IDS.len() as u64,
            next_node: FIRST_HIDDEN_ID,
        }
    }
}

impl InnovationRegistry {
    pub fn connection(&mut self, from: u32, to: u32) -> u64 {
        let next = &mut self.next_innovation;
        *self.connections.entry((from, to)).or_insert_with(|| {
            *next += 1;
            *next - 1
        })
    }

    /// Node id for splitting connection `innovation` in `genome`. Genomes that
    /// already hold the shared id get a fresh one.
    pub fn split_node(&mut self, innovation: u64, genome: &CppnGenome) -> u32 {
        if let Some(&id) = self.splits.get(&innovation) {
            if genome.node(id).is_none() {
                return id;
            }
            return self.fresh_node();
        }
        let id = self.fresh_node();
        self.splits.insert(innovation, id);
        id
    }

    fn fresh_node(&mut self) -> u32 {
        self.next_node += 1;
        self.next_node - 1
    }

    pub fn begin_generation(&mut self) {
        self.splits.clear();
    }

    pub fn next_innovation(&self) -> u64 {
        self.next_innovation
    }

    pub fn next_node(&self) -> u32 {
        self.next_node
    }
}

mod pair_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<(u32, u32), u64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter().map(|(&(a, b), &v)| (a, b, v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(u32, u32), u64>, D::Error> {
        let items = Vec::<(u32, u32, u64)>::deserialize(d)?;
        Ok(items.into_iter().map(|(a, b, v)| ((a, b), v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub id: u64,
    pub representative: CppnGenome,
    /// Indices into the population the species was last built from.
    pub members: Vec<usize>,
    pub best_fitness: f64,
    pub staleness: u32,
}

/// `(c1 * E + c2 * D) / N + c3 * W`, with `N` the larger gene count (at least 1)
/// and `W` the mean absolute weight difference of matching genes.
pub fn compatibility_distance(a: &CppnGenome, b: &CppnGenome, params: &NeatParams) -> f64 {
    let (ga, gb) = (&a.connections, &b.connections);
    let max_a = ga.last().map(|c| c.innovation);
    let max_b = gb.last().map(|c| c.innovation);
    let (mut i, mut j) = (0, 0);
    let (mut excess, mut disjoint, mut matching) = (0usize, 0usize, 0usize);
    let mut weight_diff = 0.0;
    let mut unmatched = |innovation: u64, other_max: Option<u64>| {
        if other_max.is_none_or(|m| innovation > m) {
            excess += 1;
        } else {
            disjoint += 1;
        }
    };
    while i < ga.len() || j < gb.len() {
        match (ga.get(i), gb.get(j)) {
            (Some(x), Some(y)) if x.innovation == y.innovation => {
                matching += 1;
                weight_diff += (x.weight - y.weight).abs();
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.innovation < y.innovation => {
                unmatched(x.innovation, max_b);
                i += 1;
            }
            (Some(x), None) => {
                unmatched(x.innovation, max_b);
                i += 1;
            }
            (_, Some(y)) => {
                unmatched(y.innovation, max_a);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    let n = ga.len().max(gb.len()).max(1) as f64;
    let w = if matching == 0 {
        0.0
    } else {
        weight_diff / matching as f64
    };
    (params.c1 * excess as f64 + params.c2 * disjoint as f64) / n + params.c3 * w
}

/// Places each genome in the first species whose representative lies within
/// `threshold`, opening a new species otherwise. Previous species keep their
/// representatives; survivors then take their first member as the next
/// representative. Empty species are dropped.
pub fn speciate(
    population: &[CppnGenome],
    previous: &[Species],
    threshold: f64,
    params: &NeatParams,
    next_species_id: &mut u64,
) -> Vec<Species> {
    let mut species: Vec<Species> = previous
        .iter()
        .map(|s| Species {
            members: Vec::new(),
            ..s.clone()
        })
        .collect();
    for (i, g) in population.iter().enumerate() {
        match species
            .iter_mut()
            .find(|s| compatibility_distance(&s.representative, g, params) < threshold)
        {
            Some(s) => s.members.push(i),
            None => {
                species.push(Species {
                    id: *next_species_id,
                    representative: g.clone(),
                    members: vec![i],
                    best_fitness: 0.0,
                    staleness: 0,
                });
                *next_species_id += 1;
            }
        }
    }
    species.retain(|s| !s.members.is_empty());
    for s in &mut species {
        s.representative = population[s.members[0]].clone();
    }
    species
}

/// Moves the threshold one step toward the target species count.
pub fn adjust_threshold(threshold: f64, live_species: usize, params: &NeatParams) -> f64 {
    use std::cmp::Ordering::*;
    match live_species.cmp(&params.target_species) {
        Greater => threshold + params.threshold_step,
        Less => (threshold - params.threshold_step).max(params.threshold_min),
        Equal => threshold,
    }
}

/// Matching genes come from either parent at random; unmatched genes come
/// from the fitter parent, or from each parent with probability 0.5 when
/// fitness is equal. A gene disabled in exactly one parent is disabled with
/// probability `disable_inherited_prob`; disabled in both, it stays
/// disabled. Genes that would close a cycle are dropped.
pub fn crossover<R: Rng + ?Sized>(a: &CppnGenome, b: &CppnGenome, params: &NeatParams, rng: &mut R) -> CppnGenome {
    let (a, b) = if b.fitness > a.fitness { (b, a) } else { (a, b) };
    let equal = a.fitness == b.fitness;
    let mut genes: Vec<(ConnectionGene, &CppnGenome)> = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (ga, gb) = (&a.connections, &b.connections);
    while i < ga.len() || j < gb.len() {
        match (ga.get(i), gb.get(j)) {
            (Some(x), Some(y)) if x.innovation == y.innovation => {
                let (mut gene, src) = if rng.random_bool(0.5) { (*x, a) } else { (*y, b) };
                gene.enabled = match (x.enabled, y.enabled) {
                    (true, true) => true,
                    (false, false) => false,
                    _ => !rng.random_bool(params.disable_inherited_prob),
                };
                genes.push((gene, src));
                i += 1;
                j += 1;
            }
            (Some(x), y) if y.is_none_or(|y| x.innovation < y.innovation) => {
                if !equal || rng.random_bool(0.5) {
                    genes.push((*x, a));
                }
                i += 1;
            }
            (_, Some(y)) => {
                if equal && rng.random_bool(0.5) {
                    genes.push((*y, b));
                }
                j += 1;
            }
            _ => unreachable!(),
        }
    }
    let mut child = CppnGenome::minimal();
    for (gene, src) in genes {
        if child.creates_cycle(gene.from, gene.to) {
            continue;
        }
        for id in [gene.from, gene.to] {
            if child.node(id).is_none() {
                let node = a.node(id).or_else(|| src.node(id)).expect("parent holds its nodes");
                child.insert_node(*node);
            }
        }
        child.connections.push(gene);
    }
    child
}

/// Applies each structural and parametric mutation independently.
pub fn mutate<R: Rng + ?Sized>(
    genome: &CppnGenome,
    registry: &mut InnovationRegistry,
    params: &NeatParams,
    rng: &mut R,
) -> CppnGenome {
    let mut g = genome.clone();
    if rng.random_bool(params.weight_mutation_prob) {
        let jitter = Normal::new(0.0, params.weight_perturb_sigma).expect("validated sigma");
        for c in &mut g.connections {
            if rng.random_bool(params.weight_replace_prob) {
                c.weight = rng.random_range(-1.0..1.0);
            } else {
                c.weight += jitter.sample(rng);
            }
        }
    }
    if rng.random_bool(params.add_connection_prob) {
        add_connection(&mut g, registry, rng);
    }
    if rng.random_bool(params.add_node_prob) {
        add_node(&mut g, registry, rng);
    }
    if rng.random_bool(params.activation_mutation_prob) {
        let hidden: Vec<u32> = g.nodes.iter().filter(|n| n.kind == NodeKind::Hidden).map(|n| n.id).collect();
        if let Some(&id) = hidden.choose(rng) {
            let node = g.node_mut(id).expect("hidden id from genome");
            let others: Vec<Activation> = Activation::HIDDEN.into_iter().filter(|&a| a != node.activation).collect();
            node.activation = *others.choose(rng).expect("five activations");
        }
    }
    g
}

fn add_connection<R: Rng + ?Sized>(g: &mut CppnGenome, registry: &mut InnovationRegistry, rng: &mut R) {
    let mut out: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for c in &g.connections {
        out.entry(c.from).or_default().push(c.to);
    }
    let mut candidates = Vec::new();
    for to in g.nodes.iter().filter(|n| n.kind != NodeKind::Input) {
        // Everything `to` reaches (itself included) would close a cycle as a source.
        let mut reach = BTreeSet::from([to.id]);
        let mut stack = vec![to.id];
        while let Some(n) = stack.pop() {
            for &m in out.get(&n).into_iter().flatten() {
                if reach.insert(m) {
                    stack.push(m);
                }
            }
        }
        for from in g.nodes.iter().filter(|n| n.kind != NodeKind::Output) {
            let taken = out.get(&from.id).is_some_and(|t| t.contains(&to.id));
            if !taken && !reach.contains(&from.id) {
                candidates.push((from.id, to.id));
            }
        }
    }
    candidates.sort_unstable();
    if let Some(&(from, to)) = candidates.choose(rng) {
        let conn = ConnectionGene {
            innovation: registry.connection(from, to),
            from,
            to,
            weight: rng.random_range(-1.0..1.0),
            enabled: true,
        };
        g.insert_connection(conn);
    }
}

fn add_node<R: Rng + ?Sized>(g: &mut CppnGenome, registry: &mut InnovationRegistry, rng: &mut R) {
    let enabled: Vec<usize> = (0..g.connections.len()).filter(|&i| g.connections[i].enabled).collect();
    let Some(&pick) = enabled.choose(rng) else {
        return;
    };
    let old = g.connections[pick];
    g.connections[pick].enabled = false;
    let id = registry.split_node(old.innovation, g);
    let activation = *Activation::HIDDEN.choose(rng).expect("non-empty");
    g.insert_node(NodeGene {
        id,
        kind: NodeKind::Hidden,
        activation,
    });
    for (from, to, weight) in [(old.from, id, 1.0), (id, old.to, old.weight)] {
        g.insert_connection(ConnectionGene {
            innovation: registry.connection(from, to),
            from,
            to,
            weight,
            enabled: true,
        });
    }
}

/// Splits `total` offspring across species in proportion to `shares` by the
/// largest-remainder method; ties go to the lower index. All-zero shares
/// split by `fallback` weights instead (e.g. feasible member counts).
pub fn allocate_offspring(shares: &[f64], fallback: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let weights = if sum > 0.0 && sum.is_finite() { shares } else { fallback };
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        quota[i] += 1;
    }
    quota
}

/// One evolving NEAT population with its bookkeeping and random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub genomes: Vec<CppnGenome>,
    pub species: Vec<Species>,
    pub registry: InnovationRegistry,
    pub threshold: f64,
    pub next_species_id: u64,
    /// Generations reproduced so far.
    pub generation: u32,
    pub rng: ChaCha8Rng,
}

impl Population {
    pub fn seeded(params: &NeatParams, mut rng: ChaCha8Rng) -> Self {
        let genomes = (0..params.population_size).map(|_| seed_genome_from(&mut rng)).collect();
        Self {
            genomes,
            species: Vec::new(),
            registry: InnovationRegistry::default(),
            threshold: params.compatibility_threshold,
            next_species_id: 0,
            generation: 0,
            rng,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub species: usize,
    pub threshold: f64,
    /// Every genome was infeasible and the population was reseeded.
    pub degenerate: bool,
    pub removed_stagnant: usize,
}

/// Replaces the population with the next generation. Infeasible genomes get
/// fitness 0 and never reproduce.
pub fn next_generation(
    pop: &mut Population,
    fitness: &[f64],
    feasible: &[bool],
    params: &NeatParams,
) -> GenerationReport {
    let n = pop.genomes.len();
    assert_eq!(fitness.len(), n, "one fitness per genome");
    assert_eq!(feasible.len(), n, "one feasibility flag per genome");
    for (g, (&f, &ok)) in pop.genomes.iter_mut().zip(fitness.iter().zip(feasible)) {
        g.fitness = if ok { f } else { 0.0 };
    }
    pop.registry.begin_generation();
    pop.generation += 1;

    if !feasible.iter().any(|&f| f) {
        let size = params.population_size;
        pop.genomes = (0..size).map(|_| seed_genome_from(&mut pop.rng)).collect();
        pop.species.clear();
        return GenerationReport {
            species: 0,
            threshold: pop.threshold,
            degenerate: true,
            removed_stagnant: 0,
        };
    }

    let mut species = speciate(&pop.genomes, &pop.species, pop.threshold, params, &mut pop.next_species_id);
    pop.threshold = adjust_threshold(pop.threshold, species.len(), params);

    for s in &mut species {
        let best = s
            .members
            .iter()
            .filter(|&&i| feasible[i])
            .map(|&i| pop.genomes[i].fitness)
            .fold(0.0, f64::max);
        if best > s.best_fitness {
            s.best_fitness = best;
            s.staleness = 0;
        } else {
            s.staleness += 1;
        }
    }
    let before = species.len();
    let fresh: Vec<bool> = species.iter().map(|s| s.staleness < params.stagnation_limit).collect();
    if fresh.iter().any(|&f| f) {
        let mut keep = fresh.into_iter();
        species.retain(|_| keep.next().expect("one flag per species"));
    } else {
        let best = species
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.best_fitness.total_cmp(&b.best_fitness).then(j.cmp(i)))
            .map(|(i, _)| i)
            .expect("non-empty");
        species = vec![species.swap_remove(best)];
    }
    let removed_stagnant = before - species.len();

    let ranked: Vec<Vec<usize>> = species
        .iter()
        .map(|s| {
            let mut m: Vec<usize> = s.members.iter().copied().filter(|&i| feasible[i]).collect();
            m.sort_by(|&i, &j| pop.genomes[j].fitness.total_cmp(&pop.genomes[i].fitness).then(i.cmp(&j)));
            m
        })
        .collect();
    let shares: Vec<f64> = ranked
        .iter()
        .map(|m| {
            if m.is_empty() {
                0.0
            } else {
                m.iter().map(|&i| pop.genomes[i].fitness).sum::<f64>() / m.len() as f64
            }
        })
        .collect();
    let counts: Vec<f64> = ranked.iter().map(|m| m.len() as f64).collect();
    let quotas = allocate_offspring(&shares, &counts, params.population_size);
    if quotas.iter().sum::<usize>() == 0 {
        // Only stagnation-surviving species without feasible members remain;
        // fall back to every feasible genome as one pool.
        let mut all: Vec<usize> = (0..n).filter(|&i| feasible[i]).collect();
        all.sort_by(|&i, &j| pop.genomes[j].fitness.total_cmp(&pop.genomes[i].fitness).then(i.cmp(&j)));
        species.truncate(1);
        return finish(pop, species, vec![all], vec![params.population_size], params, removed_stagnant);
    }
    finish(pop, species, ranked, quotas, params, removed_stagnant)
}

fn finish(
    pop: &mut Population,
    species: Vec<Species>,
    ranked: Vec<Vec<usize>>,
    quotas: Vec<usize>,
    params: &NeatParams,
    removed_stagnant: usize,
) -> GenerationReport {
    let mut children = Vec::with_capacity(params.population_size);
    for ((s, members), quota) in species.iter().zip(&ranked).zip(quotas) {
        if quota == 0 || members.is_empty() {
            continue;
        }
        let mut made = 0;
        if s.members.len() >= params.elitism_min_species_size {
            for &e in members.iter().take(params.elitism.min(quota)) {
                children.push(pop.genomes[e].clone());
                made += 1;
            }
        }
        let keep = ((members.len() as f64 * params.survival_fraction).ceil() as usize).clamp(1, members.len());
        let parents = &members[..keep];
        while made < quota {
            let child = if parents.len() >= 2 && pop.rng.random_bool(params.crossover_prob) {
                let picks: Vec<&usize> = parents.choose_multiple(&mut pop.rng, 2).collect();
                let (a, b) = (&pop.genomes[*picks[0]], &pop.genomes[*picks[1]]);
                crossover(a, b, params, &mut pop.rng)
            } else {
                pop.genomes[*parents.choose(&mut pop.rng).expect("non-empty")].clone()
            };
            let mut child = mutate(&child, &mut pop.registry, params, &mut pop.rng);
            child.fitness = 0.0;
            children.push(child);
            made += 1;
        }
    }
    debug_assert_eq!(children.len(), params.population_size);
    pop.genomes = children;
    let report = GenerationReport {
        species: species.len(),
        threshold: pop.threshold,
        degenerate: false,
        removed_stagnant,
    };
    pop.species = species;
    report
}
