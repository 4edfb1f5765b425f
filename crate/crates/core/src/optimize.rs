//! Hyperparameter search: discrete particle swarm optimization over
//! integer parameter spaces, and randomized grid search over a candidate
//! list.
//!
//! Particles move in a continuous index space over each dimension's
//! admissible values; positions are discretized by rounding and clamping,
//! then repaired to the nearest valid point when a joint validity
//! predicate rejects them. Random draws for an iteration are fixed before
//! any objective evaluation, so results do not depend on evaluation
//! parallelism.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Admissible values of one integer parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DimDomain {
    /// All integers in `lo..=hi`.
    Range { lo: i64, hi: i64 },
    /// An explicit ascending list.
    List(Vec<i64>),
}

impl DimDomain {
    pub fn cardinality(&self) -> usize {
        match self {
            DimDomain::Range { lo, hi } => (hi - lo + 1) as usize,
            DimDomain::List(vals) => vals.len(),
        }
    }

    /// Value at an index into the ordered domain.
    pub fn value(&self, idx: usize) -> i64 {
        match self {
            DimDomain::Range { lo, .. } => lo + idx as i64,
            DimDomain::List(vals) => vals[idx],
        }
    }
}

/// One named parameter dimension.
#[derive(Debug, Clone)]
pub struct ParamDim {
    pub name: String,
    pub domain: DimDomain,
}

impl ParamDim {
    pub fn range(name: &str, lo: i64, hi: i64) -> Result<ParamDim> {
        if lo > hi {
            return Err(Error::InvalidParams(format!("empty range for {name}")));
        }
        Ok(ParamDim {
            name: name.to_string(),
            domain: DimDomain::Range { lo, hi },
        })
    }

    pub fn list(name: &str, mut values: Vec<i64>) -> Result<ParamDim> {
        if values.is_empty() {
            return Err(Error::InvalidParams(format!("empty value list for {name}")));
        }
        values.sort_unstable();
        values.dedup();
        Ok(ParamDim {
            name: name.to_string(),
            domain: DimDomain::List(values),
        })
    }
}

/// Integer search space with an optional joint validity predicate.
/// Invalid sampled points are repaired to the nearest valid point by
/// index-space L1 distance (ties: lexicographically smallest index
/// vector).
pub struct ParamSpace {
    dims: Vec<ParamDim>,
    validity: Option<Box<dyn Fn(&[i64]) -> bool + Sync + Send>>,
}

impl ParamSpace {
    pub fn new(dims: Vec<ParamDim>) -> Result<ParamSpace> {
        if dims.is_empty() {
            return Err(Error::InvalidParams("empty parameter space".into()));
        }
        Ok(ParamSpace {
            dims,
            validity: None,
        })
    }

    pub fn with_validity(
        mut self,
        predicate: impl Fn(&[i64]) -> bool + Sync + Send + 'static,
    ) -> ParamSpace {
        self.validity = Some(Box::new(predicate));
        self
    }

    pub fn dims(&self) -> &[ParamDim] {
        &self.dims
    }

    pub fn names(&self) -> Vec<&str> {
        self.dims.iter().map(|d| d.name.as_str()).collect()
    }

    fn values_of(&self, indices: &[usize]) -> Vec<i64> {
        indices
            .iter()
            .zip(&self.dims)
            .map(|(&i, d)| d.domain.value(i))
            .collect()
    }

    pub fn is_valid(&self, values: &[i64]) -> bool {
        match &self.validity {
            Some(pred) => pred(values),
            None => true,
        }
    }

    /// Nearest valid index vector by L1 distance; `None` when the whole
    /// space fails the predicate.
    fn repair(&self, indices: &[usize]) -> Option<Vec<usize>> {
        if self.is_valid(&self.values_of(indices)) {
            return Some(indices.to_vec());
        }
        let cards: Vec<usize> = self.dims.iter().map(|d| d.domain.cardinality()).collect();
        let max_radius: usize = cards.iter().map(|c| c - 1).sum();
        for radius in 1..=max_radius {
            let mut best: Option<Vec<usize>> = None;
            let mut candidate = vec![0usize; indices.len()];
            self.ring_candidates(indices, &cards, radius, 0, &mut candidate, &mut best);
            if best.is_some() {
                return best;
            }
        }
        None
    }

    /// Enumerate index vectors at exactly `remaining` L1 distance from
    /// `center`, keeping the lexicographically smallest valid one.
    fn ring_candidates(
        &self,
        center: &[usize],
        cards: &[usize],
        remaining: usize,
        dim: usize,
        candidate: &mut Vec<usize>,
        best: &mut Option<Vec<usize>>,
    ) {
        if dim == center.len() {
            if remaining == 0 {
                let values = self.values_of(candidate);
                if self.is_valid(&values) {
                    let improves = match best {
                        Some(b) => candidate < b,
                        None => true,
                    };
                    if improves {
                        *best = Some(candidate.clone());
                    }
                }
            }
            return;
        }
        let c = center[dim] as i64;
        let card = cards[dim] as i64;
        // Offsets ordered so candidates arrive in ascending index order.
        for offset in -(remaining as i64)..=(remaining as i64) {
            let idx = c + offset;
            if idx < 0 || idx >= card {
                continue;
            }
            let used = offset.unsigned_abs() as usize;
            if used > remaining {
                continue;
            }
            candidate[dim] = idx as usize;
            self.ring_candidates(center, cards, remaining - used, dim + 1, candidate, best);
        }
    }
}

/// Swarm controls; the defaults are standard settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwarmConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            swarm_size: 20,
            iterations: 30,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            seed: 0,
        }
    }
}

impl SwarmConfig {
    fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::InvalidParams("swarm_size must be >= 2".into()));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidParams("iterations must be >= 1".into()));
        }
        if !(self.inertia > 0.0 && self.inertia <= 1.0) {
            return Err(Error::InvalidParams("inertia must be in (0, 1]".into()));
        }
        if self.cognitive <= 0.0 || self.social <= 0.0 {
            return Err(Error::InvalidParams(
                "cognitive and social factors must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One swarm member, in index space.
#[derive(Debug, Clone)]
struct Particle {
    position: Vec<usize>,
    velocity: Vec<f64>,
    best_position: Vec<usize>,
    best_score: f64,
}

/// Global best after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// 0 is the post-initialization state.
    pub iteration: usize,
    pub best_score: f64,
    pub best_values: Vec<i64>,
}

/// Search outcome with the per-iteration global-best trace.
#[derive(Debug, Clone)]
pub struct DpsoResult {
    pub best_values: Vec<i64>,
    pub best_score: f64,
    pub trace: Vec<TraceEntry>,
    /// Distinct parameter vectors evaluated (memoized count).
    pub evaluations: usize,
}

/// Discrete PSO over an integer space, maximizing the objective.
///
/// Velocity and position follow the standard update with per-dimension
/// cognitive/social draws; positions are rounded, clamped and repaired
/// each move. Objective values are memoized by parameter vector; the
/// vectors of one iteration are evaluated in parallel after all random
/// draws for that iteration are fixed. The global-best trace is
/// non-decreasing, and the whole run is deterministic for a fixed seed.
pub fn dpso_optimize<F>(space: &ParamSpace, objective: F, config: &SwarmConfig) -> Result<DpsoResult>
where
    F: Fn(&[i64]) -> f64 + Sync,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = space.dims.len();
    let cards: Vec<usize> = space.dims.iter().map(|d| d.domain.cardinality()).collect();

    let mut memo: HashMap<Vec<i64>, f64> = HashMap::new();
    let evaluate =
        |batch: &[Vec<i64>], memo: &mut HashMap<Vec<i64>, f64>, objective: &F| {
            let fresh: Vec<Vec<i64>> = {
                let mut seen = std::collections::HashSet::new();
                batch
                    .iter()
                    .filter(|v| !memo.contains_key(*v) && seen.insert((*v).clone()))
                    .cloned()
                    .collect()
            };
            let scores: Vec<f64> = fresh.par_iter().map(|v| objective(v)).collect();
            for (v, s) in fresh.into_iter().zip(scores) {
                memo.insert(v, s);
            }
        };

    // Initial positions: uniform over each dimension, then repaired.
    let mut particles: Vec<Particle> = (0..config.swarm_size)
        .map(|_| {
            let raw: Vec<usize> = cards.iter().map(|&c| rng.gen_range(0..c)).collect();
            let position = space
                .repair(&raw)
                .ok_or_else(|| Error::InvalidParams("no valid point in parameter space".into()))?;
            Ok(Particle {
                velocity: vec![0.0; dims],
                best_position: position.clone(),
                best_score: f64::NEG_INFINITY,
                position,
            })
        })
        .collect::<Result<_>>()?;

    let batch: Vec<Vec<i64>> = particles
        .iter()
        .map(|p| space.values_of(&p.position))
        .collect();
    evaluate(&batch, &mut memo, &objective);

    let mut global_best: Option<(Vec<usize>, f64)> = None;
    let update_bests = |particles: &mut Vec<Particle>,
                            global_best: &mut Option<(Vec<usize>, f64)>,
                            memo: &HashMap<Vec<i64>, f64>| {
        for p in particles.iter_mut() {
            let score = memo[&space.values_of(&p.position)];
            if score > p.best_score {
                p.best_score = score;
                p.best_position = p.position.clone();
            }
            let improves = match global_best {
                None => true,
                Some((_, best)) => score > *best,
            };
            if improves {
                *global_best = Some((p.position.clone(), score));
            }
        }
    };
    update_bests(&mut particles, &mut global_best, &memo);

    let mut trace = Vec::with_capacity(config.iterations + 1);
    let push_trace = |trace: &mut Vec<TraceEntry>,
                      iteration: usize,
                      global_best: &Option<(Vec<usize>, f64)>| {
        let (pos, score) = global_best.as_ref().expect("evaluated at least once");
        trace.push(TraceEntry {
            iteration,
            best_score: *score,
            best_values: space.values_of(pos),
        });
    };
    push_trace(&mut trace, 0, &global_best);

    for iteration in 1..=config.iterations {
        // Fix every random draw for this iteration up front.
        let draws: Vec<Vec<(f64, f64)>> = (0..config.swarm_size)
            .map(|_| (0..dims).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect())
            .collect();
        let gbest = global_best.as_ref().expect("initialized").0.clone();
        for (p, pdraws) in particles.iter_mut().zip(&draws) {
            let mut raw = vec![0usize; dims];
            for d in 0..dims {
                let (r1, r2) = pdraws[d];
                let x = p.position[d] as f64;
                let v = config.inertia * p.velocity[d]
                    + config.cognitive * r1 * (p.best_position[d] as f64 - x)
                    + config.social * r2 * (gbest[d] as f64 - x);
                // Velocity cap: one full domain span per move.
                let span = (cards[d] - 1).max(1) as f64;
                let v = v.clamp(-span, span);
                p.velocity[d] = v;
                raw[d] = (x + v).round().clamp(0.0, (cards[d] - 1) as f64) as usize;
            }
            p.position = space
                .repair(&raw)
                .ok_or_else(|| Error::InvalidParams("no valid point in parameter space".into()))?;
        }
        let batch: Vec<Vec<i64>> = particles
            .iter()
            .map(|p| space.values_of(&p.position))
            .collect();
        evaluate(&batch, &mut memo, &objective);
        update_bests(&mut particles, &mut global_best, &memo);
        push_trace(&mut trace, iteration, &global_best);
    }

    let (pos, score) = global_best.expect("evaluated at least once");
    Ok(DpsoResult {
        best_values: space.values_of(&pos),
        best_score: score,
        trace,
        evaluations: memo.len(),
    })
}

/// The candidate subset a randomized grid search evaluates: a seeded
/// without-replacement draw of `n_draws` values (all of them when
/// `n_draws` covers the list), in draw order.
pub fn random_draw_order(candidates: &[i64], n_draws: usize, seed: u64) -> Result<Vec<i64>> {
    if candidates.is_empty() {
        return Err(Error::InvalidParams("empty candidate list".into()));
    }
    if n_draws < 1 {
        return Err(Error::InvalidParams("n_draws must be >= 1".into()));
    }
    let mut order: Vec<i64> = candidates.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, then take the prefix.
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order.truncate(n_draws.min(order.len()));
    Ok(order)
}

/// Randomized grid search: draw `n_draws` candidates without replacement
/// (all of them when `n_draws` covers the list), evaluate each once and
/// return the argmax; ties prefer the smaller value.
pub fn random_grid_search<F>(
    candidates: &[i64],
    objective: F,
    n_draws: usize,
    seed: u64,
) -> Result<(i64, f64)>
where
    F: Fn(i64) -> f64 + Sync,
{
    let order = random_draw_order(candidates, n_draws, seed)?;
    let scores: Vec<f64> = order.par_iter().map(|&v| objective(v)).collect();
    let mut best = (order[0], scores[0]);
    for (&v, &s) in order.iter().zip(&scores).skip(1) {
        if s > best.1 || (s == best.1 && v < best.0) {
            best = (v, s);
        }
    }
    Ok(best)
}

/// Write a D-PSO trace as CSV: `iteration,best_score,<param>...`.
pub fn write_trace(trace: &[TraceEntry], names: &[&str], path: &Path) -> Result<()> {
    let mut out = String::from("iteration,best_score");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for entry in trace {
        out.push_str(&format!("{},{:.6}", entry.iteration, entry.best_score));
        for v in &entry.best_values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
