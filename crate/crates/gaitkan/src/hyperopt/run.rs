//! The suggest/evaluate loop: 10 seeded random probes, then GP + expected
//! improvement over 1000 seeded candidates; plus the matched random-search
//! baseline.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp::{expected_improvement, Gp};
use super::{HyperoptError, Point, SearchSpace};
use crate::models::ModelConfig;

/// One evaluated point of a search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: ModelConfig,
    pub point: Point,
    /// Validation macro-F1 in [0, 1]; failed evaluations record 0.
    pub objective: f64,
    pub seed: u64,
    pub duration_secs: f64,
}

const RANDOM_PHASE: usize = 10;
const CANDIDATES: usize = 1000;

/// RNG stream for iteration `i` of a search; random search shares it, so a
/// matched-seed baseline evaluates the identical first [`RANDOM_PHASE`]
/// configs.
fn phase_rng(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x0b0e)
}

/// Proposes the next point. The first ten suggestions are seeded random
/// probes; afterwards a Matérn-5/2 GP on the unit cube picks the expected-
/// improvement maximizer over 1000 seeded candidates. Degenerate histories
/// (identical objectives, or a failed fit) fall back to a random proposal.
pub fn suggest(history: &[TrialRecord], space: &SearchSpace, seed: u64) -> Point {
    let i = history.len();
    let mut rng = phase_rng(seed, i);
    let random_point = |rng: &mut ChaCha8Rng| {
        space
            .encode(&space.sample_config(rng))
            .expect("sampled config belongs to its space")
    };
    if i < RANDOM_PHASE {
        return random_point(&mut rng);
    }
    let lo = history
        .iter()
        .map(|t| t.objective)
        .fold(f64::INFINITY, f64::min);
    let hi = history
        .iter()
        .map(|t| t.objective)
        .fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return random_point(&mut rng);
    }
    let xs: Vec<Vec<f64>> = history
        .iter()
        .map(|t| space.to_unit_cube(&t.point))
        .collect();
    let ys: Vec<f64> = history.iter().map(|t| t.objective).collect();
    let Some(gp) = Gp::fit(&xs, &ys) else {
        return random_point(&mut rng);
    };
    let mut best_point: Option<(f64, Point)> = None;
    for _ in 0..CANDIDATES {
        let cand = random_point(&mut rng);
        let (mean, std) = gp.predict(&space.to_unit_cube(&cand));
        let ei = expected_improvement(mean, std, hi);
        if best_point.as_ref().is_none_or(|(b, _)| ei > *b) {
            best_point = Some((ei, cand));
        }
    }
    best_point.expect("candidate loop ran").1
}

/// Search outcome: the best record plus the full evaluation history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub best: TrialRecord,
    pub history: Vec<TrialRecord>,
}

impl OptimizeResult {
    /// Running maximum of the objective, index-aligned with the history.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.history
            .iter()
            .map(|t| {
                best = best.max(t.objective);
                best
            })
            .collect()
    }
}

fn run_loop<F>(
    mut propose: impl FnMut(&[TrialRecord]) -> Point,
    mut objective: F,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<OptimizeResult, HyperoptError>
where
    F: FnMut(&ModelConfig) -> Result<f64, String>,
{
    if budget == 0 {
        return Err(HyperoptError::EmptyBudget);
    }
    let mut history: Vec<TrialRecord> = Vec::with_capacity(budget);
    for _ in 0..budget {
        let point = propose(&history);
        let config = space.decode(&point);
        let t0 = Instant::now();
        // failures score 0 and the search continues
        let objective_value = objective(&config).unwrap_or(0.0);
        history.push(TrialRecord {
            config,
            point,
            objective: objective_value,
            seed,
            duration_secs: t0.elapsed().as_secs_f64(),
        });
    }
    let best = history
        .iter()
        .enumerate()
        .max_by(|a, b| {
            a.1.objective
                .total_cmp(&b.1.objective)
                .then(b.0.cmp(&a.0)) // earliest wins ties
        })
        .map(|(_, t)| t.clone())
        .expect("budget >= 1");
    Ok(OptimizeResult { best, history })
}

/// Bayesian optimization of `objective` (larger is better) over `space`.
pub fn optimize<F>(
    objective: F,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<OptimizeResult, HyperoptError>
where
    F: FnMut(&ModelConfig) -> Result<f64, String>,
{
    run_loop(
        |history| suggest(history, space, seed),
        objective,
        space,
        budget,
        seed,
    )
}

/// Pure random search with the same per-iteration seeding as [`optimize`],
/// so a matched-seed comparison shares its first ten evaluations.
pub fn random_search<F>(
    objective: F,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<OptimizeResult, HyperoptError>
where
    F: FnMut(&ModelConfig) -> Result<f64, String>,
{
    run_loop(
        |history| {
            let mut rng = phase_rng(seed, history.len());
            space
                .encode(&space.sample_config(&mut rng))
                .expect("sampled config belongs to its space")
        },
        objective,
        space,
        budget,
        seed,
    )
}
