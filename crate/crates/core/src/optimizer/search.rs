use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{CandidatePrompt, OptimizationResult, OptimizerError, TrialRecord};
use crate::config::{FewShotExample, OptimizerConfig};
use crate::metrics::{evaluate, EvaluationResult, ExampleScorer, ObjectiveConfig};
use crate::synthgen::DatasetSplit;

/// Sorted indices into the demo pool.
pub type DemoSubset = Vec<usize>;

/// Pair spaces up to this size are enumerated; larger ones are sampled.
pub const PAIR_ENUMERATION_LIMIT: usize = 4096;
/// Distinct pairs re-evaluated on the whole validation set after the trials.
pub const TOP_K_FULL_EVAL: usize = 3;
/// Draws before a large-space sampler settles for a repeated pair.
const REJECTION_DRAWS: usize = 64;
/// Separates the minibatch stream from the chooser stream.
const MINIBATCH_STREAM: u64 = 0x6d69_6e69_6261_7463;

/// Picks the next (instruction, demo subset) pair to try.
pub trait PairChooser {
    fn next_pair(&mut self) -> (usize, DemoSubset);
}

/// Uniform choice over untried pairs, repeating only once all were tried.
pub struct UniformChooser {
    rng: ChaCha8Rng,
    n_instructions: usize,
    pool_size: usize,
    max_demos: usize,
    untried: Option<Vec<(usize, DemoSubset)>>,
    all: Vec<(usize, DemoSubset)>,
    tried: HashSet<(usize, DemoSubset)>,
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn subsets(pool: usize, max_size: usize) -> Vec<DemoSubset> {
    let mut out = vec![Vec::new()];
    for size in 1..=max_size.min(pool) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            let Some(i) = (0..size).rev().find(|&i| idx[i] < pool - size + i) else { break };
            idx[i] += 1;
            for j in i + 1..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

impl UniformChooser {
    pub fn new(n_instructions: usize, pool_size: usize, max_demos: usize, seed: u64) -> Self {
        let max_demos = max_demos.min(pool_size);
        let space = (0..=max_demos)
            .map(|s| binomial(pool_size, s))
            .fold(0usize, usize::saturating_add)
            .saturating_mul(n_instructions);
        let (untried, all) = if space <= PAIR_ENUMERATION_LIMIT {
            let subs = subsets(pool_size, max_demos);
            let all: Vec<_> =
                (0..n_instructions).flat_map(|i| subs.iter().map(move |s| (i, s.clone()))).collect();
            (Some(all.clone()), all)
        } else {
            (None, Vec::new())
        };
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_instructions,
            pool_size,
            max_demos,
            untried,
            all,
            tried: HashSet::new(),
        }
    }

    fn random_pair(&mut self) -> (usize, DemoSubset) {
        let i = self.rng.random_range(0..self.n_instructions);
        let size = self.rng.random_range(0..=self.max_demos);
        let mut s = sample(&mut self.rng, self.pool_size, size).into_vec();
        s.sort_unstable();
        (i, s)
    }
}

impl PairChooser for UniformChooser {
    fn next_pair(&mut self) -> (usize, DemoSubset) {
        if let Some(untried) = &mut self.untried {
            if !untried.is_empty() {
                let k = self.rng.random_range(0..untried.len());
                return untried.swap_remove(k);
            }
            let k = self.rng.random_range(0..self.all.len());
            return self.all[k].clone();
        }
        let mut pair = self.random_pair();
        for _ in 0..REJECTION_DRAWS {
            if !self.tried.contains(&pair) {
                break;
            }
            pair = self.random_pair();
        }
        self.tried.insert(pair.clone());
        pair
    }
}

fn demo_digest(demos: &[FewShotExample]) -> String {
    if demos.is_empty() {
        return "none".into();
    }
    let mut h = Sha256::new();
    for d in demos {
        h.update(d.to_line().as_bytes());
        h.update(b"\n");
    }
    hex::encode(&h.finalize()[..6])
}

/// Seeded trial search with uniform pair choice. See [`search_with`].
#[allow(clippy::too_many_arguments)]
pub fn search(
    instructions: &[String],
    demo_pool: &[FewShotExample],
    split: &DatasetSplit,
    template: &CandidatePrompt,
    scorer: &dyn ExampleScorer,
    cfg: &OptimizerConfig,
    obj: &ObjectiveConfig,
    seed: u64,
) -> Result<OptimizationResult, OptimizerError> {
    let mut chooser = UniformChooser::new(instructions.len(), demo_pool.len(), cfg.n_demos, seed);
    search_with(&mut chooser, instructions, demo_pool, split, template, scorer, cfg, obj, seed)
}

/// Runs `cfg.n_trials` minibatch trials, then fully evaluates the baseline
/// pair (instruction 0, no demos) and the top pairs by mean minibatch
/// combined score. The best is the full-evaluation argmax, ties going to the
/// baseline.
#[allow(clippy::too_many_arguments)]
pub fn search_with(
    chooser: &mut dyn PairChooser,
    instructions: &[String],
    demo_pool: &[FewShotExample],
    split: &DatasetSplit,
    template: &CandidatePrompt,
    scorer: &dyn ExampleScorer,
    cfg: &OptimizerConfig,
    obj: &ObjectiveConfig,
    seed: u64,
) -> Result<OptimizationResult, OptimizerError> {
    if split.val.is_empty() {
        return Err(OptimizerError::EmptyValidationSet);
    }
    if instructions.is_empty() {
        return Err(OptimizerError::Invalid("instruction pool is empty".into()));
    }
    let build = |i: usize, subset: &DemoSubset| {
        let demos: Vec<FewShotExample> = subset.iter().map(|&d| demo_pool[d].clone()).collect();
        CandidatePrompt {
            instruction: instructions[i].clone(),
            demos,
            version_tag: if i == 0 && subset.is_empty() { "baseline".into() } else { format!("search-i{i}") },
            ..template.clone()
        }
    };

    let mut mb_rng = ChaCha8Rng::seed_from_u64(seed ^ MINIBATCH_STREAM);
    let mb_size = cfg.minibatch_size.min(split.val.len());
    let mut trials = Vec::with_capacity(cfg.n_trials);
    for t in 0..cfg.n_trials {
        let (i, subset) = chooser.next_pair();
        let candidate = build(i, &subset);
        let mut picks = sample(&mut mb_rng, split.val.len(), mb_size).into_vec();
        picks.sort_unstable();
        let batch: Vec<_> = picks.iter().map(|&k| split.val[k].clone()).collect();
        let eval = evaluate(&candidate, &batch, scorer, obj)?;
        tracing::debug!(trial = t, instruction = i, demos = subset.len(), combined = eval.combined, "trial");
        trials.push(TrialRecord {
            trial_index: t,
            instruction_index: i,
            demo_set_digest: demo_digest(&candidate.demos),
            demo_indices: subset,
            minibatch_ids: batch.iter().map(|e| e.id.clone()).collect(),
            minibatch_score: eval.performance,
            combined: eval.combined,
        });
    }

    // Mean minibatch combined per pair, keyed in first-seen order.
    let mut by_pair: BTreeMap<(usize, DemoSubset), (usize, f64, usize)> = BTreeMap::new();
    for tr in &trials {
        let e = by_pair.entry((tr.instruction_index, tr.demo_indices.clone())).or_insert((tr.trial_index, 0.0, 0));
        e.1 += tr.combined;
        e.2 += 1;
    }
    let mut ranked: Vec<((usize, DemoSubset), f64, usize)> =
        by_pair.into_iter().map(|(k, (first, sum, n))| (k, sum / n as f64, first)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));

    let baseline_pair = (0usize, DemoSubset::new());
    let baseline = build(0, &baseline_pair.1);
    let baseline_eval = evaluate(&baseline, &split.val, scorer, obj)?;
    let mut best: (CandidatePrompt, EvaluationResult) = (baseline.clone(), baseline_eval.clone());
    for (pair, _, _) in ranked.into_iter().filter(|(p, _, _)| *p != baseline_pair).take(TOP_K_FULL_EVAL) {
        let candidate = build(pair.0, &pair.1);
        let eval = evaluate(&candidate, &split.val, scorer, obj)?;
        if eval.combined > best.1.combined {
            best = (candidate, eval);
        }
    }

    Ok(OptimizationResult {
        best: best.0,
        best_eval: best.1,
        baseline,
        baseline_eval,
        trials,
        backend: cfg.backend,
        instructions: instructions.to_vec(),
    })
}
