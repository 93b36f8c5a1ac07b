use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{Corpus, Example};
use crate::error::{Error, Result};

/// Default number of examples in each of a task's training and testing sets.
pub const DEFAULT_K: usize = 4;

/// The first `n` entries of a seeded shuffle of `0..len`.
pub fn shuffled_prefix(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::Invalid(format!("cannot select {n} of {len} examples")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    Ok(idx)
}

/// A task-training / task-testing pair drawn from one corpus.
#[derive(Debug, Clone)]
pub struct Task {
    pub corpus: Arc<str>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Draws `2k` distinct examples and splits them `k`/`k`.
pub fn sample_task<R: Rng + ?Sized>(corpus: &Corpus, k: usize, rng: &mut R) -> Result<Task> {
    if k == 0 {
        return Err(Error::Invalid("task size k must be positive".into()));
    }
    if corpus.len() < 2 * k {
        return Err(Error::CorpusTooSmall {
            name: corpus.name.to_string(),
            size: corpus.len(),
            needed: 2 * k,
        });
    }
    let picked = sample(rng, corpus.len(), 2 * k).into_vec();
    let take = |ids: &[usize]| ids.iter().map(|&i| corpus.examples[i].clone()).collect();
    Ok(Task {
        corpus: Arc::clone(&corpus.name),
        train: take(&picked[..k]),
        test: take(&picked[k..]),
    })
}

#[derive(Debug, Clone, Default)]
pub struct MetaBatch {
    pub tasks: Vec<Task>,
}

/// Round-robin corpus assignment that keeps per-corpus task counts balanced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scheduler {
    next: usize,
    counts: Vec<usize>,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// State after `assigned` tasks have been handed out over `corpora` corpora.
    pub fn starting_at(assigned: usize, corpora: usize) -> Self {
        if corpora == 0 {
            return Self::default();
        }
        let counts = (0..corpora)
            .map(|c| assigned / corpora + usize::from(c < assigned % corpora))
            .collect();
        Scheduler {
            next: assigned % corpora,
            counts,
        }
    }

    /// Tasks handed out per corpus so far, in registration order.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    fn take(&mut self, corpora: usize) -> usize {
        if self.counts.len() != corpora {
            self.counts.resize(corpora, 0);
        }
        let c = self.next % corpora;
        self.next = (c + 1) % corpora;
        self.counts[c] += 1;
        c
    }
}

pub fn build_meta_batch<R: Rng + ?Sized>(
    corpora: &[Corpus],
    tasks_per_batch: usize,
    k: usize,
    scheduler: &mut Scheduler,
    rng: &mut R,
) -> Result<MetaBatch> {
    if corpora.is_empty() {
        return Err(Error::NoCorpora);
    }
    if tasks_per_batch == 0 {
        return Err(Error::Invalid("tasks_per_batch must be at least 1".into()));
    }
    let tasks = (0..tasks_per_batch)
        .map(|_| sample_task(&corpora[scheduler.take(corpora.len())], k, rng))
        .collect::<Result<_>>()?;
    Ok(MetaBatch { tasks })
}
