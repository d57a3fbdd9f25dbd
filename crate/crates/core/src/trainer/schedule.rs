use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netgraph::Task;

/// The samples of one training iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draw {
    pub iteration: usize,
    pub task: Task,
    /// Indices into the task's training set.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Source {
    task: Task,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Source {
    fn take(&mut self, count: usize) -> Vec<usize> {
        (0..count)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Batches for joint training: `switch_interval` consecutive batches from
/// the first dataset, then as many from the next, and so on. Each dataset is
/// visited in a seeded shuffled order that is redrawn once exhausted. With a
/// single dataset every batch comes from it.
#[derive(Debug, Clone)]
pub struct AlternationSchedule {
    sources: Vec<Source>,
    batch_size: usize,
    switch_interval: usize,
    total: usize,
    next: usize,
}

/// Schedule over `datasets`, given as `(task, training set size)`.
pub fn alternation_schedule(
    datasets: &[(Task, usize)],
    batch_size: usize,
    switch_interval: usize,
    total_iters: usize,
    seed: u64,
) -> Result<AlternationSchedule> {
    if datasets.is_empty() {
        return Err(Error::config("alternation needs at least one dataset"));
    }
    if switch_interval == 0 || batch_size == 0 {
        return Err(Error::config("switch interval and batch size must be at least 1"));
    }
    let sources = datasets
        .iter()
        .map(|&(task, len)| {
            if len == 0 {
                return Err(Error::data(format!("{} training set is empty", task.tag())));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(match task {
                Task::Detection => 1,
                Task::Segmentation => 2,
            });
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut rng);
            Ok(Source {
                task,
                order,
                pos: 0,
                rng,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlternationSchedule {
        sources,
        batch_size,
        switch_interval,
        total: total_iters,
        next: 0,
    })
}

impl Iterator for AlternationSchedule {
    type Item = Draw;

    fn next(&mut self) -> Option<Draw> {
        if self.next == self.total {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let k = (i / self.switch_interval) % self.sources.len();
        let source = &mut self.sources[k];
        Some(Draw {
            iteration: i,
            task: source.task,
            indices: source.take(self.batch_size),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for AlternationSchedule {}
