use std::fmt::Write as _;

use crate::netgraph::Task;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub task: Task,
    pub loss: f64,
}

/// Per-iteration training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

/// Window of the smoothed loss used to judge training progress.
pub const SMOOTHING_WINDOW: usize = 20;

/// Trailing means over `window` consecutive values; empty when fewer values
/// exist.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

impl LossTrace {
    pub fn push(&mut self, iteration: usize, task: Task, loss: f64) {
        self.records.push(LossRecord {
            iteration,
            task,
            loss,
        });
    }

    pub fn tasks(&self) -> Vec<Task> {
        let mut tasks: Vec<Task> = self.records.iter().map(|r| r.task).collect();
        tasks.sort();
        tasks.dedup();
        tasks
    }

    pub fn losses(&self, task: Task) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.task == task)
            .map(|r| r.loss)
            .collect()
    }

    /// First and last moving average of `task`'s losses.
    pub fn smoothed_endpoints(&self, task: Task, window: usize) -> Option<(f64, f64)> {
        let ma = moving_average(&self.losses(task), window);
        Some((*ma.first()?, *ma.last()?))
    }

    /// True when every task's final smoothed loss is below its initial one.
    pub fn decreased(&self, window: usize) -> bool {
        let tasks = self.tasks();
        !tasks.is_empty()
            && tasks.iter().all(|&t| {
                self.smoothed_endpoints(t, window)
                    .is_some_and(|(first, last)| last < first)
            })
    }

    /// `iteration,task_tag,loss` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,task_tag,loss\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.iteration, r.task.tag(), r.loss);
        }
        out
    }
}
