//! Per-epoch batch ordering across datasets.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{EncodedTriplet, TripletBatch};
use crate::error::{Error, Result};

/// How datasets are combined during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleStrategy {
    /// Round-robin over all datasets, one dataset per batch.
    #[default]
    Interleaved,
    /// All datasets, one after another in listed order.
    Sequential,
    /// All datasets, one after another in a configured difficulty order.
    Curriculum,
    /// Only datasets whose negatives are sampled at random, interleaved.
    RandomNegative,
    /// Only datasets that ship contrastive negatives, interleaved.
    ContrastiveOnly,
}

impl ScheduleStrategy {
    pub const ALL: [ScheduleStrategy; 5] = [
        ScheduleStrategy::Interleaved,
        ScheduleStrategy::Sequential,
        ScheduleStrategy::Curriculum,
        ScheduleStrategy::RandomNegative,
        ScheduleStrategy::ContrastiveOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleStrategy::Interleaved => "interleaved",
            ScheduleStrategy::Sequential => "sequential",
            ScheduleStrategy::Curriculum => "curriculum",
            ScheduleStrategy::RandomNegative => "random_negative",
            ScheduleStrategy::ContrastiveOnly => "contrastive_only",
        }
    }
}

impl fmt::Display for ScheduleStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown schedule {s:?}; expected one of {}",
                    Self::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

/// A tokenized dataset ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub name: String,
    pub has_contrastive: bool,
    pub triplets: Vec<EncodedTriplet>,
}

/// Which datasets take part and in what order, for one strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulePlan {
    /// Indices into the dataset list.
    pub datasets: Vec<usize>,
    pub interleave: bool,
    /// Whether the dataset order is reshuffled every epoch.
    pub shuffle_order: bool,
}

impl SchedulePlan {
    pub fn new(
        strategy: ScheduleStrategy,
        sets: &[TrainingSet],
        curriculum: &[String],
    ) -> Result<Self> {
        let all: Vec<usize> = (0..sets.len()).collect();
        let plan = match strategy {
            ScheduleStrategy::Interleaved => Self {
                datasets: all,
                interleave: true,
                shuffle_order: true,
            },
            ScheduleStrategy::Sequential => Self {
                datasets: all,
                interleave: false,
                shuffle_order: false,
            },
            ScheduleStrategy::Curriculum => {
                let mut order = Vec::with_capacity(sets.len());
                for name in curriculum {
                    let idx = sets.iter().position(|s| &s.name == name).ok_or_else(|| {
                        Error::InvalidArgument(format!("curriculum names unknown dataset {name:?}"))
                    })?;
                    if !order.contains(&idx) {
                        order.push(idx);
                    }
                }
                // datasets left out of the curriculum follow in listed order
                order.extend(all.into_iter().filter(|i| !curriculum.contains(&sets[*i].name)));
                Self {
                    datasets: order,
                    interleave: false,
                    shuffle_order: false,
                }
            }
            ScheduleStrategy::RandomNegative | ScheduleStrategy::ContrastiveOnly => {
                let want = strategy == ScheduleStrategy::ContrastiveOnly;
                Self {
                    datasets: all
                        .into_iter()
                        .filter(|&i| sets[i].has_contrastive == want)
                        .collect(),
                    interleave: true,
                    shuffle_order: true,
                }
            }
        };
        if plan.datasets.iter().all(|&i| sets[i].triplets.is_empty()) {
            return Err(Error::InsufficientCorpus(format!(
                "strategy {strategy} leaves no triplets to train on"
            )));
        }
        Ok(plan)
    }
}

/// Batches of one epoch. Each dataset is shuffled internally and cut into
/// batches; [`BatchSchedule::next_batch`] returns `None` once every dataset
/// is exhausted.
#[derive(Debug)]
pub struct BatchSchedule<'a> {
    sets: &'a [TrainingSet],
    order: Vec<usize>,
    queues: Vec<VecDeque<Vec<usize>>>,
    interleave: bool,
    cursor: usize,
}

impl<'a> BatchSchedule<'a> {
    pub fn new<R: Rng + ?Sized>(
        sets: &'a [TrainingSet],
        plan: &SchedulePlan,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        let mut order = plan.datasets.clone();
        if plan.shuffle_order {
            order.shuffle(rng);
        }
        let queues = order
            .iter()
            .map(|&d| {
                let mut idx: Vec<usize> = (0..sets[d].triplets.len()).collect();
                idx.shuffle(rng);
                idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
            })
            .collect();
        Ok(Self {
            sets,
            order,
            queues,
            interleave: plan.interleave,
            cursor: 0,
        })
    }

    /// Dataset indices in the order this epoch visits them.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn remaining_batches(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn next_batch(&mut self) -> Option<TripletBatch> {
        let n = self.order.len();
        for step in 0..n {
            let slot = (self.cursor + step) % n;
            if let Some(indices) = self.queues[slot].pop_front() {
                if self.interleave {
                    self.cursor = (slot + 1) % n;
                } else {
                    self.cursor = slot;
                }
                let set = &self.sets[self.order[slot]];
                return Some(TripletBatch {
                    items: indices.iter().map(|&i| set.triplets[i].clone()).collect(),
                    source_dataset: set.name.clone(),
                });
            }
        }
        None
    }
}

impl Iterator for BatchSchedule<'_> {
    type Item = TripletBatch;

    fn next(&mut self) -> Option<TripletBatch> {
        self.next_batch()
    }
}
