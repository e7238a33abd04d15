//! Fixed-capacity replay memory filled by reservoir sampling.
//!
//! After `n` offered items, every one of them sits in the buffer with equal
//! probability `capacity / n`. Capacity zero is the memory-free mode: offers
//! are counted and discarded.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng64};
use crate::ClassId;

#[derive(Clone, Debug)]
pub struct BufferEntry {
    pub input: Vec<f64>,
    pub label: ClassId,
    /// Task index (1-based) the item was observed in.
    pub task: usize,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<BufferEntry>,
    seen: u64,
    rng: Rng64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
            seen: 0,
            rng: seeded(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total items offered so far.
    pub fn seen_count(&self) -> u64 {
        self.seen
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    /// Offers one item to the reservoir. The first `capacity` offers are
    /// stored; offer `n` then replaces a uniformly chosen slot with
    /// probability `capacity / n`, otherwise the item is dropped. With
    /// capacity zero the offer is counted and silently discarded.
    pub fn reservoir_insert(&mut self, input: Vec<f64>, label: ClassId, task: usize) {
        self.seen += 1;
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() < self.capacity {
            self.entries.push(BufferEntry { input, label, task });
            return;
        }
        let slot = self.rng.random_range(0..self.seen);
        if (slot as usize) < self.capacity {
            self.entries[slot as usize] = BufferEntry { input, label, task };
        }
    }
}

/// One element of a training mini-batch before augmentation.
#[derive(Clone, Debug)]
pub struct Draw {
    pub input: Vec<f64>,
    pub label: ClassId,
    pub is_buffer: bool,
    /// Index into the current pool for non-buffer draws.
    pub current_index: Option<usize>,
}

/// Draws `batch_size` samples uniformly from the union of the current pool
/// and the buffer, flagging buffer-origin draws. Draws are without
/// replacement whenever the union is large enough, otherwise with
/// replacement.
pub fn sample_batch<R: Rng>(
    buf: &ReplayBuffer,
    current_pool: &[(Vec<f64>, ClassId)],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Draw>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if current_pool.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let union = current_pool.len() + buf.len();
    let indices: Vec<usize> = if union >= batch_size {
        rand::seq::index::sample(rng, union, batch_size).into_vec()
    } else {
        (0..batch_size).map(|_| rng.random_range(0..union)).collect()
    };
    Ok(indices
        .into_iter()
        .map(|idx| {
            if idx < current_pool.len() {
                let (input, label) = &current_pool[idx];
                Draw {
                    input: input.clone(),
                    label: *label,
                    is_buffer: false,
                    current_index: Some(idx),
                }
            } else {
                let entry = &buf.entries()[idx - current_pool.len()];
                Draw {
                    input: entry.input.clone(),
                    label: entry.label,
                    is_buffer: true,
                    current_index: None,
                }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn item(v: f64) -> Vec<f64> {
        vec![v]
    }

    #[test]
    fn fills_up_to_capacity() {
        let mut buf = ReplayBuffer::new(2, 1);
        buf.reservoir_insert(item(0.0), 0, 1);
        buf.reservoir_insert(item(1.0), 1, 1);
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.seen_count(), 2);
    }

    #[test]
    fn capacity_zero_discards_silently() {
        let mut buf = ReplayBuffer::new(0, 1);
        for i in 0..10 {
            buf.reservoir_insert(item(i as f64), i, 1);
        }
        assert!(buf.is_empty());
        assert_eq!(buf.seen_count(), 10);
    }

    #[test]
    fn size_is_min_of_capacity_and_seen() {
        let mut buf = ReplayBuffer::new(16, 3);
        for i in 0..100u32 {
            buf.reservoir_insert(item(i as f64), i, 1);
            assert_eq!(buf.len() as u64, buf.seen_count().min(16));
        }
    }

    #[test]
    fn retention_is_uniform() {
        // Stream 100 items through a capacity-10 reservoir, many trials:
        // each item should be retained with probability ~0.1.
        let trials = 20_000u32;
        let mut counts = vec![0u32; 100];
        for t in 0..trials {
            let mut buf = ReplayBuffer::new(10, t as u64);
            for i in 0..100u32 {
                buf.reservoir_insert(item(i as f64), i, 1);
            }
            for e in buf.entries() {
                counts[e.label as usize] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = c as f64 / trials as f64;
            // ~4.7 sigma band around 0.1.
            assert!(
                (p - 0.1).abs() < 0.01,
                "item {i}: retention {p} outside 0.1 +/- 0.01"
            );
        }
    }

    #[test]
    fn balanced_stream_keeps_labels_balanced() {
        // 4 labels x 250 items, capacity 40: expected 10 per label. Pool the
        // label counts over trials and check each stays within 3 sigma.
        let trials = 2_000u32;
        let per_label = 250u32;
        let mut counts = vec![0u64; 4];
        for t in 0..trials {
            let mut buf = ReplayBuffer::new(40, 1000 + t as u64);
            for i in 0..(4 * per_label) {
                buf.reservoir_insert(item(i as f64), i % 4, 1);
            }
            for e in buf.entries() {
                counts[e.label as usize] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        let expected = total as f64 / 4.0;
        // Per-slot label indicator is Bernoulli(1/4) across trials*40 slots.
        let sigma = (total as f64 * 0.25 * 0.75).sqrt();
        for (l, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "label {l}: {c} vs expected {expected} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn identical_seed_gives_identical_trajectory() {
        let run = |seed: u64| {
            let mut buf = ReplayBuffer::new(8, seed);
            for i in 0..500u32 {
                buf.reservoir_insert(item(i as f64), i, 1 + (i / 100) as usize);
            }
            buf.entries()
                .iter()
                .map(|e| (e.input[0].to_bits(), e.label, e.task))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn empty_buffer_samples_only_current_pool() {
        let buf = ReplayBuffer::new(10, 1);
        let pool: Vec<(Vec<f64>, ClassId)> = (0..5).map(|i| (item(i as f64), i)).collect();
        let mut rng = seeded(2);
        let batch = sample_batch(&buf, &pool, 4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|d| !d.is_buffer));
        assert!(batch.iter().all(|d| d.current_index.is_some()));
    }

    #[test]
    fn union_draws_are_uniform_across_origins() {
        // Pool of 100 plus buffer of 100: buffer-origin fraction over many
        // draws should be 1/2.
        let mut buf = ReplayBuffer::new(100, 5);
        for i in 0..100u32 {
            buf.reservoir_insert(item(i as f64), i, 1);
        }
        let pool: Vec<(Vec<f64>, ClassId)> = (0..100).map(|i| (item(i as f64), i)).collect();
        let mut rng = seeded(6);
        let mut buffer_draws = 0u32;
        let total = 100_000u32;
        let mut drawn = 0u32;
        while drawn < total {
            let batch = sample_batch(&buf, &pool, 50, &mut rng).unwrap();
            for d in batch {
                if d.is_buffer {
                    buffer_draws += 1;
                }
            }
            drawn += 50;
        }
        let fraction = buffer_draws as f64 / total as f64;
        assert!(
            (fraction - 0.5).abs() < 0.01,
            "buffer fraction {fraction} outside 0.5 +/- 0.01"
        );
    }

    #[test]
    fn oversized_batches_fall_back_to_replacement() {
        let buf = ReplayBuffer::new(0, 1);
        let pool: Vec<(Vec<f64>, ClassId)> = (0..3).map(|i| (item(i as f64), i)).collect();
        let mut rng = seeded(7);
        let batch = sample_batch(&buf, &pool, 10, &mut rng).unwrap();
        assert_eq!(batch.len(), 10);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let buf = ReplayBuffer::new(0, 1);
        let pool: Vec<(Vec<f64>, ClassId)> = vec![(item(0.0), 0)];
        let mut rng = seeded(8);
        assert!(matches!(
            sample_batch(&buf, &pool, 0, &mut rng),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sample_batch(&buf, &[], 4, &mut rng),
            Err(Error::EmptyBatch)
        ));
    }
}
