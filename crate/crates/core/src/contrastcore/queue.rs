use std::collections::VecDeque;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::ContrastError;

/// Which contrast the queue serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    Default,
    Joint,
    Temporal,
    Artificial,
}

impl Subspace {
    pub const TEMCO: [Subspace; 3] = [Subspace::Joint, Subspace::Temporal, Subspace::Artificial];

    pub fn name(self) -> &'static str {
        match self {
            Subspace::Default => "default",
            Subspace::Joint => "joint",
            Subspace::Temporal => "temporal",
            Subspace::Artificial => "artificial",
        }
    }
}

/// A stored key with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub key: Vec<f64>,
    /// Sub-space of the head that produced the key.
    pub origin: Subspace,
    /// Insertion counter, strictly increasing within a queue.
    pub seq: u64,
}

/// Fixed-capacity FIFO of unit-norm keys.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    pub capacity: usize,
    pub dim: usize,
    pub subspace: Subspace,
    entries: VecDeque<QueueEntry>,
    next_seq: u64,
}

pub const UNIT_TOL: f64 = 1e-6;

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize, subspace: Subspace) -> Self {
        NegativeQueue {
            capacity,
            dim,
            subspace,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Append keys (rows of `keys`) produced by the `origin` head, evicting
    /// the oldest entries beyond capacity.
    pub fn enqueue(&mut self, keys: &Array2<f64>, origin: Subspace) -> Result<(), ContrastError> {
        if origin != self.subspace {
            return Err(ContrastError::SubspaceMix {
                queue: self.subspace,
                key: origin,
            });
        }
        if keys.ncols() != self.dim {
            return Err(ContrastError::Shape(format!("key width {} for a {}-wide queue", keys.ncols(), self.dim)));
        }
        for row in keys.rows() {
            check_unit(row)?;
            if self.capacity == 0 {
                continue;
            }
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(QueueEntry {
                key: row.to_vec(),
                origin,
                seq: self.next_seq,
            });
            self.next_seq += 1;
        }
        Ok(())
    }

    /// Current keys as a `len x dim` matrix, oldest first.
    pub fn matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.entries.len(), self.dim));
        for (mut row, e) in m.rows_mut().into_iter().zip(&self.entries) {
            row.assign(&ArrayView1::from(&e.key[..]));
        }
        m
    }

    /// Capacity, FIFO order, provenance and norms.
    pub fn check_invariants(&self) -> Result<(), ContrastError> {
        if self.entries.len() > self.capacity {
            return Err(ContrastError::Queue(format!("{} entries exceed capacity {}", self.len(), self.capacity)));
        }
        for w in self.entries.iter().collect::<Vec<_>>().windows(2) {
            if w[1].seq != w[0].seq + 1 {
                return Err(ContrastError::Queue("entries out of insertion order".into()));
            }
        }
        if let Some(last) = self.entries.back() {
            if last.seq + 1 != self.next_seq {
                return Err(ContrastError::Queue("newest entry is not the last inserted".into()));
            }
        }
        for e in &self.entries {
            if e.origin != self.subspace {
                return Err(ContrastError::SubspaceMix {
                    queue: self.subspace,
                    key: e.origin,
                });
            }
            check_unit(ArrayView1::from(&e.key[..]))?;
        }
        Ok(())
    }

    /// Rebuild from checkpointed keys (oldest first).
    pub fn restore(capacity: usize, subspace: Subspace, keys: &Array2<f64>, next_seq: u64) -> Result<Self, ContrastError> {
        let mut q = NegativeQueue::new(capacity, keys.ncols(), subspace);
        q.next_seq = next_seq - keys.nrows() as u64;
        q.enqueue(keys, subspace)?;
        Ok(q)
    }
}

fn check_unit(row: ArrayView1<f64>) -> Result<(), ContrastError> {
    let norm = row.dot(&row).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
        return Err(ContrastError::NotUnit(norm));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(n: usize, start: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 2), |(i, j)| {
            let a = (start + i) as f64;
            if j == 0 {
                a.cos()
            } else {
                a.sin()
            }
        })
    }

    #[test]
    fn fifo_eviction_by_hand() {
        // capacity 8, batches of 4: full after two steps, oldest batch dropped after the third
        let mut q = NegativeQueue::new(8, 2, Subspace::Default);
        for step in 0..4 {
            q.enqueue(&unit_rows(4, step * 4), Subspace::Default).unwrap();
            q.check_invariants().unwrap();
            assert_eq!(q.len(), ((step + 1) * 4).min(8));
        }
        let seqs: Vec<u64> = q.entries().map(|e| e.seq).collect();
        assert_eq!(seqs, (8..16).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_foreign_and_non_unit_keys() {
        let mut q = NegativeQueue::new(4, 2, Subspace::Temporal);
        assert!(matches!(
            q.enqueue(&unit_rows(1, 0), Subspace::Joint),
            Err(ContrastError::SubspaceMix { .. })
        ));
        assert!(matches!(
            q.enqueue(&Array2::from_elem((1, 2), 1.0), Subspace::Temporal),
            Err(ContrastError::NotUnit(_))
        ));
    }

    #[test]
    fn restore_keeps_sequence() {
        let mut q = NegativeQueue::new(3, 2, Subspace::Default);
        q.enqueue(&unit_rows(5, 0), Subspace::Default).unwrap();
        let r = NegativeQueue::restore(3, Subspace::Default, &q.matrix(), q.next_seq()).unwrap();
        assert_eq!(r, q);
    }
}
