use crate::perception::checksum_f64;

/// Fixed-capacity FIFO ring buffer of unit-norm features.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledQueue {
    slots: Vec<Vec<f64>>,
    capacity: usize,
    write: usize,
}

impl UnlabeledQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            slots: Vec::with_capacity(capacity.min(4096)),
            capacity,
            write: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn push(&mut self, feature: Vec<f64>) {
        if self.capacity == 0 {
            return;
        }
        if self.slots.len() < self.capacity {
            self.slots.push(feature);
        } else {
            self.slots[self.write] = feature;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        let start = if self.slots.len() < self.capacity { 0 } else { self.write };
        let n = self.slots.len();
        (0..n).map(move |i| self.slots[(start + i) % n].as_slice())
    }

    pub fn refs(&self) -> Vec<&[f64]> {
        self.iter().collect()
    }

    pub fn clear(&mut self) {
        self.slots.clear();
        self.write = 0;
    }

    pub fn checksum(&self) -> u64 {
        checksum_f64(self.iter().flatten().copied())
    }
}

pub fn push_unlabeled(queue: &mut UnlabeledQueue, features: impl IntoIterator<Item = Vec<f64>>) {
    for f in features {
        queue.push(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fifo_eviction() {
        let mut q = UnlabeledQueue::new(3);
        push_unlabeled(&mut q, ["a", "b", "c", "d"].iter().enumerate().map(|(i, _)| vec![i as f64]));
        let held: Vec<f64> = q.iter().map(|v| v[0]).collect();
        assert_eq!(held, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_push_is_noop() {
        let mut q = UnlabeledQueue::new(3);
        q.push(vec![1.0]);
        let before = q.clone();
        push_unlabeled(&mut q, Vec::<Vec<f64>>::new());
        assert_eq!(q, before);
    }

    #[test]
    fn capacity_1000_after_1500_pushes() {
        let mut q = UnlabeledQueue::new(1000);
        push_unlabeled(&mut q, (0..1500).map(|i| vec![i as f64]));
        assert_eq!(q.len(), 1000);
        assert_eq!(q.iter().next().unwrap()[0], 500.0);
    }

    proptest! {
        #[test]
        fn matches_naive_fifo(cap in 1usize..20, n in 0usize..80) {
            let mut q = UnlabeledQueue::new(cap);
            let mut naive: std::collections::VecDeque<f64> = Default::default();
            for i in 0..n {
                q.push(vec![i as f64]);
                naive.push_back(i as f64);
                if naive.len() > cap {
                    naive.pop_front();
                }
                prop_assert!(q.len() <= cap);
            }
            let held: Vec<f64> = q.iter().map(|v| v[0]).collect();
            prop_assert_eq!(held, naive.into_iter().collect::<Vec<_>>());
        }
    }
}
