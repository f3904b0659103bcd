//! Fenwick tree over integer weights with O(log n) update and weighted
//! index search. Integer weights keep the running totals exact.

#[derive(Debug, Clone, Default)]
pub struct SumTree {
    tree: Vec<u64>,
    values: Vec<u64>,
}

impl SumTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.prefix(self.values.len())
    }

    pub fn get(&self, i: usize) -> u64 {
        self.values[i]
    }

    /// Sum of the first `k` values.
    pub fn prefix(&self, k: usize) -> u64 {
        let mut i = k;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i - 1];
            i &= i - 1;
        }
        s
    }

    fn add(&mut self, i: usize, delta: i64) {
        let mut k = i + 1;
        while k <= self.tree.len() {
            self.tree[k - 1] = self.tree[k - 1].wrapping_add_signed(delta);
            k += k & k.wrapping_neg();
        }
    }

    fn rebuild(&mut self, capacity: usize) {
        self.tree = vec![0; capacity];
        self.tree[..self.values.len()].copy_from_slice(&self.values);
        for i in 0..capacity {
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= capacity {
                let carry = self.tree[i];
                self.tree[parent - 1] += carry;
            }
        }
    }

    pub fn push(&mut self, value: u64) {
        if self.values.len() == self.tree.len() {
            self.values.push(value);
            let cap = (self.values.len()).next_power_of_two().max(8);
            self.rebuild(cap);
        } else {
            self.values.push(value);
            let i = self.values.len() - 1;
            self.add(i, value as i64);
        }
    }

    pub fn set(&mut self, i: usize, value: u64) {
        let delta = value as i64 - self.values[i] as i64;
        self.values[i] = value;
        if delta != 0 {
            self.add(i, delta);
        }
    }

    /// Remove slot `i` by moving the last slot into it, mirroring
    /// `Vec::swap_remove`.
    pub fn swap_remove(&mut self, i: usize) {
        let last = self.values.len() - 1;
        let moved = self.values[last];
        self.set(last, 0);
        self.values.pop();
        if i != last {
            self.set(i, moved);
        }
    }

    /// Index `i` with `prefix(i) <= target < prefix(i + 1)`; requires
    /// `target < total()`.
    pub fn find(&self, target: u64) -> usize {
        debug_assert!(target < self.total());
        let mut pos = 0usize;
        let mut rem = target;
        let mut step = self.tree.len().next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= self.tree.len() && self.tree[next - 1] <= rem {
                pos = next;
                rem -= self.tree[next - 1];
            }
            step >>= 1;
        }
        pos
    }
}
