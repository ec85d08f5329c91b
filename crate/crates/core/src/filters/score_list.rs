//! Ordered multiset of filter scores backed by an indexable skiplist.
//!
//! Each forward link stores its width (the number of bottom-level hops it
//! spans), which gives O(log n) expected insertion and O(log n) rank queries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FilterError;
use crate::scalar::Real;

const MAX_LEVEL: usize = 32;
const HEAD: usize = 0;
const NIL: usize = usize::MAX;
const LEVEL_SEED: u64 = 0x5c0e_5115_7a11_d00d;

/// Iteration order of a [`ScoreList`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreOrder {
    /// Largest first (source-BLEU).
    Decreasing,
    /// Smallest first (perplexity).
    Increasing,
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: T,
    next: Vec<usize>,
    width: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ScoreList<T> {
    order: ScoreOrder,
    nodes: Vec<Node<T>>,
    len: usize,
    comparisons: u64,
    rng: ChaCha8Rng,
}

impl<T: Real> ScoreList<T> {
    pub fn new(order: ScoreOrder) -> Self {
        let head = Node {
            value: T::zero(),
            next: vec![NIL; MAX_LEVEL],
            width: vec![1; MAX_LEVEL],
        };
        Self {
            order,
            nodes: vec![head],
            len: 0,
            comparisons: 0,
            rng: ChaCha8Rng::seed_from_u64(LEVEL_SEED),
        }
    }

    pub fn order(&self) -> ScoreOrder {
        self.order
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of score comparisons performed by all inserts so far.
    pub fn comparisons(&self) -> u64 {
        self.comparisons
    }

    /// True when `a` must be placed strictly before `b`.
    fn before(&mut self, a: T, b: T) -> bool {
        self.comparisons += 1;
        match self.order {
            ScoreOrder::Decreasing => a > b,
            ScoreOrder::Increasing => a < b,
        }
    }

    fn random_level(&mut self) -> usize {
        let bits: u32 = self.rng.gen();
        (bits.trailing_ones() as usize + 1).min(MAX_LEVEL)
    }

    /// Inserts one score after any equal scores already present.
    pub fn insert(&mut self, value: T) -> Result<(), FilterError> {
        if !value.is_finite() {
            return Err(FilterError::NonFiniteScore(value.as_f64()));
        }
        self.insert_unchecked(value);
        Ok(())
    }

    fn insert_unchecked(&mut self, value: T) {
        let mut chain = [HEAD; MAX_LEVEL];
        let mut steps_at = [0usize; MAX_LEVEL];
        let mut node = HEAD;
        let mut steps = 0usize;
        for level in (0..MAX_LEVEL).rev() {
            loop {
                let next = self.nodes[node].next[level];
                if next == NIL {
                    break;
                }
                let next_value = self.nodes[next].value;
                if self.before(value, next_value) {
                    break;
                }
                steps += self.nodes[node].width[level];
                node = next;
            }
            chain[level] = node;
            steps_at[level] = steps;
        }

        let height = self.random_level();
        let id = self.nodes.len();
        let mut fresh = Node {
            value,
            next: vec![NIL; height],
            width: vec![0; height],
        };
        for level in 0..height {
            let prev = chain[level];
            let skipped = steps - steps_at[level];
            fresh.next[level] = self.nodes[prev].next[level];
            fresh.width[level] = self.nodes[prev].width[level] - skipped;
            self.nodes[prev].next[level] = id;
            self.nodes[prev].width[level] = skipped + 1;
        }
        for level in height..MAX_LEVEL {
            self.nodes[chain[level]].width[level] += 1;
        }
        self.nodes.push(fresh);
        self.len += 1;
    }

    /// Inserts a batch atomically: nothing is inserted if any score is not finite.
    pub fn insert_batch(&mut self, scores: &[T]) -> Result<(), FilterError> {
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(FilterError::NonFiniteScore(bad.as_f64()));
        }
        for &s in scores {
            self.insert_unchecked(s);
        }
        Ok(())
    }

    /// The element at 0-based `index` in list order.
    pub fn get(&self, index: usize) -> Option<T> {
        if index >= self.len {
            return None;
        }
        let mut remaining = index + 1;
        let mut node = HEAD;
        for level in (0..MAX_LEVEL).rev() {
            while self.nodes[node].next[level] != NIL && self.nodes[node].width[level] <= remaining {
                remaining -= self.nodes[node].width[level];
                node = self.nodes[node].next[level];
            }
        }
        debug_assert_eq!(remaining, 0);
        Some(self.nodes[node].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        let mut node = self.nodes[HEAD].next[0];
        std::iter::from_fn(move || {
            if node == NIL {
                return None;
            }
            let v = self.nodes[node].value;
            node = self.nodes[node].next[0];
            Some(v)
        })
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.iter().collect()
    }

    /// Value at index floor(phi * len), clamped to the last element.
    pub fn threshold(&self, phi: T) -> Result<T, FilterError> {
        if self.is_empty() {
            return Err(FilterError::EmptyList);
        }
        let pos = (phi * T::of_usize(self.len)).floor().to_usize().unwrap_or(0);
        Ok(self.get(pos.min(self.len - 1)).expect("index in range"))
    }
}
