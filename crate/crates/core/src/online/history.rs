//! Exact per-expert multiset answering fixed-rank order-statistic queries.

use std::collections::BTreeMap;

use crate::order_stat::TotalF64;

/// Counted multiset split in two tiers: `top` holds the `rank` largest
/// values, `rest` holds everything else.
///
/// Insertions, removals and the r-th largest query all cost `O(log len)`.
#[derive(Debug, Clone)]
pub struct ExpertHistory {
    rank: usize,
    top: Tier,
    rest: Tier,
}

#[derive(Debug, Clone, Default)]
struct Tier {
    items: BTreeMap<TotalF64, usize>,
    len: usize,
}

impl Tier {
    fn add(&mut self, x: TotalF64) {
        *self.items.entry(x).or_insert(0) += 1;
        self.len += 1;
    }

    fn take(&mut self, x: TotalF64) -> bool {
        match self.items.get_mut(&x) {
            Some(c) => {
                *c -= 1;
                if *c == 0 {
                    self.items.remove(&x);
                }
                self.len -= 1;
                true
            }
            None => false,
        }
    }

    fn min(&self) -> Option<TotalF64> {
        self.items.keys().next().copied()
    }

    fn max(&self) -> Option<TotalF64> {
        self.items.keys().next_back().copied()
    }

    /// Second smallest element counting multiplicity.
    fn second_min(&self) -> Option<TotalF64> {
        let mut it = self.items.iter();
        let (&first, &count) = it.next()?;
        if count >= 2 {
            Some(first)
        } else {
            it.next().map(|(&k, _)| k)
        }
    }
}

impl ExpertHistory {
    /// Empty history answering r-th largest queries for `rank >= 1`.
    pub fn new(rank: usize) -> Self {
        assert!(rank >= 1, "order statistic rank must be >= 1");
        Self {
            rank,
            top: Tier::default(),
            rest: Tier::default(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.top.len + self.rest.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        self.top = Tier::default();
        self.rest = Tier::default();
    }

    pub fn insert(&mut self, x: f64) {
        let x = TotalF64(x);
        if self.top.len < self.rank {
            self.top.add(x);
            return;
        }
        let floor = self.top.min().expect("top tier is full");
        if x > floor {
            self.top.take(floor);
            self.rest.add(floor);
            self.top.add(x);
        } else {
            self.rest.add(x);
        }
    }

    /// Removes one copy of `x`; returns false when absent.
    pub fn remove(&mut self, x: f64) -> bool {
        let x = TotalF64(x);
        if self.top.take(x) {
            if let Some(promote) = self.rest.max() {
                self.rest.take(promote);
                self.top.add(promote);
            }
            true
        } else {
            self.rest.take(x)
        }
    }

    /// r-th largest of the stored values.
    pub fn rth_largest(&self) -> Option<f64> {
        (self.top.len == self.rank).then(|| self.top.min().expect("non-empty").0)
    }

    /// r-th largest of the stored values together with one extra candidate,
    /// without inserting it.
    pub fn rth_largest_with(&self, x: f64) -> Option<f64> {
        if self.len() + 1 < self.rank {
            return None;
        }
        // (r-1)-th largest of the content; +inf when r == 1.
        let upper = if self.rank == 1 {
            f64::INFINITY
        } else if self.top.len == self.rank {
            self.top.second_min().expect("rank >= 2").0
        } else {
            self.top.min().expect("rank - 1 >= 1 stored values").0
        };
        let lower = self.rth_largest().unwrap_or(f64::NEG_INFINITY);
        Some(lower.max(x.min(upper)))
    }

    /// All stored values in descending order.
    pub fn sorted_desc(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for tier in [&self.top, &self.rest] {
            for (k, &c) in tier.items.iter().rev() {
                out.extend(std::iter::repeat_n(k.0, c));
            }
        }
        out
    }

    pub(crate) fn footprint_bytes(&self) -> usize {
        // BTreeMap node layout is opaque; count stored entries.
        std::mem::size_of::<Self>()
            + (self.top.items.len() + self.rest.items.len()) * std::mem::size_of::<(TotalF64, usize)>()
    }
}
