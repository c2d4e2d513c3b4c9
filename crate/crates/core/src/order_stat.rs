//! Order statistics over multisets of reals.
//!
//! "r-th largest" always means the r-th element (1-based) of the multiset
//! sorted in descending order with duplicates counted.

use std::cmp::Ordering;

/// Total order on `f64` used for keys in ordered containers.
#[derive(Debug, Clone, Copy)]
pub struct TotalF64(pub f64);

impl PartialEq for TotalF64 {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for TotalF64 {}

impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// r-th largest value of `values` (1-based), reordering the slice in place.
///
/// Uses partial selection, so the cost is linear in `values.len()`.
/// Returns `None` when `rank` is zero or exceeds the length.
pub fn rth_largest_in_place(values: &mut [f64], rank: usize) -> Option<f64> {
    if rank == 0 || rank > values.len() {
        return None;
    }
    let (_, nth, _) = values.select_nth_unstable_by(rank - 1, |a, b| b.total_cmp(a));
    Some(*nth)
}

/// `max(0, r-th largest)`, with a missing order statistic treated as zero.
pub fn clamped_rth_largest(values: &mut [f64], rank: usize) -> f64 {
    rth_largest_in_place(values, rank).map_or(0.0, |v| v.max(0.0))
}
