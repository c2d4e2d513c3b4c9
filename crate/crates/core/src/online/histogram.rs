//! Fixed-size bucket counters over `[0, 1)` with interpolated order statistics.

/// `b` counters, bucket `l` covering `[l/b, (l+1)/b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl BucketHistogram {
    /// Panics if `buckets == 0`; callers validate configuration first.
    pub fn new(buckets: usize) -> Self {
        assert!(buckets >= 1, "bucket count must be >= 1");
        Self {
            counts: vec![0; buckets],
            total: 0,
        }
    }

    pub fn buckets(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn clear(&mut self) {
        self.counts.fill(0);
        self.total = 0;
    }

    /// Bucket holding `x`, or `None` when `x` is not counted.
    ///
    /// Only strictly positive values are counted: any value `<= 0` can only
    /// produce a clamped-to-zero order statistic, and counting exact zeros
    /// would let interpolation report a positive threshold for them.
    pub fn bucket_of(&self, x: f64) -> Option<usize> {
        if x.is_nan() || x <= 0.0 {
            return None;
        }
        let b = self.counts.len();
        Some(((x * b as f64) as usize).min(b - 1))
    }

    /// Counts `x`; returns whether it was counted.
    pub fn insert(&mut self, x: f64) -> bool {
        match self.bucket_of(x) {
            Some(l) => {
                self.counts[l] += 1;
                self.total += 1;
                true
            }
            None => false,
        }
    }

    /// Interpolated r-th largest of the counted values, plus an optional
    /// extra candidate that is not stored.
    ///
    /// With `above` values in buckets above bucket `l` and `c` values inside
    /// it, the target sits `(r - above)` items down from the top of `l`;
    /// assuming values spread uniformly over the bucket gives
    /// `(l+1)/b - ((r - above)/c) / b`.
    pub fn rth_largest_with(&self, rank: usize, extra: Option<f64>) -> Option<f64> {
        let extra_bucket = extra.and_then(|x| self.bucket_of(x));
        let rank = rank as u64;
        if self.total + u64::from(extra_bucket.is_some()) < rank || rank == 0 {
            return None;
        }
        let b = self.counts.len() as f64;
        let mut above = 0u64;
        for l in (0..self.counts.len()).rev() {
            let c = self.counts[l] + u64::from(extra_bucket == Some(l));
            if above + c >= rank {
                let frac = (rank - above) as f64 / c as f64;
                return Some((l + 1) as f64 / b - frac / b);
            }
            above += c;
        }
        None
    }

    pub fn rth_largest(&self, rank: usize) -> Option<f64> {
        self.rth_largest_with(rank, None)
    }

    pub(crate) fn footprint_bytes(&self) -> usize {
        std::mem::size_of::<Self>() + self.counts.capacity() * std::mem::size_of::<u64>()
    }
}
