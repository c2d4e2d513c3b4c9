//! Shared routing types and the adjusted top-k selection used by every router.
//!
//! All routers in this crate reduce to the same primitive: pick the `k`
//! largest entries of `scores - offsets` for a token, then build gate values
//! from the *raw* scores. The routers differ only in where the offsets come
//! from (zero for greedy, `-b` for the bias router, `q` for the dual
//! balancers).

use crate::error::{Error, Result};
use crate::order_stat::rth_largest_in_place;

/// Smallest gap below 1 that ingested scores are clamped to.
pub const SCORE_EPS: f64 = 1.0 / 4_294_967_296.0;

/// Largest admissible score after ingestion clamping.
pub const MAX_SCORE: f64 = 1.0 - SCORE_EPS;

/// Adjusted values closer than this are treated as tied at the selection
/// boundary.
///
/// Dual fixed points put adjusted scores exactly on the threshold, but the
/// subtraction `s - q` rounds differently on each side, so an exact equality
/// test would break those ties by rounding noise instead of by load.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Problem dimensions shared by all balancers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceConfig {
    experts: usize,
    top_k: usize,
    tokens: usize,
    iters: usize,
}

impl BalanceConfig {
    /// Validates `m >= 2`, `1 <= k < m`, `n >= 1`, `T >= 1`.
    pub fn new(experts: usize, top_k: usize, tokens: usize, iters: usize) -> Result<Self> {
        if experts < 2 {
            return Err(Error::Config(format!("need at least 2 experts, got {experts}")));
        }
        if top_k == 0 || top_k >= experts {
            return Err(Error::Config(format!(
                "top-k must satisfy 1 <= k < m, got k={top_k}, m={experts}"
            )));
        }
        if tokens == 0 {
            return Err(Error::Config("token count per batch must be >= 1".into()));
        }
        if iters == 0 {
            return Err(Error::Config("iteration count T must be >= 1".into()));
        }
        Ok(Self {
            experts,
            top_k,
            tokens,
            iters,
        })
    }

    pub fn experts(&self) -> usize {
        self.experts
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn iters(&self) -> usize {
        self.iters
    }

    /// Copy with a different token count (trace batches may differ from the CLI default).
    pub fn with_tokens(&self, tokens: usize) -> Result<Self> {
        Self::new(self.experts, self.top_k, tokens, self.iters)
    }

    pub fn with_iters(&self, iters: usize) -> Result<Self> {
        Self::new(self.experts, self.top_k, self.tokens, iters)
    }

    /// `kn/m` as a real number: the mean per-expert load.
    pub fn balanced_load(&self) -> f64 {
        (self.top_k * self.tokens) as f64 / self.experts as f64
    }

    pub fn is_capacity_integral(&self) -> bool {
        (self.top_k * self.tokens).is_multiple_of(self.experts)
    }

    /// Per-expert token budget, `ceil(kn/m)`.
    pub fn capacity(&self) -> usize {
        (self.top_k * self.tokens).div_ceil(self.experts)
    }

    /// Rank of the per-expert order statistic, `floor(kn/m) + 1`.
    pub fn capacity_rank(&self) -> usize {
        self.top_k * self.tokens / self.experts + 1
    }
}

/// Clamp a finite score into `[0, MAX_SCORE]`.
pub fn clamp_score(x: f64) -> f64 {
    x.clamp(0.0, MAX_SCORE)
}

/// Checks one score against the ingestion domain and applies the clamp.
pub fn ingest_score(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("non-finite score {x}")));
    }
    if !(0.0..1.0).contains(&x) {
        return Err(Error::Domain(format!("score {x} outside [0, 1)")));
    }
    Ok(clamp_score(x))
}

/// Row-major `n x m` matrix of routing scores in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Structure(format!("empty score matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Structure(format!(
                "score buffer has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        let data = data.into_iter().map(ingest_score).collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Structure(format!(
                    "row {i} has {} scores, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Checks that the matrix matches `(cfg.tokens(), cfg.experts())`.
    pub fn check_shape(&self, cfg: &BalanceConfig) -> Result<()> {
        if self.rows != cfg.tokens() || self.cols != cfg.experts() {
            return Err(Error::Structure(format!(
                "score matrix is {}x{}, config expects {}x{}",
                self.rows,
                self.cols,
                cfg.tokens(),
                cfg.experts()
            )));
        }
        Ok(())
    }
}

/// Per-expert token counts for one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadVector(Vec<usize>);

impl LoadVector {
    pub fn new(counts: Vec<usize>) -> Self {
        Self(counts)
    }

    pub fn zeros(experts: usize) -> Self {
        Self(vec![0; experts])
    }

    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn add(&mut self, selection: &[usize]) {
        for &j in selection {
            self.0[j] += 1;
        }
    }
}

/// Selected experts and gate values for every token of a batch.
///
/// Gate values are stored aligned with `selected`; every unselected
/// `(token, expert)` pair implicitly has gate zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    experts: usize,
    selected: Vec<Vec<usize>>,
    gates: Vec<Vec<f64>>,
}

impl Assignment {
    pub fn experts(&self) -> usize {
        self.experts
    }

    pub fn tokens(&self) -> usize {
        self.selected.len()
    }

    pub fn selected(&self, token: usize) -> &[usize] {
        &self.selected[token]
    }

    pub fn selections(&self) -> &[Vec<usize>] {
        &self.selected
    }

    pub fn gates(&self, token: usize) -> &[f64] {
        &self.gates[token]
    }

    /// Gate value of `(token, expert)`, zero when unselected.
    pub fn gate(&self, token: usize, expert: usize) -> f64 {
        self.selected[token]
            .iter()
            .position(|&j| j == expert)
            .map_or(0.0, |pos| self.gates[token][pos])
    }

    /// Full `n x m` gate matrix.
    pub fn dense_gates(&self) -> Vec<Vec<f64>> {
        (0..self.tokens())
            .map(|i| (0..self.experts).map(|j| self.gate(i, j)).collect())
            .collect()
    }

    pub fn loads(&self) -> LoadVector {
        let mut loads = LoadVector::zeros(self.experts);
        for sel in &self.selected {
            loads.add(sel);
        }
        loads
    }

    /// Sum of raw scores over selected pairs.
    pub fn score_total(&self) -> f64 {
        self.gates.iter().flatten().sum()
    }
}

/// Indices of the `k` largest values of `scores - offsets`.
///
/// Values within [`TIE_TOLERANCE`] of the k-th largest form a tie group at
/// the boundary; seats left in it go to experts with the smaller
/// `loads_so_far`, then the smaller index. Experts strictly above the
/// boundary come first in the result, ordered by adjusted value.
pub fn select_topk_adjusted(
    scores: &[f64],
    offsets: &[f64],
    k: usize,
    loads_so_far: &[usize],
) -> Result<Vec<usize>> {
    let m = scores.len();
    if k == 0 || k >= m {
        return Err(Error::Config(format!(
            "top-k must satisfy 1 <= k < m, got k={k}, m={m}"
        )));
    }
    if offsets.len() != m || loads_so_far.len() != m {
        return Err(Error::Structure(format!(
            "row of {m} scores with {} offsets and {} loads",
            offsets.len(),
            loads_so_far.len()
        )));
    }
    let adjusted: Vec<f64> = scores.iter().zip(offsets).map(|(s, o)| s - o).collect();
    if let Some(bad) = adjusted.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite adjusted score {bad}")));
    }

    let mut scratch = adjusted.clone();
    let threshold = rth_largest_in_place(&mut scratch, k).expect("1 <= k < m");

    let mut above: Vec<usize> = (0..m)
        .filter(|&j| adjusted[j] > threshold + TIE_TOLERANCE)
        .collect();
    above.sort_by(|&a, &b| adjusted[b].total_cmp(&adjusted[a]).then(a.cmp(&b)));

    let mut boundary: Vec<usize> = (0..m)
        .filter(|&j| {
            let v = adjusted[j];
            v <= threshold + TIE_TOLERANCE && v >= threshold - TIE_TOLERANCE
        })
        .collect();
    boundary.sort_by_key(|&j| (loads_so_far[j], j));

    let seats = k - above.len();
    above.extend_from_slice(&boundary[..seats]);
    Ok(above)
}

/// Attach raw-score gate values to per-token selections.
pub fn build_gates(scores: &ScoreMatrix, selections: Vec<Vec<usize>>, k: usize) -> Result<Assignment> {
    if selections.len() != scores.rows() {
        return Err(Error::Structure(format!(
            "{} selections for {} tokens",
            selections.len(),
            scores.rows()
        )));
    }
    let m = scores.cols();
    let mut gates = Vec::with_capacity(selections.len());
    for (i, sel) in selections.iter().enumerate() {
        if sel.len() != k {
            return Err(Error::Structure(format!(
                "token {i} selects {} experts, expected {k}",
                sel.len()
            )));
        }
        let mut seen = vec![false; m];
        for &j in sel {
            if j >= m {
                return Err(Error::Structure(format!(
                    "token {i} selects expert {j}, only {m} exist"
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::Structure(format!("token {i} selects expert {j} twice")));
            }
        }
        gates.push(sel.iter().map(|&j| scores.get(i, j)).collect());
    }
    Ok(Assignment {
        experts: m,
        selected: selections,
        gates,
    })
}

/// Route a whole batch with fixed offsets, accumulating in-batch loads for
/// the tie-break as tokens are processed in order.
pub fn route_with_offsets(scores: &ScoreMatrix, offsets: &[f64], k: usize) -> Result<Assignment> {
    let mut loads = LoadVector::zeros(scores.cols());
    let mut selections = Vec::with_capacity(scores.rows());
    for row in scores.iter_rows() {
        let sel = select_topk_adjusted(row, offsets, k, loads.counts())?;
        loads.add(&sel);
        selections.push(sel);
    }
    build_gates(scores, selections, k)
}
