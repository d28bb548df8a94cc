//! Primary data, external covariate summaries and cross-fitting fold plans.
//!
//! External sources never hand over individual rows. Everything downstream of
//! [`summarize_external`] sees them only through an [`ExternalSummary`] and
//! through per-fold unit counts in a [`FoldPlan`].

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PSD tolerance for `gram - mean meanᵀ`, scaled by the largest diagonal entry.
const PSD_TOL: f64 = 1e-10;

/// Sample size, covariate mean and (optionally) covariate gram matrix of an
/// external source. Coordinate 0 is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SummaryRepr", into = "SummaryRepr")]
pub struct ExternalSummary {
    n_external: usize,
    mean: Vec<f64>,
    gram: Option<DMatrix<f64>>,
    gram_diag: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SummaryRepr {
    n_external: usize,
    mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gram: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gram_diag: Option<Vec<f64>>,
}

impl TryFrom<SummaryRepr> for ExternalSummary {
    type Error = Error;

    fn try_from(r: SummaryRepr) -> Result<Self> {
        let d = r.mean.len();
        let gram = match r.gram {
            None => None,
            Some(rows) => {
                if rows.len() != d {
                    return Err(Error::Dimension { expected: d, found: rows.len() });
                }
                let mut m = DMatrix::zeros(d, d);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != d {
                        return Err(Error::Dimension { expected: d, found: row.len() });
                    }
                    for (j, v) in row.iter().enumerate() {
                        m[(i, j)] = *v;
                    }
                }
                Some(m)
            }
        };
        ExternalSummary::new(r.n_external, r.mean, gram, r.gram_diag)
    }
}

impl From<ExternalSummary> for SummaryRepr {
    fn from(s: ExternalSummary) -> Self {
        let gram = s.gram.map(|g| {
            (0..g.nrows())
                .map(|i| (0..g.ncols()).map(|j| g[(i, j)]).collect())
                .collect()
        });
        SummaryRepr { n_external: s.n_external, mean: s.mean, gram, gram_diag: s.gram_diag }
    }
}

impl ExternalSummary {
    pub fn new(
        n_external: usize,
        mean: Vec<f64>,
        gram: Option<DMatrix<f64>>,
        gram_diag: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("summary mean is empty"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("summary mean".into()));
        }
        if mean[0] != 1.0 {
            return Err(Error::MissingIntercept { row: 0, value: mean[0] });
        }
        if let Some(g) = &gram {
            if g.nrows() != d || g.ncols() != d {
                return Err(Error::Dimension { expected: d, found: g.nrows() });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("summary gram".into()));
            }
            if g[(0, 0)] != 1.0 {
                return Err(Error::invalid("gram[0][0] must be 1"));
            }
            for i in 0..d {
                for j in 0..i {
                    if g[(i, j)] != g[(j, i)] {
                        return Err(Error::invalid(format!("gram not symmetric at ({i}, {j})")));
                    }
                }
            }
            let m = nalgebra::DVector::from_column_slice(&mean);
            let cov = g - &m * m.transpose();
            let scale = (0..d).map(|i| g[(i, i)].abs()).fold(1.0, f64::max);
            let min_eig = SymmetricEigen::new(cov).eigenvalues.min();
            if min_eig < -PSD_TOL * scale {
                return Err(Error::invalid(format!(
                    "gram - mean meanᵀ is not positive semidefinite (min eigenvalue {min_eig:e})"
                )));
            }
        }
        if let Some(diag) = &gram_diag {
            if diag.len() != d {
                return Err(Error::Dimension { expected: d, found: diag.len() });
            }
            if diag.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("gram_diag must be finite and nonnegative"));
            }
            if let Some(g) = &gram {
                if (0..d).any(|i| g[(i, i)] != diag[i]) {
                    return Err(Error::invalid("gram_diag disagrees with the gram diagonal"));
                }
            }
        }
        Ok(ExternalSummary { n_external, mean, gram, gram_diag })
    }

    pub fn n_external(&self) -> usize {
        self.n_external
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn gram(&self) -> Option<&DMatrix<f64>> {
        self.gram.as_ref()
    }

    /// Diagonal second moments, taken from the full gram when only that is present.
    pub fn gram_diag(&self) -> Option<Vec<f64>> {
        match (&self.gram_diag, &self.gram) {
            (Some(d), _) => Some(d.clone()),
            (None, Some(g)) => Some(g.diagonal().iter().copied().collect()),
            (None, None) => None,
        }
    }

    /// Copy with the gram matrix removed, keeping its diagonal.
    pub fn diagonal_only(&self) -> ExternalSummary {
        ExternalSummary {
            n_external: self.n_external,
            mean: self.mean.clone(),
            gram: None,
            gram_diag: self.gram_diag(),
        }
    }

    /// Copy with all second-moment information removed.
    pub fn first_moment_only(&self) -> ExternalSummary {
        ExternalSummary { n_external: self.n_external, mean: self.mean.clone(), gram: None, gram_diag: None }
    }

    /// Copy whose mean is zeroed outside `support` (the intercept is kept).
    pub fn restrict_mean(&self, support: &[usize]) -> ExternalSummary {
        let mut mean = vec![0.0; self.mean.len()];
        mean[0] = 1.0;
        for &j in support {
            mean[j] = self.mean[j];
        }
        ExternalSummary { n_external: self.n_external, mean, gram: None, gram_diag: None }
    }
}

/// Reduce individual external rows to their summary. Rows must share a
/// dimension and start with the intercept 1.
pub fn summarize_external<R: AsRef<[f64]>>(rows: &[R]) -> Result<ExternalSummary> {
    let first = rows.first().ok_or(Error::EmptyExternal)?;
    let d = first.as_ref().len();
    if d == 0 {
        return Err(Error::invalid("external rows have zero length"));
    }
    let n = rows.len();
    let mut x = DMatrix::zeros(n, d);
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != d {
            return Err(Error::Dimension { expected: d, found: r.len() });
        }
        if r[0] != 1.0 {
            return Err(Error::MissingIntercept { row: i, value: r[0] });
        }
        for (j, v) in r.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("external row {i}, column {j}")));
            }
            x[(i, j)] = *v;
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / nf).collect();
    let mut gram = x.tr_mul(&x) / nf;
    // Symmetrize exactly; gemm is symmetric up to rounding only.
    for i in 0..d {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let diag = gram.diagonal().iter().copied().collect();
    ExternalSummary::new(n, mean, Some(gram), Some(diag))
}

/// Individually observed labeled rows plus the number of external units.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryDataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
    treatment: Option<Vec<u8>>,
    n_external: usize,
}

impl PrimaryDataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, treatment: Option<Vec<u8>>, n_external: usize) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::invalid("design has no columns"));
        }
        if x.nrows() != y.len() {
            return Err(Error::Dimension { expected: x.nrows(), found: y.len() });
        }
        for i in 0..x.nrows() {
            if x[(i, 0)] != 1.0 {
                return Err(Error::MissingIntercept { row: i, value: x[(i, 0)] });
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariates".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("outcome on row {i}")));
        }
        if let Some(a) = &treatment {
            if a.len() != y.len() {
                return Err(Error::Dimension { expected: y.len(), found: a.len() });
            }
            if let Some(i) = a.iter().position(|v| *v > 1) {
                return Err(Error::invalid(format!("treatment on row {i} is not 0/1")));
            }
        }
        Ok(PrimaryDataset { x, y, treatment, n_external })
    }

    /// Build from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, treatment: Option<Vec<u8>>, n_external: usize) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).ok_or_else(|| Error::invalid("no labeled rows"))?;
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Dimension { expected: d, found: r.len() });
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(x, y, treatment, n_external)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn treatment(&self) -> Option<&[u8]> {
        self.treatment.as_deref()
    }

    pub fn n_labeled(&self) -> usize {
        self.y.len()
    }

    pub fn n_external(&self) -> usize {
        self.n_external
    }

    pub fn n_total(&self) -> usize {
        self.y.len() + self.n_external
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Same rows with outcomes replaced.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y, self.treatment.clone(), self.n_external)
    }

    pub(crate) fn check_summary(&self, summary: &ExternalSummary) -> Result<()> {
        if summary.dim() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), found: summary.dim() });
        }
        if summary.n_external() != self.n_external {
            return Err(Error::invalid(format!(
                "summary reports {} external units but the dataset declares {}",
                summary.n_external(),
                self.n_external
            )));
        }
        Ok(())
    }
}

/// A set of units: labeled rows by index, external units by count. `size`
/// counts every unit the group stands for, including units an estimator has
/// excluded from both lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitGroup {
    pub labeled: Vec<usize>,
    pub external: usize,
    pub size: usize,
}

impl UnitGroup {
    /// Fraction of labeled units, `labeled / size`.
    pub fn labeled_fraction(&self) -> f64 {
        self.labeled.len() as f64 / self.size as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complement {
    pub all: UnitGroup,
    pub alpha: Option<UnitGroup>,
    pub beta: Option<UnitGroup>,
}

/// K-fold partition of all `n_labeled + n_external` units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub n_labeled: usize,
    pub n_external: usize,
    pub folds: Vec<UnitGroup>,
    pub complements: Vec<Complement>,
    /// External unit ids per fold, for estimators that hold individual
    /// external covariates (the partially linear model's Z).
    pub external_members: Vec<Vec<usize>>,
}

/// Seeded K-fold plan. Unit slots `0..n_labeled` are labeled rows, the rest
/// external units; a uniform permutation of all slots is cut into contiguous
/// folds, the first `n mod K` one unit larger. With `split_halves`, each
/// complement is dealt alternately into an alpha and a beta half in
/// permutation order.
pub fn make_folds(n_labeled: usize, n_external: usize, k: usize, seed: u64, split_halves: bool) -> Result<FoldPlan> {
    let n = n_labeled + n_external;
    if k < 2 {
        return Err(Error::invalid("fold count must be at least 2"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} units cannot fill {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / k;
    let extra = n % k;
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for f in 0..k {
        let len = base + usize::from(f < extra);
        bounds.push(bounds[f] + len);
    }

    let mut folds = Vec::with_capacity(k);
    let mut external_members = Vec::with_capacity(k);
    for f in 0..k {
        let slots = &perm[bounds[f]..bounds[f + 1]];
        let mut labeled: Vec<usize> = slots.iter().copied().filter(|&s| s < n_labeled).collect();
        labeled.sort_unstable();
        let mut ext: Vec<usize> = slots.iter().filter(|&&s| s >= n_labeled).map(|&s| s - n_labeled).collect();
        ext.sort_unstable();
        if labeled.is_empty() {
            return Err(Error::EmptyLabeledFold { fold: f });
        }
        folds.push(UnitGroup { labeled, external: ext.len(), size: slots.len() });
        external_members.push(ext);
    }

    let complements = (0..k)
        .map(|f| {
            let mut all = UnitGroup { labeled: Vec::new(), external: 0, size: 0 };
            let mut halves = [all.clone(), all.clone()];
            let mut parity = 0usize;
            for (pos, &slot) in perm.iter().enumerate() {
                if pos >= bounds[f] && pos < bounds[f + 1] {
                    continue;
                }
                let half = &mut halves[parity];
                parity ^= 1;
                for g in [&mut all, half] {
                    g.size += 1;
                    if slot < n_labeled {
                        g.labeled.push(slot);
                    } else {
                        g.external += 1;
                    }
                }
            }
            all.labeled.sort_unstable();
            let [mut alpha, mut beta] = halves;
            alpha.labeled.sort_unstable();
            beta.labeled.sort_unstable();
            if split_halves {
                Complement { all, alpha: Some(alpha), beta: Some(beta) }
            } else {
                Complement { all, alpha: None, beta: None }
            }
        })
        .collect();

    Ok(FoldPlan { k, n_labeled, n_external, folds, complements, external_members })
}

impl FoldPlan {
    pub fn n_total(&self) -> usize {
        self.n_labeled + self.n_external
    }

    /// Fold-local labeled fractions.
    pub fn gamma_hats(&self) -> Vec<f64> {
        self.folds.iter().map(UnitGroup::labeled_fraction).collect()
    }

    /// Plan over a subset of labeled units. Dropped labeled units either
    /// join the external counts (`dropped_to_external`) or vanish from both
    /// lists while still counting toward every group's `size`.
    pub fn restrict(&self, keep: impl Fn(usize) -> bool, dropped_to_external: bool) -> FoldPlan {
        let map = |g: &UnitGroup| {
            let labeled: Vec<usize> = g.labeled.iter().copied().filter(|&i| keep(i)).collect();
            let dropped = g.labeled.len() - labeled.len();
            UnitGroup {
                labeled,
                external: g.external + if dropped_to_external { dropped } else { 0 },
                size: g.size,
            }
        };
        FoldPlan {
            k: self.k,
            n_labeled: self.n_labeled,
            n_external: self.n_external,
            folds: self.folds.iter().map(map).collect(),
            complements: self
                .complements
                .iter()
                .map(|c| Complement {
                    all: map(&c.all),
                    alpha: c.alpha.as_ref().map(map),
                    beta: c.beta.as_ref().map(map),
                })
                .collect(),
            external_members: self.external_members.clone(),
        }
    }
}
