//! Cubic B-spline bases for additive smooth terms.

use serde::{Deserialize, Serialize};

const DEGREE: usize = 3;

/// Cubic B-spline basis on one coordinate with interior knots at empirical
/// quantiles. Columns are centered at their training means so the smooth
/// term carries no intercept; inputs outside the training range are clamped
/// to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    knots: Vec<f64>,
    center: Vec<f64>,
}

impl SplineBasis {
    /// Basis for the sample `z`, or `None` when `z` has fewer than two
    /// distinct values.
    pub fn fit(z: &[f64], interior: usize) -> Option<Self> {
        let mut sorted: Vec<f64> = z.iter().copied().filter(|v| v.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (*sorted.first()?, *sorted.last()?);
        if !(hi > lo) {
            return None;
        }
        let mut inner: Vec<f64> = (1..=interior)
            .map(|i| quantile(&sorted, i as f64 / (interior + 1) as f64))
            .filter(|q| *q > lo && *q < hi)
            .collect();
        inner.dedup();
        let mut knots = vec![lo; DEGREE + 1];
        knots.extend(inner);
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        let mut basis = SplineBasis { knots, center: Vec::new() };
        let m = basis.len();
        let mut center = vec![0.0; m];
        for &v in z {
            for (c, b) in center.iter_mut().zip(basis.raw(v)) {
                *c += b;
            }
        }
        let n = z.len() as f64;
        center.iter_mut().for_each(|c| *c /= n);
        basis.center = center;
        Some(basis)
    }

    pub fn len(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Uncentered basis values (nonnegative, summing to one).
    pub fn raw(&self, z: f64) -> Vec<f64> {
        let (lo, hi) = self.range();
        let z = z.clamp(lo, hi);
        let t = &self.knots;
        let m = self.len();
        // Knot span containing z; the right end belongs to the last span.
        let mut span = DEGREE;
        while span < m - 1 && z >= t[span + 1] {
            span += 1;
        }
        // Cox–de Boor on the DEGREE + 1 nonzero functions.
        let mut n = vec![0.0; DEGREE + 1];
        n[0] = 1.0;
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        for j in 1..=DEGREE {
            left[j] = z - t[span + 1 - j];
            right[j] = t[span + j] - z;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; m];
        for (r, v) in n.into_iter().enumerate() {
            out[span - DEGREE + r] = v;
        }
        out
    }

    /// Centered basis values.
    pub fn eval(&self, z: f64) -> Vec<f64> {
        self.raw(z).into_iter().zip(&self.center).map(|(b, c)| b - c).collect()
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Sum of per-coordinate spline terms, `f(z) = Σⱼ Bⱼ(zⱼ)ᵀcⱼ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveSpline {
    /// One basis per coordinate; `None` for coordinates without variation.
    pub bases: Vec<Option<SplineBasis>>,
    pub coef: Vec<f64>,
}

impl AdditiveSpline {
    /// Bases fitted to the columns of `z` (rows are units), with zero coefficients.
    pub fn fit_bases(z: &[Vec<f64>], interior: usize) -> Self {
        let r = z.first().map_or(0, Vec::len);
        let bases: Vec<Option<SplineBasis>> = (0..r)
            .map(|j| SplineBasis::fit(&z.iter().map(|row| row[j]).collect::<Vec<_>>(), interior))
            .collect();
        let m = bases.iter().flatten().map(SplineBasis::len).sum();
        AdditiveSpline { bases, coef: vec![0.0; m] }
    }

    /// The zero function over `r` coordinates.
    pub fn zero(r: usize) -> Self {
        AdditiveSpline { bases: vec![None; r], coef: Vec::new() }
    }

    pub fn n_coef(&self) -> usize {
        self.coef.len()
    }

    /// Stacked centered basis row for `z`.
    pub fn design_row(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.coef.len());
        for (j, b) in self.bases.iter().enumerate() {
            if let Some(b) = b {
                out.extend(b.eval(z[j]));
            }
        }
        out
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        if self.coef.is_empty() {
            return 0.0;
        }
        self.design_row(z).iter().zip(&self.coef).map(|(b, c)| b * c).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        let z: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 25.0 - 2.0).collect();
        let b = SplineBasis::fit(&z, 10).unwrap();
        assert_eq!(b.len(), 14);
        for v in [-2.0, -1.3, 0.0, 0.77, 2.0, 5.0] {
            let raw = b.raw(v);
            assert!(raw.iter().all(|x| *x >= 0.0));
            assert!((raw.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn centered_columns_average_zero() {
        let z: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = SplineBasis::fit(&z, 10).unwrap();
        let mut sums = vec![0.0; b.len()];
        for &v in &z {
            for (s, e) in sums.iter_mut().zip(b.eval(v)) {
                *s += e;
            }
        }
        assert!(sums.iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn constant_input_has_no_basis() {
        assert!(SplineBasis::fit(&[1.0; 10], 10).is_none());
        let f = AdditiveSpline::fit_bases(&vec![vec![1.0, 0.5]; 10], 10);
        assert_eq!(f.n_coef(), 0);
        assert_eq!(f.eval(&[3.0, 2.0]), 0.0);
    }

    #[test]
    fn few_distinct_values_collapse_knots() {
        let z: Vec<f64> = (0..30).map(|i| (i % 3) as f64).collect();
        let b = SplineBasis::fit(&z, 10).unwrap();
        assert!(b.len() >= 4);
        assert!((b.raw(1.0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
