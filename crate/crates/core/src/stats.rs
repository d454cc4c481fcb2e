//! Small numerical helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with denominator `n − 1` (0 for fewer than two values).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Gauss–Hermite rule for expectations under the standard normal:
/// `E[f(Z)] ≈ Σ w_k f(x_k)`. Nodes and weights come from the eigen-decomposition
/// of the Jacobi matrix of the probabilists' Hermite polynomials.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Least squares with an HC0 sandwich covariance, for the small designs used
/// by the checkers (a handful of regressors per cell).
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub n: usize,
}

/// `rows` yields `(x, y)` pairs; it is consumed twice (fit, then sandwich),
/// so it must be cloneable.
pub fn ols_hc0<'a, I>(k: usize, rows: I) -> Option<OlsFit>
where
    I: Iterator<Item = (&'a [f64], f64)> + Clone,
{
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut n = 0usize;
    for (x, y) in rows.clone() {
        for a in 0..k {
            xty[a] += x[a] * y;
            for b in 0..=a {
                xtx[(a, b)] += x[a] * x[b];
            }
        }
        n += 1;
    }
    if n <= k {
        return None;
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    let chol = xtx.clone().cholesky()?;
    let coef = chol.solve(&xty);
    let inv = chol.inverse();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for (x, y) in rows {
        let e = y - (0..k).map(|a| x[a] * coef[a]).sum::<f64>();
        let e2 = e * e;
        for a in 0..k {
            for b in 0..=a {
                meat[(a, b)] += e2 * x[a] * x[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(b, a)] = meat[(a, b)];
        }
    }
    let cov = &inv * meat * &inv;
    Some(OlsFit {
        coef: coef.iter().copied().collect(),
        se: (0..k).map(|a| cov[(a, a)].max(0.0).sqrt()).collect(),
        n,
    })
}

/// A fixed design `X` prepared for many HC0 fits against different outcomes,
/// reporting one coefficient of interest. `(X'X)^{-1}` is factored once.
#[derive(Debug, Clone)]
pub struct Hc0Design {
    k: usize,
    x: Vec<f64>,
    inv: Vec<f64>,
    /// Row `j` of `(X'X)^{-1}` applied to each `x_i`.
    lever: Vec<f64>,
    j: usize,
}

impl Hc0Design {
    /// `x` is row-major with `k` columns. `None` if `n ≤ k` or `X'X` is not
    /// positive definite.
    pub fn new(k: usize, x: Vec<f64>, j: usize) -> Option<Self> {
        assert!(j < k && x.len() % k == 0);
        let n = x.len() / k;
        if n <= k {
            return None;
        }
        let mut xtx = DMatrix::<f64>::zeros(k, k);
        for row in x.chunks_exact(k) {
            for a in 0..k {
                for b in 0..=a {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                xtx[(b, a)] = xtx[(a, b)];
            }
        }
        let inv_m = xtx.cholesky()?.inverse();
        let inv: Vec<f64> = (0..k * k).map(|c| inv_m[(c / k, c % k)]).collect();
        let lever = x
            .chunks_exact(k)
            .map(|row| (0..k).map(|b| inv[j * k + b] * row[b]).sum())
            .collect();
        Some(Self { k, x, inv, lever, j })
    }

    pub fn n(&self) -> usize {
        self.lever.len()
    }

    /// Coefficient `j` and its HC0 standard error for outcome `y`.
    pub fn fit(&self, y: &[f64]) -> (f64, f64) {
        let k = self.k;
        assert_eq!(y.len(), self.n());
        let mut xty = vec![0.0; k];
        for (row, &yi) in self.x.chunks_exact(k).zip(y) {
            for (acc, &xa) in xty.iter_mut().zip(row) {
                *acc += xa * yi;
            }
        }
        let coef: Vec<f64> = (0..k).map(|a| (0..k).map(|b| self.inv[a * k + b] * xty[b]).sum()).collect();
        let mut var = 0.0;
        for ((row, &yi), &v) in self.x.chunks_exact(k).zip(y).zip(&self.lever) {
            let e = yi - row.iter().zip(&coef).map(|(x, c)| x * c).sum::<f64>();
            var += e * e * v * v;
        }
        (coef[self.j], var.max(0.0).sqrt())
    }
}

/// Kolmogorov–Smirnov distance between two samples (sorted in place).
pub fn ks_distance(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prepared_design_matches_one_shot_ols() {
        let k = 3;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let (a, b) = ((i % 7) as f64, ((i * 13) % 11) as f64 / 3.0);
            x.extend([1.0, a, b]);
            y.push(0.5 + 2.0 * a - b + ((i * 31) % 17) as f64 / 10.0 * a);
        }
        let fit = ols_hc0(k, x.chunks_exact(k).zip(y.iter().copied())).unwrap();
        let design = Hc0Design::new(k, x, 1).unwrap();
        let (c, se) = design.fit(&y);
        assert!((c - fit.coef[1]).abs() < 1e-10 * (1.0 + c.abs()));
        assert!((se - fit.se[1]).abs() < 1e-10 * (1.0 + se));
        assert!(Hc0Design::new(2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 1).is_none());
    }

    #[test]
    fn logistic_is_stable_and_symmetric() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(3.0) + logistic(-3.0) - 1.0).abs() < 1e-15);
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert!((logit(logistic(1.3)) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn softplus_matches_naive_in_range() {
        for x in [-30.0, -2.0, 0.0, 1.5, 20.0] {
            assert!((softplus(x) - (1.0f64 + f64::exp(x)).ln()).abs() < 1e-12);
        }
        assert_eq!(softplus(800.0), 800.0);
    }

    #[test]
    fn gauss_hermite_integrates_normal_moments() {
        let (x, w) = gauss_hermite(20);
        let moment = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((moment(0) - 1.0).abs() < 1e-12);
        assert!(moment(1).abs() < 1e-12);
        assert!((moment(2) - 1.0).abs() < 1e-12);
        assert!((moment(4) - 3.0).abs() < 1e-10);
        // E[softplus(Z)] against fine trapezoid quadrature of the density.
        let gh: f64 = x.iter().zip(&w).map(|(x, w)| w * softplus(*x)).sum();
        let h = 1e-3;
        let trap: f64 = (-12_000..=12_000)
            .map(|k| {
                let z = k as f64 * h;
                softplus(z) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * h
            })
            .sum();
        assert!((gh - trap).abs() < 1e-6, "{gh} vs {trap}");
    }

    #[test]
    fn ols_recovers_exact_line_and_difference_in_means() {
        let rows: Vec<([f64; 2], f64)> = (0..10).map(|i| ([1.0, i as f64], 2.0 + 0.5 * i as f64)).collect();
        let fit = ols_hc0(2, rows.iter().map(|(x, y)| (&x[..], *y))).unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-12 && (fit.coef[1] - 0.5).abs() < 1e-12);
        // Dummy regression: slope is the difference of group means.
        let rows: Vec<([f64; 2], f64)> = [(0.0, 1.0), (0.0, 3.0), (1.0, 4.0), (1.0, 8.0)]
            .iter()
            .map(|&(d, y)| ([1.0, d], y))
            .collect();
        let fit = ols_hc0(2, rows.iter().map(|(x, y)| (&x[..], *y))).unwrap();
        assert!((fit.coef[1] - 4.0).abs() < 1e-12);
        // HC0 se of a difference in means: sqrt(v1/n1 + v0/n0) with 1/n variances.
        assert!((fit.se[1] - (4.0f64 / 2.0 + 1.0 / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ks_distance_basic() {
        let mut a = vec![1.0, 2.0, 3.0];
        let mut b = vec![1.0, 2.0, 3.0];
        assert_eq!(ks_distance(&mut a, &mut b), 0.0);
        let mut b = vec![10.0, 11.0];
        assert_eq!(ks_distance(&mut a, &mut b), 1.0);
    }
}
