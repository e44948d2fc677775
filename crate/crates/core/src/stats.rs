//! Correlations with t-approximation p-values, and type-7 quantiles.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::InvalidParam("correlation needs at least 3 values".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in correlation input".into()));
    }
    Ok(())
}

fn pearson_raw(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numeric("zero-variance input to correlation".into()));
    }
    // sqrt(s·s) == s exactly in IEEE arithmetic, so self-correlation is exactly 1.
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` under `t = r·√((n−2)/(1−r²))` with `n−2`
/// degrees of freedom, via the regularized incomplete beta function.
/// Clamped below at the smallest positive normal `f64`.
pub fn t_test_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let r2 = r * r;
    let p = if r2 >= 1.0 {
        0.0
    } else {
        let t2 = r2 * df / (1.0 - r2);
        beta_reg(df / 2.0, 0.5, df / (df + t2))
    };
    p.clamp(f64::MIN_POSITIVE, 1.0)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check(a, b)?;
    let r = pearson_raw(a, b)?;
    Ok(Correlation {
        coefficient: r,
        p_value: t_test_p(r, a.len()),
        n: a.len(),
    })
}

/// 1-based ranks; tied values share the average of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of the ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check(a, b)?;
    let rho = pearson_raw(&ranks(a), &ranks(b))?;
    Ok(Correlation {
        coefficient: rho,
        p_value: t_test_p(rho, a.len()),
        n: a.len(),
    })
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(data: &[f64], q: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("quantile of no data".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParam(format!("quantile {q} outside [0, 1]")));
    }
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    Ok(s[lo] + (h - lo as f64) * (s[hi] - s[lo]))
}

/// `(Q1, Q3)` by type-7 quantiles.
pub fn iqr_bounds(data: &[f64]) -> Result<(f64, f64)> {
    Ok((quantile(data, 0.25)?, quantile(data, 0.75)?))
}

pub fn mean(data: &[f64]) -> Option<f64> {
    (!data.is_empty()).then(|| data.iter().sum::<f64>() / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_element_hand_values() {
        // Σd² = 1+1+1+1+0 = 4, so ρ = 1 − 6·4/(5·24) = 0.8; Pearson on the
        // raw values is 8/√(10·10) = 0.8 as well.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 1.0, 4.0, 3.0, 5.0];
        assert!((spearman(&a, &b).unwrap().coefficient - 0.8).abs() < 1e-9);
        assert!((pearson(&a, &b).unwrap().coefficient - 0.8).abs() < 1e-9);
        // t = 0.8·√(3/0.36) = 2.3094; two-sided p with 3 df.
        assert!((pearson(&a, &b).unwrap().p_value - 0.104_088_04).abs() < 1e-7);
    }

    #[test]
    fn p_value_for_known_t() {
        // r = 0.5, n = 12 → t = 0.5·√(10/0.75) = 1.8257, df = 10, p ≈ 0.09792.
        assert!((t_test_p(0.5, 12) - 0.097_92).abs() < 1e-4);
        assert_eq!(t_test_p(0.0, 10), 1.0);
        assert_eq!(t_test_p(1.0, 10), f64::MIN_POSITIVE);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn negation_gives_minus_one_and_constant_fails() {
        let a: Vec<f64> = (0..144).map(|i| ((i * 37) % 17) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &b).unwrap().coefficient + 1.0).abs() < 1e-12);
        assert!(pearson(&a, &[1.0; 144]).is_err());
    }

    #[test]
    fn type7_quantiles_by_hand() {
        // 20 values 1..=20: h = 19·0.25 = 4.75 → 5 + 0.75 = 5.75;
        // h = 14.25 → 15.25.
        let v: Vec<f64> = (1..=20).rev().map(f64::from).collect();
        assert_eq!(iqr_bounds(&v).unwrap(), (5.75, 15.25));
        assert_eq!(quantile(&[3.0], 0.5).unwrap(), 3.0);
    }

    proptest! {
        #[test]
        fn self_correlation_is_one(v in proptest::collection::vec(-1e3f64..1e3, 3..60)) {
            prop_assume!(v.iter().any(|x| *x != v[0]));
            prop_assert_eq!(pearson(&v, &v).unwrap().coefficient, 1.0);
            prop_assert_eq!(spearman(&v, &v).unwrap().coefficient, 1.0);
        }

        #[test]
        fn coefficients_and_p_in_range(
            a in proptest::collection::vec(-10f64..10.0, 8),
            b in proptest::collection::vec(-10f64..10.0, 8),
        ) {
            if let (Ok(p), Ok(s)) = (pearson(&a, &b), spearman(&a, &b)) {
                prop_assert!((-1.0..=1.0).contains(&p.coefficient));
                prop_assert!((-1.0..=1.0).contains(&s.coefficient));
                prop_assert!(p.p_value > 0.0 && p.p_value <= 1.0);
                prop_assert!(s.p_value > 0.0 && s.p_value <= 1.0);
            }
        }
    }
}
