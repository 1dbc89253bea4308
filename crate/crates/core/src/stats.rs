//! Scalar helpers shared by the estimators.

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(expit(z))` without overflow.
pub fn log_expit(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// `log(1 - expit(z))`.
pub fn log1m_expit(z: f64) -> f64 {
    log_expit(-z)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() as f64 - 1.0)).sqrt()
}

/// Quantile of an already sorted slice with linear interpolation between
/// order statistics: position `q (n - 1)` (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn quantile(v: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted(v), q)
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Silverman's rule of thumb `0.9 min(sd, IQR/1.34) n^{-1/5}`.
pub fn silverman_bandwidth(v: &[f64]) -> f64 {
    let s = sorted(v);
    let spread = sd(v);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let scale = if iqr > 0.0 {
        spread.min(iqr / 1.34)
    } else {
        spread
    };
    0.9 * scale * (v.len() as f64).powf(-0.2)
}

/// Pearson chi-square test of independence; returns `(statistic, df, p_value)`.
/// Rows or columns with zero margin are dropped.
pub fn chi_square_independence(table: &[Vec<f64>]) -> (f64, usize, f64) {
    let rows: Vec<&Vec<f64>> = table
        .iter()
        .filter(|r| r.iter().sum::<f64>() > 0.0)
        .collect();
    if rows.is_empty() {
        return (0.0, 0, 1.0);
    }
    let k = rows[0].len();
    let col_tot: Vec<f64> = (0..k).map(|c| rows.iter().map(|r| r[c]).sum()).collect();
    let cols: Vec<usize> = (0..k).filter(|&c| col_tot[c] > 0.0).collect();
    let total: f64 = col_tot.iter().sum();
    if rows.len() < 2 || cols.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let mut stat = 0.0;
    for r in &rows {
        let rt: f64 = r.iter().sum();
        for &c in &cols {
            let e = rt * col_tot[c] / total;
            stat += (r[c] - e).powi(2) / e;
        }
    }
    let df = (rows.len() - 1) * (cols.len() - 1);
    let p = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
    (stat, df, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_logit_inverse() {
        for z in [-30.0, -2.0, 0.0, 0.7, 25.0] {
            let p = expit(z);
            if p > 0.0 && p < 1.0 {
                assert!((logit(p) - z).abs() < 1e-6 * (1.0 + z.abs()));
            }
            assert!((log_expit(z) - p.ln()).abs() < 1e-12 || p == 0.0);
        }
        assert!((logit(0.8) - 1.386_294_361_1).abs() < 1e-9);
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.75), 4.0);
        assert!((quantile(&[0.0, 10.0], 0.3) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_detects_association() {
        let (_, df, p) = chi_square_independence(&[vec![50.0, 10.0], vec![10.0, 50.0]]);
        assert_eq!(df, 1);
        assert!(p < 1e-6);
        let (s, _, p) = chi_square_independence(&[vec![30.0, 30.0], vec![30.0, 30.0]]);
        assert_eq!(s, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
