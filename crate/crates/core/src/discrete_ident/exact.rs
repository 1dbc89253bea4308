//! Exact rational arithmetic for the response-odds linear system.

use num::{BigInt, BigRational, One, Signed, Zero};

use crate::error::{Error, Result};

pub type Q = BigRational;

pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

pub fn qi(v: i64) -> Q {
    q(v, 1)
}

/// Row-reduces a copy of `m` and returns its rank.
pub fn rank(m: &[Vec<Q>]) -> usize {
    let mut a: Vec<Vec<Q>> = m.to_vec();
    let rows = a.len();
    if rows == 0 {
        return 0;
    }
    let cols = a[0].len();
    let mut r = 0;
    for c in 0..cols {
        let Some(pivot) = (r..rows).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(r, pivot);
        for i in (r + 1)..rows {
            if a[i][c].is_zero() {
                continue;
            }
            let f = &a[i][c] / &a[r][c];
            for k in c..cols {
                let v = &f * &a[r][k];
                a[i][k] -= v;
            }
        }
        r += 1;
        if r == rows {
            break;
        }
    }
    r
}

/// Solves a square nonsingular system by Gauss–Jordan elimination.
pub fn solve_square(a: &[Vec<Q>], b: &[Q]) -> Result<Vec<Q>> {
    let n = a.len();
    let mut m: Vec<Vec<Q>> = a
        .iter()
        .zip(b)
        .map(|(row, bi)| {
            let mut r = row.clone();
            r.push(bi.clone());
            r
        })
        .collect();
    for c in 0..n {
        let pivot = (c..n)
            .find(|&i| !m[i][c].is_zero())
            .ok_or(Error::RankDeficient {
                rank: c,
                required: n,
            })?;
        m.swap(c, pivot);
        let p = m[c][c].clone();
        for k in c..=n {
            m[c][k] = &m[c][k] / &p;
        }
        for i in 0..n {
            if i == c || m[i][c].is_zero() {
                continue;
            }
            let f = m[i][c].clone();
            for k in c..=n {
                let v = &f * &m[c][k];
                m[i][k] -= v;
            }
        }
    }
    Ok(m.into_iter().map(|r| r[n].clone()).collect())
}

/// Least-squares solution of `theta zeta = b` through the normal equations;
/// exact whenever the system is consistent and `theta` has full column rank.
pub fn solve_response_odds_exact(theta: &[Vec<Q>], b: &[Q]) -> Result<Vec<Q>> {
    let k = theta.first().map_or(0, Vec::len);
    let r = rank(theta);
    if r < k {
        return Err(Error::RankDeficient { rank: r, required: k });
    }
    let mut ata = vec![vec![Q::zero(); k]; k];
    let mut atb = vec![Q::zero(); k];
    for (row, bj) in theta.iter().zip(b) {
        for i in 0..k {
            atb[i] += &row[i] * bj;
            for l in 0..k {
                ata[i][l] += &row[i] * &row[l];
            }
        }
    }
    let zeta = solve_square(&ata, &atb)?;
    if let Some((index, v)) = zeta.iter().enumerate().find(|(_, v)| v.is_negative()) {
        return Err(Error::InfeasibleOdds {
            index,
            value: to_f64(v),
        });
    }
    Ok(zeta)
}

/// `theta[j][k] (1 + zeta_k)`, each row renormalized to sum to one.
pub fn identify_exact(theta: &[Vec<Q>], zeta: &[Q]) -> Vec<Vec<Q>> {
    theta
        .iter()
        .map(|row| {
            let raw: Vec<Q> = row
                .iter()
                .zip(zeta)
                .map(|(p, z)| p * (Q::one() + z))
                .collect();
            let s: Q = raw.iter().cloned().sum();
            raw.into_iter().map(|v| v / &s).collect()
        })
        .collect()
}

pub fn to_f64(v: &Q) -> f64 {
    use num::ToPrimitive;
    v.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_duplicate_rows() {
        let m = vec![vec![q(1, 2), q(1, 3)], vec![q(1, 2), q(1, 3)]];
        assert_eq!(rank(&m), 1);
        let m = vec![vec![q(3, 10), q(1, 5)], vec![q(1, 10), q(2, 5)]];
        assert_eq!(rank(&m), 2);
    }

    #[test]
    fn forward_constructed_system_is_recovered_exactly() {
        let theta = vec![vec![q(3, 10), q(1, 5)], vec![q(1, 10), q(2, 5)]];
        let zeta = [q(1, 4), q(1, 2)];
        let b: Vec<Q> = theta
            .iter()
            .map(|r| &r[0] * &zeta[0] + &r[1] * &zeta[1])
            .collect();
        assert_eq!(solve_response_odds_exact(&theta, &b).unwrap(), zeta.to_vec());
    }

    #[test]
    fn overdetermined_consistent_system() {
        let theta = vec![
            vec![q(3, 10), q(1, 5)],
            vec![q(1, 10), q(2, 5)],
            vec![q(1, 4), q(1, 4)],
        ];
        let zeta = [q(2, 3), qi(0)];
        let b: Vec<Q> = theta.iter().map(|r| &r[0] * &zeta[0]).collect();
        assert_eq!(solve_response_odds_exact(&theta, &b).unwrap(), zeta.to_vec());
    }
}
