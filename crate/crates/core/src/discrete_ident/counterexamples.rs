//! Two pairs of binary models that agree on every observable cell yet imply
//! different effects: the ATE is not identified when `(X, T)` are MNAR, and
//! the CATE is not identified once `R^Y` may depend on `X`, `T` and `Y` jointly.
//! All arithmetic is exact.

use std::fmt;

use num::{One, Zero};
use serde::Serialize;

use super::exact::{q, Q};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub expected: String,
    pub actual: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub title: String,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    fn new(title: &str) -> Self {
        VerificationReport {
            title: title.into(),
            checks: Vec::new(),
        }
    }

    fn check(&mut self, name: impl Into<String>, expected: &Q, actual: &Q) {
        self.checks.push(Check {
            name: name.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
            pass: expected == actual,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            writeln!(
                f,
                "  {:<w$}  expected {:>9}  got {:>9}  {}",
                c.name,
                c.expected,
                c.actual,
                if c.pass { "PASS" } else { "FAIL" },
                w = w
            )?;
        }
        write!(
            f,
            "  => {}",
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Shared `P(Y = 1 | X = x, T = t)` indexed `[x][t]`.
fn theta_ce1() -> [[Q; 2]; 2] {
    [[q(1, 5), q(4, 5)], [q(4, 5), q(1, 5)]]
}

struct JointXt {
    p_x1: Q,
    /// `P(T = 1 | X = x)`.
    p_t1: [Q; 2],
}

impl JointXt {
    fn p_xt(&self, x: usize, t: usize) -> Q {
        let px = if x == 1 {
            self.p_x1.clone()
        } else {
            Q::one() - &self.p_x1
        };
        let pt = if t == 1 {
            self.p_t1[x].clone()
        } else {
            Q::one() - &self.p_t1[x]
        };
        px * pt
    }
}

struct Ce1Model {
    xt: JointXt,
    /// `P(R^X = R^T = 1 | X = x, T = t)` indexed `[x][t]`.
    pi: [[Q; 2]; 2],
}

impl Ce1Model {
    /// `(p11[x][t], p01[x][t], p+1, p+0)`.
    fn observed(&self) -> ([[Q; 2]; 2], [[Q; 2]; 2], Q, Q) {
        let theta = theta_ce1();
        let mut p11: [[Q; 2]; 2] = Default::default();
        let mut p01: [[Q; 2]; 2] = Default::default();
        let mut plus1 = Q::zero();
        let mut plus0 = Q::zero();
        for x in 0..2 {
            for t in 0..2 {
                let g = self.xt.p_xt(x, t);
                let th = &theta[x][t];
                let pi = &self.pi[x][t];
                p11[x][t] = &g * th * pi;
                p01[x][t] = &g * (Q::one() - th) * pi;
                plus1 += &g * th * (Q::one() - pi);
                plus0 += &g * (Q::one() - th) * (Q::one() - pi);
            }
        }
        (p11, p01, plus1, plus0)
    }

    fn ate(&self) -> Q {
        let theta = theta_ce1();
        let p1 = self.xt.p_x1.clone();
        let p0 = Q::one() - &p1;
        p0 * (&theta[0][1] - &theta[0][0]) + p1 * (&theta[1][1] - &theta[1][0])
    }
}

fn ce1_models() -> (Ce1Model, Ce1Model) {
    let a = Ce1Model {
        xt: JointXt {
            p_x1: q(1, 4),
            p_t1: [q(1, 4), q(3, 4)],
        },
        pi: [[q(1, 2), q(3, 5)], [q(7, 10), q(2, 5)]],
    };
    let b = Ce1Model {
        xt: JointXt {
            p_x1: q(1, 2),
            p_t1: [q(17, 50), q(21, 25)],
        },
        pi: [[q(75, 88), q(45, 68)], [q(35, 64), q(5, 28)]],
    };
    (a, b)
}

/// Both models reproduce the ten observed cells, share the outcome
/// conditionals, and have ATEs `3/10` and `0`.
pub fn verify_counterexample_1() -> VerificationReport {
    let mut r = VerificationReport::new("Counterexample 1: ATE not identified under MNAR (X, T)");
    let p11 = [[q(45, 800), q(72, 800)], [q(28, 800), q(12, 800)]];
    let p01 = [[q(180, 800), q(18, 800)], [q(7, 800), q(48, 800)]];
    let (plus1, plus0) = (q(123, 800), q(267, 800));
    let (a, b) = ce1_models();
    for (label, m) in [("A", &a), ("B", &b)] {
        let (o11, o01, o1, o0) = m.observed();
        for x in 0..2 {
            for t in 0..2 {
                r.check(format!("{label}: p11[x={x},t={t}]"), &p11[x][t], &o11[x][t]);
                r.check(format!("{label}: p01[x={x},t={t}]"), &p01[x][t], &o01[x][t]);
            }
        }
        r.check(format!("{label}: p+1"), &plus1, &o1);
        r.check(format!("{label}: p+0"), &plus0, &o0);
        // theta is identified from the observed cells.
        let theta = theta_ce1();
        for x in 0..2 {
            for t in 0..2 {
                let implied = &o11[x][t] / (&o11[x][t] + &o01[x][t]);
                r.check(format!("{label}: theta[x={x},t={t}]"), &theta[x][t], &implied);
            }
        }
        let closed_form = q(3, 5) * (Q::one() - q(2, 1) * &m.xt.p_x1);
        r.check(format!("{label}: ATE closed form"), &closed_form, &m.ate());
    }
    r.check("ATE_A", &q(3, 10), &a.ate());
    r.check("ATE_B", &Q::zero(), &b.ate());
    r
}

struct Ce2Model {
    /// `P(Y = 1 | X = x, T = t)` indexed `[x][t]`.
    theta: [[Q; 2]; 2],
    /// `P(R^Y = 1 | X = x, T = t, Y = y)` indexed `[x][t][y]`.
    pi: [[[Q; 2]; 2]; 2],
}

fn ce2_xt() -> JointXt {
    JointXt {
        p_x1: q(1, 2),
        p_t1: [q(1, 4), q(3, 4)],
    }
}

impl Ce2Model {
    fn from_flat(theta: [Q; 4], pi: [Q; 8]) -> Self {
        let [t00, t01, t10, t11] = theta;
        let [p000, p001, p010, p011, p100, p101, p110, p111] = pi;
        Ce2Model {
            theta: [[t00, t01], [t10, t11]],
            pi: [[[p000, p001], [p010, p011]], [[p100, p101], [p110, p111]]],
        }
    }

    /// `(p11, p01, p+0)` per `(x, t)` cell.
    fn observed(&self, x: usize, t: usize) -> (Q, Q, Q) {
        let g = ce2_xt().p_xt(x, t);
        let th = &self.theta[x][t];
        let pi0 = &self.pi[x][t][0];
        let pi1 = &self.pi[x][t][1];
        let p11 = &g * th * pi1;
        let p01 = &g * (Q::one() - th) * pi0;
        let p0 = &g * (th * (Q::one() - pi1) + (Q::one() - th) * (Q::one() - pi0));
        (p11, p01, p0)
    }

    fn cate(&self, x: usize) -> Q {
        &self.theta[x][1] - &self.theta[x][0]
    }
}

fn ce2_models() -> (Ce2Model, Ce2Model) {
    let a = Ce2Model::from_flat(
        [q(1, 5), q(3, 5), q(2, 5), q(7, 10)],
        [
            q(4, 5),
            q(1, 2),
            q(7, 10),
            q(2, 5),
            q(3, 5),
            q(3, 10),
            q(9, 10),
            q(3, 5),
        ],
    );
    let b = Ce2Model::from_flat(
        [q(3, 10), q(1, 2), q(1, 2), q(3, 5)],
        [
            q(32, 35),
            q(1, 3),
            q(14, 25),
            q(12, 25),
            q(18, 25),
            q(6, 25),
            q(27, 40),
            q(7, 10),
        ],
    );
    (a, b)
}

/// Both models reproduce the twelve observed cells while their CATEs are
/// `(2/5, 3/10)` and `(1/5, 1/10)`.
pub fn verify_counterexample_2() -> VerificationReport {
    let mut r =
        VerificationReport::new("Counterexample 2: CATE not identified under general R^Y");
    let cells = [
        [(30, 192, 78), (24, 28, 48)],
        [(12, 36, 52), (126, 81, 93)],
    ];
    let (a, b) = ce2_models();
    for (label, m) in [("A", &a), ("B", &b)] {
        for x in 0..2 {
            for t in 0..2 {
                let (e11, e01, e0) = cells[x][t];
                let (o11, o01, o0) = m.observed(x, t);
                r.check(format!("{label}: p11[x={x},t={t}]"), &q(e11, 800), &o11);
                r.check(format!("{label}: p01[x={x},t={t}]"), &q(e01, 800), &o01);
                r.check(format!("{label}: p+0[x={x},t={t}]"), &q(e0, 800), &o0);
            }
        }
    }
    r.check("tau_A(0)", &q(2, 5), &a.cate(0));
    r.check("tau_A(1)", &q(3, 10), &a.cate(1));
    r.check("tau_B(0)", &q(1, 5), &b.cate(0));
    r.check("tau_B(1)", &q(1, 10), &b.cate(1));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counterexample_1_holds() {
        let r = verify_counterexample_1();
        assert!(r.passed(), "{r}");
        // 10 observed cells per model.
        let cells = r
            .checks
            .iter()
            .filter(|c| c.name.starts_with("A: p"))
            .count();
        assert_eq!(cells, 10);
    }

    #[test]
    fn counterexample_2_holds() {
        let r = verify_counterexample_2();
        assert!(r.passed(), "{r}");
        let cells = r
            .checks
            .iter()
            .filter(|c| c.name.starts_with("B: p"))
            .count();
        assert_eq!(cells, 12);
    }

    #[test]
    fn a_perturbed_model_fails() {
        let (mut a, _) = ce1_models();
        a.pi[0][0] = q(1, 3);
        let (o11, ..) = a.observed();
        assert_ne!(o11[0][0], q(45, 800));
    }
}
