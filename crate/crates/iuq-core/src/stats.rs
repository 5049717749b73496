//! Multi-seed aggregation and paired significance testing.
//!
//! The Student-t CDF is evaluated through the regularized incomplete beta
//! function (continued fraction), so no external statistical service or
//! lookup table is involved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paired per-seed values for one metric under two conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedGroup {
    pub metric_name: String,
    pub condition_a: String,
    pub condition_b: String,
    /// (seed, value under a, value under b)
    pub pairs: Vec<(u64, f64, f64)>,
}

impl SeedGroup {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.len() < 2 {
            return Err(Error::Degenerate(format!(
                "paired test needs >= 2 pairs, got {}",
                self.pairs.len()
            )));
        }
        let mut seeds: Vec<u64> = self.pairs.iter().map(|p| p.0).collect();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.pairs.len() {
            return Err(Error::InvalidConfig("duplicate seeds in paired group".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    /// Two-tailed p-value.
    pub p: f64,
    pub mean_delta: f64,
}

/// Standard paired two-tailed t-test over per-seed differences `a - b`.
/// Uses the sample standard deviation (n-1); constant differences are
/// degenerate and reported as [`Error::DegenerateDifferences`] so the mean
/// delta still reaches the caller.
pub fn paired_t_test(group: &SeedGroup) -> Result<TTestResult> {
    group.validate()?;
    let diffs: Vec<f64> = group.pairs.iter().map(|(_, a, b)| a - b).collect();
    let n = diffs.len();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::DegenerateDifferences { mean_delta: mean });
    }
    let sd = var.sqrt();
    let t = mean / (sd / (n as f64).sqrt());
    let df = n - 1;
    let p = two_tailed_p(t, df);
    Ok(TTestResult {
        t,
        df,
        p,
        mean_delta: mean,
    })
}

/// Arithmetic mean and sample standard deviation (n-1); std is 0 for a
/// single value. Errors on an empty list.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Degenerate("aggregate of empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Two-tailed p-value for Student's t with `df` degrees of freedom:
/// `p = I_{df/(df+t²)}(df/2, 1/2)`.
pub fn two_tailed_p(t: f64, df: usize) -> f64 {
    let dff = df as f64;
    let x = dff / (dff + t * t);
    incomplete_beta_regularized(dff / 2.0, 0.5, x)
}

/// CDF of Student's t distribution.
pub fn student_t_cdf(t: f64, df: usize) -> f64 {
    let p = two_tailed_p(t, df);
    if t >= 0.0 {
        1.0 - p / 2.0
    } else {
        p / 2.0
    }
}

/// Regularized incomplete beta function I_x(a, b) by Lentz's continued
/// fraction, with the symmetry split that keeps the fraction convergent.
pub fn incomplete_beta_regularized(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta parameters must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        // even step
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation of ln Γ(x), |error| < 2e-10 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.180_091_729_471_46,
        -86.505_320_329_416_77,
        24.014_098_240_830_91,
        -1.231_739_572_450_155,
        0.120_865_097_386_617_5e-2,
        -0.539_523_938_495_3e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000_000_000_190_015;
    for c in COEFFS {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn group(a: &[f64], b: &[f64]) -> SeedGroup {
        SeedGroup {
            metric_name: "r_psnr".into(),
            condition_a: "frame".into(),
            condition_b: "scene".into(),
            pairs: a
                .iter()
                .zip(b)
                .enumerate()
                .map(|(i, (x, y))| (i as u64, *x, *y))
                .collect(),
        }
    }

    #[test]
    fn fixture_paired_test() {
        let r = paired_t_test(&group(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(r.t, 3.464_101_615_137_755, epsilon = 1e-9);
        assert_eq!(r.df, 2);
        assert_abs_diff_eq!(r.p, 0.074_179_900_227_448, epsilon = 1e-6);
        assert_abs_diff_eq!(r.mean_delta, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_conditions_are_degenerate() {
        let err = paired_t_test(&group(&[1.0, 2.0], &[1.0, 2.0])).unwrap_err();
        match err {
            Error::DegenerateDifferences { mean_delta } => {
                assert_abs_diff_eq!(mean_delta, 0.0, epsilon = 1e-12)
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn negating_differences_flips_t_keeps_p() {
        let fwd = paired_t_test(&group(&[1.0, 2.5, 3.0], &[0.5, 0.5, 0.5])).unwrap();
        let rev = paired_t_test(&group(&[0.5, 0.5, 0.5], &[1.0, 2.5, 3.0])).unwrap();
        assert_abs_diff_eq!(fwd.t, -rev.t, epsilon = 1e-12);
        assert_abs_diff_eq!(fwd.p, rev.p, epsilon = 1e-12);
    }

    #[test]
    fn t_cdf_matches_reference_table() {
        // (t, df, two-tailed p) — reference values from an independent
        // statistics package, frozen here.
        let table = [
            (1.0, 10, 0.340_893_132_302_060_1),
            (2.0, 4, 0.116_116_523_516_815_5),
            (2.92, 6, 0.026_631_306_226_239),
            (0.5, 30, 0.620_723_004_885_127_3),
            (2.81, 8, 0.022_843_060_892_749_55),
            (12.0, 5, 7.089_492_517_161_5e-5),
            (0.05, 7, 0.961_519_178_026_801_3),
        ];
        for (t, df, p) in table {
            assert_abs_diff_eq!(two_tailed_p(t, df), p, epsilon = 1e-3);
            // much tighter than the acceptance tolerance in practice
            assert_abs_diff_eq!(two_tailed_p(t, df), p, epsilon = 1e-9);
        }
    }

    #[test]
    fn aggregate_basics() {
        assert_eq!(aggregate(&[16.0]).unwrap(), (16.0, 0.0));
        let (m, s) = aggregate(&[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(m, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let a = [3.5, -1.0, 2.25, 9.0, 0.125];
        let b = [9.0, 2.25, 3.5, 0.125, -1.0];
        let (ma, sa) = aggregate(&a).unwrap();
        let (mb, sb) = aggregate(&b).unwrap();
        assert_abs_diff_eq!(ma, mb, epsilon = 1e-12);
        assert_abs_diff_eq!(sa, sb, epsilon = 1e-12);
    }

    #[test]
    fn mean_std_fixture_matches_brute_force() {
        let vals = [16.21, 16.49, 15.93];
        let (m, s) = aggregate(&vals).unwrap();
        let bm: f64 = vals.iter().sum::<f64>() / 3.0;
        let bs = (vals.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert_abs_diff_eq!(m, bm, epsilon = 1e-12);
        assert_abs_diff_eq!(s, bs, epsilon = 1e-12);
    }
}
