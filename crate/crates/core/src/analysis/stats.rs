use serde::{Deserialize, Serialize};

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value from Student's t with `n - 2` degrees of freedom.
    pub p: f64,
    pub n: usize,
}

/// Product-moment correlation between `x` and `y`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::Invalid(format!(
            "pearson: {} x values but {} y values",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::TooFewPoints { needed: 3, got: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        let which = if sxx <= 0.0 { "x" } else { "y" };
        return Err(AnalysisError::UndefinedCorrelation(format!("{which} has zero variance")));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Correlation { r, p: correlation_p_value(r, n), n })
}

fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    let t2 = r * r * df / one_minus;
    student_t_two_sided(t2, df)
}

/// `P(|T| >= t)` for `T ~ t(df)`, given `t^2`.
pub fn student_t_two_sided(t2: f64, df: f64) -> f64 {
    incomplete_beta(df / 2.0, 0.5, df / (df + t2))
}

pub fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
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

// modified Lentz evaluation of the continued fraction for I_x(a, b)
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
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
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
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

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (`n - 1` denominator).
pub fn sample_variance(x: &[f64]) -> f64 {
    if x.iter().all(|&v| v == x[0]) {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use statrs::function::beta::beta_reg;

    #[test]
    fn hand_computed_correlation() {
        let c = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((c.r - 0.6).abs() < 1e-12);
        // t = 0.6 * sqrt(2 / 0.64) = 1.0606..., df = 2
        let t = StudentsT::new(0.0, 1.0, 2.0).unwrap();
        let expected = 2.0 * (1.0 - t.cdf(0.6 * (2.0f64 / 0.64).sqrt()));
        assert!((c.p - expected).abs() < 1e-10, "{} vs {expected}", c.p);
    }

    #[test]
    fn perfect_anticorrelation() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let c = pearson(&x, &y).unwrap();
        assert_eq!(c.r, -1.0);
        assert_eq!(c.p, 0.0);
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        assert!(pearson(&x, &y).unwrap().r.abs() < 0.1);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::UndefinedCorrelation(_))
        ));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(AnalysisError::TooFewPoints { .. })));
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn incomplete_beta_matches_reference() {
        for &(a, b) in &[(0.5, 0.5), (1.0, 0.5), (3.0, 0.5), (12.0, 0.5), (2.5, 7.0), (40.0, 0.5), (100.0, 3.0)] {
            for i in 1..20 {
                let x = i as f64 / 20.0;
                let ours = incomplete_beta(a, b, x);
                let theirs = beta_reg(a, b, x);
                assert!((ours - theirs).abs() < 1e-8, "I_{x}({a},{b}) = {ours} vs {theirs}");
            }
        }
    }

    #[test]
    fn tiny_p_values_keep_relative_accuracy() {
        let t = StudentsT::new(0.0, 1.0, 68.0).unwrap();
        for &tv in &[3.0, 6.0, 11.0] {
            let ours = student_t_two_sided(tv * tv, 68.0);
            let theirs = 2.0 * t.sf(tv);
            assert!(((ours - theirs) / theirs).abs() < 1e-6, "t={tv}: {ours} vs {theirs}");
        }
    }

    #[test]
    fn variance_of_two_runs() {
        assert!((mean(&[0.9, 1.0]) - 0.95).abs() < 1e-15);
        assert!((sample_variance(&[0.9, 1.0]) - 0.005).abs() < 1e-15);
        assert_eq!(sample_variance(&[0.7, 0.7, 0.7]), 0.0);
    }
}
