//! Scalar statistics shared by the evaluation and analysis pipelines.
//!
//! Correlations silently skip pairs where either value is non-finite, so
//! masked rate-map bins (stored as NaN) need no special handling upstream.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n − 1 denominator).
pub fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Pearson correlation over pairs where both values are finite.
/// None when fewer than two such pairs remain or either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson needs equal-length slices");
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(&a, &b)| (a, b))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug)]
pub struct PairedT {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    /// One-sided p for the hypothesis mean(a) > mean(b).
    pub p_greater: f64,
}

/// Paired t-test on matched samples. None when fewer than two pairs.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedT> {
    assert_eq!(a.len(), b.len(), "paired test needs matched samples");
    if a.len() < 2 {
        return None;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let m = mean(&diffs);
    let sd = sample_var(&diffs).sqrt();
    let df = n - 1.0;
    if sd == 0.0 {
        // Degenerate spread: the sign of the mean decides outright.
        let (t, p2, pg) = if m == 0.0 {
            (0.0, 1.0, 0.5)
        } else if m > 0.0 {
            (f64::INFINITY, 0.0, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0, 1.0)
        };
        return Some(PairedT {
            t,
            df,
            p_two_sided: p2,
            p_greater: pg,
        });
    }
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let cdf = dist.cdf(t);
    Some(PairedT {
        t,
        df,
        p_two_sided: 2.0 * cdf.min(1.0 - cdf),
        p_greater: 1.0 - cdf,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct KsTest {
    pub d: f64,
    pub p: f64,
}

/// One-sample Kolmogorov-Smirnov test against Uniform[0,1], with the
/// Stephens small-sample correction for the asymptotic tail.
pub fn ks_uniform(samples: &[f64]) -> Option<KsTest> {
    if samples.is_empty() {
        return None;
    }
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut q = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-2.0 * k * k * lambda * lambda).exp();
        q += if k as usize % 2 == 1 { term } else { -term };
    }
    Some(KsTest {
        d,
        p: q.clamp(0.0, 1.0),
    })
}

/// Standard deviation of a proportion estimated from n Bernoulli draws.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    assert!(n > 0, "need at least one draw");
    (p * (1.0 - p) / n as f64).sqrt()
}
