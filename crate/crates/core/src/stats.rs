//! Summary statistics for comparing runs.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean taken relative to the first element, exact when all values agree.
fn centre(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else { return f64::NAN };
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_pop(xs: &[f64]) -> f64 {
    let m = centre(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Unbiased sample variance.
pub fn var_sample(xs: &[f64]) -> f64 {
    let m = centre(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Welch {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
    pub mean_diff: f64,
}

/// Welch's unequal-variance t-test of `mean(a) - mean(b)`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<Welch> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData("welch test needs two samples per arm".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (var_sample(a) / na, var_sample(b) / nb);
    let mean_diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        let p_value = if mean_diff == 0.0 { 1.0 } else { 0.0 };
        let t = if mean_diff == 0.0 { 0.0 } else { mean_diff.signum() * f64::INFINITY };
        return Ok(Welch {
            t,
            df: na + nb - 2.0,
            p_value,
            mean_diff,
        });
    }
    let t = mean_diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::contract(e.to_string()))?;
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(Welch {
        t,
        df,
        p_value,
        mean_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_values() {
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4];
        let w = welch_t_test(&a, &b).unwrap();
        // independent straight-line recomputation
        let (ma, mb) = (a.iter().sum::<f64>() / 15.0, b.iter().sum::<f64>() / 15.0);
        let sa = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / 14.0 / 15.0;
        let sb = b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / 14.0 / 15.0;
        let t = (ma - mb) / (sa + sb).sqrt();
        let df = (sa + sb).powi(2) / (sa * sa / 14.0 + sb * sb / 14.0);
        assert!((w.t - t).abs() < 1e-12);
        assert!((w.df - df).abs() < 1e-9);
        assert!((w.t + 2.46).abs() < 0.01);
        assert!((w.p_value - 0.021).abs() < 0.001);
    }

    #[test]
    fn degenerate_and_symmetric_cases() {
        assert_eq!(welch_t_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap().p_value, 1.0);
        assert_eq!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).unwrap().p_value, 0.0);
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
        let a = [1.0, 2.0, 3.5];
        let b = [0.5, 2.5, 1.0, 1.5];
        let (x, y) = (welch_t_test(&a, &b).unwrap(), welch_t_test(&b, &a).unwrap());
        assert!((x.p_value - y.p_value).abs() < 1e-15);
        assert_eq!(x.t, -y.t);
    }

    #[test]
    fn population_std() {
        assert_eq!(std_pop(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), 2.0);
        assert_eq!(std_pop(&[3.0]), 0.0);
    }
}
