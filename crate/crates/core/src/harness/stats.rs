use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch one-tailed p-value for `mean(a) > mean(b)`. With zero pooled
/// variance the answer is 0.5 for equal means and 0 or 1 otherwise.
pub fn ttest_one_tailed(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewObservations);
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            0.5
        } else if ma > mb {
            0.0
        } else {
            1.0
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(e.to_string()))?;
    Ok(dist.sf(t).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn identical_is_half() {
        let a = [0.3, 0.5, 0.4, 0.6];
        assert_eq!(ttest_one_tailed(&a, &a).unwrap(), 0.5);
        assert_eq!(ttest_one_tailed(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(ttest_one_tailed(&[2.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(ttest_one_tailed(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn wide_separation() {
        let b = [0.0, 0.1, -0.1, 0.05, -0.05];
        let sd = 0.079;
        let a: Vec<f64> = b.iter().map(|x| x + 10.0 * sd).collect();
        assert!(ttest_one_tailed(&a, &b).unwrap() < 0.01);
    }

    #[test]
    fn closed_form_two_dof() {
        // Both samples have variance 2, so t = sqrt(2) with df = 2, where
        // sf(t) = 1/2 - t / (2 sqrt(2 + t^2)).
        let p = ttest_one_tailed(&[2.0, 4.0], &[0.0, 2.0]).unwrap();
        let t = 2f64.sqrt();
        let expect = 0.5 - t / (2.0 * (2.0 + t * t).sqrt());
        assert!((p - expect).abs() < 1e-10, "{p} vs {expect}");
    }

    #[test]
    fn too_few() {
        assert!(matches!(
            ttest_one_tailed(&[1.0], &[1.0, 2.0]),
            Err(Error::TooFewObservations)
        ));
    }

    proptest! {
        #[test]
        fn complementary(a in proptest::collection::vec(-1.0f64..1.0, 2..8),
                         b in proptest::collection::vec(-1.0f64..1.0, 2..8)) {
            let p = ttest_one_tailed(&a, &b).unwrap();
            let q = ttest_one_tailed(&b, &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((p + q - 1.0).abs() < 1e-9);
        }
    }
}
