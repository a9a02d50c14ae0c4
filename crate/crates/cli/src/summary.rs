//! Posterior quantile tables.

use anyhow::{bail, Result};

/// Sample quantile by linear interpolation between order statistics
/// (`h = (n-1)p`, the R default "type 7").
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantiles(values: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        bail!("quantiles of an empty sample");
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        bail!("probability {p} is outside [0, 1]");
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(probs.iter().map(|&p| quantile_sorted(&s, p)).collect())
}

pub const DEFAULT_PROBS: [f64; 3] = [0.5, 0.025, 0.975];

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub probs: Vec<f64>,
    /// Parameter name and its quantiles in `probs` order.
    pub rows: Vec<(String, Vec<f64>)>,
}

impl PosteriorSummary {
    /// Summarize each column of `draws` (one row per draw).
    pub fn new(names: &[String], draws: &[Vec<f64>], probs: &[f64]) -> Result<Self> {
        let rows = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
                Ok((name.clone(), quantiles(&col, probs)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { probs: probs.to_vec(), rows })
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, q)| q.as_slice())
    }

    pub fn header(&self) -> Vec<String> {
        std::iter::once("parameter".to_string()).chain(self.probs.iter().map(|p| prob_label(*p))).collect()
    }

    /// Fixed-width table with values rounded to `digits`.
    pub fn render(&self, digits: usize) -> String {
        let width = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(1);
        let mut s = format!("{:width$}", "");
        for p in &self.probs {
            s.push_str(&format!(" {:>9}", prob_label(*p)));
        }
        s.push('\n');
        for (name, q) in &self.rows {
            s.push_str(&format!("{name:width$}"));
            for v in q {
                s.push_str(&format!(" {v:>9.digits$}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn prob_label(p: f64) -> String {
    format!("{}%", 100.0 * p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn type7_examples() {
        // R: quantile(c(1,2,3,4,10), c(.5,.025,.975,.1)) = 3, 1.1, 9.4, 1.4
        let q = quantiles(&[10.0, 1.0, 3.0, 2.0, 4.0], &[0.5, 0.025, 0.975, 0.1]).unwrap();
        let expect = [3.0, 1.1, 9.4, 1.4];
        for (a, b) in q.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(quantiles(&[7.0], &[0.0, 0.3, 1.0]).unwrap(), vec![7.0; 3]);
    }

    #[test]
    fn identical_draws_collapse() {
        let draws = vec![vec![2.5, -1.0]; 50];
        let s = PosteriorSummary::new(&["K[1,1]".into(), "tau.sq".into()], &draws, &DEFAULT_PROBS).unwrap();
        assert_eq!(s.get("K[1,1]").unwrap(), &[2.5, 2.5, 2.5]);
        assert_eq!(s.get("tau.sq").unwrap(), &[-1.0, -1.0, -1.0]);
        assert_eq!(s.header(), ["parameter", "50%", "2.5%", "97.5%"]);
    }

    #[test]
    fn bad_inputs() {
        assert!(quantiles(&[], &[0.5]).is_err());
        assert!(quantiles(&[1.0], &[1.5]).is_err());
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone_and_bounded(v in prop::collection::vec(-1e6f64..1e6, 1..60), mut ps in prop::collection::vec(0.0f64..=1.0, 1..8)) {
            ps.sort_by(f64::total_cmp);
            let q = quantiles(&v, &ps).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for w in q.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert!(q.iter().all(|x| *x >= lo && *x <= hi));
        }
    }
}
