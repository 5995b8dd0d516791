//! Sparsity of the global table, upload-size accounting and cross-variant
//! comparison tables.
//!
//! Byte counts are a model, not a wire format: dense uploads cost 8 bytes per
//! entry, sparse uploads are costed as a COO sketch of 8-byte values plus
//! 4-byte flat indices and an 8-byte header. Only exact zeros are dropped.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::runtime::RoundReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub frac_abs_gt_1e1: f64,
    pub frac_abs_gt_1e2: f64,
    pub exact_zero_frac: f64,
    pub nonzero_count: usize,
}

pub fn sparsity_stats(c: &Matrix) -> SparsityReport {
    let (mut gt1, mut gt2, mut nonzero) = (0usize, 0usize, 0usize);
    for &v in c.as_slice() {
        let a = v.abs();
        gt1 += (a > 1e-1) as usize;
        gt2 += (a > 1e-2) as usize;
        nonzero += (v != 0.0) as usize;
    }
    let total = c.len();
    if total == 0 {
        return SparsityReport {
            frac_abs_gt_1e1: 0.0,
            frac_abs_gt_1e2: 0.0,
            exact_zero_frac: 0.0,
            nonzero_count: 0,
        };
    }
    let t = total as f64;
    SparsityReport {
        frac_abs_gt_1e1: gt1 as f64 / t,
        frac_abs_gt_1e2: gt2 as f64 / t,
        exact_zero_frac: (total - nonzero) as f64 / t,
        nonzero_count: nonzero,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub dense_bytes: u64,
    pub sparse_bytes: u64,
    /// `dense_bytes / sparse_bytes`.
    pub savings_ratio: f64,
}

pub const VALUE_BYTES: u64 = 8;
pub const INDEX_BYTES: u64 = 4;
pub const SPARSE_HEADER_BYTES: u64 = 8;

pub fn comm_estimate(report: &SparsityReport, m: usize, k: usize) -> CommReport {
    let dense_bytes = (m * k) as u64 * VALUE_BYTES;
    let sparse_bytes =
        report.nonzero_count as u64 * (VALUE_BYTES + INDEX_BYTES) + SPARSE_HEADER_BYTES;
    CommReport {
        dense_bytes,
        sparse_bytes,
        savings_ratio: dense_bytes as f64 / sparse_bytes as f64,
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; zero for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub runs: usize,
    pub rounds: usize,
    pub final_hr: MeanStd,
    pub final_ndcg: MeanStd,
    pub best_hr: MeanStd,
    pub best_ndcg: MeanStd,
    pub final_c_frac_gt_1e2: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, variant: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,runs,rounds,final_hr10_mean,final_hr10_std,final_ndcg10_mean,final_ndcg10_std,\
             best_hr10_mean,best_hr10_std,best_ndcg10_mean,best_ndcg10_std,final_c_frac_gt_1e2_mean\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.runs,
                r.rounds,
                r.final_hr.mean,
                r.final_hr.std,
                r.final_ndcg.mean,
                r.final_ndcg.std,
                r.best_hr.mean,
                r.best_hr.std,
                r.best_ndcg.mean,
                r.best_ndcg.std,
                r.final_c_frac_gt_1e2.mean,
            );
        }
        out
    }
}

/// Final-round and best-round metrics per variant, aggregated over the runs
/// (one per seed) recorded for it. Every run must have the same length.
pub fn compare_variants(reports: &BTreeMap<String, Vec<Vec<RoundReport>>>) -> Result<ComparisonTable> {
    let mut rounds: Option<usize> = None;
    let mut rows = Vec::new();
    for (variant, runs) in reports {
        if runs.is_empty() {
            return Err(Error::MismatchedRuns(format!("{variant}: no runs")));
        }
        let mut finals = (Vec::new(), Vec::new(), Vec::new());
        let mut bests = (Vec::new(), Vec::new());
        for run in runs {
            match rounds {
                None => rounds = Some(run.len()),
                Some(r) if r != run.len() => {
                    return Err(Error::MismatchedRuns(format!(
                        "{variant}: run with {} rounds, expected {r}",
                        run.len()
                    )))
                }
                _ => {}
            }
            let last = run
                .last()
                .ok_or_else(|| Error::MismatchedRuns(format!("{variant}: empty run")))?;
            finals.0.push(last.hr10);
            finals.1.push(last.ndcg10);
            finals.2.push(last.c_frac_gt_1e2);
            bests.0.push(run.iter().map(|r| r.hr10).fold(f64::MIN, f64::max));
            bests.1.push(run.iter().map(|r| r.ndcg10).fold(f64::MIN, f64::max));
        }
        rows.push(ComparisonRow {
            variant: variant.clone(),
            runs: runs.len(),
            rounds: rounds.unwrap_or(0),
            final_hr: MeanStd::of(&finals.0),
            final_ndcg: MeanStd::of(&finals.1),
            best_hr: MeanStd::of(&bests.0),
            best_ndcg: MeanStd::of(&bests.1),
            final_c_frac_gt_1e2: MeanStd::of(&finals.2),
        });
    }
    Ok(ComparisonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};

    #[test]
    fn zero_matrix_stats() {
        let s = sparsity_stats(&Matrix::zeros(3, 4));
        assert_eq!(s.frac_abs_gt_1e1, 0.0);
        assert_eq!(s.frac_abs_gt_1e2, 0.0);
        assert_eq!(s.exact_zero_frac, 1.0);
        assert_eq!(s.nonzero_count, 0);
    }

    #[test]
    fn thresholds_are_strict() {
        let mut m = Matrix::zeros(2, 2);
        m.fill(0.05);
        let s = sparsity_stats(&m);
        assert_eq!((s.frac_abs_gt_1e1, s.frac_abs_gt_1e2), (0.0, 1.0));
        m.fill(0.1);
        assert_eq!(sparsity_stats(&m).frac_abs_gt_1e1, 0.0);
        m.fill(-0.01);
        assert_eq!(sparsity_stats(&m).frac_abs_gt_1e2, 0.0);
    }

    #[test]
    fn stats_match_counting_loop() {
        let mut rng = rng::stream(1, Purpose::GlobalInit, &[]);
        let mut m = Matrix::uniform(40, 8, 0.3, &mut rng);
        for i in (0..m.len()).step_by(7) {
            m.as_mut_slice()[i] = 0.0;
        }
        let s = sparsity_stats(&m);
        let (mut a, mut b, mut z) = (0, 0, 0);
        for r in 0..40 {
            for c in 0..8 {
                let v = m.get(r, c);
                if v.abs() > 0.1 {
                    a += 1;
                }
                if v.abs() > 0.01 {
                    b += 1;
                }
                if v == 0.0 {
                    z += 1;
                }
            }
        }
        assert_eq!(s.frac_abs_gt_1e1, a as f64 / 320.0);
        assert_eq!(s.frac_abs_gt_1e2, b as f64 / 320.0);
        assert_eq!(s.exact_zero_frac, z as f64 / 320.0);
        assert_eq!(s.nonzero_count, 320 - z);
        assert!(s.frac_abs_gt_1e1 <= s.frac_abs_gt_1e2);
    }

    #[test]
    fn comm_examples() {
        let empty = sparsity_stats(&Matrix::zeros(10, 4));
        assert_eq!(comm_estimate(&empty, 10, 4).sparse_bytes, 8);
        let mut full = Matrix::zeros(10, 4);
        full.fill(1.0);
        let c = comm_estimate(&sparsity_stats(&full), 10, 4);
        assert!(c.sparse_bytes > c.dense_bytes);
    }

    #[test]
    fn comm_savings_at_one_third_density() {
        // 1682 x 32 with a third of the entries nonzero.
        let (m, k) = (1682usize, 32usize);
        let nonzero = m * k / 3;
        let report = SparsityReport {
            frac_abs_gt_1e1: 0.0,
            frac_abs_gt_1e2: 0.0,
            exact_zero_frac: 1.0 - nonzero as f64 / (m * k) as f64,
            nonzero_count: nonzero,
        };
        let c = comm_estimate(&report, m, k);
        assert_eq!(c.dense_bytes, 430_592);
        assert_eq!(c.sparse_bytes, 17_941 * 12 + 8);
        assert!((c.savings_ratio - 2.0).abs() < 0.01);
    }

    fn run(hr: &[f64]) -> Vec<RoundReport> {
        hr.iter()
            .enumerate()
            .map(|(i, &h)| RoundReport {
                round: i as u64 + 1,
                variant: "v".into(),
                hr10: h,
                ndcg10: h / 2.0,
                mean_loss: 0.0,
                c_frac_gt_1e1: 0.0,
                c_frac_gt_1e2: 0.0,
                nonzero_c_entries: 0,
                bytes_up_estimate: 0,
                n_sampled: 1,
                lambda: 0.0,
                mu: 0.0,
                full_hr10: None,
                full_ndcg10: None,
                dp: None,
            })
            .collect()
    }

    #[test]
    fn single_run_echoes_final_round() {
        let mut map = BTreeMap::new();
        map.insert("fedrap".to_string(), vec![run(&[0.2, 0.9, 0.7])]);
        let t = compare_variants(&map).unwrap();
        let row = t.row("fedrap").unwrap();
        assert_eq!(row.final_hr, MeanStd { mean: 0.7, std: 0.0 });
        assert_eq!(row.best_hr.mean, 0.9);
        assert!(t.to_csv().lines().nth(1).unwrap().starts_with("fedrap,1,3,0.7,0,"));
    }

    #[test]
    fn std_matches_two_pass_oracle() {
        let finals = [0.91, 0.95, 0.97, 0.93, 0.96];
        let mut map = BTreeMap::new();
        map.insert("fedrap".to_string(), finals.iter().map(|&h| run(&[0.1, h])).collect());
        let row = compare_variants(&map).unwrap().rows.remove(0);
        let mean: f64 = finals.iter().sum::<f64>() / 5.0;
        let mut ss = 0.0;
        for f in finals {
            ss += (f - mean) * (f - mean);
        }
        let std = (ss / 4.0).sqrt();
        assert!((row.final_hr.mean - mean).abs() < 1e-15);
        assert!((row.final_hr.std - std).abs() < 1e-15);
    }

    #[test]
    fn mismatched_round_counts_rejected() {
        let mut map = BTreeMap::new();
        map.insert("a".to_string(), vec![run(&[0.1, 0.2])]);
        map.insert("b".to_string(), vec![run(&[0.1])]);
        assert!(matches!(compare_variants(&map), Err(Error::MismatchedRuns(_))));
    }
}
