//! Lasso coefficient-difference statistics and the knockoff+ selection rule.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub w: DVector<f64>,
}

impl FeatureStats {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// `W_j = |β_j| − |β_{j+p}|` for a single knockoff copy.
pub fn lcd_stats(beta: &DVector<f64>, p: usize) -> Result<FeatureStats> {
    if beta.len() != 2 * p {
        return Err(Error::dims("coefficients vs 2p", beta.len(), 2 * p));
    }
    Ok(FeatureStats {
        w: DVector::from_fn(p, |j, _| beta[j].abs() - beta[j + p].abs()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    /// `+∞` when no threshold meets the target.
    pub threshold: f64,
    /// Smallest target level at which each covariate is selected, capped at 1.
    pub q_values: DVector<f64>,
    /// Zero-based indices with `W_j ≥ T`, ascending.
    pub selected: Vec<usize>,
    pub fdp_estimate: f64,
    pub q: f64,
}

/// Sorted magnitudes for O(log p) tail counts.
struct Counts {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl Counts {
    fn new(w: &DVector<f64>) -> Self {
        let mut pos: Vec<f64> = w.iter().copied().filter(|v| *v > 0.0).collect();
        let mut neg: Vec<f64> = w.iter().filter(|v| **v < 0.0).map(|v| -v).collect();
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        Self { pos, neg }
    }

    fn ge(v: &[f64], t: f64) -> usize {
        v.len() - v.partition_point(|x| *x < t)
    }

    /// `(1 + #{W ≤ −t}) / (#{W ≥ t} ∨ 1)` for `t > 0`.
    fn ratio(&self, t: f64) -> f64 {
        let num = 1 + Self::ge(&self.neg, t);
        let den = Self::ge(&self.pos, t).max(1);
        num as f64 / den as f64
    }
}

/// Conservative FDP estimate at threshold `t > 0`.
pub fn fdp_at(w: &DVector<f64>, t: f64) -> f64 {
    let num = 1 + w.iter().filter(|v| **v <= -t).count();
    let den = w.iter().filter(|v| **v >= t).count().max(1);
    num as f64 / den as f64
}

fn candidates(w: &DVector<f64>) -> Vec<f64> {
    let mut c: Vec<f64> = w.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

pub fn knockoff_threshold(stats: &FeatureStats, q: f64) -> Result<SelectionResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidQ(q));
    }
    let w = &stats.w;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let counts = Counts::new(w);
    let cands = candidates(w);
    let ratios: Vec<f64> = cands.iter().map(|t| counts.ratio(*t)).collect();

    let threshold = cands
        .iter()
        .zip(&ratios)
        .find(|(_, r)| **r <= q)
        .map(|(t, _)| *t)
        .unwrap_or(f64::INFINITY);

    // Running minimum of the ratio over candidates t ≤ |w_i|.
    let mut prefix_min = Vec::with_capacity(ratios.len());
    let mut best = f64::INFINITY;
    for r in &ratios {
        best = best.min(*r);
        prefix_min.push(best);
    }
    let q_values = DVector::from_fn(w.len(), |i, _| {
        if w[i] <= 0.0 {
            return 1.0;
        }
        let idx = cands.partition_point(|t| *t <= w[i]);
        prefix_min[idx - 1].min(1.0)
    });

    let selected = (0..w.len()).filter(|&j| w[j] >= threshold).collect();
    Ok(SelectionResult {
        threshold,
        q_values,
        selected,
        fdp_estimate: fdp_at(w, threshold),
        q,
    })
}

/// Selection table with header `snp w q_value selected`.
pub fn write_selection(path: &Path, snp_ids: &[String], stats: &FeatureStats, sel: &SelectionResult) -> Result<()> {
    if snp_ids.len() != stats.len() {
        return Err(Error::dims("SNP ids vs statistics", snp_ids.len(), stats.len()));
    }
    let mut chosen = vec![false; stats.len()];
    for &j in &sel.selected {
        chosen[j] = true;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "snp\tw\tq_value\tselected")?;
    for j in 0..stats.len() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            snp_ids[j], stats.w[j], sel.q_values[j], chosen[j] as u8
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRow {
    pub snp: String,
    pub w: f64,
    pub q_value: f64,
    pub selected: bool,
}

pub fn read_selection(path: &Path) -> Result<Vec<SelectionRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "no data rows"))?;
    if header.split('\t').map(str::trim).collect::<Vec<_>>() != ["snp", "w", "q_value", "selected"] {
        return Err(Error::parse(1, "selection header must be 'snp\\tw\\tq_value\\tselected'"));
    }
    let mut rows = Vec::new();
    for (i, l) in lines {
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::parse(i + 1, format!("non-numeric value '{s}'")));
        let selected = match f[3].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::parse(i + 1, format!("selected must be 0 or 1, got '{other}'"))),
        };
        rows.push(SelectionRow {
            snp: f[0].trim().to_string(),
            w: num(f[1])?,
            q_value: num(f[2])?,
            selected,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(v: &[f64]) -> FeatureStats {
        FeatureStats {
            w: DVector::from_column_slice(v),
        }
    }

    #[test]
    fn lcd_examples() {
        let beta = DVector::from_vec(vec![0.4, -0.1, 0.0, 0.2]);
        let s = lcd_stats(&beta, 2).unwrap();
        assert_eq!(s.w.as_slice(), &[0.4, -0.1]);
        let s = lcd_stats(&DVector::zeros(6), 3).unwrap();
        assert!(s.w.iter().all(|v| *v == 0.0));
        assert!(lcd_stats(&DVector::zeros(5), 3).is_err());
    }

    #[test]
    fn threshold_worked_example() {
        let r = knockoff_threshold(&stats(&[3.0, -1.0, 2.0, -2.0, 5.0]), 0.5).unwrap();
        assert_eq!(r.threshold, 3.0);
        assert_eq!(r.selected, vec![0, 4]);
        assert_eq!(r.fdp_estimate, 0.5);
    }

    #[test]
    fn all_negative_selects_nothing() {
        let r = knockoff_threshold(&stats(&[-1.0, -2.0, -0.5]), 0.3).unwrap();
        assert!(r.threshold.is_infinite());
        assert!(r.selected.is_empty());
        assert!(r.q_values.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn all_positive_selects_everything() {
        let r = knockoff_threshold(&stats(&[5.0, 4.0, 3.0, 2.0, 1.0]), 0.2).unwrap();
        assert_eq!(r.threshold, 1.0);
        assert_eq!(r.selected, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn zeros_never_selected() {
        let r = knockoff_threshold(&stats(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), 0.25).unwrap();
        assert!(!r.selected.contains(&0));
        assert_eq!(r.q_values[0], 1.0);
    }

    #[test]
    fn invalid_q() {
        assert!(matches!(knockoff_threshold(&stats(&[1.0]), 0.0), Err(Error::InvalidQ(_))));
        assert!(matches!(knockoff_threshold(&stats(&[1.0]), 1.0), Err(Error::InvalidQ(_))));
    }

    #[test]
    fn fdp_examples() {
        let w = DVector::from_vec(vec![3.0, -3.0]);
        assert_eq!(fdp_at(&w, 3.0), 2.0);
        let w = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(fdp_at(&w, 0.5), 0.25);
    }

    #[test]
    fn selection_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sel.tsv");
        let s = stats(&[3.0, -1.0, 2.0, -2.0, 5.0]);
        let r = knockoff_threshold(&s, 0.5).unwrap();
        let ids: Vec<String> = (0..5).map(|i| format!("rs{i}")).collect();
        write_selection(&path, &ids, &s, &r).unwrap();
        let rows = read_selection(&path).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows[0].selected && rows[4].selected && !rows[2].selected);
        assert_eq!(rows[1].w, -1.0);
    }
}
