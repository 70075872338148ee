//! Ranking metrics over grouped candidate scores: R_n@k, MAP, MRR, P@1.
//!
//! Candidates are ranked by descending score; equal scores keep ascending
//! candidate index.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{CdnError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Group {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() || scores.is_empty() {
            return Err(CdnError::Format(format!(
                "group with {} scores and {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(CdnError::Format("labels must be 0 or 1".into()));
        }
        Ok(Group { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Candidate indices from best to worst.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| match self.scores[b].total_cmp(&self.scores[a]) {
            Ordering::Equal => a.cmp(&b),
            o => o,
        });
        idx
    }

    fn ranked_labels(&self) -> Vec<u8> {
        self.ranking().into_iter().map(|i| self.labels[i]).collect()
    }
}

/// Positives among the top `k`, over all positives (0 without positives).
pub fn recall_at_k(g: &Group, k: usize) -> Result<f64> {
    if k == 0 || k > g.len() {
        return Err(CdnError::Config(format!("k = {k} outside 1..={}", g.len())));
    }
    let pos = g.positives();
    if pos == 0 {
        return Ok(0.0);
    }
    let hits = g.ranked_labels()[..k].iter().filter(|&&l| l == 1).count();
    Ok(hits as f64 / pos as f64)
}

/// Reciprocal rank of the first positive (0 without positives).
pub fn reciprocal_rank(g: &Group) -> f64 {
    g.ranked_labels()
        .iter()
        .position(|&l| l == 1)
        .map_or(0.0, |r| 1.0 / (r + 1) as f64)
}

/// Mean of the precision at each positive's rank (0 without positives).
pub fn average_precision(g: &Group) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &l) in g.ranked_labels().iter().enumerate() {
        if l == 1 {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Label of the top-ranked candidate.
pub fn precision_at_1(g: &Group) -> f64 {
    g.labels[g.ranking()[0]] as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Recall(usize),
    Map,
    Mrr,
    P1,
}

impl Metric {
    pub fn name(self, n: usize) -> String {
        match self {
            Metric::Recall(k) => format!("R_{n}@{k}"),
            Metric::Map => "MAP".into(),
            Metric::Mrr => "MRR".into(),
            Metric::P1 => "P@1".into(),
        }
    }

    pub fn of(self, g: &Group) -> Result<f64> {
        Ok(match self {
            Metric::Recall(k) => recall_at_k(g, k)?,
            Metric::Map => average_precision(g),
            Metric::Mrr => reciprocal_rank(g),
            Metric::P1 => precision_at_1(g),
        })
    }

    /// Columns reported for a candidate list of size `n`: R_n@{1,2,5} plus
    /// MAP, MRR, P@1 for pointwise lists, R_n@{1,2} plus MRR for
    /// multiple-choice ones.
    pub fn standard(n: usize, multichoice: bool) -> Vec<Metric> {
        let mut out: Vec<Metric> = [1, 2, 5]
            .into_iter()
            .filter(|&k| k <= n && !(multichoice && k == 5))
            .map(Metric::Recall)
            .collect();
        if multichoice {
            out.push(Metric::Mrr);
        } else {
            out.extend([Metric::Map, Metric::Mrr, Metric::P1]);
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankedRun {
    pub groups: Vec<Group>,
}

impl RankedRun {
    pub fn new(groups: Vec<Group>) -> Self {
        RankedRun { groups }
    }

    /// Reads `label \t score` lines in consecutive groups of `group_size`.
    pub fn from_scored_tsv(text: &str, group_size: usize) -> Result<Self> {
        if group_size == 0 {
            return Err(CdnError::Config("group size must be ≥ 1".into()));
        }
        let mut groups = Vec::new();
        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || CdnError::Format(format!("line {}: expected `label<TAB>score`", n + 1));
            let (l, s) = line.split_once('\t').ok_or_else(bad)?;
            let label = match l.trim() {
                "0" => 0,
                "1" => 1,
                _ => return Err(CdnError::Format(format!("line {}: label {l:?} not in {{0,1}}", n + 1))),
            };
            let score: f64 = s.trim().parse().map_err(|_| bad())?;
            labels.push(label);
            scores.push(score);
            if labels.len() == group_size {
                groups.push(Group::new(std::mem::take(&mut scores), std::mem::take(&mut labels))?);
            }
        }
        if !labels.is_empty() {
            return Err(CdnError::Format(format!(
                "ragged final group of {} for group size {group_size}",
                labels.len()
            )));
        }
        Ok(RankedRun { groups })
    }

    /// Unweighted mean of `metric` over groups. With `filter`, groups without
    /// a positive are left out instead of counting as 0.
    pub fn mean(&self, metric: Metric, filter: bool) -> Result<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for g in &self.groups {
            if filter && g.positives() == 0 {
                continue;
            }
            sum += metric.of(g)?;
            n += 1;
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    pub fn report(&self, metrics: &[Metric], filter: bool) -> Result<Report> {
        let n = self.groups.first().map_or(0, Group::len);
        let rows = metrics
            .iter()
            .map(|&m| Ok((m.name(n), self.mean(m, filter)?)))
            .collect::<Result<_>>()?;
        Ok(Report { rows })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<(String, f64)>,
}

impl Report {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == name).map(|r| r.1)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in &self.rows {
            writeln!(f, "{name:<6} = {v:.4}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(scores: &[f64], labels: &[u8]) -> Group {
        Group::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    fn ranked(positives_at: &[usize], n: usize) -> Group {
        let scores = (0..n).map(|i| (n - i) as f64).collect();
        let labels = (0..n).map(|i| positives_at.contains(&(i + 1)) as u8).collect();
        Group::new(scores, labels).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(recall_at_k(&ranked(&[1], 10), 1).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranked(&[1, 4], 10), 2).unwrap(), 0.5);
        assert_eq!(reciprocal_rank(&ranked(&[3], 10)), 1.0 / 3.0);
        let ap = average_precision(&ranked(&[1, 3], 10));
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let perfect = ranked(&[1, 2], 5);
        for k in 2..=5 {
            assert_eq!(recall_at_k(&perfect, k).unwrap(), 1.0);
        }
        assert_eq!((average_precision(&perfect), reciprocal_rank(&perfect), precision_at_1(&perfect)), (1.0, 1.0, 1.0));
        assert!(recall_at_k(&perfect, 0).is_err());
        assert!(recall_at_k(&perfect, 6).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let g = group(&[1.0, 1.0, 1.0], &[0, 1, 0]);
        assert_eq!(g.ranking(), [0, 1, 2]);
        assert_eq!(reciprocal_rank(&g), 0.5);
    }

    #[test]
    fn filter_flag() {
        let run = RankedRun::new(vec![group(&[1.0, 0.0], &[1, 0]), group(&[1.0, 0.0], &[0, 0])]);
        assert_eq!(run.mean(Metric::Recall(1), false).unwrap(), 0.5);
        assert_eq!(run.mean(Metric::Recall(1), true).unwrap(), 1.0);
    }

    #[test]
    fn report_format() {
        let run = RankedRun::from_scored_tsv("1\t0.9\n0\t0.1\n0\t0.2\n0\t0.3\n0\t0.4\n0\t0.5\n0\t0.5\n0\t0.5\n0\t0.5\n0\t0.5\n", 10).unwrap();
        let r = run.report(&Metric::standard(10, false), false).unwrap();
        assert_eq!(r.to_string().lines().next(), Some("R_10@1 = 1.0000"));
        assert_eq!(r.rows.len(), 6);
        assert!(RankedRun::from_scored_tsv("1\t0.9\n", 2).is_err());
        assert!(RankedRun::from_scored_tsv("3\t0.9\n", 1).is_err());
    }
}
