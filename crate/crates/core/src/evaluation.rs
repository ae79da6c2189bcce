//! Accuracy reports, per-category error breakdowns, explanation rank
//! aggregation and ablation sweeps.
//!
//! Raw ratios are kept as exact integer counts; display values are rounded
//! half-up from those counts, never from a float.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::{PipelineConfig, Verdict};
use crate::corpus::{Category, Label, NewsItem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_id: String,
    pub truth: Label,
    pub predicted: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_used: Option<PipelineConfig>,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted == self.truth.as_ooc()
    }
}

/// Pairs verdicts with the labeled items they were produced for.
pub fn predictions(items: &[NewsItem], verdicts: &[Verdict]) -> Result<Vec<PredictionRecord>> {
    if items.len() != verdicts.len() {
        return Err(Error::InvalidInput(format!("{} items but {} verdicts", items.len(), verdicts.len())));
    }
    items
        .iter()
        .zip(verdicts)
        .map(|(item, v)| {
            let truth = item
                .label
                .ok_or_else(|| Error::InvalidInput(format!("item {} has no label", item.id)))?;
            Ok(PredictionRecord {
                item_id: item.id.clone(),
                truth,
                predicted: v.c_ooc,
                category: item.category,
                config_used: Some(v.config_used),
            })
        })
        .collect()
}

/// `num / den` as a percentage rounded half-up to `places` decimals.
pub fn percent_half_up(num: u64, den: u64, places: u32) -> String {
    assert!(den > 0, "percentage of an empty denominator");
    let scale = 10u128.pow(places);
    let scaled = num as u128 * 100 * scale;
    let q = (2 * scaled + den as u128) / (2 * den as u128);
    if places == 0 {
        return q.to_string();
    }
    format!("{}.{:0width$}", q / scale, q % scale, width = places as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    /// Falsified predicted OOC.
    pub true_ooc: u64,
    /// Falsified predicted pristine.
    pub missed_ooc: u64,
    /// Pristine predicted pristine.
    pub true_pristine: u64,
    /// Pristine predicted OOC.
    pub false_ooc: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: u64,
    pub correct: u64,
    pub confusion: Confusion,
    pub acc_all: f64,
    pub acc_falsified: Option<f64>,
    pub acc_pristine: Option<f64>,
}

impl EvalReport {
    pub fn falsified_total(&self) -> u64 {
        self.confusion.true_ooc + self.confusion.missed_ooc
    }

    pub fn pristine_total(&self) -> u64 {
        self.confusion.true_pristine + self.confusion.false_ooc
    }

    pub fn errors(&self) -> u64 {
        self.total - self.correct
    }

    /// All / Falsified / Pristine at one decimal; `None` for an empty class.
    pub fn display(&self) -> (String, Option<String>, Option<String>) {
        let c = &self.confusion;
        (
            percent_half_up(self.correct, self.total, 1),
            (self.falsified_total() > 0).then(|| percent_half_up(c.true_ooc, self.falsified_total(), 1)),
            (self.pristine_total() > 0).then(|| percent_half_up(c.true_pristine, self.pristine_total(), 1)),
        )
    }

    pub fn table_row(&self, name: &str) -> String {
        let (all, f, p) = self.display();
        format!(
            "{name:<24} {all:>6} {:>10} {:>9}",
            f.unwrap_or_else(|| "-".into()),
            p.unwrap_or_else(|| "-".into())
        )
    }

    pub fn render_table(&self, name: &str) -> String {
        let c = &self.confusion;
        format!(
            "{:<24} {:>6} {:>10} {:>9}\n{}\n\ntotal={} correct={} errors={}\nconfusion: falsified->ooc={} falsified->pristine={} pristine->pristine={} pristine->ooc={}\n",
            "Method",
            "All",
            "Falsified",
            "Pristine",
            self.table_row(name),
            self.total,
            self.correct,
            self.errors(),
            c.true_ooc,
            c.missed_ooc,
            c.true_pristine,
            c.false_ooc
        )
    }
}

pub fn accuracy_report(preds: &[PredictionRecord]) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut c = Confusion::default();
    for p in preds {
        match (p.truth, p.predicted == 1) {
            (Label::Falsified, true) => c.true_ooc += 1,
            (Label::Falsified, false) => c.missed_ooc += 1,
            (Label::Pristine, false) => c.true_pristine += 1,
            (Label::Pristine, true) => c.false_ooc += 1,
        }
    }
    let total = preds.len() as u64;
    let correct = c.true_ooc + c.true_pristine;
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    Ok(EvalReport {
        total,
        correct,
        confusion: c,
        acc_all: correct as f64 / total as f64,
        acc_falsified: ratio(c.true_ooc, c.true_ooc + c.missed_ooc),
        acc_pristine: ratio(c.true_pristine, c.true_pristine + c.false_ooc),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryErrors {
    pub category: Category,
    pub count: u64,
    /// count / total errors
    pub rate: f64,
    /// Percentage at two decimals.
    pub rate_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    /// Ordered by count, largest first.
    pub rows: Vec<CategoryErrors>,
    pub total_errors: u64,
}

impl ErrorDistribution {
    pub fn from_counts(counts: &BTreeMap<Category, u64>) -> Self {
        let total: u64 = counts.values().sum();
        let mut rows: Vec<CategoryErrors> = counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&category, &count)| CategoryErrors {
                category,
                count,
                rate: count as f64 / total as f64,
                rate_display: percent_half_up(count, total, 2),
            })
            .collect();
        rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.category.cmp(&b.category)));
        ErrorDistribution { rows, total_errors: total }
    }

    pub fn get(&self, category: Category) -> Option<&CategoryErrors> {
        self.rows.iter().find(|r| r.category == category)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<18} {:>6} {:>9}\n", "Category", "Count", "Rate");
        for r in &self.rows {
            let _ = writeln!(out, "{:<18} {:>6} {:>8}%", r.category.display_name(), r.count, r.rate_display);
        }
        let total_rate = if self.total_errors > 0 { "100.00" } else { "0.00" };
        let _ = writeln!(out, "{:<18} {:>6} {:>8}%", "Total", self.total_errors, total_rate);
        out
    }
}

pub fn error_distribution(preds: &[PredictionRecord]) -> Result<ErrorDistribution> {
    let mut counts = BTreeMap::new();
    for p in preds.iter().filter(|p| !p.is_correct()) {
        let cat = p.category.ok_or_else(|| Error::MissingCategory(p.item_id.clone()))?;
        *counts.entry(cat).or_insert(0u64) += 1;
    }
    Ok(ErrorDistribution::from_counts(&counts))
}

/// One judge's strict ranking of the candidate methods for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRow {
    pub judge: String,
    pub sample: String,
    /// `ranks[m]` is the rank given to `methods[m]`.
    pub ranks: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RankMatrix {
    pub methods: Vec<String>,
    pub rows: Vec<RankRow>,
}

pub fn is_permutation(ranks: &[u32]) -> bool {
    let m = ranks.len() as u32;
    let distinct: HashSet<_> = ranks.iter().collect();
    distinct.len() == ranks.len() && ranks.iter().all(|&r| (1..=m).contains(&r))
}

impl RankMatrix {
    pub fn new(methods: Vec<String>) -> Self {
        RankMatrix { methods, rows: Vec::new() }
    }

    /// Adds a row given as method name → rank.
    pub fn push_map(&mut self, judge: &str, sample: &str, ranks: &BTreeMap<String, u32>) -> Result<()> {
        let not_perm = || Error::NotAPermutation {
            judge: judge.to_string(),
            sample: sample.to_string(),
            methods: self.methods.len(),
        };
        if ranks.len() != self.methods.len() {
            return Err(not_perm());
        }
        let row: Vec<u32> = self
            .methods
            .iter()
            .map(|m| ranks.get(m).copied())
            .collect::<Option<_>>()
            .ok_or_else(not_perm)?;
        self.push(judge, sample, row)
    }

    pub fn push(&mut self, judge: &str, sample: &str, ranks: Vec<u32>) -> Result<()> {
        if ranks.len() != self.methods.len() || !is_permutation(&ranks) {
            return Err(Error::NotAPermutation {
                judge: judge.to_string(),
                sample: sample.to_string(),
                methods: self.methods.len(),
            });
        }
        self.rows.push(RankRow { judge: judge.into(), sample: sample.into(), ranks });
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if r.ranks.len() != self.methods.len() || !is_permutation(&r.ranks) {
                return Err(Error::NotAPermutation {
                    judge: r.judge.clone(),
                    sample: r.sample.clone(),
                    methods: self.methods.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRanks {
    pub methods: Vec<String>,
    /// Sum of ranks per method over all cells.
    pub rank_totals: Vec<u64>,
    /// Number of (judge, sample) cells.
    pub cells: u64,
    pub means: Vec<f64>,
}

impl MeanRanks {
    /// `sum(means) == M(M+1)/2`, checked on the integer totals.
    pub fn sum_is_exact(&self) -> bool {
        let m = self.methods.len() as u64;
        self.rank_totals.iter().sum::<u64>() == self.cells * m * (m + 1) / 2
    }

    /// Mean rank at two decimals, rounded half-up from the integer totals.
    pub fn mean_display(&self, idx: usize) -> String {
        assert!(self.cells > 0, "mean of zero cells");
        let (t, c) = (self.rank_totals[idx] as u128, self.cells as u128);
        let q = (2 * t * 100 + c) / (2 * c);
        format!("{}.{:02}", q / 100, q % 100)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("{:<28} {:>9}\n", "Method", "Mean rank");
        for (i, m) in self.methods.iter().enumerate() {
            let _ = writeln!(out, "{:<28} {:>9}", m, self.mean_display(i));
        }
        let _ = writeln!(out, "cells={}", self.cells);
        out
    }
}

pub fn average_ranks(m: &RankMatrix) -> Result<MeanRanks> {
    m.validate()?;
    let mut totals = vec![0u64; m.methods.len()];
    for row in &m.rows {
        for (t, &r) in totals.iter_mut().zip(&row.ranks) {
            *t += r as u64;
        }
    }
    let cells = m.rows.len() as u64;
    let means = totals
        .iter()
        .map(|&t| if cells == 0 { 0.0 } else { t as f64 / cells as f64 })
        .collect();
    Ok(MeanRanks { methods: m.methods.clone(), rank_totals: totals, cells, means })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub config: PipelineConfig,
    pub report: EvalReport,
    pub verdicts: Vec<Verdict>,
}

/// Runs every config over the labeled items. Configs are not deduplicated.
pub fn ablation_sweep<F>(items: &[NewsItem], configs: &[PipelineConfig], mut runner: F) -> Result<Vec<AblationResult>>
where
    F: FnMut(&NewsItem, &PipelineConfig) -> Result<Verdict>,
{
    let mut out = Vec::with_capacity(configs.len());
    for cfg in configs {
        let verdicts = items.iter().map(|item| runner(item, cfg)).collect::<Result<Vec<_>>>()?;
        let preds = predictions(items, &verdicts)?;
        out.push(AblationResult { config: *cfg, report: accuracy_report(&preds)?, verdicts });
    }
    Ok(out)
}

pub fn render_ablation_table(results: &[AblationResult]) -> String {
    let mut out = format!(
        "{:<8} {:<9} {:<9} {:<6} {:<7} {:>6} {:>10} {:>9}\n",
        "Analyst", "Detective", "Retrieval", "Event", "Entity", "All", "Falsified", "Pristine"
    );
    let mark = |b: bool| if b { "yes" } else { "no" };
    for r in results {
        let (all, f, p) = r.report.display();
        let _ = writeln!(
            out,
            "{:<8} {:<9} {:<9} {:<6} {:<7} {:>6} {:>10} {:>9}",
            "yes",
            mark(r.config.use_detective_agent),
            mark(r.config.use_retrieval_agent),
            mark(r.config.use_event_evidence),
            mark(r.config.use_entity_evidence),
            all,
            f.unwrap_or_else(|| "-".into()),
            p.unwrap_or_else(|| "-".into()),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(i: usize, truth: Label, correct: bool, category: Option<Category>) -> PredictionRecord {
        let predicted = if correct { truth.as_ooc() } else { 1 - truth.as_ooc() };
        PredictionRecord { item_id: format!("p{i}"), truth, predicted, category, config_used: None }
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(percent_half_up(1, 8, 1), "12.5");
        assert_eq!(percent_half_up(1, 16, 1), "6.3");
        assert_eq!(percent_half_up(2, 3, 2), "66.67");
        assert_eq!(percent_half_up(1, 1, 1), "100.0");
        assert_eq!(percent_half_up(0, 5, 2), "0.00");
    }

    #[test]
    fn all_correct() {
        let preds = vec![pred(0, Label::Falsified, true, None), pred(1, Label::Pristine, true, None)];
        let r = accuracy_report(&preds).unwrap();
        assert_eq!(r.display(), ("100.0".into(), Some("100.0".into()), Some("100.0".into())));
    }

    #[test]
    fn single_class_reports_absent() {
        let r = accuracy_report(&[pred(0, Label::Falsified, true, None)]).unwrap();
        assert_eq!(r.display(), ("100.0".into(), Some("100.0".into()), None));
        assert_eq!(r.acc_pristine, None);
        assert!(matches!(accuracy_report(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn error_distribution_edges() {
        let one = error_distribution(&[pred(0, Label::Pristine, false, Some(Category::SceneMatching))]).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert_eq!(one.rows[0].rate_display, "100.00");
        let none = error_distribution(&[pred(0, Label::Pristine, true, None)]).unwrap();
        assert!(none.rows.is_empty());
        assert_eq!(none.total_errors, 0);
        assert!(matches!(
            error_distribution(&[pred(0, Label::Pristine, false, None)]),
            Err(Error::MissingCategory(_))
        ));
    }

    #[test]
    fn hand_average_ranks() {
        let mut m = RankMatrix::new(vec!["A".into(), "B".into(), "C".into(), "D".into()]);
        m.push("j1", "s1", vec![1, 2, 3, 4]).unwrap();
        m.push("j1", "s2", vec![2, 1, 3, 4]).unwrap();
        let r = average_ranks(&m).unwrap();
        assert_eq!(r.means, vec![1.5, 1.5, 3.0, 4.0]);
        assert!(r.sum_is_exact());
        assert_eq!(r.mean_display(0), "1.50");
        // 13/9 = 1.4444…; must not double-round to 1.45
        let tricky = MeanRanks { methods: vec!["a".into()], rank_totals: vec![13], cells: 9, means: vec![13.0 / 9.0] };
        assert_eq!(tricky.mean_display(0), "1.44");
        assert!(m.push("j1", "s3", vec![1, 1, 3, 4]).is_err());
        assert!(m.push("j1", "s3", vec![1, 2, 3]).is_err());
        assert!(m.push("j1", "s3", vec![0, 1, 2, 3]).is_err());
    }

    #[test]
    fn always_first_method() {
        let mut m = RankMatrix::new(vec!["A".into(), "B".into(), "C".into(), "D".into()]);
        for s in 0..10 {
            m.push("j", &format!("s{s}"), vec![1, 3, 2, 4]).unwrap();
        }
        assert_eq!(average_ranks(&m).unwrap().means[0], 1.0);
    }

    #[test]
    fn push_map_by_name() {
        let mut m = RankMatrix::new(vec!["A".into(), "B".into()]);
        let ranks: BTreeMap<String, u32> = [("B".to_string(), 1), ("A".to_string(), 2)].into();
        m.push_map("j", "s", &ranks).unwrap();
        assert_eq!(m.rows[0].ranks, vec![2, 1]);
        let wrong: BTreeMap<String, u32> = [("B".to_string(), 1), ("Z".to_string(), 2)].into();
        assert!(m.push_map("j", "s2", &wrong).is_err());
    }

    #[test]
    fn sweep_structure() {
        let items: Vec<_> = (0..4)
            .map(|i| NewsItem::new(format!("i{i}"), "x", "c").with_label(if i % 2 == 0 { Label::Falsified } else { Label::Pristine }))
            .collect();
        let runner = |item: &NewsItem, cfg: &PipelineConfig| {
            Ok(Verdict { item_id: item.id.clone(), c_ooc: 1, explanation: "x".into(), trace: vec![], config_used: *cfg })
        };
        let cfg = PipelineConfig::full();
        let out = ablation_sweep(&items, &[cfg, cfg], runner).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].report.display().0, "50.0");
        assert!(ablation_sweep(&items, &[], runner).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn weighted_mean_identity(outcomes in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let preds: Vec<_> = outcomes.iter().enumerate()
                .map(|(i, &(f, ok))| pred(i, if f { Label::Falsified } else { Label::Pristine }, ok, Some(Category::TextText)))
                .collect();
            let r = accuracy_report(&preds).unwrap();
            let n = r.total as f64;
            let lhs = r.acc_all * n;
            let rhs = r.acc_falsified.unwrap_or(0.0) * r.falsified_total() as f64
                + r.acc_pristine.unwrap_or(0.0) * r.pristine_total() as f64;
            prop_assert!((lhs - rhs).abs() < 1e-9);
            prop_assert_eq!(r.falsified_total() + r.pristine_total(), r.total);
            let d = error_distribution(&preds).unwrap();
            prop_assert_eq!(d.total_errors, r.total - r.correct);
            prop_assert_eq!(d.rows.iter().map(|x| x.count).sum::<u64>(), d.total_errors);
        }

        #[test]
        fn rank_means_sum(rows in prop::collection::vec(Just(vec![1u32, 2, 3, 4]).prop_shuffle(), 1..60)) {
            let mut m = RankMatrix::new(vec!["a".into(), "b".into(), "c".into(), "d".into()]);
            for (i, r) in rows.into_iter().enumerate() {
                m.push("j", &format!("s{i}"), r).unwrap();
            }
            let means = average_ranks(&m).unwrap();
            prop_assert!(means.sum_is_exact());
            prop_assert!(means.means.iter().all(|&x| (1.0..=4.0).contains(&x)));
            prop_assert!((means.means.iter().sum::<f64>() - 10.0).abs() < 1e-12);
        }
    }
}
