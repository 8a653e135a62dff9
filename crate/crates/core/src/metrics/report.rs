use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{hits_at_k, ndcg_at_k, Counts, Predictions};
use crate::data::Bucket;
use crate::error::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    All,
    Frequent,
    FewShot,
    ZeroShot,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::All, Scope::Frequent, Scope::FewShot, Scope::ZeroShot];

    pub fn name(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Frequent => "frequent",
            Scope::FewShot => "few-shot",
            Scope::ZeroShot => "zero-shot",
        }
    }

    fn contains(self, bucket: Bucket) -> bool {
        match self {
            Scope::All => true,
            Scope::Frequent => bucket == Bucket::Frequent,
            Scope::FewShot => bucket == Bucket::FewShot,
            Scope::ZeroShot => bucket == Bucket::ZeroShot,
        }
    }
}

/// How bucket scopes treat the ranking. `Restricted` drops labels outside the
/// bucket before cutting at K; `Global` keeps the full ranking and only
/// restricts the gold set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingScope {
    #[default]
    Restricted,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub rp: f64,
    pub ndcg: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeReport {
    pub scope: Scope,
    pub labels: usize,
    /// Documents with a non-empty gold set in this scope.
    pub documents: usize,
    /// Documents left out because their scope gold set is empty.
    pub excluded: usize,
    pub micro_f1: f64,
    pub at_k: Vec<AtK>,
}

impl ScopeReport {
    pub fn at(&self, k: usize) -> Option<&AtK> {
        self.at_k.iter().find(|a| a.k == k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    #[serde(rename = "RP@5")]
    pub rp_at_5: Option<f64>,
    #[serde(rename = "nDCG@5")]
    pub ndcg_at_5: Option<f64>,
    #[serde(rename = "Micro-F1", skip_serializing_if = "Option::is_none", default)]
    pub micro_f1: Option<f64>,
}

/// One results-table row: RP@5 and nDCG@5 per scope, micro-F1 for all labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub all: TableCell,
    pub frequent: TableCell,
    pub few_shot: TableCell,
    pub zero_shot: TableCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub threshold: f64,
    pub ranking: RankingScope,
    pub ks: Vec<usize>,
    pub scopes: Vec<ScopeReport>,
    pub table: SummaryTable,
}

impl EvalReport {
    pub fn scope(&self, scope: Scope) -> Option<&ScopeReport> {
        self.scopes.iter().find(|s| s.scope == scope)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.model {
            let _ = writeln!(out, "model: {m}");
        }
        if let Some(s) = &self.split {
            let _ = writeln!(out, "split: {s}");
        }
        let cell = |v: Option<f64>| v.map_or_else(|| "  -  ".to_string(), |x| format!("{x:.3}"));
        let t = &self.table;
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>7} {:>8}",
            "scope", "RP@5", "nDCG@5", "Micro-F1"
        );
        for (name, c) in [
            ("all", &t.all),
            ("frequent", &t.frequent),
            ("few-shot", &t.few_shot),
            ("zero-shot", &t.zero_shot),
        ] {
            let _ = writeln!(
                out,
                "{name:<10} {:>7} {:>7} {:>8}",
                cell(c.rp_at_5),
                cell(c.ndcg_at_5),
                c.micro_f1.map_or(String::new(), |x| format!("{x:.3}"))
            );
        }
        for s in &self.scopes {
            let _ = writeln!(
                out,
                "\n[{}] labels={} documents={} excluded={} micro-F1={:.4}",
                s.scope.name(),
                s.labels,
                s.documents,
                s.excluded,
                s.micro_f1
            );
            let _ = writeln!(out, "{:>3} {:>7} {:>7} {:>7} {:>7}", "K", "RP", "nDCG", "P", "R");
            for a in &s.at_k {
                let _ = writeln!(
                    out,
                    "{:>3} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                    a.k, a.rp, a.ndcg, a.precision, a.recall
                );
            }
        }
        out
    }
}

/// Metrics for every scope. `buckets` gives each label's bucket; without it
/// only the `all` scope is reported. `gold[n]` must be sorted.
pub fn bucketed_report(
    preds: &Predictions,
    gold: &[Vec<usize>],
    buckets: Option<&[Bucket]>,
    ks: &[usize],
    ranking: RankingScope,
    threshold: f64,
) -> Result<EvalReport> {
    if preds.len() != gold.len() {
        return Err(DataError::Invalid(format!(
            "{} predictions for {} gold documents",
            preds.len(),
            gold.len()
        ))
        .into());
    }
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(DataError::Invalid("K values must be at least 1".into()).into());
    }
    if let Some(b) = buckets {
        let max_label = gold
            .iter()
            .chain(&preds.rankings)
            .chain(&preds.positives)
            .flatten()
            .max();
        if let Some(&m) = max_label {
            if m >= b.len() {
                return Err(DataError::Invalid(format!("label index {m} has no bucket")).into());
            }
        }
    }
    let scopes: Vec<Scope> = if buckets.is_some() { Scope::ALL.to_vec() } else { vec![Scope::All] };
    let mut reports = Vec::new();
    for scope in scopes {
        let in_scope = |l: usize| buckets.is_none_or(|b| scope.contains(b[l]));
        let labels = buckets.map_or_else(
            || {
                gold.iter()
                    .chain(&preds.rankings)
                    .flatten()
                    .max()
                    .map_or(0, |m| m + 1)
            },
            |b| b.iter().filter(|&&x| scope.contains(x)).count(),
        );
        let mut sums = vec![[0.0f64; 4]; ks.len()];
        let mut documents = 0;
        let mut excluded = 0;
        let mut counts = Counts::default();
        for n in 0..gold.len() {
            let g: Vec<usize> = gold[n].iter().copied().filter(|&l| in_scope(l)).collect();
            if g.is_empty() {
                excluded += 1;
                continue;
            }
            documents += 1;
            let ranked: Vec<usize> = match (scope, ranking) {
                (Scope::All, _) | (_, RankingScope::Global) => preds.rankings[n].clone(),
                _ => preds.rankings[n].iter().copied().filter(|&l| in_scope(l)).collect(),
            };
            let pos: Vec<usize> = preds.positives[n].iter().copied().filter(|&l| in_scope(l)).collect();
            counts = counts.add(Counts::of(&g, &pos));
            for (i, &k) in ks.iter().enumerate() {
                let h = hits_at_k(&g, &ranked, k) as f64;
                sums[i][0] += h / k.min(g.len()) as f64;
                sums[i][1] += ndcg_at_k(&g, &ranked, k).unwrap_or(0.0);
                sums[i][2] += h / k as f64;
                sums[i][3] += h / g.len() as f64;
            }
        }
        let d = documents.max(1) as f64;
        let at_k = ks
            .iter()
            .zip(&sums)
            .map(|(&k, s)| AtK {
                k,
                rp: s[0] / d,
                ndcg: s[1] / d,
                precision: s[2] / d,
                recall: s[3] / d,
            })
            .collect();
        reports.push(ScopeReport {
            scope,
            labels,
            documents,
            excluded,
            micro_f1: counts.f1(),
            at_k,
        });
    }
    let cell = |scope: Scope, with_f1: bool| {
        let s = reports.iter().find(|r| r.scope == scope).filter(|r| r.documents > 0);
        let at5 = s.and_then(|r| r.at(5));
        TableCell {
            rp_at_5: at5.map(|a| a.rp),
            ndcg_at_5: at5.map(|a| a.ndcg),
            micro_f1: if with_f1 { s.map(|r| r.micro_f1) } else { None },
        }
    };
    let table = SummaryTable {
        all: cell(Scope::All, true),
        frequent: cell(Scope::Frequent, false),
        few_shot: cell(Scope::FewShot, false),
        zero_shot: cell(Scope::ZeroShot, false),
    };
    Ok(EvalReport {
        model: None,
        split: None,
        threshold,
        ranking,
        ks,
        scopes: reports,
        table,
    })
}
