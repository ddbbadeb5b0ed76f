//! Domain similarity (sim-E over utterances, sim-C over class prompts) and
//! its correlation with cross-domain transfer scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::DomainOntology;
use crate::embedding::{l2_normalize, SentenceEncoder};
use crate::instruction::question_for_intent;
use crate::{Error, Result};

/// Mean cosine similarity over the full cross product `a x b`.
///
/// Rows are normalized first; the mean of all pairwise dot products of unit
/// vectors equals the dot product of the two mean vectors, so the exact
/// all-pairs value costs `O((|a| + |b|) d)`.
pub fn mean_pairwise_cosine(a: &[Vec<f32>], b: &[Vec<f32>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("similarity needs two non-empty sets"));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::invalid("embeddings differ in dimensionality"));
    }
    let centroid = |vs: &[Vec<f32>]| {
        let mut sum = vec![0f64; dim];
        for v in vs {
            let mut unit = v.clone();
            l2_normalize(&mut unit);
            for (s, x) in sum.iter_mut().zip(&unit) {
                *s += *x as f64;
            }
        }
        sum.iter_mut().for_each(|s| *s /= vs.len() as f64);
        sum
    };
    let (ca, cb) = (centroid(a), centroid(b));
    let value: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
    Ok(value.clamp(-1.0, 1.0))
}

/// Example similarity between two domains' utterances.
pub fn sim_e(encoder: &dyn SentenceEncoder, utts_a: &[String], utts_b: &[String]) -> Result<f64> {
    similarity(encoder, utts_a, utts_b)
}

/// Class similarity between two domains' class prompts.
pub fn sim_c(encoder: &dyn SentenceEncoder, prompts_a: &[String], prompts_b: &[String]) -> Result<f64> {
    similarity(encoder, prompts_a, prompts_b)
}

fn similarity(encoder: &dyn SentenceEncoder, a: &[String], b: &[String]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("similarity needs two non-empty text lists"));
    }
    mean_pairwise_cosine(&encoder.embed(a)?, &encoder.embed(b)?)
}

/// The rendered intent questions of an ontology.
pub fn class_prompts(ontology: &DomainOntology) -> Vec<String> {
    ontology.intents.iter().map(question_for_intent).collect()
}

/// Sample Pearson correlation, computed in two passes.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::UndefinedCorrelation(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Cross-domain scores on the percentage scale; `scores[s][t]` is the score
/// of a model trained on source `s` and evaluated on target `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub domains: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn new(domains: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        let tm = Self { domains, scores };
        tm.validate()?;
        Ok(tm)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.domains.len();
        if self.scores.len() != n || self.scores.iter().any(|row| row.len() != n) {
            return Err(Error::invalid(format!("transfer matrix must be {n}x{n}")));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.domains.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(Error::invalid(format!("domain `{dup}` repeated")));
        }
        if let Some(bad) = self.scores.iter().flatten().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::invalid(format!("score {bad} outside [0, 100]")));
        }
        Ok(())
    }

    pub fn index_of(&self, domain: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d == domain)
            .ok_or_else(|| Error::invalid(format!("domain `{domain}` not in transfer matrix")))
    }

    pub fn get(&self, source: &str, target: &str) -> Result<f64> {
        Ok(self.scores[self.index_of(source)?][self.index_of(target)?])
    }

    /// In-domain scores, in domain order.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.domains.len()).map(|i| self.scores[i][i]).collect()
    }
}

/// Similarity value for each unordered domain pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarities {
    values: BTreeMap<String, BTreeMap<String, f64>>,
}

impl PairSimilarities {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str, value: f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.values
            .entry(lo.to_string())
            .or_default()
            .insert(hi.to_string(), value);
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.values.get(lo).and_then(|row| row.get(hi)).copied()
    }

    /// Computes every off-diagonal pair from per-domain text lists.
    pub fn compute(encoder: &dyn SentenceEncoder, texts: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut embedded = BTreeMap::new();
        for (domain, list) in texts {
            if list.is_empty() {
                return Err(Error::invalid(format!("domain `{domain}` has no texts")));
            }
            embedded.insert(domain.as_str(), encoder.embed(list)?);
        }
        let mut out = Self::new();
        let names: Vec<&str> = embedded.keys().copied().collect();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                out.insert(a, b, mean_pairwise_cosine(&embedded[a], &embedded[b])?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub targets: Vec<String>,
    pub sim_e: Vec<f64>,
    pub sim_c: Vec<f64>,
    pub avg_sim_e: f64,
    pub avg_sim_c: f64,
}

fn target_correlations(tm: &TransferMatrix, sims: &PairSimilarities, kind: &str) -> Result<Vec<f64>> {
    let n = tm.domains.len();
    (0..n)
        .map(|t| {
            let mut xs = Vec::with_capacity(n - 1);
            let mut ys = Vec::with_capacity(n - 1);
            for s in (0..n).filter(|&s| s != t) {
                let (source, target) = (&tm.domains[s], &tm.domains[t]);
                let sim = sims.get(source, target).ok_or_else(|| {
                    Error::invalid(format!("no {kind} value for {source} -> {target}"))
                })?;
                xs.push(tm.scores[s][t]);
                ys.push(sim);
            }
            pearson(&xs, &ys).map_err(|e| match e {
                Error::UndefinedCorrelation(m) => {
                    Error::UndefinedCorrelation(format!("target {}: {m}", tm.domains[t]))
                }
                other => other,
            })
        })
        .collect()
}

/// Per-target Pearson correlation between transfer scores from every other
/// source domain and the corresponding similarities. In-domain cells are
/// left out.
pub fn correlation_report(
    tm: &TransferMatrix,
    sim_e: &PairSimilarities,
    sim_c: &PairSimilarities,
) -> Result<CorrelationReport> {
    tm.validate()?;
    if tm.domains.len() < 3 {
        return Err(Error::invalid("need at least three domains"));
    }
    let e = target_correlations(tm, sim_e, "sim-E")?;
    let c = target_correlations(tm, sim_c, "sim-C")?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(CorrelationReport {
        targets: tm.domains.clone(),
        avg_sim_e: mean(&e),
        avg_sim_c: mean(&c),
        sim_e: e,
        sim_c: c,
    })
}

impl CorrelationReport {
    pub fn get(&self, target: &str) -> Option<(f64, f64)> {
        let i = self.targets.iter().position(|t| t == target)?;
        Some((self.sim_e[i], self.sim_c[i]))
    }
}

/// Text table with one row per (template, similarity kind) and one column
/// per target plus the average.
pub fn render_correlation_table(rows: &[(&str, &CorrelationReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let mut out = String::new();
    let _ = write!(out, "{:<18}", "");
    for target in &first.targets {
        let _ = write!(out, " {:>9}", abbreviate(target));
    }
    let _ = writeln!(out, " {:>9}", "AVG");
    for (label, report) in rows {
        for (kind, values, avg) in [
            ("sim-E", &report.sim_e, report.avg_sim_e),
            ("sim-C", &report.sim_c, report.avg_sim_c),
        ] {
            let _ = write!(out, "{:<18}", format!("{label} {kind}"));
            for v in values {
                let _ = write!(out, " {v:>9.4}");
            }
            let _ = writeln!(out, " {avg:>9.4}");
        }
    }
    out
}

fn abbreviate(domain: &str) -> String {
    domain.chars().take(9).collect()
}
