//! Procedural IQ-style evaluation items (symbolic mapping, rule
//! understanding, pattern mining, anti-interference) and their scoring.
//!
//! Prompt layouts are versioned by [`FORMAT_VERSION`].

mod families;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use families::{
    gen_anti_interference, gen_pattern_mining, gen_rule_understanding, gen_symbolic_mapping, InterferenceKind, PatternKind,
    RuleKind, DISTRACTORS,
};

pub const FORMAT_VERSION: &str = "v1";
pub const DEFAULT_INSTANCES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{outputs} outputs for {instances} instances")]
    CountMismatch { instances: usize, outputs: usize },
    #[error("unknown task family `{0}`")]
    UnknownFamily(String),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SymbolicMapping,
    Counting,
    ReplaceLowercase,
    ReplaceWord,
    HeadTail,
    FullRepeating,
    HeadSlicing,
    MultipleKeyRetrieval,
    SingleSupportingFact,
    TwoSupportingFacts,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::SymbolicMapping,
        Family::Counting,
        Family::ReplaceLowercase,
        Family::ReplaceWord,
        Family::HeadTail,
        Family::FullRepeating,
        Family::HeadSlicing,
        Family::MultipleKeyRetrieval,
        Family::SingleSupportingFact,
        Family::TwoSupportingFacts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::SymbolicMapping => "symbolic_mapping",
            Family::Counting => "counting",
            Family::ReplaceLowercase => "replace_lowercase",
            Family::ReplaceWord => "replace_word",
            Family::HeadTail => "head_tail",
            Family::FullRepeating => "full_repeating",
            Family::HeadSlicing => "head_slicing",
            Family::MultipleKeyRetrieval => "multiple_key_retrieval",
            Family::SingleSupportingFact => "single_supporting_fact",
            Family::TwoSupportingFacts => "two_supporting_facts",
        }
    }

    pub fn default_shots(self) -> usize {
        match self {
            Family::SymbolicMapping => 2,
            Family::Counting => 0,
            Family::ReplaceLowercase | Family::ReplaceWord => 4,
            Family::HeadTail | Family::FullRepeating | Family::HeadSlicing => 5,
            Family::MultipleKeyRetrieval | Family::SingleSupportingFact | Family::TwoSupportingFacts => 0,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL.iter().copied().find(|f| f.as_str() == s).ok_or_else(|| EvalError::UnknownFamily(s.to_string()))
    }
}

/// One evaluation item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub family: Family,
    pub shots: usize,
    pub prompt: String,
    pub gold: String,
    pub seed: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// `n` instances of `family`; `shots` defaults per family. Instance `i`
/// is generated from `seed + i` alone.
pub fn generate(family: Family, n: usize, shots: Option<usize>, seed: u64) -> Result<Vec<TaskInstance>, EvalError> {
    let shots = shots.unwrap_or(family.default_shots());
    match family {
        Family::SymbolicMapping => gen_symbolic_mapping(n, shots, seed),
        Family::Counting => gen_rule_understanding(RuleKind::Counting, n, Some(shots), seed),
        Family::ReplaceLowercase => gen_rule_understanding(RuleKind::ReplaceLowercase, n, Some(shots), seed),
        Family::ReplaceWord => gen_rule_understanding(RuleKind::ReplaceWord, n, Some(shots), seed),
        Family::HeadTail => gen_pattern_mining(PatternKind::HeadTail, n, Some(shots), seed),
        Family::FullRepeating => gen_pattern_mining(PatternKind::FullRepeating, n, Some(shots), seed),
        Family::HeadSlicing => gen_pattern_mining(PatternKind::HeadSlicing, n, Some(shots), seed),
        Family::MultipleKeyRetrieval => gen_anti_interference(InterferenceKind::MultipleKeyRetrieval, n, shots, seed),
        Family::SingleSupportingFact => gen_anti_interference(InterferenceKind::SingleSupportingFact, n, shots, seed),
        Family::TwoSupportingFacts => gen_anti_interference(InterferenceKind::TwoSupportingFacts, n, shots, seed),
    }
}

pub fn to_jsonl(instances: &[TaskInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instances serialise"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<TaskInstance>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| EvalError::Parse { line: i + 1, source }))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    #[default]
    Exact,
    /// Case-folded, whitespace collapsed and trimmed.
    Normalized,
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_family: BTreeMap<Family, FamilyScore>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub verdicts: Vec<bool>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,correct,total,accuracy\n");
        for (f, sc) in &self.per_family {
            s.push_str(&format!("{f},{},{},{:.4}\n", sc.correct, sc.total, sc.accuracy));
        }
        s.push_str(&format!("overall,{},{},{:.4}\n", self.correct, self.total, self.accuracy));
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<24} {:>8} {:>8} {:>9}\n", "family", "correct", "total", "accuracy");
        for (f, sc) in &self.per_family {
            s.push_str(&format!("{:<24} {:>8} {:>8} {:>9.4}\n", f.as_str(), sc.correct, sc.total, sc.accuracy));
        }
        s.push_str(&format!("{:<24} {:>8} {:>8} {:>9.4}\n", "overall", self.correct, self.total, self.accuracy));
        s
    }
}

pub fn score(instances: &[TaskInstance], outputs: &[String], matching: Matching) -> Result<EvalReport, EvalError> {
    if instances.len() != outputs.len() {
        return Err(EvalError::CountMismatch { instances: instances.len(), outputs: outputs.len() });
    }
    let mut per: BTreeMap<Family, (usize, usize)> = BTreeMap::new();
    let mut verdicts = Vec::with_capacity(instances.len());
    for (inst, out) in instances.iter().zip(outputs) {
        let ok = match matching {
            Matching::Exact => *out == inst.gold,
            Matching::Normalized => normalize(out) == normalize(&inst.gold),
        };
        let e = per.entry(inst.family).or_default();
        e.0 += ok as usize;
        e.1 += 1;
        verdicts.push(ok);
    }
    let correct = verdicts.iter().filter(|&&v| v).count();
    let total = verdicts.len();
    let ratio = |c: usize, t: usize| if t == 0 { 0.0 } else { c as f64 / t as f64 };
    Ok(EvalReport {
        per_family: per
            .into_iter()
            .map(|(f, (c, t))| (f, FamilyScore { correct: c, total: t, accuracy: ratio(c, t) }))
            .collect(),
        correct,
        total,
        accuracy: ratio(correct, total),
        verdicts,
    })
}

#[cfg(test)]
mod oracle;
#[cfg(test)]
mod tests;
