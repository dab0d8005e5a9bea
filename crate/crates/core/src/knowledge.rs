//! Domain schema shared by every other module: evidences, pathologies,
//! the naive-Bayes conditional tables, patients, and their file formats.
//!
//! A [`KnowledgeBase`] is validated once at construction and is immutable
//! afterwards. Files use the JSON layout below; ids are dense 0-based indices.
//!
//! ```text
//! {"pathologies":[{"id":0,"name":"..","severe":false,"prior":0.5}, ..],
//!  "evidences":[{"id":0,"name":"..","kind":"binary","question":".."},
//!               {"id":1,"name":"..","kind":"numeric","max_value":10,"question":".."},
//!               {"id":2,"name":"..","kind":"categorical","options":["a","b"],"question":".."},
//!               {"id":3,"name":"..","kind":"multi_choice","options":["x","y"],"question":".."}],
//!  "conditionals":{"<pathology id>":{"<evidence id>":[..]}}}
//! ```
//!
//! Binary conditionals are `[p(false), p(true)]`, numeric ones cover `0..=max_value`,
//! categorical ones cover the option list, and multi-choice entries are one
//! independent Bernoulli parameter per option.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Largest tolerated deviation of a distribution's total mass from 1.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Probability threshold below or at which a pathology leaves a differential.
pub const DIFFERENTIAL_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("normalization error: {what} sums to {sum}")]
    Normalization { what: String, sum: f64 },
    #[error("unknown evidence id {0}")]
    UnknownEvidence(i64),
    #[error("unknown pathology id {0}")]
    UnknownPathology(i64),
    #[error("value out of domain for evidence {evidence}: {detail}")]
    ValueOutOfDomain { evidence: usize, detail: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<KnowledgeError>,
    },
}

impl KnowledgeError {
    /// Strips any line-number wrapping.
    pub fn innermost(&self) -> &KnowledgeError {
        match self {
            KnowledgeError::AtLine { source, .. } => source.innermost(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, KnowledgeError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvidenceKind {
    Binary,
    /// Integer answer in `0..=max_value`; 0 means the evidence is absent.
    NumericCategorical { max_value: u32 },
    /// Exactly one option; option 0 is the default "not experienced" answer.
    SymbolicCategorical { options: Vec<String> },
    /// Any subset of the options; the empty set means not experienced.
    MultiChoice { options: Vec<String> },
}

impl EvidenceKind {
    /// Number of values the conditional table for this kind covers.
    pub fn table_len(&self) -> usize {
        match self {
            EvidenceKind::Binary => 2,
            EvidenceKind::NumericCategorical { max_value } => *max_value as usize + 1,
            EvidenceKind::SymbolicCategorical { options } => options.len(),
            EvidenceKind::MultiChoice { options } => options.len(),
        }
    }

    /// Width of this evidence's slot block in the state encoding.
    pub fn encoding_width(&self) -> usize {
        match self {
            EvidenceKind::Binary | EvidenceKind::NumericCategorical { .. } => 1,
            EvidenceKind::SymbolicCategorical { options } | EvidenceKind::MultiChoice { options } => {
                options.len()
            }
        }
    }

    pub fn is_multi_choice(&self) -> bool {
        matches!(self, EvidenceKind::MultiChoice { .. })
    }

    fn tag(&self) -> &'static str {
        match self {
            EvidenceKind::Binary => "binary",
            EvidenceKind::NumericCategorical { .. } => "numeric",
            EvidenceKind::SymbolicCategorical { .. } => "categorical",
            EvidenceKind::MultiChoice { .. } => "multi_choice",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceSpec {
    pub id: usize,
    pub name: String,
    pub kind: EvidenceKind,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathologySpec {
    pub id: usize,
    pub name: String,
    pub severe: bool,
}

/// A patient's answer to one evidence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EvidenceValue {
    Binary(bool),
    Numeric(u32),
    Symbolic(usize),
    Multi(BTreeSet<usize>),
}

impl EvidenceValue {
    /// Whether the answer counts as an experienced (positive) evidence.
    pub fn is_experienced(&self) -> bool {
        match self {
            EvidenceValue::Binary(b) => *b,
            EvidenceValue::Numeric(v) => *v > 0,
            EvidenceValue::Symbolic(i) => *i != 0,
            EvidenceValue::Multi(set) => !set.is_empty(),
        }
    }

    /// The "not experienced" answer for an evidence kind.
    pub fn default_for(kind: &EvidenceKind) -> Self {
        match kind {
            EvidenceKind::Binary => EvidenceValue::Binary(false),
            EvidenceKind::NumericCategorical { .. } => EvidenceValue::Numeric(0),
            EvidenceKind::SymbolicCategorical { .. } => EvidenceValue::Symbolic(0),
            EvidenceKind::MultiChoice { .. } => EvidenceValue::Multi(BTreeSet::new()),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            EvidenceValue::Binary(b) => Value::Bool(*b),
            EvidenceValue::Numeric(v) => Value::from(*v),
            EvidenceValue::Symbolic(i) => Value::from(*i),
            EvidenceValue::Multi(set) => Value::from(set.iter().copied().collect::<Vec<_>>()),
        }
    }
}

/// Disease-conditional distribution of one evidence.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditional {
    /// Distribution over the evidence's value domain.
    Table(Vec<f64>),
    /// One independent Bernoulli parameter per multi-choice option.
    Bernoulli(Vec<f64>),
}

impl Conditional {
    fn values(&self) -> &[f64] {
        match self {
            Conditional::Table(v) | Conditional::Bernoulli(v) => v,
        }
    }
}

/// Set of pathology ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PathologySet(pub BTreeSet<usize>);

impl PathologySet {
    pub fn contains(&self, id: usize) -> bool {
        self.0.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn intersection(&self, other: &PathologySet) -> PathologySet {
        PathologySet(self.0.intersection(&other.0).copied().collect())
    }
}

impl FromIterator<usize> for PathologySet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        PathologySet(iter.into_iter().collect())
    }
}

/// Pathologies whose mass is strictly above `tau`.
pub fn threshold_differential(dist: &[f64], tau: f64) -> PathologySet {
    dist.iter()
        .enumerate()
        .filter(|(_, &p)| p > tau)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    evidences: Vec<EvidenceSpec>,
    pathologies: Vec<PathologySpec>,
    prior: Vec<f64>,
    /// Indexed `[pathology][evidence]`.
    conditionals: Vec<Vec<Conditional>>,
}

fn check_mass(what: impl FnOnce() -> String, values: &[f64]) -> Result<()> {
    if values.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(KnowledgeError::Schema(format!(
            "{} has a negative or non-finite entry",
            what()
        )));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(KnowledgeError::Normalization { what: what(), sum });
    }
    Ok(())
}

impl KnowledgeBase {
    /// Builds and validates a knowledge base.
    pub fn new(
        evidences: Vec<EvidenceSpec>,
        pathologies: Vec<PathologySpec>,
        prior: Vec<f64>,
        conditionals: Vec<Vec<Conditional>>,
    ) -> Result<Self> {
        if evidences.is_empty() {
            return Err(KnowledgeError::Schema("no evidences".into()));
        }
        if pathologies.is_empty() {
            return Err(KnowledgeError::Schema("no pathologies".into()));
        }
        for (i, e) in evidences.iter().enumerate() {
            if e.id != i {
                return Err(KnowledgeError::Schema(format!(
                    "evidence ids must be dense: position {i} has id {}",
                    e.id
                )));
            }
            match &e.kind {
                EvidenceKind::Binary => {}
                EvidenceKind::NumericCategorical { max_value } => {
                    if *max_value < 1 {
                        return Err(KnowledgeError::Schema(format!(
                            "evidence {i}: max_value must be >= 1"
                        )));
                    }
                }
                EvidenceKind::SymbolicCategorical { options }
                | EvidenceKind::MultiChoice { options } => {
                    if options.is_empty() {
                        return Err(KnowledgeError::Schema(format!("evidence {i}: empty options")));
                    }
                    let unique: BTreeSet<&String> = options.iter().collect();
                    if unique.len() != options.len() {
                        return Err(KnowledgeError::Schema(format!(
                            "evidence {i}: duplicate options"
                        )));
                    }
                }
            }
        }
        for (i, p) in pathologies.iter().enumerate() {
            if p.id != i {
                return Err(KnowledgeError::Schema(format!(
                    "pathology ids must be dense: position {i} has id {}",
                    p.id
                )));
            }
        }
        if prior.len() != pathologies.len() {
            return Err(KnowledgeError::Schema("prior length differs from pathology count".into()));
        }
        check_mass(|| "prior".to_string(), &prior)?;
        if conditionals.len() != pathologies.len() {
            return Err(KnowledgeError::Schema("missing conditionals for some pathology".into()));
        }
        for (d, row) in conditionals.iter().enumerate() {
            if row.len() != evidences.len() {
                return Err(KnowledgeError::Schema(format!(
                    "pathology {d}: conditionals must cover every evidence"
                )));
            }
            for (e, cond) in row.iter().enumerate() {
                let kind = &evidences[e].kind;
                let values = cond.values();
                if values.len() != kind.table_len() {
                    return Err(KnowledgeError::Schema(format!(
                        "conditional ({d}, {e}) has {} entries, expected {}",
                        values.len(),
                        kind.table_len()
                    )));
                }
                match (kind.is_multi_choice(), cond) {
                    (true, Conditional::Bernoulli(b)) => {
                        if b.iter().any(|p| !p.is_finite() || !(0.0..=1.0).contains(p)) {
                            return Err(KnowledgeError::Schema(format!(
                                "conditional ({d}, {e}): Bernoulli parameter outside [0, 1]"
                            )));
                        }
                    }
                    (false, Conditional::Table(t)) => {
                        check_mass(|| format!("conditional ({d}, {e})"), t)?;
                    }
                    _ => {
                        return Err(KnowledgeError::Schema(format!(
                            "conditional ({d}, {e}) does not match evidence kind"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            evidences,
            pathologies,
            prior,
            conditionals,
        })
    }

    pub fn num_pathologies(&self) -> usize {
        self.pathologies.len()
    }

    pub fn num_evidences(&self) -> usize {
        self.evidences.len()
    }

    pub fn evidences(&self) -> &[EvidenceSpec] {
        &self.evidences
    }

    pub fn evidence(&self, id: usize) -> &EvidenceSpec {
        &self.evidences[id]
    }

    pub fn pathologies(&self) -> &[PathologySpec] {
        &self.pathologies
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn conditional(&self, pathology: usize, evidence: usize) -> &Conditional {
        &self.conditionals[pathology][evidence]
    }

    pub fn severe_set(&self) -> PathologySet {
        self.pathologies
            .iter()
            .filter(|p| p.severe)
            .map(|p| p.id)
            .collect()
    }

    /// `p(evidence = value | pathology)`; the value must already be in domain.
    pub fn likelihood(&self, pathology: usize, evidence: usize, value: &EvidenceValue) -> f64 {
        match (&self.conditionals[pathology][evidence], value) {
            (Conditional::Table(t), EvidenceValue::Binary(b)) => t[usize::from(*b)],
            (Conditional::Table(t), EvidenceValue::Numeric(v)) => t[*v as usize],
            (Conditional::Table(t), EvidenceValue::Symbolic(i)) => t[*i],
            (Conditional::Bernoulli(b), EvidenceValue::Multi(set)) => b
                .iter()
                .enumerate()
                .map(|(j, &p)| if set.contains(&j) { p } else { 1.0 - p })
                .product(),
            (cond, value) => panic!("value {value:?} does not match conditional {cond:?}"),
        }
    }

    /// Bernoulli parameter of one multi-choice option under `pathology`.
    pub fn option_probability(&self, pathology: usize, evidence: usize, option: usize) -> f64 {
        match &self.conditionals[pathology][evidence] {
            Conditional::Bernoulli(b) => b[option],
            Conditional::Table(_) => panic!("evidence {evidence} is not multi-choice"),
        }
    }

    /// Checks that `value` lies in the domain of evidence `evidence`.
    pub fn check_value(&self, evidence: usize, value: &EvidenceValue) -> Result<()> {
        let spec = self
            .evidences
            .get(evidence)
            .ok_or(KnowledgeError::UnknownEvidence(evidence as i64))?;
        let bad = |detail: String| KnowledgeError::ValueOutOfDomain { evidence, detail };
        match (&spec.kind, value) {
            (EvidenceKind::Binary, EvidenceValue::Binary(_)) => Ok(()),
            (EvidenceKind::NumericCategorical { max_value }, EvidenceValue::Numeric(v)) => {
                if v <= max_value {
                    Ok(())
                } else {
                    Err(bad(format!("{v} exceeds max_value {max_value}")))
                }
            }
            (EvidenceKind::SymbolicCategorical { options }, EvidenceValue::Symbolic(i)) => {
                if *i < options.len() {
                    Ok(())
                } else {
                    Err(bad(format!("option {i} of {}", options.len())))
                }
            }
            (EvidenceKind::MultiChoice { options }, EvidenceValue::Multi(set)) => {
                match set.iter().find(|&&j| j >= options.len()) {
                    Some(j) => Err(bad(format!("option {j} of {}", options.len()))),
                    None => Ok(()),
                }
            }
            (kind, value) => Err(bad(format!("{value:?} is not a {} answer", kind.tag()))),
        }
    }

    /// Parses a JSON answer according to the evidence kind.
    pub fn parse_value(&self, evidence: usize, raw: &Value) -> Result<EvidenceValue> {
        let spec = self
            .evidences
            .get(evidence)
            .ok_or(KnowledgeError::UnknownEvidence(evidence as i64))?;
        let bad = |detail: String| KnowledgeError::ValueOutOfDomain { evidence, detail };
        let value = match &spec.kind {
            EvidenceKind::Binary => EvidenceValue::Binary(
                raw.as_bool()
                    .ok_or_else(|| bad(format!("expected boolean, got {raw}")))?,
            ),
            EvidenceKind::NumericCategorical { .. } => EvidenceValue::Numeric(
                raw.as_u64()
                    .and_then(|v| u32::try_from(v).ok())
                    .ok_or_else(|| bad(format!("expected non-negative integer, got {raw}")))?,
            ),
            EvidenceKind::SymbolicCategorical { .. } => EvidenceValue::Symbolic(
                raw.as_u64()
                    .ok_or_else(|| bad(format!("expected option index, got {raw}")))?
                    as usize,
            ),
            EvidenceKind::MultiChoice { .. } => {
                let items = raw
                    .as_array()
                    .ok_or_else(|| bad(format!("expected list of option indices, got {raw}")))?;
                let mut set = BTreeSet::new();
                for item in items {
                    let j = item
                        .as_u64()
                        .ok_or_else(|| bad(format!("expected option index, got {item}")))?;
                    set.insert(j as usize);
                }
                EvidenceValue::Multi(set)
            }
        };
        self.check_value(evidence, &value)?;
        Ok(value)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: KbFile =
            serde_json::from_str(text).map_err(|e| KnowledgeError::Schema(e.to_string()))?;
        file.into_kb()
    }

    /// Canonical serialization; `from_json_str(to_json_string(kb)) == kb`.
    pub fn to_json_string(&self) -> String {
        let file = KbFile::from_kb(self);
        let mut text = serde_json::to_string_pretty(&file).expect("knowledge base serializes");
        text.push('\n');
        text
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathologyFile {
    id: usize,
    name: String,
    severe: bool,
    prior: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvidenceFile {
    id: usize,
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_value: Option<u32>,
    #[serde(default)]
    question: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KbFile {
    pathologies: Vec<PathologyFile>,
    evidences: Vec<EvidenceFile>,
    conditionals: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
}

fn parse_id(raw: &str, what: &str) -> Result<usize> {
    raw.parse::<usize>()
        .map_err(|_| KnowledgeError::Schema(format!("{what} key {raw:?} is not an integer id")))
}

impl KbFile {
    fn into_kb(self) -> Result<KnowledgeBase> {
        let mut pathologies = Vec::with_capacity(self.pathologies.len());
        let mut prior = Vec::with_capacity(self.pathologies.len());
        for p in self.pathologies {
            pathologies.push(PathologySpec {
                id: p.id,
                name: p.name,
                severe: p.severe,
            });
            prior.push(p.prior);
        }
        let mut evidences = Vec::with_capacity(self.evidences.len());
        for e in self.evidences {
            let kind = match (e.kind.as_str(), e.options, e.max_value) {
                ("binary", None, None) => EvidenceKind::Binary,
                ("numeric", None, Some(max_value)) => EvidenceKind::NumericCategorical { max_value },
                ("categorical", Some(options), None) => EvidenceKind::SymbolicCategorical { options },
                ("multi_choice", Some(options), None) => EvidenceKind::MultiChoice { options },
                (kind, _, _) => {
                    return Err(KnowledgeError::Schema(format!(
                        "evidence {}: kind {kind:?} with inconsistent options/max_value",
                        e.id
                    )))
                }
            };
            evidences.push(EvidenceSpec {
                id: e.id,
                name: e.name,
                kind,
                question: e.question,
            });
        }
        let d_count = pathologies.len();
        let e_count = evidences.len();
        let mut slots: Vec<Vec<Option<Conditional>>> = vec![vec![None; e_count]; d_count];
        for (pkey, row) in self.conditionals {
            let d = parse_id(&pkey, "pathology")?;
            if d >= d_count {
                return Err(KnowledgeError::UnknownPathology(d as i64));
            }
            for (ekey, values) in row {
                let e = parse_id(&ekey, "evidence")?;
                if e >= e_count {
                    return Err(KnowledgeError::UnknownEvidence(e as i64));
                }
                slots[d][e] = Some(if evidences[e].kind.is_multi_choice() {
                    Conditional::Bernoulli(values)
                } else {
                    Conditional::Table(values)
                });
            }
        }
        let mut conditionals = Vec::with_capacity(d_count);
        for (d, row) in slots.into_iter().enumerate() {
            let mut out = Vec::with_capacity(e_count);
            for (e, slot) in row.into_iter().enumerate() {
                out.push(slot.ok_or_else(|| {
                    KnowledgeError::Schema(format!("missing conditional for ({d}, {e})"))
                })?);
            }
            conditionals.push(out);
        }
        KnowledgeBase::new(evidences, pathologies, prior, conditionals)
    }

    fn from_kb(kb: &KnowledgeBase) -> Self {
        let pathologies = kb
            .pathologies
            .iter()
            .zip(&kb.prior)
            .map(|(p, &prior)| PathologyFile {
                id: p.id,
                name: p.name.clone(),
                severe: p.severe,
                prior,
            })
            .collect();
        let evidences = kb
            .evidences
            .iter()
            .map(|e| {
                let (options, max_value) = match &e.kind {
                    EvidenceKind::Binary => (None, None),
                    EvidenceKind::NumericCategorical { max_value } => (None, Some(*max_value)),
                    EvidenceKind::SymbolicCategorical { options }
                    | EvidenceKind::MultiChoice { options } => (Some(options.clone()), None),
                };
                EvidenceFile {
                    id: e.id,
                    name: e.name.clone(),
                    kind: e.kind.tag().to_string(),
                    options,
                    max_value,
                    question: e.question.clone(),
                }
            })
            .collect();
        let conditionals = kb
            .conditionals
            .iter()
            .enumerate()
            .map(|(d, row)| {
                let inner = row
                    .iter()
                    .enumerate()
                    .map(|(e, c)| (e.to_string(), c.values().to_vec()))
                    .collect();
                (d.to_string(), inner)
            })
            .collect();
        KbFile {
            pathologies,
            evidences,
            conditionals,
        }
    }
}

pub fn load_knowledge_base(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    KnowledgeBase::from_json_str(&text)
}

pub fn save_knowledge_base(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, kb.to_json_string()).map_err(|source| KnowledgeError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub age: u32,
    pub sex: Sex,
    pub chief_complaint: usize,
    /// Dense answer vector, one entry per evidence.
    pub assignment: Vec<EvidenceValue>,
    pub gt_pathology: usize,
    /// Ground-truth differential, dense over all pathologies.
    pub gt_differential: Vec<f64>,
}

impl PatientRecord {
    /// Ids of the evidences this patient experiences.
    pub fn experienced(&self) -> BTreeSet<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_experienced())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn answer(&self, evidence: usize) -> &EvidenceValue {
        &self.assignment[evidence]
    }

    pub fn validate(&self, kb: &KnowledgeBase) -> Result<()> {
        if self.assignment.len() != kb.num_evidences() {
            return Err(KnowledgeError::Schema(format!(
                "assignment covers {} evidences, expected {}",
                self.assignment.len(),
                kb.num_evidences()
            )));
        }
        for (e, v) in self.assignment.iter().enumerate() {
            kb.check_value(e, v)?;
        }
        if self.chief_complaint >= kb.num_evidences() {
            return Err(KnowledgeError::UnknownEvidence(self.chief_complaint as i64));
        }
        if !self.assignment[self.chief_complaint].is_experienced() {
            return Err(KnowledgeError::ValueOutOfDomain {
                evidence: self.chief_complaint,
                detail: "chief complaint is not experienced".into(),
            });
        }
        if self.gt_pathology >= kb.num_pathologies() {
            return Err(KnowledgeError::UnknownPathology(self.gt_pathology as i64));
        }
        if self.gt_differential.len() != kb.num_pathologies() {
            return Err(KnowledgeError::Schema(format!(
                "gt_differential has length {}, expected {}",
                self.gt_differential.len(),
                kb.num_pathologies()
            )));
        }
        check_mass(|| "gt_differential".to_string(), &self.gt_differential)?;
        if self.gt_differential[self.gt_pathology] <= 0.0 {
            return Err(KnowledgeError::Schema(
                "gt_pathology has no mass in gt_differential".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_line(line: &str, kb: &KnowledgeBase) -> Result<Self> {
        let raw: PatientFile =
            serde_json::from_str(line).map_err(|e| KnowledgeError::Schema(e.to_string()))?;
        let mut assignment: Vec<EvidenceValue> = kb
            .evidences
            .iter()
            .map(|e| EvidenceValue::default_for(&e.kind))
            .collect();
        for (key, value) in &raw.evidences {
            let id: i64 = key
                .parse()
                .map_err(|_| KnowledgeError::Schema(format!("evidence key {key:?} is not an id")))?;
            if id < 0 || id as usize >= kb.num_evidences() {
                return Err(KnowledgeError::UnknownEvidence(id));
            }
            assignment[id as usize] = kb.parse_value(id as usize, value)?;
        }
        if raw.chief_complaint < 0 || raw.chief_complaint as usize >= kb.num_evidences() {
            return Err(KnowledgeError::UnknownEvidence(raw.chief_complaint));
        }
        if raw.gt_pathology < 0 || raw.gt_pathology as usize >= kb.num_pathologies() {
            return Err(KnowledgeError::UnknownPathology(raw.gt_pathology));
        }
        let record = PatientRecord {
            age: raw.age,
            sex: raw.sex,
            chief_complaint: raw.chief_complaint as usize,
            assignment,
            gt_pathology: raw.gt_pathology as usize,
            gt_differential: raw.gt_differential,
        };
        record.validate(kb)?;
        Ok(record)
    }

    /// One canonical JSONL line (without the trailing newline).
    pub fn to_json_line(&self) -> String {
        let evidences = self
            .assignment
            .iter()
            .enumerate()
            .map(|(e, v)| (e.to_string(), v.to_json()))
            .collect();
        let file = PatientFile {
            age: self.age,
            sex: self.sex,
            chief_complaint: self.chief_complaint as i64,
            evidences,
            gt_pathology: self.gt_pathology as i64,
            gt_differential: self.gt_differential.clone(),
        };
        serde_json::to_string(&file).expect("patient serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientFile {
    age: u32,
    sex: Sex,
    chief_complaint: i64,
    evidences: BTreeMap<String, Value>,
    gt_pathology: i64,
    gt_differential: Vec<f64>,
}

/// Loads a JSONL patient file; blank lines are skipped.
pub fn load_patients(path: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<Vec<PatientRecord>> {
    let path = path.as_ref();
    let io_err = |source| KnowledgeError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut patients = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = PatientRecord::from_json_line(&line, kb).map_err(|e| KnowledgeError::AtLine {
            line: i + 1,
            source: Box::new(e),
        })?;
        patients.push(record);
    }
    Ok(patients)
}

pub fn save_patients(patients: &[PatientRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| KnowledgeError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for p in patients {
        writeln!(out, "{}", p.to_json_line()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
