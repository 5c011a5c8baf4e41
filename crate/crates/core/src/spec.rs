//! Model specifications and their INI-style file format.
//!
//! ```text
//! # comments start with '#' or ';'
//! [model]
//! family   = mixed_mnl          # mnl | mixed_mnl | nb | mixed_nb
//! outcome  = severity           # outcome column in the data
//! outcomes = fatal, injury, noinjury   # severity families only
//! base     = noinjury                  # severity families only
//! period   = year               # frequency families only, optional
//!
//! [term]
//! var      = constant           # column name or `constant`
//! outcomes = fatal, injury      # severity families only; one shared (tied) coefficient
//! dist     = fixed              # fixed | normal | uniform
//! ```
//!
//! Every `[term]` section adds one term, in file order. Unknown sections or
//! keys are rejected.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Mode;
use crate::error::{Error, Result};

pub const CONSTANT: &str = "constant";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Mnl,
    MixedMnl,
    Nb,
    MixedNb,
}

impl Family {
    pub fn mode(self) -> Mode {
        match self {
            Family::Mnl | Family::MixedMnl => Mode::Severity,
            Family::Nb | Family::MixedNb => Mode::Frequency,
        }
    }

    pub fn is_mixed(self) -> bool {
        matches!(self, Family::MixedMnl | Family::MixedNb)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Mnl => "mnl",
            Family::MixedMnl => "mixed_mnl",
            Family::Nb => "nb",
            Family::MixedNb => "mixed_nb",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mnl" => Family::Mnl,
            "mixed_mnl" => Family::MixedMnl,
            "nb" => Family::Nb,
            "mixed_nb" => Family::MixedNb,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefKind {
    Fixed,
    RandomNormal,
    RandomUniform,
}

impl CoefKind {
    pub fn is_random(self) -> bool {
        !matches!(self, CoefKind::Fixed)
    }

    /// Number of packed parameters the term contributes.
    pub fn n_params(self) -> usize {
        if self.is_random() {
            2
        } else {
            1
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoefKind::Fixed => "fixed",
            CoefKind::RandomNormal => "normal",
            CoefKind::RandomUniform => "uniform",
        }
    }
}

/// One variable bound to a set of outcome equations with a shared coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub variable: String,
    /// Outcome labels sharing the coefficient. Empty for count families.
    pub outcomes: Vec<String>,
    pub kind: CoefKind,
}

impl Term {
    pub fn fixed(variable: &str, outcomes: &[&str]) -> Self {
        Term {
            variable: variable.to_string(),
            outcomes: outcomes.iter().map(|s| s.to_string()).collect(),
            kind: CoefKind::Fixed,
        }
    }

    pub fn random(variable: &str, outcomes: &[&str], kind: CoefKind) -> Self {
        Term {
            kind,
            ..Term::fixed(variable, outcomes)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub outcome_column: String,
    /// Ordered outcome labels (severity families).
    pub outcomes: Vec<String>,
    pub base_outcome: Option<String>,
    pub period_column: Option<String>,
    pub terms: Vec<Term>,
}

impl ModelSpec {
    pub fn severity(
        family: Family,
        outcome_column: &str,
        outcomes: &[&str],
        base: &str,
        terms: Vec<Term>,
    ) -> Result<Self> {
        let spec = ModelSpec {
            family,
            outcome_column: outcome_column.to_string(),
            outcomes: outcomes.iter().map(|s| s.to_string()).collect(),
            base_outcome: Some(base.to_string()),
            period_column: None,
            terms,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn frequency(family: Family, outcome_column: &str, terms: Vec<Term>) -> Result<Self> {
        let spec = ModelSpec {
            family,
            outcome_column: outcome_column.to_string(),
            outcomes: Vec::new(),
            base_outcome: None,
            period_column: None,
            terms,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mode(&self) -> Mode {
        self.family.mode()
    }

    pub fn n_params(&self) -> usize {
        let betas: usize = self.terms.iter().map(|t| t.kind.n_params()).sum();
        match self.mode() {
            Mode::Severity => betas,
            Mode::Frequency => betas + 1,
        }
    }

    /// Covariate columns the model reads (excludes `constant`).
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.terms {
            if t.variable != CONSTANT && !out.contains(&t.variable) {
                out.push(t.variable.clone());
            }
        }
        if let Some(p) = &self.period_column {
            if !out.contains(p) {
                out.push(p.clone());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.outcome_column.is_empty() {
            return bad("missing outcome column".into());
        }
        if self.terms.is_empty() {
            return Err(Error::EmptyModel);
        }
        match self.mode() {
            Mode::Severity => {
                if self.outcomes.len() < 2 {
                    return bad("severity models need at least two outcomes".into());
                }
                let distinct: BTreeSet<&String> = self.outcomes.iter().collect();
                if distinct.len() != self.outcomes.len() {
                    return bad("duplicate outcome label".into());
                }
                let base = match &self.base_outcome {
                    Some(b) => b,
                    None => return bad("missing base outcome".into()),
                };
                if !self.outcomes.contains(base) {
                    return bad(format!("base outcome `{base}` is not in the outcome set"));
                }
                if self.period_column.is_some() {
                    return bad("`period` applies to count families only".into());
                }
                for t in &self.terms {
                    if t.outcomes.is_empty() {
                        return bad(format!("term `{}` lists no outcomes", t.variable));
                    }
                    for o in &t.outcomes {
                        if o == base {
                            return bad(format!(
                                "term `{}` references the base outcome `{base}`",
                                t.variable
                            ));
                        }
                        if !self.outcomes.contains(o) {
                            return bad(format!("term `{}`: unknown outcome `{o}`", t.variable));
                        }
                    }
                    let set: BTreeSet<&String> = t.outcomes.iter().collect();
                    if set.len() != t.outcomes.len() {
                        return bad(format!("term `{}` repeats an outcome", t.variable));
                    }
                }
            }
            Mode::Frequency => {
                if !self.outcomes.is_empty() || self.base_outcome.is_some() {
                    return bad("count families take no outcome set or base".into());
                }
                if let Some(t) = self.terms.iter().find(|t| !t.outcomes.is_empty()) {
                    return bad(format!("term `{}`: count families take no outcomes", t.variable));
                }
            }
        }
        for (i, a) in self.terms.iter().enumerate() {
            let sa: BTreeSet<&String> = a.outcomes.iter().collect();
            for b in &self.terms[i + 1..] {
                let sb: BTreeSet<&String> = b.outcomes.iter().collect();
                if a.variable == b.variable && sa == sb {
                    return bad(format!(
                        "duplicate term for `{}` on the same outcome set",
                        a.variable
                    ));
                }
            }
        }
        let n_random = self.terms.iter().filter(|t| t.kind.is_random()).count();
        if self.family.is_mixed() && n_random == 0 {
            return bad(format!("{} needs at least one random term", self.family.as_str()));
        }
        if !self.family.is_mixed() && n_random > 0 {
            return bad(format!(
                "{} takes fixed terms only; use the mixed family",
                self.family.as_str()
            ));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Model,
            Term,
        }
        let err = |line: usize, message: String| Error::SpecParse { line, message };
        let list = |v: &str| -> Vec<String> {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };

        let mut section = Section::None;
        let mut seen_model = false;
        let mut family = None;
        let mut outcome_column = None;
        let mut outcomes = Vec::new();
        let mut base = None;
        let mut period = None;
        // (variable, outcomes, kind, header line)
        let mut terms: Vec<(Option<String>, Vec<String>, CoefKind, usize)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find(['#', ';']) {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(err(line_no, format!("malformed section header `{line}`")));
                }
                match line[1..line.len() - 1].trim() {
                    "model" => {
                        if seen_model {
                            return Err(err(line_no, "repeated [model] section".into()));
                        }
                        seen_model = true;
                        section = Section::Model;
                    }
                    "term" => {
                        section = Section::Term;
                        terms.push((None, Vec::new(), CoefKind::Fixed, line_no));
                    }
                    other => return Err(err(line_no, format!("unknown section [{other}]"))),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match section {
                Section::None => return Err(err(line_no, "key outside of a section".into())),
                Section::Model => match key {
                    "family" => {
                        family = Some(Family::parse(value).ok_or_else(|| {
                            err(line_no, format!("unknown family `{value}`"))
                        })?)
                    }
                    "outcome" => outcome_column = Some(value.to_string()),
                    "outcomes" => outcomes = list(value),
                    "base" => base = Some(value.to_string()),
                    "period" => period = Some(value.to_string()),
                    _ => return Err(err(line_no, format!("unknown key `{key}` in [model]"))),
                },
                Section::Term => {
                    let term = terms.last_mut().expect("term section open");
                    match key {
                        "var" => term.0 = Some(value.to_string()),
                        "outcomes" => term.1 = list(value),
                        "dist" => {
                            term.2 = match value {
                                "fixed" => CoefKind::Fixed,
                                "normal" => CoefKind::RandomNormal,
                                "uniform" => CoefKind::RandomUniform,
                                _ => {
                                    return Err(err(
                                        line_no,
                                        format!("unknown distribution `{value}`"),
                                    ))
                                }
                            }
                        }
                        _ => return Err(err(line_no, format!("unknown key `{key}` in [term]"))),
                    }
                }
            }
        }

        if !seen_model {
            return Err(err(0, "missing [model] section".into()));
        }
        let family = family.ok_or_else(|| err(0, "missing `family`".into()))?;
        let outcome_column = outcome_column.ok_or_else(|| err(0, "missing `outcome`".into()))?;
        let terms = terms
            .into_iter()
            .map(|(var, outs, kind, line)| {
                Ok(Term {
                    variable: var.ok_or_else(|| err(line, "[term] without `var`".into()))?,
                    outcomes: outs,
                    kind,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            family,
            outcome_column,
            outcomes,
            base_outcome: base,
            period_column: period,
            terms,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Render in the file format accepted by [`ModelSpec::parse`].
    pub fn to_ini(&self) -> String {
        let mut s = String::from("[model]\n");
        let _ = writeln!(s, "family = {}", self.family.as_str());
        let _ = writeln!(s, "outcome = {}", self.outcome_column);
        if !self.outcomes.is_empty() {
            let _ = writeln!(s, "outcomes = {}", self.outcomes.join(", "));
        }
        if let Some(b) = &self.base_outcome {
            let _ = writeln!(s, "base = {b}");
        }
        if let Some(p) = &self.period_column {
            let _ = writeln!(s, "period = {p}");
        }
        for t in &self.terms {
            let _ = writeln!(s, "\n[term]\nvar = {}", t.variable);
            if !t.outcomes.is_empty() {
                let _ = writeln!(s, "outcomes = {}", t.outcomes.join(", "));
            }
            let _ = writeln!(s, "dist = {}", t.kind.as_str());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEVERITY: &str = "
# severity model
[model]
family = mixed_mnl
outcome = severity
outcomes = fatal, injury, noinjury
base = noinjury

[term]
var = constant
outcomes = fatal

[term]
var = constant
outcomes = injury

[term]
var = snow      ; tied across both equations
outcomes = fatal, injury

[term]
var = two_vehicle
outcomes = injury
dist = normal
";

    #[test]
    fn parses_and_counts() {
        let spec = ModelSpec::parse(SEVERITY).unwrap();
        assert_eq!(spec.family, Family::MixedMnl);
        assert_eq!(spec.terms.len(), 4);
        assert_eq!(spec.terms[2].outcomes, vec!["fatal", "injury"]);
        assert_eq!(spec.terms[3].kind, CoefKind::RandomNormal);
        assert_eq!(spec.n_params(), 5);
        assert_eq!(spec.variables(), vec!["snow", "two_vehicle"]);
        assert_eq!(ModelSpec::parse(&spec.to_ini()).unwrap(), spec);
    }

    #[test]
    fn rejects_unknown_keys_and_base_terms() {
        let e = ModelSpec::parse(&SEVERITY.replace("dist = normal", "distr = normal"));
        assert!(matches!(e, Err(Error::SpecParse { .. })));
        let e = ModelSpec::parse(&SEVERITY.replace("outcomes = injury\n", "outcomes = noinjury\n"));
        assert!(matches!(e, Err(Error::InvalidSpec(_))));
        let e = ModelSpec::parse(&SEVERITY.replace("base = noinjury", "base = minor"));
        assert!(matches!(e, Err(Error::InvalidSpec(_))));
        let e = ModelSpec::parse(&SEVERITY.replace("[term]\nvar = snow", "[terms]\nvar = snow"));
        assert!(matches!(e, Err(Error::SpecParse { .. })));
    }

    #[test]
    fn duplicate_terms_and_family_rules() {
        let dup = format!("{SEVERITY}\n[term]\nvar = snow\noutcomes = injury, fatal\n");
        assert!(ModelSpec::parse(&dup).is_err());
        let fixed_family = SEVERITY.replace("mixed_mnl", "mnl");
        assert!(ModelSpec::parse(&fixed_family).is_err());
        let no_random = SEVERITY.replace("dist = normal", "dist = fixed");
        assert!(ModelSpec::parse(&no_random).is_err());
    }

    #[test]
    fn frequency_spec() {
        let text = "[model]\nfamily = nb\noutcome = crashes\n[term]\nvar = constant\n[term]\nvar = aadt\n";
        let spec = ModelSpec::parse(text).unwrap();
        assert_eq!(spec.n_params(), 3);
        let with_outcomes = format!("{text}[term]\nvar = urban\noutcomes = fatal\n");
        assert!(ModelSpec::parse(&with_outcomes).is_err());
    }
}
