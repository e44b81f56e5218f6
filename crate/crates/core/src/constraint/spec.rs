use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ConstraintError;
use crate::lm::{join_words, split_words};

/// Canonical form of a phrase: lowercased words joined by single spaces.
pub fn normalize_phrase(text: &str) -> String {
    join_words(&split_words(text))
}

/// `D(a, y)`: the phrase `a` appears contiguously in the generated sequence.
/// A negated predicate holds while the phrase is absent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub phrase: String,
    #[serde(default)]
    pub negated: bool,
}

impl Predicate {
    pub fn positive(phrase: &str) -> Self {
        Self {
            phrase: normalize_phrase(phrase),
            negated: false,
        }
    }

    pub fn negated(phrase: &str) -> Self {
        Self {
            phrase: normalize_phrase(phrase),
            negated: true,
        }
    }
}

/// A disjunction of predicates with bounds on how many of its literals may
/// hold.
///
/// The clause count is the number of true literals: positive predicates whose
/// phrase has appeared plus negated predicates whose phrase is still absent.
/// Any negated phrase appearing violates the clause outright.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub predicates: Vec<Predicate>,
    #[serde(default = "one")]
    pub min_satisfied: usize,
    #[serde(default)]
    pub max_satisfied: Option<usize>,
    #[serde(default)]
    pub order_rank: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn one() -> usize {
    1
}

impl Clause {
    /// Satisfied once any of the phrases appears.
    pub fn any_of<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            predicates: phrases
                .into_iter()
                .map(|p| Predicate::positive(p.as_ref()))
                .collect(),
            min_satisfied: 1,
            max_satisfied: None,
            order_rank: None,
            label: None,
        }
    }

    /// Pure exclusion: satisfied while none of the phrases appears.
    pub fn exclude<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let predicates: Vec<_> = phrases
            .into_iter()
            .map(|p| Predicate::negated(p.as_ref()))
            .collect();
        Self {
            min_satisfied: predicates.len(),
            max_satisfied: None,
            predicates,
            order_rank: None,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_bounds(mut self, min: usize, max: Option<usize>) -> Self {
        self.min_satisfied = min;
        self.max_satisfied = max;
        self
    }

    pub fn with_rank(mut self, rank: u32) -> Self {
        self.order_rank = Some(rank);
        self
    }

    pub fn negated_count(&self) -> usize {
        self.predicates.iter().filter(|p| p.negated).count()
    }

    pub fn is_pure_exclusion(&self) -> bool {
        !self.predicates.is_empty() && self.predicates.iter().all(|p| p.negated)
    }

    pub fn validate(&self, index: usize) -> Result<(), ConstraintError> {
        let invalid = |reason: String| ConstraintError::InvalidClause {
            clause: index,
            reason,
        };
        if self.predicates.is_empty() {
            return Err(invalid("clause has no predicates".into()));
        }
        if let Some(p) = self.predicates.iter().find(|p| split_words(&p.phrase).is_empty()) {
            return Err(invalid(format!("empty phrase {:?}", p.phrase)));
        }
        let n = self.predicates.len();
        if self.min_satisfied == 0 || self.min_satisfied > n {
            return Err(invalid(format!(
                "min_satisfied {} outside 1..={n}",
                self.min_satisfied
            )));
        }
        if let Some(max) = self.max_satisfied {
            if max < self.min_satisfied || max > n {
                return Err(invalid(format!(
                    "max_satisfied {max} outside {}..={n}",
                    self.min_satisfied
                )));
            }
            // absent negated phrases count from the start
            if max < self.negated_count() {
                return Err(invalid(format!(
                    "max_satisfied {max} is below the {} negated predicates, which hold initially",
                    self.negated_count()
                )));
            }
        }
        Ok(())
    }
}

/// Conjunction of clauses. Empty means unconstrained.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub clauses: Vec<Clause>,
}

impl ConstraintSpec {
    pub fn new(clauses: Vec<Clause>) -> Self {
        Self { clauses }
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        self.clauses
            .iter()
            .enumerate()
            .try_for_each(|(i, c)| c.validate(i))
    }

    /// Parses the line format `MIN..MAX [>rank] [@label] phrase | phrase | !phrase`.
    ///
    /// `MAX` may be empty or `*` for unbounded. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, ConstraintError> {
        let mut clauses = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let clause = parse_clause(line).map_err(|message| ConstraintError::Parse {
                line: i + 1,
                message,
            })?;
            clause.validate(clauses.len())?;
            clauses.push(clause);
        }
        Ok(Self { clauses })
    }
}

fn parse_clause(line: &str) -> Result<Clause, String> {
    let (range, mut rest) = line
        .split_once(char::is_whitespace)
        .ok_or_else(|| "expected `MIN..MAX` followed by phrases".to_string())?;
    let (min, max) = range
        .split_once("..")
        .ok_or_else(|| format!("bad range `{range}`"))?;
    let min: usize = min.parse().map_err(|_| format!("bad minimum `{min}`"))?;
    let max = match max {
        "" | "*" => None,
        m => Some(m.parse::<usize>().map_err(|_| format!("bad maximum `{m}`"))?),
    };

    let mut order_rank = None;
    let mut label = None;
    loop {
        rest = rest.trim_start();
        if let Some(r) = rest.strip_prefix('>') {
            let (num, tail) = r.split_once(char::is_whitespace).unwrap_or((r, ""));
            order_rank = Some(num.parse::<u32>().map_err(|_| format!("bad rank `{num}`"))?);
            rest = tail;
        } else if let Some(r) = rest.strip_prefix('@') {
            let (name, tail) = r.split_once(char::is_whitespace).unwrap_or((r, ""));
            label = Some(name.to_string());
            rest = tail;
        } else {
            break;
        }
    }

    let mut predicates = Vec::new();
    for part in rest.split('|') {
        let part = part.trim();
        let pred = match part.strip_prefix('!') {
            Some(p) => Predicate::negated(p.trim()),
            None => Predicate::positive(part),
        };
        if pred.phrase.is_empty() {
            return Err("empty phrase".into());
        }
        predicates.push(pred);
    }
    Ok(Clause {
        predicates,
        min_satisfied: min,
        max_satisfied: max,
        order_rank,
        label,
    })
}

impl FromStr for ConstraintSpec {
    type Err = ConstraintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..", self.min_satisfied)?;
        if let Some(max) = self.max_satisfied {
            write!(f, "{max}")?;
        }
        if let Some(rank) = self.order_rank {
            write!(f, " >{rank}")?;
        }
        if let Some(label) = &self.label {
            write!(f, " @{label}")?;
        }
        for (i, p) in self.predicates.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { " | " })?;
            if p.negated {
                f.write_str("!")?;
            }
            f.write_str(&p.phrase)?;
        }
        Ok(())
    }
}

impl fmt::Display for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for clause in &self.clauses {
            writeln!(f, "{clause}")?;
        }
        Ok(())
    }
}
