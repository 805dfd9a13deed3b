use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Column identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldRef(String);

impl FieldRef {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FieldRef {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for FieldRef {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl Borrow<str> for FieldRef {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl std::ops::Deref for FieldRef {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

/// A literal compared against cell values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Scalar {
    pub fn text(s: impl Into<String>) -> Self {
        Scalar::Text(s.into())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Number(n) => Some(*n),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Number(n) => write!(f, "{}", format_number(*n)),
            Scalar::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Text(s.to_string())
    }
}

impl From<f64> for Scalar {
    fn from(n: f64) -> Self {
        Scalar::Number(n)
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

pub(crate) fn format_number(n: f64) -> String {
    if n == n.trunc() && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn yes() -> bool {
    true
}

/// A possibly half-open numeric interval. `None` bounds are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(default)]
    pub low: Option<f64>,
    #[serde(default)]
    pub high: Option<f64>,
    #[serde(default = "yes")]
    pub low_inclusive: bool,
    #[serde(default = "yes")]
    pub high_inclusive: bool,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        low: None,
        high: None,
        low_inclusive: true,
        high_inclusive: true,
    };

    pub fn closed(low: f64, high: f64) -> Self {
        Self {
            low: Some(low),
            high: Some(high),
            low_inclusive: true,
            high_inclusive: true,
        }
    }

    pub fn at_least(low: f64) -> Self {
        Self {
            low: Some(low),
            ..Self::UNBOUNDED
        }
    }

    pub fn greater_than(low: f64) -> Self {
        Self {
            low: Some(low),
            low_inclusive: false,
            ..Self::UNBOUNDED
        }
    }

    pub fn at_most(high: f64) -> Self {
        Self {
            high: Some(high),
            ..Self::UNBOUNDED
        }
    }

    pub fn less_than(high: f64) -> Self {
        Self {
            high: Some(high),
            high_inclusive: false,
            ..Self::UNBOUNDED
        }
    }

    /// Bounds are ordered (`low <= high` when both present) and finite.
    pub fn is_well_formed(&self) -> bool {
        let finite = self.low.is_none_or(f64::is_finite) && self.high.is_none_or(f64::is_finite);
        match (self.low, self.high) {
            (Some(lo), Some(hi)) => finite && lo <= hi,
            _ => finite,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = match self.low {
            None => true,
            Some(lo) if self.low_inclusive => v >= lo,
            Some(lo) => v > lo,
        };
        let below = match self.high {
            None => true,
            Some(hi) if self.high_inclusive => v <= hi,
            Some(hi) => v < hi,
        };
        above && below
    }

    /// True when no real number lies in the interval.
    pub fn is_empty(&self) -> bool {
        match (self.low, self.high) {
            (Some(lo), Some(hi)) => lo > hi || (lo == hi && !(self.low_inclusive && self.high_inclusive)),
            _ => false,
        }
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let (low, low_inclusive) = match (self.low, other.low) {
            (None, None) => (None, true),
            (Some(a), None) => (Some(a), self.low_inclusive),
            (None, Some(b)) => (Some(b), other.low_inclusive),
            (Some(a), Some(b)) if a > b => (Some(a), self.low_inclusive),
            (Some(a), Some(b)) if b > a => (Some(b), other.low_inclusive),
            (Some(a), Some(_)) => (Some(a), self.low_inclusive && other.low_inclusive),
        };
        let (high, high_inclusive) = match (self.high, other.high) {
            (None, None) => (None, true),
            (Some(a), None) => (Some(a), self.high_inclusive),
            (None, Some(b)) => (Some(b), other.high_inclusive),
            (Some(a), Some(b)) if a < b => (Some(a), self.high_inclusive),
            (Some(a), Some(b)) if b < a => (Some(b), other.high_inclusive),
            (Some(a), Some(_)) => (Some(a), self.high_inclusive && other.high_inclusive),
        };
        Interval {
            low,
            high,
            low_inclusive,
            high_inclusive,
        }
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        !self.intersect(other).is_empty()
    }

    /// Canonical form: inclusive flags on absent bounds are forced to true.
    pub fn canonical(mut self) -> Self {
        if self.low.is_none() {
            self.low_inclusive = true;
        }
        if self.high.is_none() {
            self.high_inclusive = true;
        }
        self
    }
}

/// A boolean condition over rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Equals {
        field: FieldRef,
        value: Scalar,
    },
    InSet {
        field: FieldRef,
        values: Vec<Scalar>,
    },
    Range {
        field: FieldRef,
        #[serde(flatten)]
        interval: Interval,
    },
    Conjunction {
        predicates: Vec<Predicate>,
    },
}

impl Predicate {
    pub fn equals(field: impl Into<FieldRef>, value: impl Into<Scalar>) -> Self {
        Predicate::Equals {
            field: field.into(),
            value: value.into(),
        }
    }

    pub fn in_set(field: impl Into<FieldRef>, values: Vec<Scalar>) -> Self {
        Predicate::InSet {
            field: field.into(),
            values,
        }
    }

    pub fn range(field: impl Into<FieldRef>, interval: Interval) -> Self {
        Predicate::Range {
            field: field.into(),
            interval: interval.canonical(),
        }
    }

    pub fn and(predicates: Vec<Predicate>) -> Self {
        Predicate::Conjunction { predicates }
    }

    pub fn is_atomic(&self) -> bool {
        !matches!(self, Predicate::Conjunction { .. })
    }

    /// The field of an atomic predicate.
    pub fn field(&self) -> Option<&FieldRef> {
        match self {
            Predicate::Equals { field, .. } | Predicate::InSet { field, .. } | Predicate::Range { field, .. } => {
                Some(field)
            }
            Predicate::Conjunction { .. } => None,
        }
    }

    /// Every field referenced, in first-appearance order, without duplicates.
    pub fn fields(&self) -> Vec<FieldRef> {
        let mut out: Vec<FieldRef> = Vec::new();
        for atom in self.atoms() {
            if let Some(f) = atom.field() {
                if !out.contains(f) {
                    out.push(f.clone());
                }
            }
        }
        out
    }

    /// Atomic members, with nested conjunctions flattened.
    pub fn atoms(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            Predicate::Conjunction { predicates } => predicates.iter().for_each(|p| p.collect_atoms(out)),
            atom => out.push(atom),
        }
    }

    /// Flattens nested conjunctions, canonicalises range flags, and sorts
    /// conjunction members so that logically identical conjunctions built
    /// in different orders compare equal. A single-member conjunction
    /// collapses to that member.
    pub fn normalized(&self) -> Predicate {
        match self {
            Predicate::Range { field, interval } => Predicate::Range {
                field: field.clone(),
                interval: interval.canonical(),
            },
            Predicate::Conjunction { .. } => {
                let mut atoms: Vec<Predicate> = self.atoms().into_iter().map(Predicate::normalized).collect();
                atoms.sort_by_key(canonical_key);
                atoms.dedup();
                if atoms.len() == 1 {
                    atoms.pop().unwrap()
                } else {
                    Predicate::Conjunction { predicates: atoms }
                }
            }
            other => other.clone(),
        }
    }

    /// Normalised form with numeric literals rounded to four significant
    /// digits, used for structural de-duplication of repeated gestures.
    pub fn rounded(&self) -> Predicate {
        match self.normalized() {
            Predicate::Equals { field, value } => Predicate::Equals {
                field,
                value: round_scalar(value),
            },
            Predicate::InSet { field, values } => Predicate::InSet {
                field,
                values: values.into_iter().map(round_scalar).collect(),
            },
            Predicate::Range { field, interval } => Predicate::Range {
                field,
                interval: Interval {
                    low: interval.low.map(round_sig4),
                    high: interval.high.map(round_sig4),
                    ..interval
                },
            },
            Predicate::Conjunction { predicates } => Predicate::Conjunction {
                predicates: predicates.iter().map(Predicate::rounded).collect(),
            },
        }
    }

    /// Deterministic text key; equal keys mean structurally equal predicates.
    pub fn key(&self) -> String {
        canonical_key(self)
    }
}

fn canonical_key(p: &Predicate) -> String {
    serde_json::to_string(p).expect("predicate serialises")
}

fn round_scalar(s: Scalar) -> Scalar {
    match s {
        Scalar::Number(n) => Scalar::Number(round_sig4(n)),
        other => other,
    }
}

pub(crate) fn round_sig4(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { 0.0 } else { v };
    }
    let magnitude = v.abs().log10().floor() as i32;
    let scale = 10f64.powi(3 - magnitude);
    (v * scale).round() / scale
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Equals { field, value } => write!(f, "{field} = {value}"),
            Predicate::InSet { field, values } => {
                let items: Vec<String> = values.iter().map(Scalar::to_string).collect();
                write!(f, "{field} in {{{}}}", items.join(", "))
            }
            Predicate::Range { field, interval } => {
                write!(f, "{}", render_range(field, interval, &|v| format_number(v)))
            }
            Predicate::Conjunction { predicates } => {
                if predicates.is_empty() {
                    return f.write_str("true");
                }
                let parts: Vec<String> = predicates.iter().map(Predicate::to_string).collect();
                f.write_str(&parts.join(" AND "))
            }
        }
    }
}

pub(crate) fn render_range(field: &str, iv: &Interval, fmt_value: &dyn Fn(f64) -> String) -> String {
    match (iv.low, iv.high) {
        (Some(lo), Some(hi)) if lo == hi && iv.low_inclusive && iv.high_inclusive => {
            format!("{field} = {}", fmt_value(lo))
        }
        (Some(lo), Some(hi)) => format!(
            "{field} in {}{}, {}{}",
            if iv.low_inclusive { '[' } else { '(' },
            fmt_value(lo),
            fmt_value(hi),
            if iv.high_inclusive { ']' } else { ')' }
        ),
        (Some(lo), None) => format!("{field} {} {}", if iv.low_inclusive { ">=" } else { ">" }, fmt_value(lo)),
        (None, Some(hi)) => format!("{field} {} {}", if iv.high_inclusive { "<=" } else { "<" }, fmt_value(hi)),
        (None, None) => format!("{field} is any"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shape() {
        let p = Predicate::range("Income", Interval::at_least(100_000.0));
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"kind": "range", "field": "Income", "low": 100000.0, "high": null,
                "low_inclusive": true, "high_inclusive": true})
        );
        let back: Predicate = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);

        let eq: Predicate = serde_json::from_str(r#"{"kind":"equals","field":"Region","value":"N"}"#).unwrap();
        assert_eq!(eq, Predicate::equals("Region", "N"));
        let r: Predicate = serde_json::from_str(r#"{"kind":"range","field":"Age","high":30}"#).unwrap();
        assert_eq!(r, Predicate::range("Age", Interval::at_most(30.0)));
    }

    #[test]
    fn display_labels() {
        assert_eq!(Predicate::equals("Region", "N").to_string(), "Region = N");
        assert_eq!(Predicate::range("Age", Interval::at_most(30.0)).to_string(), "Age <= 30");
        assert_eq!(Predicate::range("Level", Interval::greater_than(7.0)).to_string(), "Level > 7");
        let bin = Interval {
            low: Some(1.0),
            high: Some(26.5),
            low_inclusive: true,
            high_inclusive: false,
        };
        assert_eq!(Predicate::range("Age", bin).to_string(), "Age in [1, 26.5)");
        assert_eq!(
            Predicate::in_set("R", vec!["N".into(), "S".into()]).to_string(),
            "R in {N, S}"
        );
    }

    #[test]
    fn interval_intersection() {
        let a = Interval::at_most(30.0);
        let b = Interval::at_least(20.0);
        assert_eq!(a.intersect(&b), Interval::closed(20.0, 30.0));
        assert!(Interval::at_most(10.0).intersect(&Interval::at_least(20.0)).is_empty());
        let touching = Interval::less_than(5.0).intersect(&Interval::at_least(5.0));
        assert!(touching.is_empty());
        assert!(!Interval::closed(5.0, 5.0).is_empty());
    }

    #[test]
    fn normalization_is_order_insensitive() {
        let a = Predicate::and(vec![
            Predicate::range("Income", Interval::at_least(1.0)),
            Predicate::and(vec![Predicate::range("Age", Interval::at_most(30.0))]),
        ]);
        let b = Predicate::and(vec![
            Predicate::range("Age", Interval::at_most(30.0)),
            Predicate::range("Income", Interval::at_least(1.0)),
        ]);
        assert_eq!(a.normalized(), b.normalized());
        assert_eq!(Predicate::and(vec![Predicate::equals("a", 1.0)]).normalized(), Predicate::equals("a", 1.0));
    }

    #[test]
    fn four_significant_digits() {
        assert_eq!(round_sig4(100_012.0), 100_000.0);
        assert_eq!(round_sig4(29.996), 30.0);
        assert_eq!(round_sig4(0.123456), 0.1235);
        assert_eq!(round_sig4(-1234.5), -1235.0);
        let a = Predicate::range("Income", Interval::closed(100_004.0, 200_020.0));
        let b = Predicate::range("Income", Interval::closed(99_998.0, 199_990.0));
        assert_eq!(a.rounded(), b.rounded());
    }
}
