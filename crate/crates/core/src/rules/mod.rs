//! Drill-down rule scoring and greedy path recommendation.
//!
//! A candidate rule `r` is scored against the rules already chosen `R` as
//!
//! ```text
//! score(r | R) = mcount(r, R) * weight(r)
//! mcount(r, R) = |cover(r) \ union(cover(r') for r' in R)|
//! weight(r)    = sum over fields f of r: alpha_f * log2(|f|)
//! ```
//!
//! where `|f|` is the number of distinct non-null values of `f` and `alpha_f`
//! the field's relevance to the analyst's intent. Coverage is counted in rows.

pub mod oracle;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{ColumnType, Dataset, FieldDomain, FieldRef, Predicate, RowMask, TabularError};

pub use oracle::brute_force_best;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error("no domain for field `{0}`")]
    MissingDomain(String),
    #[error("no relevance coefficient for field `{0}`")]
    MissingRelevance(String),
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("invalid rule: {0}")]
    InvalidRule(String),
}

pub type Result<T, E = RuleError> = std::result::Result<T, E>;

/// Conjunction of atomic filters over pairwise distinct fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrillRule {
    filters: Vec<Predicate>,
}

impl DrillRule {
    pub fn new(filters: Vec<Predicate>) -> Result<Self> {
        if filters.is_empty() {
            return Err(RuleError::InvalidRule("a rule needs at least one filter".into()));
        }
        let mut fields: Vec<&FieldRef> = Vec::with_capacity(filters.len());
        for f in &filters {
            let Some(field) = f.field() else {
                return Err(RuleError::InvalidRule("rule filters must be atomic".into()));
            };
            if fields.contains(&field) {
                return Err(RuleError::InvalidRule(format!("field `{field}` filtered twice")));
            }
            fields.push(field);
        }
        Ok(Self { filters })
    }

    pub fn single(filter: Predicate) -> Result<Self> {
        Self::new(vec![filter])
    }

    pub fn filters(&self) -> &[Predicate] {
        &self.filters
    }

    pub fn fields(&self) -> impl Iterator<Item = &FieldRef> {
        self.filters.iter().filter_map(Predicate::field)
    }

    pub fn to_predicate(&self) -> Predicate {
        Predicate::and(self.filters.clone())
    }

    /// "field op value" per filter, joined with AND.
    pub fn label(&self, dataset: &Dataset) -> String {
        self.filters
            .iter()
            .map(|f| dataset.describe(f))
            .collect::<Vec<_>>()
            .join(" AND ")
    }

    pub fn cover(&self, dataset: &Dataset) -> Result<RowMask> {
        Ok(dataset.evaluate_all(&self.filters)?)
    }
}

/// Rules already in effect, in selection order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<DrillRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<DrillRule>) -> Self {
        Self { rules }
    }

    pub fn push(&mut self, rule: DrillRule) {
        self.rules.push(rule);
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Union of every member's cover.
    pub fn cover(&self, dataset: &Dataset) -> Result<RowMask> {
        let mut covered = RowMask::empty(dataset.row_count());
        for rule in &self.rules {
            covered.union_with(&rule.cover(dataset)?);
        }
        Ok(covered)
    }
}

/// Per-field relevance coefficients, each in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelevanceMap {
    coefficients: BTreeMap<FieldRef, f64>,
}

impl RelevanceMap {
    /// Every field at 1.0, the cold-start default.
    pub fn uniform<'a>(fields: impl IntoIterator<Item = &'a FieldRef>) -> Self {
        Self {
            coefficients: fields.into_iter().map(|f| (f.clone(), 1.0)).collect(),
        }
    }

    /// Inserts a coefficient clamped to `[0, 1]`; NaN becomes 0.
    pub fn insert(&mut self, field: impl Into<FieldRef>, value: f64) {
        let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
        self.coefficients.insert(field.into(), v);
    }

    pub fn get(&self, field: &str) -> Option<f64> {
        self.coefficients.get(field).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FieldRef, f64)> {
        self.coefficients.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

impl<K: Into<FieldRef>> FromIterator<(K, f64)> for RelevanceMap {
    fn from_iter<T: IntoIterator<Item = (K, f64)>>(iter: T) -> Self {
        let mut map = RelevanceMap::default();
        for (k, v) in iter {
            map.insert(k, v);
        }
        map
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub label: String,
    pub mcount: usize,
    pub weight: f64,
    pub score: f64,
    #[serde(flatten)]
    pub rule: DrillRule,
}

/// Selection order: higher score, then higher mcount, then the
/// lexicographically smaller label.
pub fn selection_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.mcount.cmp(&a.mcount))
        .then_with(|| a.label.cmp(&b.label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationConfig {
    pub k: usize,
    pub max_candidates: usize,
    pub numeric_bins: usize,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_candidates: 500,
            numeric_bins: 4,
        }
    }
}

/// Single-filter rules over every field not yet on the drill path.
/// Discrete fields yield one equality rule per value, continuous fields one
/// range rule per quantile bin, text fields nothing. Rules covering no rows
/// are dropped; the rest are ordered by descending coverage and truncated.
pub fn enumerate_candidates(
    dataset: &Dataset,
    path_fields: &[FieldRef],
    config: &EnumerationConfig,
) -> Result<Vec<DrillRule>> {
    let mut pool: Vec<(usize, DrillRule)> = Vec::new();
    for column in dataset.columns() {
        if path_fields.contains(&column.field) {
            continue;
        }
        let filters = match column.column_type() {
            ColumnType::Text => continue,
            ColumnType::Numeric | ColumnType::Temporal => dataset.bin_numeric(&column.field, config.numeric_bins)?,
            ColumnType::Categorical | ColumnType::Boolean => match dataset.field_domain(&column.field)?.values {
                crate::tabular::DomainValues::Distinct { values } => values
                    .into_iter()
                    .map(|v| Predicate::equals(column.field.clone(), v))
                    .collect(),
                _ => Vec::new(),
            },
        };
        for filter in filters {
            let coverage = dataset.evaluate(&filter)?.count_ones();
            if coverage > 0 {
                pool.push((coverage, DrillRule::single(filter)?));
            }
        }
    }
    pool.sort_by(|a, b| b.0.cmp(&a.0));
    pool.truncate(config.max_candidates);
    Ok(pool.into_iter().map(|(_, r)| r).collect())
}

/// Rows covered by `rule` that no rule in `ruleset` covers.
pub fn mcount(dataset: &Dataset, rule: &DrillRule, ruleset: &RuleSet) -> Result<usize> {
    let cover = rule.cover(dataset)?;
    Ok(cover.count_difference(&ruleset.cover(dataset)?))
}

pub fn weight(rule: &DrillRule, relevance: &RelevanceMap, domains: &HashMap<FieldRef, FieldDomain>) -> Result<f64> {
    let mut total = 0.0;
    for field in rule.fields() {
        let domain = domains
            .get(field)
            .ok_or_else(|| RuleError::MissingDomain(field.to_string()))?;
        let alpha = relevance
            .get(field)
            .ok_or_else(|| RuleError::MissingRelevance(field.to_string()))?;
        total += alpha * domain_bits(domain.cardinality);
    }
    Ok(total)
}

fn domain_bits(cardinality: usize) -> f64 {
    if cardinality <= 1 {
        0.0
    } else {
        (cardinality as f64).log2()
    }
}

/// Domains of every field the rules touch.
pub fn domains_for<'a>(
    dataset: &Dataset,
    rules: impl IntoIterator<Item = &'a DrillRule>,
) -> Result<HashMap<FieldRef, FieldDomain>> {
    let mut domains = HashMap::new();
    for rule in rules {
        for field in rule.fields() {
            if !domains.contains_key(field) {
                domains.insert(field.clone(), dataset.field_domain(field)?);
            }
        }
    }
    Ok(domains)
}

pub fn score(dataset: &Dataset, rule: &DrillRule, ruleset: &RuleSet, relevance: &RelevanceMap) -> Result<ScoredCandidate> {
    let domains = domains_for(dataset, [rule])?;
    let w = weight(rule, relevance, &domains)?;
    let m = mcount(dataset, rule, ruleset)?;
    Ok(ScoredCandidate {
        label: rule.label(dataset),
        mcount: m,
        weight: w,
        score: m as f64 * w,
        rule: rule.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedySelection {
    pub picks: Vec<ScoredCandidate>,
    /// Number of candidate score evaluations performed.
    pub evaluations: usize,
}

/// Greedy top-k: repeatedly takes the best-scoring candidate, adds it to the
/// working rule set and rescores the remainder. Stops after `k` picks or
/// once every remaining candidate scores zero.
pub fn greedy_top_k(
    dataset: &Dataset,
    candidates: &[DrillRule],
    ruleset: &RuleSet,
    relevance: &RelevanceMap,
    k: usize,
) -> Result<GreedySelection> {
    let domains = domains_for(dataset, candidates)?;
    let mut covered = ruleset.cover(dataset)?;

    struct Pending {
        rule: DrillRule,
        label: String,
        cover: RowMask,
        weight: f64,
    }
    let mut remaining = candidates
        .iter()
        .map(|rule| {
            Ok(Pending {
                label: rule.label(dataset),
                cover: rule.cover(dataset)?,
                weight: weight(rule, relevance, &domains)?,
                rule: rule.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut picks = Vec::with_capacity(k.min(remaining.len()));
    let mut evaluations = 0;
    while picks.len() < k && !remaining.is_empty() {
        let mut best: Option<(usize, ScoredCandidate)> = None;
        for (i, p) in remaining.iter().enumerate() {
            evaluations += 1;
            let m = p.cover.count_difference(&covered);
            let scored = ScoredCandidate {
                label: p.label.clone(),
                mcount: m,
                weight: p.weight,
                score: m as f64 * p.weight,
                rule: p.rule.clone(),
            };
            let better = match &best {
                None => true,
                Some((_, cur)) => selection_order(&scored, cur) == Ordering::Less,
            };
            if better {
                best = Some((i, scored));
            }
        }
        let Some((i, chosen)) = best else { break };
        if chosen.score <= 0.0 {
            break;
        }
        let picked = remaining.swap_remove(i);
        covered.union_with(&picked.cover);
        picks.push(chosen);
    }
    Ok(GreedySelection { picks, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::fixtures::six_row;
    use crate::tabular::{ColumnData, Interval};

    fn product(v: &str) -> DrillRule {
        DrillRule::single(Predicate::equals("Product", v)).unwrap()
    }

    #[test]
    fn enumerates_unused_dimensions() {
        let ds = six_row();
        let rules = enumerate_candidates(&ds, &["Region".into()], &EnumerationConfig::default()).unwrap();
        let labels: Vec<String> = rules.iter().map(|r| r.label(&ds)).collect();
        assert_eq!(labels, vec!["Product = A", "Product = B", "Product = C"]);
        let all: Vec<FieldRef> = ds.fields().cloned().collect();
        assert!(enumerate_candidates(&ds, &all, &EnumerationConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn numeric_fields_enumerate_bins() {
        let ds = Dataset::from_columns(
            "d",
            vec![
                ("Age".into(), ColumnData::numeric((0..40).map(|i| 20.0 + i as f64))),
                ("Note".into(), ColumnData::Text((0..40).map(|i| Some(format!("n{i}"))).collect())),
            ],
        )
        .unwrap();
        let rules = enumerate_candidates(&ds, &[], &EnumerationConfig::default()).unwrap();
        assert_eq!(rules.len(), 4);
        assert!(rules.iter().all(|r| matches!(r.filters()[0], Predicate::Range { .. })));
    }

    #[test]
    fn truncates_by_coverage() {
        let ds = six_row();
        let cfg = EnumerationConfig {
            max_candidates: 2,
            ..Default::default()
        };
        let rules = enumerate_candidates(&ds, &[], &cfg).unwrap();
        let covers: Vec<usize> = rules.iter().map(|r| r.cover(&ds).unwrap().count_ones()).collect();
        assert_eq!(covers, vec![3, 3]);
    }

    #[test]
    fn mcount_fixture() {
        let ds = six_row();
        assert_eq!(mcount(&ds, &product("A"), &RuleSet::default()).unwrap(), 3);
        assert_eq!(mcount(&ds, &product("B"), &RuleSet::new(vec![product("A")])).unwrap(), 2);
        assert_eq!(mcount(&ds, &product("A"), &RuleSet::new(vec![product("A")])).unwrap(), 0);
    }

    #[test]
    fn weight_formula() {
        let ds = six_row();
        let rel = RelevanceMap::uniform(ds.fields());
        let two = DrillRule::new(vec![Predicate::equals("Region", "N"), Predicate::equals("Product", "A")]).unwrap();
        let domains = domains_for(&ds, [&two]).unwrap();
        assert!((weight(&product("A"), &rel, &domains).unwrap() - 1.584962500721156).abs() < 1e-9);
        assert!((weight(&two, &rel, &domains).unwrap() - 2.584962500721156).abs() < 1e-9);
        assert_eq!(
            weight(&product("A"), &RelevanceMap::default(), &domains),
            Err(RuleError::MissingRelevance("Product".into()))
        );
        assert_eq!(
            weight(&product("A"), &rel, &HashMap::new()),
            Err(RuleError::MissingDomain("Product".into()))
        );
    }

    #[test]
    fn constant_field_weighs_nothing() {
        let ds = Dataset::from_columns("d", vec![("k".into(), ColumnData::categorical(["x", "x"]))]).unwrap();
        let r = DrillRule::single(Predicate::equals("k", "x")).unwrap();
        let s = score(&ds, &r, &RuleSet::default(), &RelevanceMap::uniform(ds.fields())).unwrap();
        assert_eq!(s.mcount, 2);
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn greedy_fixture_order() {
        let ds = six_row();
        let rel = RelevanceMap::uniform(ds.fields());
        let cands = vec![product("C"), product("A"), product("B")];
        let sel = greedy_top_k(&ds, &cands, &RuleSet::default(), &rel, 3).unwrap();
        let got: Vec<(&str, usize)> = sel.picks.iter().map(|p| (p.label.as_str(), p.mcount)).collect();
        assert_eq!(got, vec![("Product = A", 3), ("Product = B", 2), ("Product = C", 1)]);
        let l = 3f64.log2();
        for (p, m) in sel.picks.iter().zip([3.0, 2.0, 1.0]) {
            assert!((p.score - m * l).abs() < 1e-9);
        }
        assert!(sel.evaluations <= 3 * 3);
    }

    #[test]
    fn greedy_stops_when_everything_is_covered() {
        let ds = six_row();
        let rel = RelevanceMap::uniform(ds.fields());
        let sel = greedy_top_k(&ds, &[product("A")], &RuleSet::new(vec![product("A")]), &rel, 3).unwrap();
        assert!(sel.picks.is_empty());
    }

    #[test]
    fn rule_invariants() {
        assert!(DrillRule::new(vec![]).is_err());
        assert!(DrillRule::new(vec![Predicate::equals("a", 1.0), Predicate::equals("a", 2.0)]).is_err());
        assert!(DrillRule::single(Predicate::and(vec![])).is_err());
    }

    #[test]
    fn scored_candidate_json() {
        let ds = six_row();
        let s = score(&ds, &product("A"), &RuleSet::default(), &RelevanceMap::uniform(ds.fields())).unwrap();
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["label"], "Product = A");
        assert_eq!(v["mcount"], 3);
        assert_eq!(v["filters"][0]["kind"], "equals");
        let back: ScoredCandidate = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn relevance_clamps() {
        let rel: RelevanceMap = [("Age", 3.5), ("Region", -1.0), ("X", f64::NAN)].into_iter().collect();
        assert_eq!(rel.get("Age"), Some(1.0));
        assert_eq!(rel.get("Region"), Some(0.0));
        assert_eq!(rel.get("X"), Some(0.0));
    }

    #[test]
    fn range_candidates_score() {
        let ds = Dataset::from_columns("d", vec![("v".into(), ColumnData::numeric([1.0, 2.0, 3.0, 4.0]))]).unwrap();
        let r = DrillRule::single(Predicate::range("v", Interval::closed(1.0, 2.0))).unwrap();
        let s = score(&ds, &r, &RuleSet::default(), &RelevanceMap::uniform(ds.fields())).unwrap();
        assert_eq!(s.mcount, 2);
        assert!((s.score - 4.0).abs() < 1e-12);
    }
}
