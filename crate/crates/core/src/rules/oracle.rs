//! Exhaustive reference scorer.
//!
//! Walks rows one at a time and keeps coverage in plain index sets, sharing
//! no evaluation code with the bitmap path in the parent module. Used to
//! cross-check greedy selection.

use std::collections::BTreeSet;

use super::{DrillRule, RelevanceMap, Result, RuleError, RuleSet, ScoredCandidate};
use crate::tabular::{parse_temporal, Dataset, Predicate, Scalar};

/// Scores every candidate from scratch and returns the best one under the
/// documented order (score, then mcount, then smaller label).
pub fn brute_force_best(
    dataset: &Dataset,
    candidates: &[DrillRule],
    ruleset: &RuleSet,
    relevance: &RelevanceMap,
) -> Result<ScoredCandidate> {
    if candidates.is_empty() {
        return Err(RuleError::EmptyCandidates);
    }
    let mut already: BTreeSet<usize> = BTreeSet::new();
    for rule in &ruleset.rules {
        already.extend(rows_covered(dataset, rule)?);
    }

    let mut best: Option<ScoredCandidate> = None;
    for rule in candidates {
        let fresh = rows_covered(dataset, rule)?
            .into_iter()
            .filter(|r| !already.contains(r))
            .count();
        let mut w = 0.0;
        for filter in rule.filters() {
            let field = filter.field().expect("rule filters are atomic");
            let alpha = relevance
                .get(field)
                .ok_or_else(|| RuleError::MissingRelevance(field.to_string()))?;
            let distinct = naive_distinct(dataset, field)?;
            let bits = if distinct <= 1 { 0.0 } else { (distinct as f64).log2() };
            w += alpha * bits;
        }
        let candidate = ScoredCandidate {
            label: rule.label(dataset),
            mcount: fresh,
            weight: w,
            score: fresh as f64 * w,
            rule: rule.clone(),
        };
        let replace = match &best {
            None => true,
            Some(cur) => {
                candidate.score > cur.score
                    || (candidate.score == cur.score && candidate.mcount > cur.mcount)
                    || (candidate.score == cur.score && candidate.mcount == cur.mcount && candidate.label < cur.label)
            }
        };
        if replace {
            best = Some(candidate);
        }
    }
    Ok(best.expect("candidates is non-empty"))
}

fn rows_covered(dataset: &Dataset, rule: &DrillRule) -> Result<BTreeSet<usize>> {
    let columns = rule
        .filters()
        .iter()
        .map(|f| dataset.column(f.field().expect("atomic")).map(|c| (c, f)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut rows = BTreeSet::new();
    for row in 0..dataset.row_count() {
        let all = columns
            .iter()
            .all(|(col, filter)| col.data.value(row).is_some_and(|cell| cell_matches(&cell, filter)));
        if all {
            rows.insert(row);
        }
    }
    Ok(rows)
}

fn cell_matches(cell: &Scalar, filter: &Predicate) -> bool {
    match filter {
        Predicate::Equals { value, .. } => same_value(cell, value),
        Predicate::InSet { values, .. } => values.iter().any(|v| same_value(cell, v)),
        Predicate::Range { interval, .. } => {
            let Scalar::Number(x) = cell else { return false };
            let lo_ok = match interval.low {
                None => true,
                Some(lo) => *x > lo || (interval.low_inclusive && *x == lo),
            };
            let hi_ok = match interval.high {
                None => true,
                Some(hi) => *x < hi || (interval.high_inclusive && *x == hi),
            };
            lo_ok && hi_ok
        }
        Predicate::Conjunction { predicates } => predicates.iter().all(|p| cell_matches(cell, p)),
    }
}

fn same_value(cell: &Scalar, literal: &Scalar) -> bool {
    match (cell, literal) {
        (Scalar::Number(a), Scalar::Text(t)) => parse_temporal(t) == Some(*a),
        (a, b) => a == b,
    }
}

fn naive_distinct(dataset: &Dataset, field: &str) -> Result<usize> {
    let col = dataset.column(field)?;
    let mut seen: Vec<Scalar> = Vec::new();
    for row in 0..dataset.row_count() {
        if let Some(v) = col.data.value(row) {
            let v = match v {
                Scalar::Number(n) if n == 0.0 => Scalar::Number(0.0),
                other => other,
            };
            if !seen.contains(&v) {
                seen.push(v);
            }
        }
    }
    Ok(seen.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::greedy_top_k;
    use crate::tabular::fixtures::six_row;
    use crate::tabular::ColumnData;

    fn rule(field: &str, v: &str) -> DrillRule {
        DrillRule::single(Predicate::equals(field, v)).unwrap()
    }

    #[test]
    fn singleton() {
        let ds = six_row();
        let rel = RelevanceMap::uniform(ds.fields());
        let best = brute_force_best(&ds, &[rule("Product", "C")], &RuleSet::default(), &rel).unwrap();
        assert_eq!(best.label, "Product = C");
    }

    #[test]
    fn empty_candidates() {
        let ds = six_row();
        assert_eq!(
            brute_force_best(&ds, &[], &RuleSet::default(), &RelevanceMap::default()),
            Err(RuleError::EmptyCandidates)
        );
    }

    #[test]
    fn tie_breaks_on_label() {
        // Region=N and Region=S both cover three rows with the same weight.
        let ds = six_row();
        let rel = RelevanceMap::uniform(ds.fields());
        let cands = [rule("Region", "S"), rule("Region", "N")];
        let best = brute_force_best(&ds, &cands, &RuleSet::default(), &rel).unwrap();
        assert_eq!(best.label, "Region = N");
        let greedy = greedy_top_k(&ds, &cands, &RuleSet::default(), &rel, 1).unwrap();
        assert_eq!(greedy.picks[0].label, "Region = N");
    }

    #[test]
    fn tie_breaks_on_mcount_before_label() {
        // X=a: 1 row * log2(4) = 2; Y=p: 2 rows * log2(2) = 2. Equal scores,
        // so the higher mcount wins even though its label sorts later.
        let ds = Dataset::from_columns(
            "t",
            vec![
                ("X".into(), ColumnData::categorical(["a", "b", "c", "d"])),
                ("Y".into(), ColumnData::categorical(["p", "p", "q", "q"])),
            ],
        )
        .unwrap();
        let rel = RelevanceMap::uniform(ds.fields());
        let cands = [rule("X", "a"), rule("Y", "p")];
        let best = brute_force_best(&ds, &cands, &RuleSet::default(), &rel).unwrap();
        assert_eq!(best.label, "Y = p");
        assert_eq!(best.score, 2.0);
        let greedy = greedy_top_k(&ds, &cands, &RuleSet::default(), &rel, 1).unwrap();
        assert_eq!(greedy.picks[0].label, "Y = p");
    }
}
