use serde::{Deserialize, Serialize};

use super::{bind, parse_filter_expression, ChartSpec, SpecError};
use crate::rules::{enumerate_candidates, EnumerationConfig};
use crate::tabular::{Dataset, FieldRef, Predicate, RowMask};

/// How many follow-up drill options accompany a new chart.
pub const MAX_DIMENSIONS: usize = 3;

/// One follow-up filter the analyst can drill into next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSuggestion {
    pub field: FieldRef,
    pub filter: Predicate,
    pub label: String,
    /// Rows of the chart's current view the filter keeps.
    pub coverage: usize,
}

/// Single-filter drill options over the chart's current view, fields
/// already on the path excluded, largest coverage first.
pub fn dimension_pool(spec: &ChartSpec, dataset: &Dataset) -> Result<Vec<DimensionSuggestion>, SpecError> {
    let mask = bind(spec, dataset)?;
    let slice = dataset.select(&mask);
    let rules = enumerate_candidates(&slice, &spec.filtered_fields(), &EnumerationConfig::default())
        .map_err(|e| SpecError::TypeMismatch(e.to_string()))?;
    let mut out = Vec::with_capacity(rules.len());
    for rule in rules {
        let filter = rule.filters()[0].clone();
        let Some(field) = filter.field().cloned() else { continue };
        out.push(DimensionSuggestion {
            field,
            label: dataset.describe(&filter),
            coverage: slice.evaluate(&filter)?.count_ones(),
            filter,
        });
    }
    Ok(out)
}

/// Rows the filter keeps out of `view`, or None if it keeps none or all.
fn narrowing(dataset: &Dataset, view: &RowMask, filter: &Predicate) -> Option<usize> {
    let mut m = dataset.evaluate(filter).ok()?;
    m.intersect_with(view);
    let n = m.count_ones();
    (n > 0 && n < view.count_ones()).then_some(n)
}

/// Resolves the model's proposed dimension labels against the pool for
/// `spec`, keeping at most three that strictly narrow the view. Labels not
/// in the pool are tried as filter expressions.
pub fn basic_drill_dimensions(
    spec: &ChartSpec,
    dataset: &Dataset,
    proposed: &[String],
) -> Result<Vec<DimensionSuggestion>, SpecError> {
    let pool = dimension_pool(spec, dataset)?;
    let view = bind(spec, dataset)?;
    let path = spec.filtered_fields();
    let mut out: Vec<DimensionSuggestion> = Vec::new();
    for label in proposed {
        if out.len() == MAX_DIMENSIONS {
            break;
        }
        let wanted = label.trim();
        let found = pool.iter().find(|d| d.label.eq_ignore_ascii_case(wanted)).cloned().or_else(|| {
            let filter = parse_filter_expression(wanted).ok()?;
            let field = filter.field()?.clone();
            if path.contains(&field) || dataset.check_predicate(&filter).is_err() {
                return None;
            }
            Some(DimensionSuggestion {
                field,
                label: dataset.describe(&filter),
                coverage: 0,
                filter,
            })
        });
        let Some(mut d) = found else {
            log::debug!("dropping proposed dimension `{wanted}`");
            continue;
        };
        let Some(n) = narrowing(dataset, &view, &d.filter) else { continue };
        d.coverage = n;
        if !out.iter().any(|o| o.filter.key() == d.filter.key()) {
            out.push(d);
        }
    }
    Ok(out)
}

/// The three narrowing pool entries with the largest coverage, for when the
/// model proposes nothing usable.
pub fn coverage_fallback(spec: &ChartSpec, dataset: &Dataset) -> Result<Vec<DimensionSuggestion>, SpecError> {
    let view = bind(spec, dataset)?;
    Ok(dimension_pool(spec, dataset)?
        .into_iter()
        .filter(|d| narrowing(dataset, &view, &d.filter).is_some())
        .take(MAX_DIMENSIONS)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chartspec::{Encoding, Mark, MeasureType};
    use crate::tabular::{ColumnData, Interval};

    fn data() -> Dataset {
        Dataset::from_columns(
            "d",
            vec![
                ("Region".into(), ColumnData::categorical(["N", "S", "N", "S", "N", "N"])),
                ("Age".into(), ColumnData::numeric([18.0, 25.0, 31.0, 44.0, 52.0, 60.0])),
                ("Solo".into(), ColumnData::categorical(["x"; 6])),
            ],
        )
        .unwrap()
    }

    fn chart() -> ChartSpec {
        ChartSpec::new("d", Mark::Bar)
            .encode("x", Encoding::field("Region", MeasureType::Nominal))
            .encode("y", Encoding::count())
    }

    #[test]
    fn pool_excludes_path_fields() {
        let spec = chart().with_filter(Predicate::equals("Region", "N"));
        let pool = dimension_pool(&spec, &data()).unwrap();
        assert!(pool.iter().all(|d| d.field.as_str() != "Region"));
        assert!(pool.windows(2).all(|w| w[0].coverage >= w[1].coverage));
    }

    #[test]
    fn non_narrowing_and_unknown_labels_are_dropped() {
        let proposed = vec![
            "Solo = x".to_string(),
            "region = s".to_string(),
            "nonsense".to_string(),
            "datum.Age >= 40".to_string(),
        ];
        let dims = basic_drill_dimensions(&chart(), &data(), &proposed).unwrap();
        let labels: Vec<_> = dims.iter().map(|d| (d.label.as_str(), d.coverage)).collect();
        assert_eq!(labels, vec![("Region = S", 2), ("Age >= 40", 3)]);
    }

    #[test]
    fn fallback_is_capped_and_narrowing() {
        let dims = coverage_fallback(&chart(), &data()).unwrap();
        assert_eq!(dims.len(), 3);
        assert_eq!(dims[0].label, "Region = N");
        assert!(dims.iter().all(|d| d.coverage < 6 && d.field.as_str() != "Solo"));
        let empty = chart().with_filter(Predicate::range("Age", Interval::greater_than(100.0)));
        assert!(coverage_fallback(&empty, &data()).unwrap().is_empty());
    }
}
