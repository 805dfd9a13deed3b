use proptest::prelude::*;

use drilldown_core::chartspec::{append_filters, bind, ChartSpec, Encoding, Mark, MeasureType};
use drilldown_core::intent::{fuse_intent, ActionType, InteractionEvent, InteractionLog};
use drilldown_core::llm::{parse_structured, ExpectedSchema, StructuredPayload};
use drilldown_core::rules::{enumerate_candidates, greedy_top_k, EnumerationConfig, RelevanceMap, RuleSet};
use drilldown_core::tabular::{ColumnData, Dataset, Interval, Predicate};

const REGIONS: [&str; 4] = ["N", "S", "E", "W"];

fn dataset(rows: &[(usize, i32, usize)]) -> Dataset {
    Dataset::from_columns(
        "d",
        vec![
            ("Region".into(), ColumnData::categorical(rows.iter().map(|r| REGIONS[r.0]))),
            ("Age".into(), ColumnData::numeric(rows.iter().map(|r| r.1 as f64))),
            ("Tier".into(), ColumnData::categorical(rows.iter().map(|r| ["a", "b", "c"][r.2]))),
        ],
    )
    .unwrap()
}

fn rows() -> impl Strategy<Value = Vec<(usize, i32, usize)>> {
    prop::collection::vec((0..4usize, 0..100i32, 0..3usize), 1..60)
}

fn bound() -> impl Strategy<Value = Option<i32>> {
    prop::option::of(0..100i32)
}

fn predicate() -> impl Strategy<Value = Predicate> {
    prop_oneof![
        (0..4usize).prop_map(|i| Predicate::equals("Region", REGIONS[i])),
        prop::collection::btree_set(0..4usize, 1..4)
            .prop_map(|s| Predicate::in_set("Region", s.into_iter().map(|i| REGIONS[i].into()).collect())),
        (bound(), bound(), any::<bool>(), any::<bool>()).prop_filter_map("empty interval", |(a, b, li, hi)| {
            let (low, high) = match (a, b) {
                (Some(a), Some(b)) => (Some(a.min(b) as f64), Some(a.max(b) as f64 + 1.0)),
                (a, b) => (a.map(f64::from), b.map(f64::from)),
            };
            (low.is_some() || high.is_some()).then(|| {
                Predicate::range(
                    "Age",
                    Interval {
                        low,
                        high,
                        low_inclusive: li,
                        high_inclusive: hi,
                    },
                )
            })
        }),
    ]
}

fn chart() -> ChartSpec {
    ChartSpec::new("d", Mark::Bar)
        .encode("x", Encoding::field("Region", MeasureType::Nominal))
        .encode("y", Encoding::field("Age", MeasureType::Quantitative).with_aggregate("mean"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spec_document_round_trips(filters in prop::collection::vec(predicate(), 0..4)) {
        let mut spec = chart();
        spec.transforms = filters;
        let doc = spec.to_value();
        let back = ChartSpec::from_value(&doc).unwrap();
        prop_assert_eq!(back.to_value(), doc);
    }

    #[test]
    fn appending_never_widens(data in rows(), first in predicate(), second in predicate()) {
        let ds = dataset(&data);
        let base = append_filters(&chart(), &[first], &ds).unwrap();
        if let Ok(next) = append_filters(&base, &[second.clone()], &ds) {
            let before = bind(&base, &ds).unwrap();
            let after = bind(&next, &ds).unwrap();
            prop_assert!(after.is_subset(&before));
            // the appended filter holds on every surviving row
            prop_assert!(after.is_subset(&ds.evaluate(&second).unwrap()));
        }
    }

    #[test]
    fn structured_payloads_round_trip(
        coeffs in prop::collection::btree_map("[A-Za-z]{1,8}", 0.0..=1.0f64, 0..6),
        dims in prop::collection::vec("[A-Za-z =<>0-9]{1,12}", 0..5),
    ) {
        let rel = StructuredPayload::RelevanceMap(coeffs);
        prop_assert_eq!(parse_structured(&rel.to_json_string(), ExpectedSchema::RelevanceMap).unwrap(), rel);
        let list = StructuredPayload::DimensionList(dims);
        prop_assert_eq!(parse_structured(&list.to_json_string(), ExpectedSchema::DimensionList).unwrap(), list);
    }

    #[test]
    fn fusion_is_order_stable(events in prop::collection::vec((predicate(), 500u64..3000), 1..20)) {
        let mut log = InteractionLog::default();
        for (i, (p, dur)) in events.iter().enumerate() {
            log.record(InteractionEvent {
                action_type: ActionType::Brush,
                target_fields: p.fields(),
                predicate: p.clone(),
                value_range: None,
                timestamp_ms: i as i64 * 1000,
                duration_ms: *dur,
            }).unwrap();
        }
        let a = fuse_intent(&[], &log, None).unwrap();
        let b = fuse_intent(&[], &log, None).unwrap();
        prop_assert_eq!(&a, &b);
        let total: usize = a.interaction_predicates.iter().map(|w| w.repeat_count as usize).sum();
        prop_assert!(total <= events.len());
        prop_assert!(a.interaction_predicates.windows(2).all(|w| w[0].repeat_count >= w[1].repeat_count));
    }

    #[test]
    fn greedy_picks_never_gain_coverage(data in rows(), k in 1..5usize) {
        let ds = dataset(&data);
        let cands = enumerate_candidates(&ds, &[], &EnumerationConfig::default()).unwrap();
        let rel = RelevanceMap::uniform(ds.fields());
        let sel = greedy_top_k(&ds, &cands, &RuleSet::default(), &rel, k).unwrap();
        prop_assert!(sel.picks.len() <= k);
        prop_assert!(sel.evaluations <= cands.len() * k);
        prop_assert!(sel.picks.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
