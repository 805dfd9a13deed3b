//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs against the mock provider only.

mod common;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use common::{Api, Recording, SLEEP_CSV};
use drilldown_core::chartspec::{ChartSpec, Encoding, Mark, MeasureType};
use drilldown_core::insight::{rank_with_flags, InsightCandidate, InsightCategory};
use drilldown_core::intent::{ActionType, IntentBundle, InteractionEvent, InteractionLog, RecordOutcome};
use drilldown_core::llm::{relevance_coefficients, LlmAdapter, MockTransport, ProviderConfig, ScriptedTransport};
use drilldown_core::rules::{
    brute_force_best, enumerate_candidates, greedy_top_k, mcount, DrillRule, EnumerationConfig, RelevanceMap, RuleSet,
};
use drilldown_core::tabular::{ColumnData, Dataset, FieldRef, Predicate, Scalar};
use drilldown_core::tree::ExplorationTree;

const SEED: u64 = 0x5eed_d0d0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<bool>, name: &str, outcome: Outcome) {
    println!("{} {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
    results.push(outcome.pass);
}

// ---------------------------------------------------------------------------
// random instances with a row-by-row reference evaluator

#[derive(Clone)]
enum Raw {
    Cat(Vec<String>),
    Num(Vec<f64>),
}

struct Instance {
    dataset: Dataset,
    raw: Vec<(String, Raw)>,
    candidates: Vec<DrillRule>,
    relevance: RelevanceMap,
}

fn random_instance(rng: &mut ChaCha8Rng, max_rows: usize, max_candidates: usize) -> Instance {
    let rows = rng.gen_range(1..=max_rows);
    let fields = rng.gen_range(1..=8);
    let mut raw = Vec::new();
    for f in 0..fields {
        let name = format!("f{f}");
        if rng.gen_bool(0.6) {
            let card = rng.gen_range(1..=8);
            raw.push((name, Raw::Cat((0..rows).map(|_| format!("v{}", rng.gen_range(0..card))).collect())));
        } else {
            let span = rng.gen_range(1..=100);
            raw.push((name, Raw::Num((0..rows).map(|_| rng.gen_range(0..span) as f64).collect())));
        }
    }
    let columns = raw
        .iter()
        .map(|(n, c)| {
            let data = match c {
                Raw::Cat(v) => ColumnData::categorical(v.iter().map(String::as_str)),
                Raw::Num(v) => ColumnData::numeric(v.iter().copied()),
            };
            (FieldRef::from(n.as_str()), data)
        })
        .collect();
    let dataset = Dataset::from_columns("rand", columns).unwrap();
    let config = EnumerationConfig {
        k: 3,
        max_candidates: rng.gen_range(1..=max_candidates),
        numeric_bins: rng.gen_range(2..=5),
    };
    let mut candidates = enumerate_candidates(&dataset, &[], &config).unwrap();
    // a few two-field conjunctions
    let singles = candidates.clone();
    for _ in 0..rng.gen_range(0..=10) {
        if candidates.len() >= max_candidates || singles.len() < 2 {
            break;
        }
        let a = singles.choose(rng).unwrap();
        let b = singles.choose(rng).unwrap();
        let mut filters = a.filters().to_vec();
        filters.extend(b.filters().iter().cloned());
        if let Ok(rule) = DrillRule::new(filters) {
            candidates.push(rule);
        }
    }
    candidates.truncate(max_candidates);
    let levels = [0.0, 0.25, 0.5, 1.0];
    let relevance = raw
        .iter()
        .map(|(n, _)| {
            let a = if rng.gen_bool(0.5) { *levels.choose(rng).unwrap() } else { rng.gen_range(0.0..=1.0) };
            (n.clone(), a)
        })
        .collect();
    Instance {
        dataset,
        raw,
        candidates,
        relevance,
    }
}

impl Instance {
    fn rows(&self) -> usize {
        match &self.raw[0].1 {
            Raw::Cat(v) => v.len(),
            Raw::Num(v) => v.len(),
        }
    }

    fn column(&self, field: &str) -> &Raw {
        &self.raw.iter().find(|(n, _)| n == field).unwrap().1
    }

    fn atom_holds(&self, p: &Predicate, row: usize) -> bool {
        match (p, self.column(p.field().unwrap().as_str())) {
            (Predicate::Equals { value: Scalar::Text(s), .. }, Raw::Cat(v)) => &v[row] == s,
            (Predicate::Range { interval, .. }, Raw::Num(v)) => {
                let x = v[row];
                let lo = match interval.low {
                    None => true,
                    Some(l) if interval.low_inclusive => x >= l,
                    Some(l) => x > l,
                };
                let hi = match interval.high {
                    None => true,
                    Some(h) if interval.high_inclusive => x <= h,
                    Some(h) => x < h,
                };
                lo && hi
            }
            _ => panic!("generator only emits text equality and numeric ranges"),
        }
    }

    fn covered(&self, rule: &DrillRule) -> HashSet<usize> {
        (0..self.rows())
            .filter(|&r| rule.filters().iter().all(|p| self.atom_holds(p, r)))
            .collect()
    }

    fn distinct(&self, field: &str) -> usize {
        match self.column(field) {
            Raw::Cat(v) => v.iter().collect::<HashSet<_>>().len(),
            Raw::Num(v) => v.iter().map(|x| x.to_bits()).collect::<HashSet<_>>().len(),
        }
    }

    /// Best candidate by score, then marginal rows, then smaller label.
    fn reference_best(&self, already: &HashSet<usize>) -> (String, usize, f64) {
        let mut best: Option<(String, usize, f64)> = None;
        for rule in &self.candidates {
            let m = self.covered(rule).difference(already).count();
            let mut w = 0.0;
            for p in rule.filters() {
                let f = p.field().unwrap().as_str();
                let d = self.distinct(f);
                let bits = if d <= 1 { 0.0 } else { (d as f64).log2() };
                w += self.relevance.get(f).unwrap() * bits;
            }
            let cand = (rule.label(&self.dataset), m, m as f64 * w);
            let better = match &best {
                None => true,
                Some(b) => cand.2 > b.2 || (cand.2 == b.2 && (cand.1 > b.1 || (cand.1 == b.1 && cand.0 < b.0))),
            };
            if better {
                best = Some(cand);
            }
        }
        best.unwrap()
    }
}

// ---------------------------------------------------------------------------
// criteria

fn greedy_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let started = Instant::now();
    let (mut mismatches, mut zero_stops, mut tested) = (0, 0, 0);
    for _ in 0..1000 {
        let inst = random_instance(&mut rng, 500, 200);
        if inst.candidates.is_empty() {
            continue;
        }
        tested += 1;
        let greedy = greedy_top_k(&inst.dataset, &inst.candidates, &RuleSet::default(), &inst.relevance, 1).unwrap();
        let lib = brute_force_best(&inst.dataset, &inst.candidates, &RuleSet::default(), &inst.relevance).unwrap();
        let (label, m, score) = inst.reference_best(&HashSet::new());
        let agree_oracles = lib.label == label && lib.mcount == m && lib.score == score;
        let ok = match greedy.picks.first() {
            Some(p) => agree_oracles && p.label == label && p.mcount == m && p.score == score,
            // greedy stops rather than pick a zero-score rule
            None => {
                zero_stops += 1;
                agree_oracles && score == 0.0
            }
        };
        if !ok {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: mismatches == 0 && secs < 30.0 && tested >= 990,
        detail: format!(
            "{tested} instances (<=500 rows, <=8 fields, <=200 candidates), {mismatches} mismatches, \
             {zero_stops} all-zero instances, {secs:.2} s (limit 30 s)"
        ),
    }
}

fn six_row_fixture() -> Outcome {
    let ds = Dataset::from_columns(
        "six",
        vec![
            ("Region".into(), ColumnData::categorical(["N", "S", "N", "S", "N", "S"])),
            ("Product".into(), ColumnData::categorical(["A", "A", "A", "B", "B", "C"])),
        ],
    )
    .unwrap();
    let candidates = enumerate_candidates(&ds, &["Region".into()], &EnumerationConfig::default()).unwrap();
    let relevance = RelevanceMap::uniform(ds.fields());
    let sel = greedy_top_k(&ds, &candidates, &RuleSet::default(), &relevance, 3).unwrap();
    let l3 = 3f64.log2();
    let want = [("Product = A", 3.0 * l3), ("Product = B", 2.0 * l3), ("Product = C", l3)];
    let got: Vec<(String, f64)> = sel.picks.iter().map(|p| (p.label.clone(), p.score)).collect();
    let pass = got.len() == 3
        && got
            .iter()
            .zip(want)
            .all(|((l, s), (wl, ws))| l == wl && (s - ws).abs() <= 1e-9);
    Outcome {
        pass,
        detail: format!("picks {got:?}, expected A/B/C at 3, 2, 1 x log2(3) (tol 1e-9)"),
    }
}

fn mcount_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let (mut pairs, mut wrong, mut nonmono) = (0, 0, 0);
    while pairs < 10_000 {
        let inst = random_instance(&mut rng, 60, 40);
        if inst.candidates.is_empty() {
            continue;
        }
        for _ in 0..50 {
            let r = inst.candidates.choose(&mut rng).unwrap();
            let mut ruleset = RuleSet::default();
            for _ in 0..rng.gen_range(0..4) {
                ruleset.push(inst.candidates.choose(&mut rng).unwrap().clone());
            }
            let mut already = HashSet::new();
            for rule in &ruleset.rules {
                already.extend(inst.covered(rule));
            }
            let want = inst.covered(r).difference(&already).count();
            let got = mcount(&inst.dataset, r, &ruleset).unwrap();
            if got != want {
                wrong += 1;
            }
            let mut extended = ruleset.clone();
            extended.push(inst.candidates.choose(&mut rng).unwrap().clone());
            if mcount(&inst.dataset, r, &extended).unwrap() > got {
                nonmono += 1;
            }
            pairs += 1;
        }
    }
    Outcome {
        pass: wrong == 0 && nonmono == 0,
        detail: format!("{pairs} (r, R) pairs, {wrong} differ from the row-set oracle, {nonmono} monotonicity violations"),
    }
}

fn evaluation_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let (mut runs, mut over, mut worst) = (0, 0, 0.0f64);
    for _ in 0..1000 {
        let inst = random_instance(&mut rng, 200, 200);
        let k = rng.gen_range(1..=6);
        let sel = greedy_top_k(&inst.dataset, &inst.candidates, &RuleSet::default(), &inst.relevance, k).unwrap();
        let bound = inst.candidates.len() * k;
        if sel.evaluations > bound {
            over += 1;
        }
        if bound > 0 {
            worst = worst.max(sel.evaluations as f64 / bound as f64);
        }
        runs += 1;
    }
    Outcome {
        pass: over == 0,
        detail: format!("{runs} greedy runs, {over} exceed n x k, max evaluations / (n x k) = {worst:.3}"),
    }
}

fn lexicographic_ranking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let cats = InsightCategory::ALL;
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=20);
        let batch: Vec<InsightCandidate> = (0..n)
            .map(|i| InsightCandidate {
                category: cats[rng.gen_range(0..3)],
                title: format!("t{i}"),
                observations: vec![],
                involved_fields: vec!["x".into()],
                value_ranges: None,
                s_vis: rng.gen_range(0..=10),
            })
            .collect();
        let flags: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        let ranked = rank_with_flags(&batch, &flags).unwrap();
        let got: Vec<(u8, u8)> = ranked.iter().map(|r| (r.i_align, r.candidate.s_vis)).collect();
        let mut want: Vec<(u8, u8)> = batch.iter().zip(&flags).map(|(c, &f)| (f, c.s_vis)).collect();
        want.sort_by(|a, b| b.cmp(a));
        if got != want {
            mismatches += 1;
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("10000 batches, {mismatches} orderings differ from (i_align, s_vis) descending"),
    }
}

fn debounce_boundary() -> Outcome {
    let event = |t: i64, d: u64| InteractionEvent {
        action_type: ActionType::Hover,
        target_fields: vec!["Age".into()],
        predicate: Predicate::equals("Age", 30.0),
        value_range: None,
        timestamp_ms: t,
        duration_ms: d,
    };
    let mut log = InteractionLog::default();
    let a = log.record(event(1, 499)).unwrap();
    let b = log.record(event(2, 500)).unwrap();
    let mut off = InteractionLog::new(false);
    let c = off.record(event(3, 500)).unwrap();
    let d = off.record(event(4, 60_000)).unwrap();
    let pass = a.dropped() && b == RecordOutcome::Recorded && c.dropped() && d.dropped() && log.len() == 1 && off.is_empty();
    Outcome {
        pass,
        detail: format!("499 ms -> {a:?}, 500 ms -> {b:?}, tracking off -> {c:?} / {d:?}"),
    }
}

fn invalid_spec(field: &str) -> String {
    json!({"spec": {"data": {"name": "sleep_health"}, "mark": "bar",
        "encoding": {"x": {"field": field, "type": "nominal"}}}})
    .to_string()
}

fn rollback_integrity(rt: &tokio::runtime::Runtime) -> Outcome {
    rt.block_on(async {
        let replies = vec![invalid_spec("Missing"), "no json here".to_string(), invalid_spec("Ghost")];
        let transport = Arc::new(ScriptedTransport::new(replies));
        let api = Api::new(transport.clone());
        let sid = api.sleep_session().await;
        let before = api.get(&format!("/sessions/{sid}/export")).await.body;
        let crumbs_before = api.get(&format!("/sessions/{sid}/breadcrumb")).await.body;
        let r = api.post(&format!("/sessions/{sid}/drill"), json!({"instruction": "focus on nurses"})).await.json();
        let after = api.get(&format!("/sessions/{sid}/export")).await.body;
        let crumbs_after = api.get(&format!("/sessions/{sid}/breadcrumb")).await.body;
        let corrected = transport.prompts().iter().skip(1).all(|p| p.user_text.contains("## Correction"));
        let pass = r["status"] == "rolled_back"
            && r["attempts"] == 3
            && before == after
            && crumbs_before == crumbs_after
            && transport.calls() == 3
            && corrected;
        Outcome {
            pass,
            detail: format!(
                "status {}, attempts {}, export identical: {}, breadcrumb identical: {}, corrective prompts: {}",
                r["status"],
                r["attempts"],
                before == after,
                crumbs_before == crumbs_after,
                corrected
            ),
        }
    })
}

/// Checks a tree through its exported JSON only.
fn tree_violations(tree: &ExplorationTree) -> Vec<String> {
    let mut v = Vec::new();
    let doc = serde_json::to_value(tree).unwrap();
    let nodes = doc["nodes"].as_array().unwrap();
    let parent: HashMap<&str, Option<&str>> = nodes
        .iter()
        .map(|n| (n["id"].as_str().unwrap(), n["parent"].as_str()))
        .collect();
    let roots: Vec<&&str> = parent.iter().filter(|(_, p)| p.is_none()).map(|(id, _)| id).collect();
    if roots.len() != 1 || *roots[0] != doc["root_id"].as_str().unwrap() {
        v.push(format!("roots {roots:?}"));
    }
    for (&id, &p) in &parent {
        if let Some(p) = p {
            if !parent.contains_key(p) {
                v.push(format!("{id} has dangling parent {p}"));
            }
        }
        let mut cur = Some(id);
        let mut steps = 0;
        while let Some(c) = cur {
            cur = parent.get(c).copied().flatten();
            steps += 1;
            if steps > parent.len() {
                v.push(format!("cycle through {id}"));
                break;
            }
        }
    }
    let with_children: HashSet<&str> = parent.values().flatten().copied().collect();
    let leaves = parent.keys().filter(|id| !with_children.contains(*id)).count();
    if tree.branches().len() != leaves {
        v.push(format!("{} branches vs {leaves} leaves", tree.branches().len()));
    }
    let mut chain = Vec::new();
    let mut cur = doc["active_id"].as_str();
    while let Some(c) = cur {
        chain.push(c.to_string());
        cur = parent.get(c).copied().flatten();
    }
    chain.reverse();
    let crumbs: Vec<String> = tree.breadcrumb().into_iter().map(|b| b.id).collect();
    if crumbs != chain {
        v.push(format!("breadcrumb {crumbs:?} vs ancestors {chain:?}"));
    }
    let back: ExplorationTree = serde_json::from_value(doc.clone()).unwrap();
    if back != *tree || serde_json::to_value(&back).unwrap() != doc {
        v.push("serialisation round trip differs".into());
    }
    v
}

fn tree_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let root = ChartSpec::new("d", Mark::Bar)
        .encode("x", Encoding::field("Region", MeasureType::Nominal))
        .encode("y", Encoding::count());
    let mut violations = Vec::new();
    let mut ops = 0;
    for seq in 0..1000 {
        let mut tree = ExplorationTree::init(root.clone(), 0).unwrap();
        for step in 0..50 {
            let ids: Vec<String> = tree.nodes().iter().map(|n| n.id.clone()).collect();
            match rng.gen_range(0..10) {
                0..=4 => {
                    let label = format!("Age > {}", rng.gen_range(0..100));
                    let spec = tree.active().spec.clone().with_filter(Predicate::equals("Region", format!("r{step}").as_str()));
                    let parent = tree.active_id().to_string();
                    tree.add_child(&parent, spec, vec![label], step).unwrap();
                }
                5..=6 => {
                    tree.jump_to(ids.choose(&mut rng).unwrap()).unwrap();
                }
                7..=8 => {
                    let leaves: Vec<String> = tree.branches().into_iter().map(|b| b.leaf_id).collect();
                    tree.switch_branch(leaves.choose(&mut rng).unwrap()).unwrap();
                }
                _ => tree.reset(),
            }
            ops += 1;
            for e in tree_violations(&tree) {
                violations.push(format!("seq {seq} step {step}: {e}"));
            }
        }
    }
    Outcome {
        pass: violations.is_empty(),
        detail: format!(
            "1000 sequences x 50 ops ({ops} ops), {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(", first: {v}")).unwrap_or_default()
        ),
    }
}

async fn scripted_session() -> Vec<Vec<u8>> {
    let api = Api::mock();
    let mut bodies = Vec::new();
    let r = api.post("/sessions", Value::Null).await;
    let sid = r.json()["session_id"].as_str().unwrap().to_string();
    bodies.push(r.body);
    let base = format!("/sessions/{sid}");
    bodies.push(api.upload(&sid, "sleep_health", SLEEP_CSV).await.body);
    for (t, d) in [(1_000, 900), (3_000, 300)] {
        let ev = json!({"action_type": "brush", "target_fields": ["Age"],
            "predicate": {"kind": "range", "field": "Age", "low": 30, "high": 50},
            "timestamp_ms": t, "duration_ms": d});
        bodies.push(api.post(&format!("{base}/interactions"), ev).await.body);
    }
    let drill = api.post(&format!("{base}/drill"), json!({"instruction": "compare Stress Level across Occupation"})).await;
    bodies.push(drill.body);
    let insights = api.post(&format!("{base}/insights"), Value::Null).await;
    let tag = insights.json()["high_level_dimensions"][0]["label"].clone();
    bodies.push(insights.body);
    bodies.push(api.post(&format!("{base}/drill"), json!({"dimension_tag": tag})).await.body);
    bodies.push(api.get(&format!("{base}/breadcrumb")).await.body);
    bodies.push(api.post(&format!("{base}/jump"), json!({"node_id": "n0"})).await.body);
    bodies.push(api.post(&format!("{base}/drill"), json!({"instruction": "only Gender = Male"})).await.body);
    bodies.push(api.get(&format!("{base}/branches")).await.body);
    bodies.push(api.get(&format!("{base}/export")).await.body);
    bodies
}

fn end_to_end_determinism(rt: &tokio::runtime::Runtime) -> Outcome {
    let runs: Vec<Vec<Vec<u8>>> = (0..3).map(|_| rt.block_on(scripted_session())).collect();
    let requests = runs[0].len();
    let differing = (0..requests).filter(|&i| runs.iter().any(|r| r[i] != runs[0][i])).count();
    let branches: Value = serde_json::from_slice(&runs[0][10]).unwrap_or(Value::Null);
    let forked = branches.as_array().map_or(0, Vec::len) == 2;
    Outcome {
        pass: requests == 12 && differing == 0 && forked,
        detail: format!("{requests} requests x 3 runs, {differing} responses differ, fork present: {forked}"),
    }
}

fn cold_start(rt: &tokio::runtime::Runtime) -> Outcome {
    let transport = Arc::new(Recording::new(MockTransport::new()));
    let adapter = LlmAdapter::new(ProviderConfig::default(), transport.clone());
    let fields: Vec<FieldRef> = ["Age", "Gender", "Occupation"].into_iter().map(FieldRef::from).collect();
    let empty = relevance_coefficients(&fields, &IntentBundle::default(), &adapter).unwrap();
    let base_only = IntentBundle {
        base_filters: vec![Predicate::equals("Gender", "Female")],
        ..IntentBundle::default()
    };
    let with_base = relevance_coefficients(&fields, &base_only, &adapter).unwrap();
    let all_one = |m: &RelevanceMap| fields.iter().all(|f| m.get(f) == Some(1.0));
    let calls = transport.calls();

    let drill = rt.block_on(async {
        let api = Api::mock();
        let sid = api.sleep_session().await;
        api.post(&format!("/sessions/{sid}/drill"), json!({"instruction": "Sleep Duration < 7"})).await.json()
    });
    let pass = calls == 0 && all_one(&empty) && all_one(&with_base) && drill["status"] == "ok";
    Outcome {
        pass,
        detail: format!(
            "adapter calls {calls}, coefficients all 1.0: {}, drill from instruction alone: {}",
            all_one(&empty) && all_one(&with_base),
            drill["status"]
        ),
    }
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let mut results = Vec::new();
    report(&mut results, "greedy matches brute-force oracle (k=1)", greedy_oracle_equivalence());
    report(&mut results, "six-row worked fixture", six_row_fixture());
    report(&mut results, "MCount exactness and monotonicity", mcount_correctness());
    report(&mut results, "score evaluations bounded by n x k", evaluation_bound());
    report(&mut results, "lexicographic insight ranking", lexicographic_ranking());
    report(&mut results, "500 ms debounce boundary", debounce_boundary());
    report(&mut results, "drill rollback integrity", rollback_integrity(&rt));
    report(&mut results, "exploration tree invariants", tree_invariants());
    report(&mut results, "end-to-end determinism", end_to_end_determinism(&rt));
    report(&mut results, "cold-start contract", cold_start(&rt));
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
