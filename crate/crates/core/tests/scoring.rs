mod common;

use std::collections::BTreeMap;

use common::count_oracle;
use docie_core::corpus::EntitySchema;
use docie_core::eval::{count_document, score, MatchOptions};
use proptest::prelude::*;

const ENTITIES: [&str; 3] = ["company", "date", "total"];

fn entity_map() -> impl Strategy<Value = BTreeMap<String, Vec<String>>> {
    let value = prop::sample::select(vec!["A1", "a1", " A1", "b2", "B2 ", "c3", "77.10", "x"]).prop_map(String::from);
    let name = prop::sample::select(vec!["company", "date", "total", "address"]).prop_map(String::from);
    prop::collection::btree_map(name, prop::collection::vec(value, 0..4), 0..4)
}

fn ground_truth() -> impl Strategy<Value = BTreeMap<String, Vec<String>>> {
    entity_map().prop_map(|mut m| {
        m.remove("address");
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn counts_match_exhaustive_matching(pred in entity_map(), gt in ground_truth(), exact in any::<bool>()) {
        let schema = EntitySchema::new(ENTITIES).unwrap();
        let opts = if exact { MatchOptions::EXACT } else { MatchOptions::default() };
        let names: Vec<String> = ENTITIES.iter().map(|s| s.to_string()).collect();
        let oracle = count_oracle(&pred, &gt, &names, |s| opts.normalize(s));
        let got: BTreeMap<String, (usize, usize, usize)> =
            count_document(&pred, &gt, &schema, opts).into_iter().map(|(k, c)| (k, (c.tp, c.fp, c.fn_))).collect();
        prop_assert_eq!(got, oracle);
    }

    #[test]
    fn swapping_roles_swaps_precision_and_recall(pred in ground_truth(), gt in ground_truth()) {
        let schema = EntitySchema::new(ENTITIES).unwrap();
        let a = score(&pred, &gt, &schema, MatchOptions::default());
        let b = score(&gt, &pred, &schema, MatchOptions::default());
        for name in ENTITIES {
            let (x, y) = (&a.per_entity[name], &b.per_entity[name]);
            prop_assert_eq!(x.precision, y.recall);
            prop_assert_eq!(x.f1, y.f1);
        }
    }

    #[test]
    fn micro_scores_follow_from_pooled_counts(pred in entity_map(), gt in ground_truth()) {
        let schema = EntitySchema::new(ENTITIES).unwrap();
        let r = score(&pred, &gt, &schema, MatchOptions::default());
        let (tp, fp, fn_) = r.per_entity.values().fold((0, 0, 0), |a, s| (a.0 + s.counts.tp, a.1 + s.counts.fp, a.2 + s.counts.fn_));
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let q = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f = if p + q == 0.0 { 0.0 } else { 2.0 * p * q / (p + q) };
        prop_assert!((r.micro.f1 - f).abs() < 1e-12);
        let mean = ENTITIES.iter().map(|n| r.per_entity[*n].f1).sum::<f64>() / ENTITIES.len() as f64;
        prop_assert!((r.mean_f1 - mean).abs() < 1e-12);
    }
}

#[test]
fn perfect_prediction_scores_one() {
    let schema = EntitySchema::new(ENTITIES).unwrap();
    let gt: BTreeMap<String, Vec<String>> = ENTITIES.iter().map(|n| (n.to_string(), vec![format!("{n}-v")])).collect();
    let r = score(&gt, &gt, &schema, MatchOptions::EXACT);
    assert_eq!(r.micro.f1, 1.0);
    assert_eq!(r.mean_f1, 1.0);
}
