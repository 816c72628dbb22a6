mod common;

use std::collections::HashSet;

use clinfusion::cohort::{
    assign_binary_label, generate_cohort, split_cohort, BinaryLabel, LabPanel, LabelRule, SynthConfig, CATALOG_ITEMS,
};
use clinfusion::textualize::{serialize_panel, SerializationSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rule_panel(ac: Option<u32>, poct: Option<u32>, a1c: Option<u32>) -> LabPanel {
    let mut p = LabPanel::new();
    if let Some(v) = ac {
        p.insert("Glucose AC", v.to_string()).unwrap();
    }
    if let Some(v) = poct {
        p.insert("Glucose AC (POCT)", v.to_string()).unwrap();
    }
    if let Some(v) = a1c {
        p.insert("HbA1c", format!("{}.{}", v / 10, v % 10)).unwrap();
    }
    p
}

fn panel_strategy() -> impl Strategy<Value = Vec<(usize, String)>> {
    prop::collection::vec((0..CATALOG_ITEMS.len(), "[0-9]{1,3}(\\.[0-9]{1,3})?"), 0..8)
}

fn build(pairs: &[(usize, String)]) -> LabPanel {
    let mut p = LabPanel::new();
    for (i, raw) in pairs {
        if !p.contains(CATALOG_ITEMS[*i]) {
            p.insert(CATALOG_ITEMS[*i], raw.clone()).unwrap();
        }
    }
    p
}

proptest! {
    #[test]
    fn raising_a_rule_value_never_clears_a_positive(
        ac in prop::option::of(50u32..250),
        poct in prop::option::of(50u32..250),
        a1c in prop::option::of(40u32..120),
        bump in 0u32..60,
        which in 0usize..3,
    ) {
        let rule = LabelRule::default();
        let before = assign_binary_label(&rule_panel(ac, poct, a1c), &rule).unwrap();
        let raise = |v: Option<u32>, i: usize| if i == which { v.map(|x| x + bump) } else { v };
        let after = assign_binary_label(&rule_panel(raise(ac, 0), raise(poct, 1), raise(a1c, 2)), &rule).unwrap();
        if before == BinaryLabel::Positive {
            prop_assert_eq!(after, BinaryLabel::Positive);
        }
    }

    #[test]
    fn distinct_panels_serialize_differently(a in panel_strategy(), b in panel_strategy()) {
        let (pa, pb) = (build(&a), build(&b));
        let spec = SerializationSpec::default();
        if pa.raw_pairs() != pb.raw_pairs() {
            prop_assert_ne!(serialize_panel(&pa, &spec), serialize_panel(&pb, &spec));
        }
    }

    #[test]
    fn split_sides_share_no_patient(ratio in 0.1f64..0.9, seed in 0u64..50) {
        let cohort = generate_cohort(&SynthConfig { n_patients: 30, encounters_per_patient: 3, seed, ..SynthConfig::default() }).unwrap();
        let (train, test) = split_cohort(&cohort, ratio, seed).unwrap();
        let a: HashSet<&str> = train.iter().map(|r| r.patient_id.as_str()).collect();
        let b: HashSet<&str> = test.iter().map(|r| r.patient_id.as_str()).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(train.len() + test.len(), cohort.len());
    }
}

#[test]
fn generated_labels_match_an_independent_rule() {
    let cohort = generate_cohort(&SynthConfig {
        n_patients: 400,
        encounters_per_patient: 2,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    for r in &cohort {
        let get = |n: &str| r.panel.get(n).map(|v| v.raw().parse::<f64>().unwrap());
        let expected = common::diabetes_rule_oracle(get("Glucose AC"), get("Glucose AC (POCT)"), get("HbA1c"));
        let stored = match r.label_binary {
            BinaryLabel::Positive => Some(true),
            BinaryLabel::Negative => Some(false),
            BinaryLabel::Unlabeled => None,
        };
        assert_eq!(stored, expected, "{}", r.record_id());
    }
}

#[test]
fn random_panel_fixture_round_trips_in_both_orders() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in [SerializationSpec::default(), SerializationSpec::alphabetical()] {
        for _ in 0..500 {
            let p = common::random_panel(&mut rng);
            let mut pairs = clinfusion::textualize::parse_serialized(&serialize_panel(&p, &spec), &spec).unwrap();
            let mut want = p.raw_pairs();
            pairs.sort();
            want.sort();
            assert_eq!(pairs, want);
        }
    }
}
