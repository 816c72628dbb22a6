mod common;

use std::path::PathBuf;

use clinfusion::attribution::{
    color, explain_record, render_html, AttributionReport, ExplainConfig, FeatureAttribution, Granularity, Method,
    MethodChoice, Prescreen,
};
use clinfusion::cohort::{BinaryLabel, LabCatalog, LabPanel};
use clinfusion::fusion::{FusionModel, Mode};

use common::*;

fn fixed_report() -> AttributionReport {
    let text = "Glucose AC:148, HbA1c:5.9, LDL Cholesterol:<80".to_string();
    AttributionReport {
        record_id: "P000042@2020-12-24".into(),
        mode: Mode::LabsOnly,
        granularity: Granularity::LabItem,
        target_class: 1,
        method: Method::Exact,
        base_value: 0.125,
        full_value: 0.875,
        features: vec![
            FeatureAttribution {
                name: "Glucose AC".into(),
                span: Some((0, 14)),
                value: 0.6,
                std_error: None,
            },
            FeatureAttribution {
                name: "LDL Cholesterol".into(),
                span: Some((27, 46)),
                value: -0.15,
                std_error: None,
            },
            FeatureAttribution {
                name: "HbA1c".into(),
                span: Some((16, 25)),
                value: 0.3,
                std_error: None,
            },
        ],
        prescreen: Some(Prescreen {
            k: 3,
            candidates: 9,
            kept: vec![0, 4, 7],
        }),
        text,
    }
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/attribution_report.html")
}

#[test]
fn html_matches_golden_bytes() {
    let html = render_html(&fixed_report());
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &html).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).unwrap();
    assert_eq!(html, golden);
}

#[test]
fn sign_flip_swaps_red_and_blue() {
    let report = fixed_report();
    let mut flipped = report.clone();
    for f in &mut flipped.features {
        f.value = -f.value;
    }
    let html = render_html(&report);
    let html_flipped = render_html(&flipped);
    let max = report.max_abs();
    for f in &report.features {
        let (r, g, b) = color(f.value, max);
        let hex = |r: u8, g: u8, b: u8| format!("background:#{r:02x}{g:02x}{b:02x}");
        assert!(html.contains(&hex(r, g, b)));
        assert!(html_flipped.contains(&hex(b, g, r)));
        assert_eq!(color(-f.value, max), (b, g, r));
    }
    assert_ne!(html, html_flipped);
}

#[test]
fn one_present_item_gets_the_whole_difference() {
    let cohort = small_cohort(60, 4);
    let cfg = tiny_model(Mode::LabsOnly);
    let model = FusionModel::for_training(cfg, &cohort, &LabCatalog::default(), 4).unwrap();
    let mut record = cohort[0].clone();
    record.panel = LabPanel::from_pairs([("Glucose AC", "131")]).unwrap();
    let rep = explain_record(&model, &record, &ExplainConfig::default()).unwrap();
    assert_eq!(rep.features.len(), 1);
    assert_eq!(rep.method, Method::Exact);
    assert!((rep.features[0].value - (rep.full_value - rep.base_value)).abs() < 1e-15);
    assert_eq!(rep.full_value, model.forward(&record).unwrap()[1]);
    assert_eq!(rep.features[0].span, Some((0, "Glucose AC:131".len())));
}

#[test]
fn full_coalition_value_is_the_model_probability() {
    let cohort = small_cohort(60, 5);
    for mode in [Mode::Fusion, Mode::LabsText] {
        let model = FusionModel::for_training(tiny_model(mode), &cohort, &LabCatalog::default(), 5).unwrap();
        for r in cohort.iter().filter(|r| r.label_binary != BinaryLabel::Unlabeled).take(3) {
            let rep = explain_record(&model, r, &ExplainConfig::default()).unwrap();
            let p = model.forward(r).unwrap()[1];
            assert!((rep.full_value - p).abs() < 1e-12, "{mode:?}");
            if rep.method == Method::Exact {
                assert!(rep.efficiency_gap().abs() < 1e-9);
            }
        }
    }
}

#[test]
fn long_token_inputs_are_prescreened_deterministically() {
    let cohort = small_cohort(60, 6);
    let model = FusionModel::for_training(tiny_model(Mode::TextOnly), &cohort, &LabCatalog::default(), 6).unwrap();
    let record = cohort.iter().find(|r| r.note_text.split_whitespace().count() > 14).expect("a long note");
    let cfg = ExplainConfig {
        granularity: Granularity::Token,
        method: MethodChoice::Sampled { n_samples: 8, seed: 1 },
        prescreen_k: 5,
        ..ExplainConfig::default()
    };
    let a = explain_record(&model, record, &cfg).unwrap();
    let b = explain_record(&model, record, &cfg).unwrap();
    assert_eq!(a, b);
    let p = a.prescreen.as_ref().expect("prescreen applied");
    assert_eq!(p.kept.len(), 5);
    assert_eq!(a.features.len(), 5);
    assert!(p.kept.windows(2).all(|w| w[0] < w[1]));
}
