mod common;

use bicap_core::model::{ArchitectureKind, CaptionModel, ModelDims};
use bicap_core::train::grad_check;
use bicap_core::Error;
use common::random_example;

#[test]
fn every_architecture_passes_at_small_dims() {
    for arch in ArchitectureKind::ALL {
        for seed in [3, 14] {
            let m = CaptionModel::init(arch, ModelDims::new(7, 3, 4, 5), seed).unwrap();
            let r = grad_check(&m, &random_example(seed, 7, 3, 4), 1e-6, 1e-5).unwrap();
            assert!(r.passed(), "{arch} seed {seed}\n{}", r.to_text());
            assert_eq!(r.blocks.len(), m.blocks().len());
        }
    }
}

#[test]
fn larger_weights_and_odd_widths_still_pass() {
    for arch in ArchitectureKind::ALL {
        let mut m = CaptionModel::init(arch, ModelDims::new(6, 2, 3, 3), 8).unwrap();
        m.scale(6.0);
        let r = grad_check(&m, &random_example(8, 6, 2, 5), 1e-6, 1e-5).unwrap();
        assert!(r.passed(), "{arch}\n{}", r.to_text());
    }
}

#[test]
fn impossible_tolerance_fails_and_names_the_worst_entry() {
    let m = CaptionModel::init(ArchitectureKind::BiLstm, ModelDims::new(7, 3, 4, 5), 0).unwrap();
    let r = grad_check(&m, &random_example(0, 7, 3, 4), 1e-6, 1e-12).unwrap();
    assert!(!r.passed());
    let text = r.to_text();
    assert!(text.contains("FAIL"));
    let (name, worst) = r.worst().unwrap();
    assert!(text.contains(&format!("worst {name}[{}]", worst.index)));
}

#[test]
fn reports_are_deterministic() {
    let m = CaptionModel::init(ArchitectureKind::BiFLstm, ModelDims::new(7, 3, 4, 5), 5).unwrap();
    let ex = random_example(5, 7, 3, 4);
    let a = grad_check(&m, &ex, 1e-6, 1e-5).unwrap().to_text();
    let b = grad_check(&m, &ex, 1e-6, 1e-5).unwrap().to_text();
    assert_eq!(a, b);
}

#[test]
fn epsilon_out_of_range_is_rejected() {
    let m = CaptionModel::init(ArchitectureKind::BiLstm, ModelDims::new(5, 2, 3, 3), 0).unwrap();
    let ex = random_example(0, 5, 2, 3);
    for eps in [0.0, -1e-6, 2e-3, f64::NAN] {
        assert!(matches!(grad_check(&m, &ex, eps, 1e-5), Err(Error::Config(_))));
    }
}
