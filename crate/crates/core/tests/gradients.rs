mod common;

use common::{ffl_focal_gradient, loss_gradient, model_gradient, LossKind};

#[test]
fn l1_matches_finite_differences() {
    for side in [8, 16] {
        let c = loss_gradient(LossKind::L1, side, 1).unwrap();
        assert!(c.worst < 1e-3, "{c:?}");
    }
}

#[test]
fn ms_ssim_matches_finite_differences() {
    for side in [16, 32] {
        let c = loss_gradient(LossKind::MsSsim, side, 2).unwrap();
        assert!(c.worst < 1e-3, "{c:?}");
    }
}

#[test]
fn ffl_matches_finite_differences() {
    for side in [8, 16] {
        let c = loss_gradient(LossKind::Ffl, side, 3).unwrap();
        assert!(c.worst < 1e-3, "{c:?}");
    }
    let c = ffl_focal_gradient(8, 5).unwrap();
    assert!(c.worst < 1e-3, "{c:?}");
}

#[test]
fn lite_model_matches_finite_differences() {
    let (c, missing) = model_gradient(6, 4).unwrap();
    assert!(missing.is_empty(), "no gradient for {missing:?}");
    assert!(c.checked > 50);
    assert!(c.worst < 1e-3, "{c:?}");
}
