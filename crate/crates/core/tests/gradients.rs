use ascnet::training::{grad_check_default, relative_error, CheckStatus, GradTarget};
use ascnet::{tensor::softmax_cross_entropy, LabelMap, RngState, Tensor};

fn check(target: GradTarget, seeds: std::ops::Range<u64>) {
    for seed in seeds {
        let report = grad_check_default(target, seed).unwrap();
        assert!(report.passed(), "seed {seed}\n{report}");
        assert!(report.max_rel_err() < target.default_tolerance());
    }
}

#[test]
fn classic_gradients() {
    check(GradTarget::Classic, 0..3);
    assert_eq!(GradTarget::Classic.default_tolerance(), 1e-6);
}

#[test]
fn dilated_gradients() {
    check(GradTarget::Dilated, 0..3);
}

#[test]
fn asc_gradients_cover_all_groups() {
    check(GradTarget::Asc, 0..5);
    let report = grad_check_default(GradTarget::Asc, 42).unwrap();
    for group in ["input", "weight", "bias", "rates"] {
        let g = report.group(group).unwrap_or_else(|| panic!("missing {group}"));
        assert_eq!(g.status, CheckStatus::Pass);
        assert!(g.checked > 0);
    }
}

#[test]
fn asc_gradients_at_integer_rates() {
    check(GradTarget::AscIntegerRates, 0..3);
}

#[test]
fn rate_network_gradients() {
    check(GradTarget::RateNet, 0..3);
}

#[test]
fn end_to_end_gradients_include_rate_network() {
    check(GradTarget::Model, 0..3);
    let report = grad_check_default(GradTarget::Model, 7).unwrap();
    let ratenet: Vec<_> = report
        .groups
        .iter()
        .filter(|g| g.name.starts_with("ratenet."))
        .collect();
    assert_eq!(ratenet.len(), 6);
    assert!(ratenet.iter().all(|g| g.status == CheckStatus::Pass && g.checked > 0));
}

#[test]
fn cross_entropy_gradient_matches_differences() {
    let mut rng = RngState::new(3);
    let shape = [1, 3, 4, 5];
    let data: Vec<f64> = (0..60).map(|_| 2.0 * rng.normal()).collect();
    let labels = LabelMap::new(4, 5, (0..20).map(|_| rng.int_range(0, 2) as u32).collect()).unwrap();
    let logits = Tensor::from_vec(&shape, data.clone()).unwrap();
    let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
    let h = 1e-5;
    for i in 0..data.len() {
        let eval = |d: f64| {
            let mut v = data.clone();
            v[i] += d;
            softmax_cross_entropy(&Tensor::from_vec(&shape, v).unwrap(), &labels).unwrap().0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(relative_error(grad.data()[i], numeric) < 1e-6, "logit {i}");
    }
}
