use std::collections::BTreeMap;

use dynpanel_harness::config::{ExperimentConfig, TargetName, TolerancePolicy};
use dynpanel_harness::experiment::summarize;
use dynpanel_harness::scenarios;
use proptest::prelude::*;

proptest! {
    #[test]
    fn summary_moments_are_consistent(
        values in prop::collection::vec(-50.0..50.0f64, 2..200),
        target in -50.0..50.0f64,
    ) {
        let tol = TolerancePolicy::default();
        let row = summarize("est", "beta_hat", TargetName::Plim2sls, Some(target), &values, &BTreeMap::new(), &tol);
        let n = values.len() as f64;
        let (mean, sd, bias, rmse) = (row.mean.unwrap(), row.sd.unwrap(), row.bias.unwrap(), row.rmse.unwrap());
        // RMSE² = bias² + (n − 1)/n · sd².
        let lhs = rmse * rmse;
        let rhs = bias * bias + (n - 1.0) / n * sd * sd;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs), "{lhs} vs {rhs}");
        prop_assert!((row.mc_se.unwrap() - sd / n.sqrt()).abs() <= 1e-12 * (1.0 + sd));
        prop_assert!((bias - (mean - target)).abs() <= 1e-12 * (1.0 + mean.abs()));
        let cov = row.coverage.unwrap();
        prop_assert!((0.0..=1.0).contains(&cov));
        prop_assert_eq!(row.successes, values.len());
        let within = bias.abs() <= tol.abs_floor.max(tol.k * row.mc_se.unwrap());
        prop_assert_eq!(row.within_tolerance, Some(within));
    }

    #[test]
    fn summary_without_target_has_no_error_metrics(values in prop::collection::vec(-5.0..5.0f64, 0..20)) {
        let row = summarize("est", "mu_tau2_hat", TargetName::AteTau2OverD1, None, &values, &BTreeMap::new(), &TolerancePolicy::default());
        prop_assert!(row.bias.is_none() && row.rmse.is_none() && row.coverage.is_none());
        prop_assert_eq!(row.mean.is_some(), !values.is_empty());
    }

    #[test]
    fn config_digest_tracks_content(seed in any::<u64>(), reps in 1usize..1000) {
        let mut cfg = scenarios::get("convex_weights").unwrap().config().unwrap();
        cfg.seed = seed;
        cfg.replications = reps;
        let round: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(cfg.digest(), round.digest());
        let mut other = cfg.clone();
        other.seed = seed.wrapping_add(1);
        prop_assert_ne!(cfg.digest(), other.digest());
    }
}

#[test]
fn every_bundled_scenario_validates_and_names_known_targets() {
    for s in scenarios::all() {
        let cfg = s.config().unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        assert_eq!(cfg.name, s.name);
        for e in &cfg.estimators {
            assert!(!e.quantities().is_empty());
        }
    }
}

#[test]
fn target_names_serialize_as_their_labels() {
    for t in [
        TargetName::ConvexAggregate,
        TargetName::Plim2sls,
        TargetName::AteTau2OverD1,
        TargetName::AteTau2D1Is0,
        TargetName::AteTau2D1Is1,
        TargetName::AteTau1,
        TargetName::BetaStar,
        TargetName::GammaStar,
    ] {
        assert_eq!(serde_json::to_value(t).unwrap(), serde_json::Value::String(t.label().into()));
        let back: TargetName = serde_json::from_value(serde_json::Value::String(t.label().into())).unwrap();
        assert_eq!(back, t);
    }
}
