use std::sync::OnceLock;

use edgeloc::encoder::{Backend, Representation};
use edgeloc::evaluate::{
    accuracy_at_radius, compare_pipelines, frames_csv, parse_sweep_values, report_from_outcomes, run_sweep, write_report, FrameOutcome, SweepAxis,
};
use edgeloc::geotile::WorldCoord;
use edgeloc::index::{Estimator, LocalizationResult, LocalizeParams};
use edgeloc::pipeline::{EncoderSpec, Localizer, Scenario, ScenarioSpec};
use edgeloc::simulator::{PerturbationSpec, SeasonShift, TerrainSpec, TrajectoryPreset};
use proptest::prelude::*;

fn result_at(e: f64, n: f64, ratio: f64, accepted: bool) -> LocalizationResult {
    LocalizationResult {
        predicted: WorldCoord::new(e, n),
        best_id: 0,
        top_score: 0.9,
        lowe_ratio: ratio,
        accepted,
        estimator: Estimator::Argmax,
        fallback: false,
    }
}

struct Small {
    scenario: Scenario,
    localizer: Localizer,
}

fn small() -> &'static Small {
    static CELL: OnceLock<Small> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = ScenarioSpec {
            terrain: TerrainSpec {
                seed: 21,
                width: 512,
                height: 256,
                ..TerrainSpec::default()
            },
            preset: TrajectoryPreset::named("B").unwrap().scaled(1.0 / 40.0),
            tile_size: 64,
            season: SeasonShift::new(1021),
            trajectory_seed: 2021,
        };
        let scenario = Scenario::build(&spec).unwrap();
        let mut enc = EncoderSpec::new(Backend::Autoencoder, Representation::canny_default(), 16);
        enc.train.epochs = 3;
        enc.train.seed = 21;
        let (localizer, _) = Localizer::train(&scenario, &enc).unwrap();
        Small { scenario, localizer }
    })
}

#[test]
fn perfect_predictions_score_one() {
    let truth: Vec<WorldCoord> = (0..6).map(|i| WorldCoord::new(i as f64 * 10.0, 5.0)).collect();
    let results: Vec<_> = truth.iter().map(|t| result_at(t.easting, t.northing, 2.0, true)).collect();
    for gated in [false, true] {
        let r = accuracy_at_radius(&results, &truth, 15.0, gated).unwrap();
        assert_eq!((r.accuracy, r.retention, r.n_correct), (1.0, 1.0, 6));
        assert!(r.frames.iter().all(|f| f.error_m == Some(0.0)));
    }
}

#[test]
fn gated_accuracy_excludes_rejected_frames() {
    let truth = vec![WorldCoord::new(0.0, 0.0); 4];
    let results = [
        result_at(1.0, 1.0, 1.5, true),
        result_at(500.0, 0.0, 1.01, false),
        result_at(0.0, 14.0, 1.3, true),
        result_at(0.0, 900.0, 1.02, false),
    ];
    let gated = accuracy_at_radius(&results, &truth, 15.0, true).unwrap();
    assert_eq!((gated.accuracy, gated.retention), (1.0, 0.5));
    let ungated = accuracy_at_radius(&results, &truth, 15.0, false).unwrap();
    assert_eq!((ungated.accuracy, ungated.retention), (0.5, 1.0));
}

/// On a fixture where every frame below some ratio is wrong, raising the
/// threshold never lowers gated accuracy.
#[test]
fn raising_threshold_on_error_only_rejections() {
    let truth = vec![WorldCoord::new(0.0, 0.0); 10];
    let ratios = [1.01, 1.02, 1.05, 1.08, 1.1, 1.2, 1.3, 1.5, 2.0, 3.0];
    let mut last = 0.0;
    for thr in [1.0, 1.03, 1.06, 1.09, 1.13, 1.25, 1.4] {
        let results: Vec<_> = ratios
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let off = if i < 5 { 100.0 } else { 3.0 };
                result_at(off, 0.0, r, r >= thr)
            })
            .collect();
        let acc = accuracy_at_radius(&results, &truth, 15.0, true).unwrap().accuracy;
        assert!(acc >= last, "threshold {thr}: {acc} < {last}");
        last = acc;
    }
    assert_eq!(last, 1.0);
}

#[test]
fn comparison_extremes() {
    let truth = vec![WorldCoord::new(0.0, 0.0); 5];
    let good: Vec<_> = (0..5).map(|_| result_at(0.0, 0.0, 2.0, true)).collect();
    let bad: Vec<_> = (0..5).map(|_| result_at(99.0, 0.0, 2.0, true)).collect();
    let a = accuracy_at_radius(&good, &truth, 15.0, false).unwrap();
    let b = accuracy_at_radius(&bad, &truth, 15.0, false).unwrap();
    assert_eq!(compare_pipelines(&a, &a).unwrap().difference, 0.0);
    let c = compare_pipelines(&a, &b).unwrap();
    assert_eq!((c.difference, c.only_a, c.only_b), (1.0, 5, 0));
    let short = accuracy_at_radius(&good[..4], &truth[..4], 15.0, false).unwrap();
    assert!(compare_pipelines(&a, &short).is_err());
}

#[test]
fn sweep_value_parsing() {
    assert_eq!(parse_sweep_values("0:15:5").unwrap(), vec![0.0, 5.0, 10.0, 15.0]);
    assert_eq!(parse_sweep_values("0:200:20").unwrap().len(), 11);
    assert_eq!(parse_sweep_values("3, 1.5").unwrap(), vec![3.0, 1.5]);
    assert!(parse_sweep_values("0:10:0").is_err());
    assert!(parse_sweep_values("a,b").is_err());
    assert!(SweepAxis::Rotation.check_values(&[3.0, 1.5]).is_err());
    assert!(SweepAxis::Altitude.check_values(&[0.0, 250.0]).is_err());
    assert_eq!(SweepAxis::Altitude.range().1, 200.0);
}

#[test]
fn zero_sweep_value_equals_unperturbed_evaluation() {
    let s = small();
    let params = LocalizeParams::default();
    let plain = s.localizer.evaluate(&s.scenario, &PerturbationSpec::default(), &params, 15.0, false).unwrap();
    for axis in [SweepAxis::Rotation, SweepAxis::Altitude] {
        let sweep = run_sweep(axis, &[0.0], |p| s.localizer.evaluate(&s.scenario, p, &params, 15.0, false)).unwrap();
        assert_eq!(sweep.points[0].report, plain);
    }
}

#[test]
fn rotation_sweep_reports_in_order_and_repeat_identically() {
    let s = small();
    let params = LocalizeParams::default();
    let values = [0.0, 5.0, 10.0, 15.0];
    let run = || run_sweep(SweepAxis::Rotation, &values, |p| s.localizer.evaluate(&s.scenario, p, &params, 15.0, true)).unwrap();
    let a = run();
    assert_eq!(a.points.iter().map(|p| p.value).collect::<Vec<_>>(), values);
    assert!(a.points.iter().all(|p| p.report.n_frames == s.scenario.poses.len()));

    let b = run();
    let dir = tempfile::tempdir().unwrap();
    for (tag, sweep) in [("a", &a), ("b", &b)] {
        for p in &sweep.points {
            write_report(dir.path(), &format!("{tag}_{}", p.value), &p.report).unwrap();
        }
    }
    for v in values {
        for ext in ["json", "csv"] {
            let read = |tag: &str| std::fs::read(dir.path().join(format!("{tag}_{v}.{ext}"))).unwrap();
            assert_eq!(read("a"), read("b"), "{v} {ext}");
        }
    }
}

#[test]
fn frame_failures_stay_in_the_report() {
    let truth = vec![WorldCoord::new(0.0, 0.0); 3];
    let outcomes: Vec<FrameOutcome> = vec![Ok(result_at(0.0, 0.0, 2.0, true)), Err("view out of bounds".into()), Ok(result_at(1.0, 0.0, 1.0, false))];
    let r = report_from_outcomes(&outcomes, &truth, 15.0, false).unwrap();
    assert_eq!(r.n_frames, 3);
    assert_eq!(r.n_correct, 2);
    assert_eq!(r.frames[1].failure.as_deref(), Some("view out of bounds"));
    assert_eq!(frames_csv(&r).unwrap().lines().count(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn report_bounds_and_purity(
        frames in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, 1.0f64..3.0, any::<bool>()), 1..40),
        radius in 0.0f64..60.0,
        gated in any::<bool>(),
    ) {
        let truth = vec![WorldCoord::new(0.0, 0.0); frames.len()];
        let results: Vec<_> = frames.iter().map(|&(e, n, r, a)| result_at(e, n, r, a)).collect();
        let rep = accuracy_at_radius(&results, &truth, radius, gated).unwrap();
        prop_assert!((0.0..=1.0).contains(&rep.accuracy));
        prop_assert!((0.0..=1.0).contains(&rep.retention));
        let denom = if gated { rep.n_accepted } else { rep.n_frames };
        if denom > 0 {
            prop_assert!((rep.accuracy - rep.n_correct as f64 / denom as f64).abs() < 1e-12);
        }
        prop_assert_eq!(rep.clone(), accuracy_at_radius(&results, &truth, radius, gated).unwrap());
    }
}
