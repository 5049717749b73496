//! End-to-end checks of the experiment runner on micro configurations.

use iuq::config::ExperimentConfig;
use iuq::experiments::{resolve, run_experiment};

fn micro_toml(experiment: &str, extra: &str) -> String {
    format!(
        r#"
experiment = "{experiment}"
seeds = [0, 1]
epochs = 2
{extra}

[data.synthetic]
n_scenes = 4
frames_per_scene = 3
resolution = 16
reflectance_patches = 6
specular_blobs = 2
frame_jitter_px = 2
seed = 5

[model]
base_channels = 4
levels = 2
unc_hidden = 6

[train]
batch_size = 4

[eval]
subsample_size = 3000
keep_panels = 1
scatter_points = 50
"#
    )
}

fn run_micro(experiment: &str, extra: &str, dir: &std::path::Path) -> iuq::Outcome {
    let cfg: ExperimentConfig = toml::from_str(&micro_toml(experiment, extra)).unwrap();
    cfg.validate().unwrap();
    let resolved = resolve(&cfg, Some(dir), None, None).unwrap();
    run_experiment(&resolved).unwrap()
}

#[test]
fn synth_leakage_micro_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_micro("synth_leakage", "", dir.path());
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    // unet2 x {random_frame, scene} x 2 seeds
    assert_eq!(outcome.reports.len(), 4);
    // artifacts exist and reports reload
    for r in &outcome.reports {
        let p = dir.path().join("results").join(format!("{}.json", r.run_id));
        assert!(p.exists(), "{}", p.display());
        assert!(dir
            .path()
            .join("splits")
            .join(format!("{}.json", r.run_id))
            .exists());
        assert!(dir
            .path()
            .join("runs")
            .join(&r.run_id)
            .join("phase1.ckpt")
            .exists());
        assert!(dir
            .path()
            .join("logs")
            .join(format!("{}.jsonl", r.run_id))
            .exists());
    }
    // t-test records persisted
    assert!(dir.path().join("ttests").join("r_psnr_unet2.json").exists());
    assert!(dir.path().join("tables").join("protocol_comparison.csv").exists());

    // resume: a second run must not retrain (identical reports, instant)
    let cfg: ExperimentConfig = toml::from_str(&micro_toml("synth_leakage", "")).unwrap();
    let resolved = resolve(&cfg, Some(dir.path()), None, None).unwrap();
    let again = run_experiment(&resolved).unwrap();
    for (a, b) in outcome.reports.iter().zip(&again.reports) {
        assert_eq!(a.metrics_value(), b.metrics_value());
    }
}

#[test]
fn ablation_micro_has_uq_only_for_proposed() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_micro(
        "ablation",
        "archs = [\"unet2\", \"proposed_full\"]",
        dir.path(),
    );
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    for r in &outcome.reports {
        match r.arch_name.as_str() {
            "unet2" => {
                assert!(r.uq_corr.is_none());
                assert!(r.recon_psnr.is_none());
            }
            "proposed_full" => {
                assert!(r.uq_corr.is_some());
                assert!(r.recon_psnr.is_some());
                assert!(r.channel_corr.is_some());
                assert!(!r.filtering_curve.is_empty());
            }
            other => panic!("unexpected row {other}"),
        }
    }
    // ablation table row order is fixed
    let table = outcome
        .tables
        .iter()
        .find(|t| t.name == "ablation")
        .unwrap();
    let rows: Vec<&str> = table.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(rows, vec!["unet2", "proposed_full"]);
}

#[test]
fn ood_probe_micro_emits_correlations() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_micro("ood_probe", "", dir.path());
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    let probe_json = dir.path().join("ood_probe.json");
    assert!(probe_json.exists());
    let records: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(probe_json).unwrap()).unwrap();
    let arr = records.as_array().unwrap();
    assert_eq!(arr.len(), 3);
    for rec in arr {
        let nl = rec["corr_nl"].as_f64().unwrap();
        let tex = rec["corr_tex"].as_f64().unwrap();
        assert!((-1.0..=1.0).contains(&nl));
        assert!((-1.0..=1.0).contains(&tex));
    }
}

#[test]
fn main_table_micro_covers_ensemble_and_mc_rows() {
    let toml_text = r#"
experiment = "main_table"
seeds = [0]
epochs = 2
archs = ["unet2", "unet3_physics", "proposed_full"]

[data.synthetic]
n_scenes = 4
frames_per_scene = 3
resolution = 16
reflectance_patches = 6
specular_blobs = 2
frame_jitter_px = 2
seed = 5

[model]
base_channels = 4
levels = 2
unc_hidden = 6

[train]
batch_size = 4
ensemble_members = 2

[eval]
subsample_size = 3000
keep_panels = 1
mc_passes = 3
"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg: ExperimentConfig = toml::from_str(toml_text).unwrap();
    let resolved = resolve(&cfg, Some(dir.path()), None, None).unwrap();
    let outcome = run_experiment(&resolved).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    let rows: std::collections::BTreeSet<&str> = outcome
        .reports
        .iter()
        .map(|r| r.arch_name.as_str())
        .collect();
    for want in ["unet2", "unet3_physics", "proposed_full", "deep_ens", "mc_dropout"] {
        assert!(rows.contains(want), "missing row {want}: {rows:?}");
    }
    let ens = outcome
        .reports
        .iter()
        .find(|r| r.arch_name == "deep_ens")
        .unwrap();
    let single = outcome
        .reports
        .iter()
        .find(|r| r.arch_name == "unet3_physics")
        .unwrap();
    // ensemble parameter count is the sum over members
    assert!(ens.params_count > single.params_count);
    assert!(ens.uq_corr.is_some());
    let mc = outcome
        .reports
        .iter()
        .find(|r| r.arch_name == "mc_dropout")
        .unwrap();
    assert!(mc.epistemic.is_some());
    let tables: Vec<&str> = outcome.tables.iter().map(|t| t.name.as_str()).collect();
    assert!(tables.contains(&"main_results"));
    assert!(tables.contains(&"computational_cost"));
}

#[test]
fn protocol_study_micro_runs_three_archs() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_micro("protocol_study", "", dir.path());
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    // default archs x {random_frame, scene} x 2 seeds
    assert_eq!(outcome.reports.len(), 3 * 2 * 2);
    // one t-test record per (arch, metric)
    assert_eq!(outcome.ttests.len(), 6);
    for rec in &outcome.ttests {
        assert_eq!(rec.condition_a, "frame_level");
        assert!(rec.mean_delta.is_some() || rec.degenerate);
    }
    // proposed rows carry uncertainty, baselines do not
    for r in &outcome.reports {
        assert_eq!(r.uq_corr.is_some(), r.arch_name == "proposed_full", "{}", r.run_id);
    }
}

#[test]
fn channel_verify_micro_emits_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_micro("channel_verify", "", dir.path());
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    let names: Vec<&str> = outcome.tables.iter().map(|t| t.name.as_str()).collect();
    assert!(names.contains(&"inter_channel_correlation"), "{names:?}");
    assert!(names.contains(&"cross_correlation"), "{names:?}");
    let r = &outcome.reports[0];
    let inter = r.channel_corr.unwrap();
    for (i, row) in inter.iter().enumerate() {
        assert_eq!(row[i], 1.0, "diagonal must be exactly 1");
        for (j, v) in row.iter().enumerate() {
            assert!((v - inter[j][i]).abs() < 1e-12, "inter-channel symmetry");
        }
    }
}
