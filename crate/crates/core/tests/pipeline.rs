//! Stage orchestration on a seconds-scale config.

use std::fs;
use std::path::{Path, PathBuf};

use latent_walk::pipeline::{Arm, Pipeline, PipelineConfig, Stage};
use latent_walk::Error;

fn smoke() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    PipelineConfig::load(&path).unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn stage_without_upstream_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(), dir.path(), 1).unwrap();
    match p.run_stage(Stage::TrainGan, None) {
        Err(Error::MissingArtifact { stage, hint, .. }) => {
            assert_eq!(stage, "train-gan");
            assert!(hint.contains("plan-cli synth-data"), "{}", hint);
        }
        other => panic!("expected a missing artifact, got {:?}", other),
    }
}

#[test]
fn changed_upstream_config_is_a_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    Pipeline::new(smoke(), dir.path(), 1).unwrap().run_stage(Stage::SynthData, None).unwrap();
    let mut cfg = smoke();
    cfg.data.identicon.noise += 0.05;
    let p = Pipeline::new(cfg, dir.path(), 1).unwrap();
    assert!(matches!(p.run_stage(Stage::TrainGan, None), Err(Error::ConfigMismatch { .. })));
}

#[test]
fn full_run_is_idempotent_and_exports_no_real_images() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(), dir.path(), 2).unwrap();
    let first = p.run_all(None).unwrap();
    assert!(first.iter().all(|o| !o.skipped));
    let manifest = fs::read(dir.path().join("manifest.json")).unwrap();

    let again = p.run_all(None).unwrap();
    assert!(again.iter().all(|o| o.skipped));
    assert_eq!(fs::read(dir.path().join("manifest.json")).unwrap(), manifest);

    let export = dir.path().join("export");
    for f in files_under(&export) {
        let name = f.file_name().unwrap().to_string_lossy().to_string();
        if name.ends_with(".hdr") {
            let text = fs::read_to_string(&f).unwrap();
            assert!(!text.contains("real"), "{} lists real images", f.display());
        }
        if name.ends_with(".json") {
            let text = fs::read_to_string(&f).unwrap();
            assert!(!text.contains("members"), "{} lists group members", f.display());
        }
        assert!(!name.contains("projection"));
    }
    for unit in p.units(Arm::Plan).into_iter().chain(p.units(Arm::KsamePlan)) {
        let set = p.load_synthetic(&unit.name).unwrap();
        assert!(set.images.iter().all(|im| im.identity.is_none()));
    }

    for arm in Arm::ALL {
        for unit in p.units(arm) {
            let report = p.load_report(&unit.name).unwrap();
            assert_eq!(report.downstream.accuracies.len(), 2);
        }
    }
}

#[test]
fn eval_runs_one_arm_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(), dir.path(), 1).unwrap();
    let only = [Arm::Linear];
    for stage in Stage::ALL {
        p.run_stage(stage, Some(&only)).unwrap();
    }
    assert!(p.load_report("linear").is_ok());
    assert!(p.load_report("plan").is_err());
    assert!(matches!(
        p.run_stage(Stage::Eval, Some(&[Arm::Plan])),
        Err(Error::MissingArtifact { .. })
    ));
    p.run_stage(Stage::Plan, Some(&[Arm::Plan])).unwrap();
    p.run_stage(Stage::GenDataset, Some(&[Arm::Plan])).unwrap();
    p.run_stage(Stage::Eval, Some(&[Arm::Plan])).unwrap();
    assert!(p.load_report("plan").is_ok());
    assert!(p.load_report("linear").is_ok());
}

#[test]
fn worker_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let arms = [Arm::Plan];
    Pipeline::new(smoke(), a.path(), 1).unwrap().run_all(Some(&arms)).unwrap();
    Pipeline::new(smoke(), b.path(), 3).unwrap().run_all(Some(&arms)).unwrap();
    assert_eq!(
        fs::read(a.path().join("manifest.json")).unwrap(),
        fs::read(b.path().join("manifest.json")).unwrap()
    );
    assert_eq!(
        fs::read(a.path().join("eval/plan/report.json")).unwrap(),
        fs::read(b.path().join("eval/plan/report.json")).unwrap()
    );
}

#[test]
fn default_config_file_matches_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(PipelineConfig::load(&path).unwrap(), PipelineConfig::default());
}
