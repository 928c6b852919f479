use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, Arm, PipelineConfig, Stage, STAGE_VERSION};
use super::io::{load_images, pgm, read_json, save_images, sha256_file, write_atomic, write_json};
use super::manifest::{outputs_intact, Manifest, OutputFile, StageRecord};
use crate::anonymize::{ksame_centroids, sample_pairs, AnonymizedSet, ProjectedLatent};
use crate::autodiff::Tensor;
use crate::data::{generate_identicon_dataset, ImageSet, LabeledDataset, Origin, Split, ToyImage};
use crate::error::{Error, Result};
use crate::eval::{
    downstream_eval, downstream_eval_real, frechet_distance, mean_std, mia_attack, min_feature_distances,
    FeatureExtractor, MetricsReport,
};
use crate::models::{
    load_checkpoint, predict_classes, project_batch, save_checkpoint, train_classifier, train_tiny_gan, Checkpoint,
    Generator, LatentPoint, Target, TrainedClassifier,
};
use crate::plan::{
    generate_from_trajectory, identity_confidence, init_linear, optimize_many, trajectory_from_text,
    trajectory_to_text, LossTrace, PlanConfig, PlanModels, Trajectory, TrajectoryMeta,
};

const ALL_UNIT: &str = "all";
const SUMMARY_UNIT: &str = "summary";

/// Projection of one training identity, kept private to the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRecord {
    pub identity: usize,
    pub class_label: usize,
    pub latent: LatentPoint,
    pub error: f64,
    /// Latents of every restart that finished with a finite error.
    pub restart_latents: Vec<LatentPoint>,
    pub restart_errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SplitsFile {
    config_hash: String,
    n_identities: usize,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Per-pair statistics written by the plan stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub pair: usize,
    pub class_label: usize,
    pub seed: u64,
    /// Mean over points of the identity classifier's max softmax probability.
    pub mean_identity_confidence: f64,
    /// Fraction of points the class classifier assigns to `class_label`.
    pub class_agreement: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// One training set evaluated by the pipeline: an arm, with its k for k-same arms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unit {
    pub name: String,
    pub arm: Arm,
    pub k: Option<usize>,
}

impl Unit {
    fn optimized(&self) -> bool {
        matches!(self.arm, Arm::Plan | Arm::KsamePlan)
    }

    fn uses_trajectories(&self) -> bool {
        matches!(self.arm, Arm::Linear | Arm::Plan | Arm::KsamePlan)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub config_hash: String,
    pub skipped: bool,
    pub units: Vec<String>,
}

/// Whether `stage` has work to do for `arm`.
fn needs(stage: Stage, arm: Arm) -> bool {
    match stage {
        Stage::Plan => matches!(arm, Arm::Linear | Arm::Plan | Arm::KsamePlan),
        Stage::GenDataset => arm != Arm::Real,
        _ => true,
    }
}

/// Collects the files a stage unit writes.
struct Outputs<'a> {
    out: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(out: &'a Path) -> Self {
        Self { out, files: Vec::new() }
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.out.join(rel)
    }

    fn json<T: Serialize + ?Sized>(&mut self, rel: &str, v: &T) -> Result<()> {
        let p = self.path(rel);
        write_json(&p, v)
    }

    fn text(&mut self, rel: &str, s: &str) -> Result<()> {
        let p = self.path(rel);
        write_atomic(&p, s.as_bytes())
    }

    fn checkpoint<T: Serialize>(&mut self, rel: &str, c: &Checkpoint<T>) -> Result<()> {
        let p = self.path(rel);
        save_checkpoint(&p, c)
    }

    fn images(&mut self, stem: &str, set: &ImageSet, hash: &str) -> Result<()> {
        self.files.push(format!("{}.bin", stem));
        self.files.push(format!("{}.hdr", stem));
        save_images(&self.out.join(stem), set, hash).map(|_| ())
    }

    fn finish(mut self) -> Result<Vec<OutputFile>> {
        self.files.sort();
        self.files.dedup();
        self.files
            .iter()
            .map(|f| {
                Ok(OutputFile {
                    path: f.clone(),
                    sha256: sha256_file(&self.out.join(f))?,
                })
            })
            .collect()
    }
}

/// Runs pipeline stages against one output directory.
pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
    workers: usize,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>, workers: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            out: out.into(),
            workers: workers.max(1),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Manifest::load_or_default(&self.out)
    }

    /// The training sets an arm expands into.
    pub fn units(&self, arm: Arm) -> Vec<Unit> {
        let unit = |name: String, k: Option<usize>| Unit { name, arm, k };
        match arm {
            Arm::Real => vec![unit("real".into(), None)],
            Arm::Linear => vec![unit("linear".into(), Some(self.cfg.ksame.pair_k))],
            Arm::Plan => vec![unit("plan".into(), Some(self.cfg.ksame.pair_k))],
            Arm::Ksame => self.cfg.ksame.ks.iter().map(|&k| unit(format!("ksame-k{}", k), Some(k))).collect(),
            Arm::KsamePlan => self
                .cfg
                .ksame
                .ks
                .iter()
                .map(|&k| unit(format!("ksame-plan-k{}", k), Some(k)))
                .collect(),
        }
    }

    fn hint(&self, stage: Stage) -> String {
        format!("run `plan-cli {} --config <path>` first", stage)
    }

    fn check_upstream(&self, manifest: &Manifest, stage: Stage, arms: &[Arm]) -> Result<()> {
        for &up in stage.upstream() {
            let expected = self.cfg.stage_hash(up);
            let rec = manifest.get(up).ok_or_else(|| Error::MissingArtifact {
                stage: stage.name().into(),
                path: self.out.join(up.name()),
                hint: self.hint(up),
            })?;
            if rec.config_hash != expected {
                return Err(Error::ConfigMismatch {
                    stage: up.name().into(),
                    expected,
                    found: rec.config_hash.clone(),
                    hint: format!("the config changed since it ran; {}", self.hint(up)),
                });
            }
            let keys: Vec<&str> = if up.per_arm() {
                arms.iter().filter(|&&a| needs(up, a)).map(|a| a.name()).collect()
            } else {
                vec![ALL_UNIT]
            };
            for key in keys {
                let files = rec.units.get(key).ok_or_else(|| Error::MissingArtifact {
                    stage: stage.name().into(),
                    path: self.out.join(up.name()).join(key),
                    hint: format!("run `plan-cli {} --arm {} --config <path>` first", up, key),
                })?;
                if let Some(bad) = files.iter().find(|f| !outputs_intact(&self.out, std::slice::from_ref(f))) {
                    return Err(Error::MissingArtifact {
                        stage: stage.name().into(),
                        path: self.out.join(&bad.path),
                        hint: format!("file is missing or modified; {}", self.hint(up)),
                    });
                }
            }
        }
        Ok(())
    }

    /// Runs one stage for `arms` (all arms when `None`; ignored by stages
    /// that are not split by arm). A stage whose recorded hash matches and
    /// whose outputs are intact is skipped.
    pub fn run_stage(&self, stage: Stage, arms: Option<&[Arm]>) -> Result<StageOutcome> {
        let arms: Vec<Arm> = arms.map_or_else(|| Arm::ALL.to_vec(), |a| a.to_vec());
        let hash = self.cfg.stage_hash(stage);
        let mut manifest = self.manifest()?;
        let keys: Vec<String> = if stage.per_arm() {
            arms.iter().map(|a| a.name().to_string()).collect()
        } else {
            vec![ALL_UNIT.to_string()]
        };

        if let Some(rec) = manifest.get(stage) {
            let done = rec.config_hash == hash
                && keys
                    .iter()
                    .all(|k| rec.units.get(k).is_some_and(|files| outputs_intact(&self.out, files)));
            if done {
                info!("{}: up to date ({})", stage, &hash[..12]);
                return Ok(StageOutcome {
                    stage,
                    config_hash: hash,
                    skipped: true,
                    units: keys,
                });
            }
        }
        self.check_upstream(&manifest, stage, &arms)?;
        info!("{}: running ({})", stage, &hash[..12]);

        let mut units: BTreeMap<String, Vec<OutputFile>> = match manifest.get(stage) {
            Some(rec) if rec.config_hash == hash => rec.units.clone(),
            _ => BTreeMap::new(),
        };
        match stage {
            Stage::SynthData => {
                units.insert(ALL_UNIT.into(), self.synth_data(&hash)?);
            }
            Stage::TrainGan => {
                units.insert(ALL_UNIT.into(), self.train_gan(&hash)?);
            }
            Stage::Project => {
                units.insert(ALL_UNIT.into(), self.project(&hash)?);
            }
            Stage::TrainClassifiers => {
                units.insert(ALL_UNIT.into(), self.train_classifiers(&hash)?);
            }
            Stage::Ksame => {
                units.insert(ALL_UNIT.into(), self.ksame(&hash)?);
            }
            Stage::Plan => {
                for &arm in &arms {
                    units.insert(arm.name().into(), self.plan(arm, &hash)?);
                }
            }
            Stage::GenDataset => {
                for &arm in &arms {
                    units.insert(arm.name().into(), self.gen_dataset(arm, &hash)?);
                }
            }
            Stage::Eval => {
                for (arm, files) in self.eval(&arms, &hash)? {
                    units.insert(arm.name().into(), files);
                }
                units.remove(SUMMARY_UNIT);
                let done: Vec<Arm> = Arm::ALL.into_iter().filter(|a| units.contains_key(a.name())).collect();
                units.insert(SUMMARY_UNIT.into(), self.eval_summary(&done, &hash)?);
            }
        }
        manifest.stages.insert(
            stage.name().into(),
            StageRecord {
                config_hash: hash.clone(),
                seed: self.cfg.stage_seed(stage),
                version: STAGE_VERSION,
                units,
            },
        );
        manifest.save(&self.out)?;
        Ok(StageOutcome {
            stage,
            config_hash: hash,
            skipped: false,
            units: keys,
        })
    }

    /// Runs every stage in order.
    pub fn run_all(&self, arms: Option<&[Arm]>) -> Result<Vec<StageOutcome>> {
        Stage::ALL.iter().map(|&s| self.run_stage(s, arms)).collect()
    }

    fn pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map(|p| p.install(f))
            .map_err(|e| Error::invalid(format!("cannot build worker pool: {}", e)))
    }

    // ---- loaders -------------------------------------------------------

    pub fn load_dataset(&self) -> Result<LabeledDataset> {
        let images = load_images(&self.out.join("synth-data/images"))?;
        let s: SplitsFile = read_json(&self.out.join("synth-data/splits.json"))?;
        let ds = LabeledDataset {
            images,
            n_identities: s.n_identities,
            train: s.train,
            val: s.val,
            test: s.test,
        };
        ds.validate_splits()?;
        Ok(ds)
    }

    pub fn load_generator(&self) -> Result<Generator> {
        Ok(load_checkpoint::<Generator>(&self.out.join("train-gan/generator.json"))?.model)
    }

    /// The identity and class classifiers.
    pub fn load_classifiers(&self) -> Result<(TrainedClassifier, TrainedClassifier)> {
        let id = load_checkpoint::<TrainedClassifier>(&self.out.join("train-classifiers/identity.json"))?.model;
        let class = load_checkpoint::<TrainedClassifier>(&self.out.join("train-classifiers/class.json"))?.model;
        Ok((id, class))
    }

    pub fn load_projections(&self) -> Result<Vec<ProjectionRecord>> {
        read_json(&self.out.join("project/projections.json"))
    }

    pub fn load_ksame(&self, k: usize) -> Result<AnonymizedSet> {
        read_json(&self.out.join(format!("ksame/k{}.json", k)))
    }

    pub fn load_pair_stats(&self, unit: &str) -> Result<Vec<PairStats>> {
        read_json(&self.out.join(format!("plan/{}/pairs.json", unit)))
    }

    pub fn load_trajectories(&self, unit: &str) -> Result<Vec<Trajectory>> {
        let stats = self.load_pair_stats(unit)?;
        (0..stats.len())
            .map(|i| {
                let p = self.out.join(format!("plan/{}/pair-{:03}.txt", unit, i));
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                Ok(trajectory_from_text(&text)?.0)
            })
            .collect()
    }

    pub fn load_synthetic(&self, unit: &str) -> Result<ImageSet> {
        load_images(&self.out.join(format!("export/{}/images", unit)))
    }

    pub fn load_report(&self, unit: &str) -> Result<MetricsReport> {
        read_json(&self.out.join(format!("eval/{}/report.json", unit)))
    }

    // ---- stages --------------------------------------------------------

    fn synth_data(&self, hash: &str) -> Result<Vec<OutputFile>> {
        let d = &self.cfg.data;
        let ds = generate_identicon_dataset(
            &d.identicon,
            d.n_identities,
            d.n_classes,
            d.splits,
            self.cfg.stage_seed(Stage::SynthData),
        )?;
        info!(
            "synth-data: {} images, {} identities ({} / {} / {} images)",
            ds.images.len(),
            ds.n_identities,
            ds.train.len(),
            ds.val.len(),
            ds.test.len()
        );
        let mut o = Outputs::new(&self.out);
        o.images("synth-data/images", &ds.images, hash)?;
        o.json(
            "synth-data/splits.json",
            &SplitsFile {
                config_hash: hash.into(),
                n_identities: ds.n_identities,
                train: ds.train,
                val: ds.val,
                test: ds.test,
            },
        )?;
        o.finish()
    }

    fn train_gan(&self, hash: &str) -> Result<Vec<OutputFile>> {
        let ds = self.load_dataset()?;
        let seed = self.cfg.stage_seed(Stage::TrainGan);
        let (gen, log) = train_tiny_gan(&ds.split(Split::Train), &self.cfg.gan, seed)?;
        let mut csv = String::from("epoch,d_loss,g_loss\n");
        for (i, (d, g)) in log.d_loss.iter().zip(&log.g_loss).enumerate() {
            let _ = writeln!(csv, "{},{},{}", i, d, g);
        }
        let mut o = Outputs::new(&self.out);
        o.checkpoint("train-gan/generator.json", &Checkpoint::new("generator", seed, hash, gen))?;
        o.json("train-gan/log.json", &log)?;
        o.text("train-gan/loss.csv", &csv)?;
        o.finish()
    }

    fn project(&self, _hash: &str) -> Result<Vec<OutputFile>> {
        let ds = self.load_dataset()?;
        let gen = self.load_generator()?;
        let train = ds.split(Split::Train);
        let sources: Vec<ToyImage> = train
            .identities()
            .into_iter()
            .map(|id| {
                train
                    .images
                    .iter()
                    .find(|im| im.identity == Some(id))
                    .cloned()
                    .expect("identity present")
            })
            .collect();
        let seed = self.cfg.stage_seed(Stage::Project);
        let projections = project_batch(&sources, &gen, &self.cfg.projection, seed)?;
        let records: Vec<ProjectionRecord> = sources
            .iter()
            .zip(projections)
            .map(|(src, p)| {
                let valid: Vec<_> = p.restarts.iter().filter(|r| r.is_valid()).collect();
                ProjectionRecord {
                    identity: src.identity.expect("real image has identity"),
                    class_label: src.class_label,
                    latent: p.latent,
                    error: p.error,
                    restart_latents: valid.iter().map(|r| r.latent.clone()).collect(),
                    restart_errors: valid.iter().map(|r| r.error).collect(),
                }
            })
            .collect();
        let mean_err = records.iter().map(|r| r.error).sum::<f64>() / records.len().max(1) as f64;
        info!("project: {} identities, mean reconstruction error {:.4}", records.len(), mean_err);
        let mut o = Outputs::new(&self.out);
        o.json("project/projections.json", &records)?;
        o.finish()
    }

    fn train_classifiers(&self, hash: &str) -> Result<Vec<OutputFile>> {
        let ds = self.load_dataset()?;
        let gen = self.load_generator()?;
        let records = self.load_projections()?;
        let cc = &self.cfg.classifiers;
        let train = ds.split(Split::Train);

        // Identity task: one held-out view per identity for selection.
        let mut last_view: BTreeMap<usize, usize> = BTreeMap::new();
        let mut views: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, im) in train.images.iter().enumerate() {
            let id = im.identity.expect("real image has identity");
            last_view.insert(id, i);
            *views.entry(id).or_default() += 1;
        }
        let held: Vec<usize> = last_view
            .iter()
            .filter(|(id, _)| views[id] > 1)
            .map(|(_, &i)| i)
            .collect();
        let (mut id_train, id_val) = if held.is_empty() {
            warn!("single view per identity; identity classifier selects on its training set");
            (train.clone(), train.clone())
        } else {
            let kept: Vec<usize> = (0..train.len()).filter(|i| !held.contains(i)).collect();
            (train.subset(&kept), train.subset(&held))
        };
        let n_aug = cc.projections_per_identity;
        for r in &records {
            if r.restart_latents.len() < n_aug {
                return Err(Error::invalid(format!(
                    "identity {} has {} valid projections, {} requested",
                    r.identity,
                    r.restart_latents.len(),
                    n_aug
                )));
            }
            for w in &r.restart_latents[..n_aug] {
                let px = gen.generate_one(w, r.class_label)?;
                id_train
                    .images
                    .push(ToyImage::new(px, Some(r.identity), r.class_label, Origin::Projection));
            }
        }
        let seed = self.cfg.stage_seed(Stage::TrainClassifiers);
        let identity = train_classifier(&id_train, &id_val, Target::Identity, &cc.identity, derive_seed(seed, "identity"))?;
        info!(
            "identity classifier: {} outputs, best val acc {:.3} (epoch {})",
            identity.labels.len(),
            identity.log.best_val_acc,
            identity.log.best_epoch
        );
        let class = train_classifier(
            &train,
            &ds.split(Split::Val),
            Target::Class,
            &cc.class,
            derive_seed(seed, "class"),
        )?;
        info!(
            "class classifier: best val acc {:.3} (epoch {})",
            class.log.best_val_acc, class.log.best_epoch
        );
        let mut o = Outputs::new(&self.out);
        o.checkpoint(
            "train-classifiers/identity.json",
            &Checkpoint::new("identity-classifier", seed, hash, identity),
        )?;
        o.checkpoint(
            "train-classifiers/class.json",
            &Checkpoint::new("class-classifier", seed, hash, class),
        )?;
        o.finish()
    }

    fn ksame(&self, _hash: &str) -> Result<Vec<OutputFile>> {
        let projected: Vec<ProjectedLatent> = self
            .load_projections()?
            .into_iter()
            .map(|r| ProjectedLatent {
                latent: r.latent,
                identity: r.identity,
                class_label: r.class_label,
            })
            .collect();
        let mut ks = self.cfg.ksame.ks.clone();
        ks.push(self.cfg.ksame.pair_k);
        ks.sort_unstable();
        ks.dedup();
        let seed = self.cfg.stage_seed(Stage::Ksame);
        let mut o = Outputs::new(&self.out);
        for k in ks {
            let set = ksame_centroids(&projected, k, derive_seed(seed, &format!("k{}", k)))?;
            info!("ksame: k = {} gives {} centroids", k, set.centroids.len());
            o.json(&format!("ksame/k{}.json", k), &set)?;
        }
        o.finish()
    }

    fn pair_seed(&self, k: usize) -> u64 {
        derive_seed(self.cfg.stage_seed(Stage::Plan), &format!("pairs-k{}", k))
    }

    fn plan(&self, arm: Arm, _hash: &str) -> Result<Vec<OutputFile>> {
        let mut o = Outputs::new(&self.out);
        if !needs(Stage::Plan, arm) {
            return o.finish();
        }
        let ds = self.load_dataset()?;
        let gen = self.load_generator()?;
        let (identity, class) = self.load_classifiers()?;
        let models = PlanModels {
            generator: &gen,
            identity: &identity,
            class: &class,
        };
        let real_features = class.features(&ds.split(Split::Train).pixels())?;

        for unit in self.units(arm) {
            let k = unit.k.expect("trajectory units have k");
            let seed = self.pair_seed(k);
            let pairs = sample_pairs(&self.load_ksame(k)?, seed);
            let pc = &self.cfg.plan;
            let init: Vec<Trajectory> = pairs
                .iter()
                .map(|p| init_linear(&p.a, &p.b, pc.trajectory_len, p.class_label))
                .collect::<Result<_>>()?;
            let run_cfg = PlanConfig {
                steps: if unit.optimized() { pc.steps } else { 0 },
                ..*pc
            };
            let results = optimize_many(&init, &models, &run_cfg, self.workers)?;
            info!("plan: {} trajectories for {}", results.len(), unit.name);
            let meta = TrajectoryMeta {
                weights: pc.weights,
                steps: run_cfg.steps,
                lr: pc.lr,
                seed,
            };
            let (stats, trace_csv, curve_csv) = self.pair_reports(&results, &models, &class, &real_features, seed)?;
            for (i, (traj, _)) in results.iter().enumerate() {
                o.text(
                    &format!("plan/{}/pair-{:03}.txt", unit.name, i),
                    &trajectory_to_text(traj, &meta),
                )?;
            }
            o.json(&format!("plan/{}/pairs.json", unit.name), &stats)?;
            o.text(&format!("plan/{}/loss_trace.csv", unit.name), &trace_csv)?;
            o.text(&format!("plan/{}/curves.csv", unit.name), &curve_csv)?;
        }
        o.finish()
    }

    fn pair_reports(
        &self,
        results: &[(Trajectory, LossTrace)],
        models: &PlanModels<'_>,
        class: &TrainedClassifier,
        real_features: &Tensor,
        seed: u64,
    ) -> Result<(Vec<PairStats>, String, String)> {
        let mut stats = Vec::with_capacity(results.len());
        let mut trace_csv = String::from("pair,step,dist,identity,class,total\n");
        let mut curve_csv = String::from("pair,point,identity_confidence,nearest_real_distance\n");
        for (i, (traj, trace)) in results.iter().enumerate() {
            for s in 0..trace.len() {
                let _ = writeln!(
                    trace_csv,
                    "{},{},{},{},{},{}",
                    i, s, trace.dist[s], trace.identity[s], trace.class[s], trace.total[s]
                );
            }
            let y = traj.class_label();
            let images = models
                .generator
                .generate(&traj.to_tensor(), &vec![y; traj.len()])?;
            let conf = identity_confidence(traj, models.generator, models.identity)?;
            let pred = predict_classes(&models.class.logits(&images)?);
            let feats = class.features(&images)?;
            let nearest = min_feature_distances(&feats, real_features)?.per_sample;
            for p in 0..traj.len() {
                let _ = writeln!(curve_csv, "{},{},{},{}", i, p, conf[p], nearest[p]);
            }
            stats.push(PairStats {
                pair: i,
                class_label: y,
                seed,
                mean_identity_confidence: conf.iter().sum::<f64>() / conf.len() as f64,
                class_agreement: pred.iter().filter(|&&c| c == y).count() as f64 / pred.len() as f64,
                initial_loss: trace.total[0],
                final_loss: *trace.total.last().expect("trace has initial entry"),
            });
        }
        Ok((stats, trace_csv, curve_csv))
    }

    fn gen_dataset(&self, arm: Arm, hash: &str) -> Result<Vec<OutputFile>> {
        let mut o = Outputs::new(&self.out);
        if !needs(Stage::GenDataset, arm) {
            return o.finish();
        }
        let ds = self.load_dataset()?;
        let gen = self.load_generator()?;
        for unit in self.units(arm) {
            let k = unit.k.expect("synthetic units have k");
            let anon = self.load_ksame(k)?;
            let mut set = ImageSet::empty(ds.images.side, ds.images.n_classes);
            if unit.uses_trajectories() {
                for traj in self.load_trajectories(&unit.name)? {
                    set.images.extend(generate_from_trajectory(&traj, &gen)?);
                }
            } else {
                for c in &anon.centroids {
                    let px = gen.generate_one(&c.latent, c.class_label)?;
                    set.images.push(ToyImage::new(px, None, c.class_label, Origin::Synthetic));
                }
            }
            info!("gen-dataset: {} images for {}", set.len(), unit.name);
            o.images(&format!("export/{}/images", unit.name), &set, hash)?;
            o.json(&format!("export/centroids-k{}.json", k), &anon.shareable())?;
            if self.cfg.dataset.pgm {
                for (i, im) in set.images.iter().enumerate() {
                    o.text(&format!("export/{}/pgm/{:05}.pgm", unit.name, i), &pgm(&im.pixels, set.side))?;
                }
            }
        }
        o.finish()
    }

    fn eval(&self, arms: &[Arm], hash: &str) -> Result<Vec<(Arm, Vec<OutputFile>)>> {
        let ds = self.load_dataset()?;
        let (_, class) = self.load_classifiers()?;
        let train = ds.split(Split::Train);
        let val = ds.split(Split::Val);
        let test = ds.split(Split::Test);
        let real_features = class.features(&train.pixels())?;
        let units: Vec<Unit> = arms.iter().flat_map(|&a| self.units(a)).collect();
        let eval_unit = |unit: &Unit| -> Result<MetricsReport> {
            let set = if unit.arm == Arm::Real {
                train.clone()
            } else {
                self.load_synthetic(&unit.name)?
            };
            self.evaluate_unit(unit, &set, &train, &val, &test, &class, &real_features, hash)
        };
        let reports: Vec<MetricsReport> = if self.workers > 1 {
            self.pool(|| units.par_iter().map(eval_unit).collect::<Result<Vec<_>>>())??
        } else {
            units.iter().map(eval_unit).collect::<Result<_>>()?
        };

        let mut by_arm: BTreeMap<Arm, Outputs> = BTreeMap::new();
        for (unit, report) in units.iter().zip(&reports) {
            let o = by_arm.entry(unit.arm).or_insert_with(|| Outputs::new(&self.out));
            o.json(&format!("eval/{}/report.json", unit.name), report)?;
            let mut csv = String::from("sample,min_distance\n");
            for (i, d) in report.per_sample_min.iter().enumerate() {
                let _ = writeln!(csv, "{},{}", i, d);
            }
            o.text(&format!("eval/{}/per_sample.csv", unit.name), &csv)?;
        }
        arms.iter()
            .map(|&a| {
                let o = by_arm.remove(&a).unwrap_or_else(|| Outputs::new(&self.out));
                Ok((a, o.finish()?))
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate_unit(
        &self,
        unit: &Unit,
        set: &ImageSet,
        train: &ImageSet,
        val: &ImageSet,
        test: &ImageSet,
        class: &TrainedClassifier,
        real_features: &Tensor,
        hash: &str,
    ) -> Result<MetricsReport> {
        let seed = derive_seed(self.cfg.stage_seed(Stage::Eval), &unit.name);
        let ec = &self.cfg.eval;
        let (downstream, models) = if unit.arm == Arm::Real {
            downstream_eval_real(set, val, test, &ec.downstream, seed)?
        } else {
            downstream_eval(set, val, test, &ec.downstream, seed)?
        };
        let mut mia = Vec::with_capacity(models.len());
        let mut mia_seeds = Vec::with_capacity(models.len());
        for (r, m) in models.iter().enumerate() {
            let s = derive_seed(seed, &format!("mia-{}", r));
            mia.push(mia_attack(m, train, test, &ec.mia, s)?);
            mia_seeds.push(s);
        }
        let accs: Vec<f64> = mia.iter().map(|m| m.accuracy).collect();
        let (mia_mean, mia_std) = mean_std(&accs);
        let feats = class.features(&set.pixels())?;
        let frechet = if feats.rows() > feats.cols() && real_features.rows() > real_features.cols() {
            Some(frechet_distance(&feats, real_features)?)
        } else {
            warn!(
                "{}: {} samples for {} feature dims; Fréchet distance skipped",
                unit.name,
                feats.rows(),
                feats.cols()
            );
            None
        };
        let perceptual = min_feature_distances(&feats, real_features)?;
        info!(
            "eval {}: acc {:.4} ± {:.4}, MIA {:.4} ± {:.4}, FD {:?}, mmL {:.4}",
            unit.name, downstream.mean, downstream.std, mia_mean, mia_std, frechet, perceptual.mean_min
        );
        Ok(MetricsReport {
            unit: unit.name.clone(),
            config_hash: hash.into(),
            seed,
            n_train: set.len(),
            frechet,
            mml: perceptual.mean_min,
            per_sample_min: perceptual.per_sample,
            downstream,
            mia,
            mia_seeds,
            mia_mean,
            mia_std,
        })
    }

    fn eval_summary(&self, arms: &[Arm], _hash: &str) -> Result<Vec<OutputFile>> {
        let mut reports = Vec::new();
        for &a in arms {
            for unit in self.units(a) {
                reports.push(self.load_report(&unit.name)?);
            }
        }
        let mut csv = format!("{}\n", MetricsReport::CSV_HEADER);
        for r in &reports {
            let _ = writeln!(csv, "{}", r.csv_row());
        }
        let mut o = Outputs::new(&self.out);
        o.text("eval/summary.csv", &csv)?;
        o.json("eval/report.json", &reports)?;
        o.finish()
    }
}
