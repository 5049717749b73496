//! Experiment drivers: job expansion, training/evaluation per job,
//! resumability, and aggregation into tables and significance tests.
//!
//! Every job is keyed `(row, split, seed)` and persists, under the output
//! directory: its split (`splits/`), checkpoints (`runs/`), step logs
//! (`logs/`), metrics (`results/<run_id>.json`), calibration scatter data
//! (`scatter/`), and qualitative panels (`maps/`). A job whose results file
//! already exists is skipped, so interrupted experiments resume at job
//! granularity. Re-running a finished experiment rewrites byte-identical
//! artifacts except for wall-clock timing fields.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use iuq_core::data::photos::fixture_photos;
use iuq_core::data::{
    generate_synthetic_dataset, load_image_tensor, save_image_tensor_png8, scan_sintel_root,
    SintelDerivationConfig, SyntheticDataset,
};
use iuq_core::metrics::{ood_probe, EvalOptions, Evaluation, Predictor};
use iuq_core::nn::{load_checkpoint, Arch, Model};
use iuq_core::objectives::LossConfig;
use iuq_core::splits::{audit_split, split, SplitKind, SplitSpec};
use iuq_core::stats::TTestResult;
use iuq_core::trainer::{
    train, train_ensemble, FrameSource, InMemoryFrames, LazyLayerFrames, TrainConfig,
};
use iuq_core::types::{DatasetManifest, EvalReport, FrameRecord, ImageTensor};
use iuq_core::uncertainty::percentile_normalize;

use crate::config::{EvalSection, ExperimentConfig, ExperimentKind, ModelSection, SplitSection};
use crate::report::{fmt_opt, metric_stats, paired_over_seeds, Table};

/// A dataset plus the means to materialize frames for a record subset.
pub enum DataSource {
    Synthetic(SyntheticDataset),
    Layers {
        manifest: DatasetManifest,
        derivation: SintelDerivationConfig,
    },
}

impl DataSource {
    pub fn manifest(&self) -> &DatasetManifest {
        match self {
            DataSource::Synthetic(ds) => &ds.manifest,
            DataSource::Layers { manifest, .. } => manifest,
        }
    }

    pub fn frames_for(&self, records: &[FrameRecord]) -> anyhow::Result<Box<dyn FrameSource + Send + Sync>> {
        match self {
            DataSource::Synthetic(ds) => {
                let frames = records
                    .iter()
                    .map(|r| {
                        ds.triple(r)
                            .cloned()
                            .ok_or_else(|| anyhow!("record ({}, {}) missing", r.scene_id, r.frame_index))
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?;
                Ok(Box::new(InMemoryFrames { frames }))
            }
            DataSource::Layers { derivation, .. } => Ok(Box::new(LazyLayerFrames {
                records: records.to_vec(),
                cfg: *derivation,
            })),
        }
    }
}

/// Row of a results table: a plain architecture, the deep ensemble, or
/// MC-dropout inference over the trained proposed model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Arch(Arch),
    DeepEns,
    McDropout,
}

impl RowKind {
    pub fn label(&self) -> String {
        match self {
            RowKind::Arch(a) => a.name().to_string(),
            RowKind::DeepEns => "deep_ens".to_string(),
            RowKind::McDropout => "mc_dropout".to_string(),
        }
    }

    /// Later stages depend on earlier ones (MC dropout reuses the trained
    /// proposed checkpoint).
    fn stage(&self) -> usize {
        match self {
            RowKind::Arch(_) => 0,
            RowKind::DeepEns => 1,
            RowKind::McDropout => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub row: RowKind,
    pub split_kind: SplitKind,
    pub seed: u64,
}

impl Job {
    fn run_id(&self, kind: ExperimentKind) -> String {
        format!(
            "{}_{}_{}_s{}",
            kind.name(),
            self.row.label(),
            self.split_kind.name(),
            self.seed
        )
    }
}

/// Fully resolved experiment: config merged with per-experiment defaults.
pub struct Resolved {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub epochs: Option<usize>,
    pub jobs: usize,
    pub data: DataSource,
    pub split_sec: SplitSection,
    pub model_sec: ModelSection,
    pub train_template: TrainConfig,
    pub loss_cfg: LossConfig,
    pub eval_sec: EvalSection,
    pub rows: Vec<RowKind>,
    pub splits: Vec<SplitKind>,
    pub photos_dir: Option<PathBuf>,
    pub config_snapshot: serde_json::Value,
}

pub fn resolve(cfg: &ExperimentConfig, out_override: Option<&Path>, data_root: Option<&Path>, jobs_override: Option<usize>) -> anyhow::Result<Resolved> {
    cfg.validate()?;
    let out_dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let data = match (&cfg.data.sintel, &cfg.data.synthetic, data_root) {
        (_, _, Some(root)) => {
            let resolution = cfg
                .data
                .sintel
                .as_ref()
                .map(|s| s.resolution)
                .unwrap_or(256);
            let derivation = cfg
                .data
                .sintel
                .as_ref()
                .and_then(|s| s.derivation)
                .unwrap_or(SintelDerivationConfig {
                    resolution,
                    ..Default::default()
                });
            DataSource::Layers {
                manifest: scan_sintel_root(root, "sintel", resolution)
                    .map_err(|e| anyhow!("scanning {}: {e}", root.display()))?,
                derivation,
            }
        }
        (Some(s), None, None) => {
            let derivation = s.derivation.unwrap_or(SintelDerivationConfig {
                resolution: s.resolution,
                ..Default::default()
            });
            DataSource::Layers {
                manifest: scan_sintel_root(&s.root, "sintel", s.resolution)
                    .map_err(|e| anyhow!("scanning {}: {e}", s.root.display()))?,
                derivation,
            }
        }
        (None, synthetic, None) => {
            let sc = synthetic.unwrap_or_default();
            DataSource::Synthetic(generate_synthetic_dataset(&sc).map_err(|e| anyhow!("{e}"))?)
        }
        (Some(_), Some(_), None) => bail!("both data sections set"),
    };

    let default_archs: Vec<Arch> = match cfg.experiment {
        ExperimentKind::ProtocolStudy => vec![Arch::DirectCnn, Arch::Unet2, Arch::ProposedFull],
        ExperimentKind::SplitGradient | ExperimentKind::SynthLeakage => vec![Arch::Unet2],
        ExperimentKind::Ablation => vec![
            Arch::Unet2,
            Arch::Unet3Physics,
            Arch::ProposedNoskip,
            Arch::ProposedFull,
        ],
        ExperimentKind::MainTable => vec![
            Arch::DirectCnn,
            Arch::Unet2,
            Arch::Unet3Physics,
            Arch::ProposedNoskip,
            Arch::ProposedFull,
        ],
        ExperimentKind::Downstream | ExperimentKind::ChannelVerify | ExperimentKind::OodProbe => {
            vec![Arch::ProposedFull]
        }
    };
    let archs = cfg.parsed_archs().unwrap_or(default_archs);
    if cfg.experiment == ExperimentKind::ProtocolStudy {
        for a in &archs {
            if !matches!(a, Arch::DirectCnn | Arch::Unet2 | Arch::ProposedFull) {
                bail!("protocol_study supports direct_cnn, unet2, proposed_full; got {}", a.name());
            }
        }
    }

    let mut rows: Vec<RowKind> = archs.iter().map(|&a| RowKind::Arch(a)).collect();
    if cfg.experiment == ExperimentKind::MainTable {
        rows.push(RowKind::DeepEns);
        rows.push(RowKind::McDropout);
    }

    let splits = match cfg.experiment {
        ExperimentKind::ProtocolStudy | ExperimentKind::SynthLeakage => {
            vec![SplitKind::RandomFrame, SplitKind::Scene]
        }
        ExperimentKind::SplitGradient => {
            vec![SplitKind::RandomFrame, SplitKind::Temporal, SplitKind::Scene]
        }
        _ => vec![SplitKind::Scene],
    };

    let epochs = cfg.epochs.or(match cfg.experiment {
        ExperimentKind::SynthLeakage | ExperimentKind::SplitGradient => Some(20),
        ExperimentKind::ProtocolStudy => Some(cfg.train.apply().protocol_study_epochs),
        _ => None,
    });

    let snapshot = serde_json::to_value(cfg).expect("config serializes");
    Ok(Resolved {
        kind: cfg.experiment,
        out_dir,
        seeds: cfg.effective_seeds(),
        epochs,
        jobs: jobs_override.or(cfg.jobs).unwrap_or(1).max(1),
        data,
        split_sec: cfg.split,
        model_sec: cfg.model,
        train_template: cfg.train.apply(),
        loss_cfg: cfg.loss.apply(),
        eval_sec: cfg.eval,
        rows,
        splits,
        photos_dir: cfg.photos_dir.clone(),
        config_snapshot: snapshot,
    })
}

impl Resolved {
    fn split_spec(&self, kind: SplitKind, seed: u64) -> SplitSpec {
        let frac = self.split_sec.test_fraction.unwrap_or(0.2);
        match kind {
            SplitKind::RandomFrame => SplitSpec::random_frame(frac, seed),
            SplitKind::Temporal => SplitSpec::temporal(frac, seed),
            SplitKind::Scene => {
                let n_scenes = self.data.manifest().scene_ids().len();
                let count = self.split_sec.test_scene_count.unwrap_or_else(|| {
                    ((0.2 * n_scenes as f64).round() as usize).clamp(1, n_scenes.saturating_sub(1).max(1))
                });
                SplitSpec::scene(count, seed)
            }
        }
    }

    fn train_cfg(&self, row: RowKind, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig { seed, ..self.train_template };
        let arch = match row {
            RowKind::Arch(a) => a,
            RowKind::DeepEns => Arch::Unet3Physics,
            RowKind::McDropout => Arch::ProposedFull,
        };
        if let Some(total) = self.epochs {
            cfg = cfg.with_total_epochs(arch, total);
        }
        cfg
    }

    fn eval_opts(&self, _seed: u64) -> EvalOptions {
        let mut o = EvalOptions::default();
        if let Some(v) = self.eval_sec.subsample_size {
            o.subsample_size = v;
        }
        if let Some(v) = self.eval_sec.subsample_seed {
            o.subsample_seed = v;
        }
        if let Some(v) = self.eval_sec.keep_panels {
            o.keep_panels = v;
        }
        o
    }

    fn mc_passes(&self) -> usize {
        self.eval_sec.mc_passes.unwrap_or(10)
    }

    fn scatter_points(&self) -> usize {
        self.eval_sec.scatter_points.unwrap_or(2000)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TTestRecord {
    pub metric: String,
    pub row: String,
    pub condition_a: String,
    pub condition_b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_delta: Option<f64>,
    pub t_test: Option<TTestResult>,
    pub degenerate: bool,
}

pub struct Outcome {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub reports: Vec<EvalReport>,
    pub failures: Vec<(String, String)>,
    pub tables: Vec<Table>,
    pub ttests: Vec<TTestRecord>,
}

/// Runs (or resumes) every job of the experiment, then aggregates.
pub fn run_experiment(res: &Resolved) -> anyhow::Result<Outcome> {
    std::fs::create_dir_all(&res.out_dir)?;
    // snapshot of the resolved config, written once
    let snap_path = res.out_dir.join("experiment.json");
    if !snap_path.exists() {
        std::fs::write(
            &snap_path,
            serde_json::to_string_pretty(&serde_json::json!({
                "experiment": res.kind.name(),
                "config": res.config_snapshot,
            }))?,
        )?;
    }

    let mut jobs: Vec<Job> = Vec::new();
    for &row in &res.rows {
        for &sk in &res.splits {
            for &seed in &res.seeds {
                jobs.push(Job {
                    row,
                    split_kind: sk,
                    seed,
                });
            }
        }
    }

    let reports = Mutex::new(Vec::<EvalReport>::new());
    let failures = Mutex::new(Vec::<(String, String)>::new());
    let max_stage = jobs.iter().map(|j| j.row.stage()).max().unwrap_or(0);
    for stage in 0..=max_stage {
        let stage_jobs: Vec<&Job> = jobs.iter().filter(|j| j.row.stage() == stage).collect();
        if stage_jobs.is_empty() {
            continue;
        }
        let cursor = AtomicUsize::new(0);
        let workers = res.jobs.min(stage_jobs.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::SeqCst);
                    if i >= stage_jobs.len() {
                        break;
                    }
                    let job = stage_jobs[i];
                    let run_id = job.run_id(res.kind);
                    match run_job(res, job) {
                        Ok(report) => reports.lock().unwrap().push(report),
                        Err(e) => failures
                            .lock()
                            .unwrap()
                            .push((run_id, format!("{e:#}"))),
                    }
                });
            }
        });
    }

    let mut reports = reports.into_inner().unwrap();
    reports.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let failures = failures.into_inner().unwrap();

    let (tables, ttests) = aggregate_tables(res.kind, &reports)?;
    for t in &tables {
        t.write(&res.out_dir)?;
    }
    if !ttests.is_empty() {
        let dir = res.out_dir.join("ttests");
        std::fs::create_dir_all(&dir)?;
        for rec in &ttests {
            let name = format!("{}_{}.json", rec.metric, rec.row);
            std::fs::write(dir.join(name), serde_json::to_string_pretty(rec)?)?;
        }
    }

    // experiment-specific extras
    if res.kind == ExperimentKind::OodProbe {
        run_ood_probe(res, &reports)?;
    }

    Ok(Outcome {
        kind: res.kind,
        out_dir: res.out_dir.clone(),
        reports,
        failures,
        tables,
        ttests,
    })
}

fn run_job(res: &Resolved, job: &Job) -> anyhow::Result<EvalReport> {
    let run_id = job.run_id(res.kind);
    let results_path = res.out_dir.join("results").join(format!("{run_id}.json"));
    if results_path.exists() {
        return EvalReport::load_json(&results_path).map_err(|e| anyhow!("{e}"));
    }

    let spec = res.split_spec(job.split_kind, job.seed);
    let manifest = res.data.manifest();
    let partition = split(manifest, &spec).map_err(|e| anyhow!("split: {e}"))?;
    partition
        .save_json(&res.out_dir.join("splits").join(format!("{run_id}.json")))
        .map_err(|e| anyhow!("{e}"))?;
    let audit = audit_split(&partition);
    std::fs::write(
        res.out_dir
            .join("splits")
            .join(format!("{run_id}.audit.json")),
        serde_json::to_string_pretty(&audit)?,
    )?;

    let train_src = res.data.frames_for(&partition.train)?;
    let test_src = res.data.frames_for(&partition.test)?;
    let train_cfg = res.train_cfg(job.row, job.seed);
    let out_dir = Some(res.out_dir.as_path());

    let mut train_s_per_epoch;
    let evaluation: Evaluation;
    let params_count: usize;
    match job.row {
        RowKind::Arch(arch) => {
            let spec = res.model_sec.apply(arch);
            let out = train(
                &spec,
                train_src.as_ref(),
                &train_cfg,
                &res.loss_cfg,
                &run_id,
                job.split_kind.name(),
                out_dir,
            )
            .map_err(|e| anyhow!("train: {e}"))?;
            train_s_per_epoch = out.record.train_seconds_per_epoch;
            params_count = out.model.count_parameters();
            let predictor = Predictor::Single(&out.model);
            evaluation = iuq_core::metrics::evaluate(&predictor, test_src.as_ref(), &res.eval_opts(job.seed))
                .map_err(|e| anyhow!("evaluate: {e}"))?;
        }
        RowKind::DeepEns => {
            let spec = res.model_sec.apply(Arch::Unet3Physics);
            let outs = train_ensemble(
                &spec,
                train_src.as_ref(),
                &train_cfg,
                &res.loss_cfg,
                &run_id,
                job.split_kind.name(),
                out_dir,
            )
            .map_err(|e| anyhow!("train ensemble: {e}"))?;
            train_s_per_epoch = outs.iter().map(|o| o.record.train_seconds_per_epoch).sum();
            params_count = outs.iter().map(|o| o.model.count_parameters()).sum();
            let members: Vec<Model> = outs.into_iter().map(|o| o.model).collect();
            let predictor = Predictor::Ensemble(&members);
            evaluation = iuq_core::metrics::evaluate(&predictor, test_src.as_ref(), &res.eval_opts(job.seed))
                .map_err(|e| anyhow!("evaluate: {e}"))?;
        }
        RowKind::McDropout => {
            // reuse the trained proposed model of the same (split, seed)
            let proposed_run = Job {
                row: RowKind::Arch(Arch::ProposedFull),
                ..job.clone()
            }
            .run_id(res.kind);
            let ckpt = res
                .out_dir
                .join("runs")
                .join(&proposed_run)
                .join("phase2.ckpt");
            let model = if ckpt.exists() {
                load_checkpoint(&ckpt).map_err(|e| anyhow!("{e}"))?
            } else {
                bail!("mc_dropout row needs the proposed_full checkpoint at {}", ckpt.display());
            };
            train_s_per_epoch = 0.0;
            // carry the source run's training time when its report exists
            let src_report = res
                .out_dir
                .join("results")
                .join(format!("{proposed_run}.json"));
            if let Ok(r) = EvalReport::load_json(&src_report) {
                train_s_per_epoch = r.timings.0;
            }
            params_count = model.count_parameters();
            let predictor = Predictor::McDropout {
                model: &model,
                passes: res.mc_passes(),
                seed: job.seed,
            };
            evaluation = iuq_core::metrics::evaluate(&predictor, test_src.as_ref(), &res.eval_opts(job.seed))
                .map_err(|e| anyhow!("evaluate: {e}"))?;
        }
    }

    // persist scatter data for the calibration figure
    if !evaluation.sample.sigma_total.is_empty() {
        let k = res.scatter_points().min(evaluation.sample.len());
        let mut csv = String::from("sigma,abs_err\n");
        for i in 0..k {
            csv.push_str(&format!(
                "{},{}\n",
                evaluation.sample.sigma_total[i], evaluation.sample.recon_abs[i]
            ));
        }
        let p = res.out_dir.join("scatter").join(format!("{run_id}.csv"));
        std::fs::create_dir_all(p.parent().unwrap())?;
        std::fs::write(p, csv)?;
    }

    // qualitative panels
    let maps_dir = res.out_dir.join("maps").join(&run_id);
    for (k, panels) in evaluation.panels.iter().enumerate() {
        let save = |img: &ImageTensor, name: &str| -> anyhow::Result<()> {
            save_image_tensor_png8(img, &maps_dir.join(format!("frame_{k:02}_{name}.png")))
                .map_err(|e| anyhow!("{e}"))
        };
        save(&panels.input, "input")?;
        save(&panels.r_hat, "reflectance")?;
        save(&panels.s_hat, "shading")?;
        if let Some(n) = &panels.n_hat {
            let (h, w) = (n.height(), n.width());
            let mut gray = ndarray::Array2::<f32>::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    let d = n.data();
                    gray[[y, x]] = (d[[0, y, x]] + d[[1, y, x]] + d[[2, y, x]]) / 3.0;
                }
            }
            let norm = percentile_normalize(&gray);
            save(&ImageTensor::from_gray(&norm), "residual")?;
        }
        if let Some(m) = &panels.sigma_tex {
            save(&ImageTensor::from_gray(&percentile_normalize(m)), "sigma_tex")?;
        }
        if let Some(m) = &panels.sigma_nl {
            save(&ImageTensor::from_gray(&percentile_normalize(m)), "sigma_nl")?;
        }
    }

    let report = EvalReport {
        run_id: run_id.clone(),
        seed: job.seed,
        arch_name: job.row.label(),
        split_name: job.split_kind.name().to_string(),
        r_psnr: evaluation.r_psnr,
        s_psnr: evaluation.s_psnr,
        recon_psnr: evaluation.recon_psnr,
        uq_corr: evaluation.uq_corr,
        sigma_means: evaluation.sigma_means.clone(),
        channel_corr: evaluation.channel_corr,
        cross_corr: evaluation.cross_corr,
        filtering_curve: evaluation.filtering_curve.clone(),
        epistemic: evaluation.epistemic,
        params_count: params_count as u64,
        timings: (train_s_per_epoch, evaluation.infer_ms),
    };
    report.validate().map_err(|e| anyhow!("{e}"))?;
    report.save_json(&results_path).map_err(|e| anyhow!("{e}"))?;
    Ok(report)
}

fn run_ood_probe(res: &Resolved, reports: &[EvalReport]) -> anyhow::Result<()> {
    let first = reports
        .iter()
        .find(|r| r.arch_name == "proposed_full")
        .ok_or_else(|| anyhow!("ood probe needs a proposed_full run"))?;
    let ckpt = res
        .out_dir
        .join("runs")
        .join(&first.run_id)
        .join("phase2.ckpt");
    let model = load_checkpoint(&ckpt).map_err(|e| anyhow!("{e}"))?;
    let resolution = res.data.manifest().resolution;
    let photos: Vec<(String, ImageTensor)> = match &res.photos_dir {
        Some(dir) => {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("png" | "jpg" | "jpeg")
                    )
                })
                .collect();
            entries.sort();
            entries
                .into_iter()
                .map(|p| {
                    let name = p
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("photo")
                        .to_string();
                    load_image_tensor(&p, resolution)
                        .map(|img| (name, img))
                        .map_err(|e| anyhow!("{e}"))
                })
                .collect::<anyhow::Result<_>>()?
        }
        None => fixture_photos(resolution),
    };
    let mut table = Table::new("ood_probe", &["photo", "corr_nl_vs_nhat", "corr_tex_vs_nhat"]);
    let mut records = Vec::new();
    let mut sum = (0.0, 0.0);
    for (name, img) in &photos {
        let probe = ood_probe(&model, img).map_err(|e| anyhow!("probe {name}: {e}"))?;
        sum.0 += probe.corr_nl;
        sum.1 += probe.corr_tex;
        table.push_row(vec![
            name.clone(),
            format!("{:+.3}", probe.corr_nl),
            format!("{:+.3}", probe.corr_tex),
        ]);
        records.push(serde_json::json!({
            "photo": name,
            "corr_nl": probe.corr_nl,
            "corr_tex": probe.corr_tex,
        }));
    }
    let k = photos.len() as f64;
    table.push_row(vec![
        "mean".to_string(),
        format!("{:+.3}", sum.0 / k),
        format!("{:+.3}", sum.1 / k),
    ]);
    table.write(&res.out_dir)?;
    std::fs::write(
        res.out_dir.join("ood_probe.json"),
        serde_json::to_string_pretty(&records)?,
    )?;
    Ok(())
}

/// Builds the experiment's tables and significance tests from its reports.
pub fn aggregate_tables(
    kind: ExperimentKind,
    reports: &[EvalReport],
) -> anyhow::Result<(Vec<Table>, Vec<TTestRecord>)> {
    let mut tables = Vec::new();
    let mut ttests = Vec::new();

    let by = |row: &str, split: &str| -> Vec<&EvalReport> {
        reports
            .iter()
            .filter(|r| r.arch_name == row && r.split_name == split)
            .collect()
    };
    let row_labels: Vec<String> = {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for r in reports {
            if seen.insert(r.arch_name.clone(), ()).is_none() {
                out.push(r.arch_name.clone());
            }
        }
        out
    };

    match kind {
        ExperimentKind::ProtocolStudy | ExperimentKind::SynthLeakage => {
            let mut t = Table::new(
                "protocol_comparison",
                &[
                    "arch", "metric", "frame_level", "scene_level", "delta", "paired_t", "p_value",
                ],
            );
            for row in &row_labels {
                for (metric, get) in [
                    ("r_psnr", (|r: &EvalReport| Some(r.r_psnr)) as fn(&EvalReport) -> Option<f64>),
                    ("s_psnr", |r: &EvalReport| Some(r.s_psnr)),
                ] {
                    let frame = by(row, "random_frame");
                    let scene = by(row, "scene");
                    let (fa, sa) = match (metric_stats(&frame, get), metric_stats(&scene, get)) {
                        (Some(a), Some(b)) => (a, b),
                        _ => continue,
                    };
                    let pairs: Vec<(u64, f64, f64)> = frame
                        .iter()
                        .filter_map(|f| {
                            scene
                                .iter()
                                .find(|s| s.seed == f.seed)
                                .and_then(|s| Some((f.seed, get(f)?, get(s)?)))
                        })
                        .collect();
                    let (_, test, delta) =
                        paired_over_seeds(metric, "frame_level", "scene_level", pairs);
                    ttests.push(TTestRecord {
                        metric: metric.to_string(),
                        row: row.clone(),
                        condition_a: "frame_level".into(),
                        condition_b: "scene_level".into(),
                        mean_a: fa.0,
                        mean_b: sa.0,
                        mean_delta: delta,
                        t_test: test,
                        degenerate: test.is_none(),
                    });
                    t.push_row(vec![
                        row.clone(),
                        metric.to_string(),
                        crate::report::fmt_mean_std(fa.0, fa.1),
                        crate::report::fmt_mean_std(sa.0, sa.1),
                        fmt_opt(delta, 3),
                        fmt_opt(test.map(|x| x.t), 3),
                        fmt_opt(test.map(|x| x.p), 4),
                    ]);
                }
            }
            tables.push(t);
        }
        ExperimentKind::SplitGradient => {
            let mut t = Table::new(
                "split_gradient",
                &["arch", "split", "r_psnr", "s_psnr"],
            );
            for row in &row_labels {
                for split_name in ["random_frame", "temporal", "scene"] {
                    let rs = by(row, split_name);
                    if rs.is_empty() {
                        continue;
                    }
                    let r = metric_stats(&rs, |r| Some(r.r_psnr)).unwrap();
                    let s = metric_stats(&rs, |r| Some(r.s_psnr)).unwrap();
                    t.push_row(vec![
                        row.clone(),
                        split_name.to_string(),
                        crate::report::fmt_mean_std(r.0, r.1),
                        crate::report::fmt_mean_std(s.0, s.1),
                    ]);
                }
            }
            tables.push(t);
        }
        ExperimentKind::Ablation => {
            let order = ["unet2", "unet3_physics", "proposed_noskip", "proposed_full"];
            let base = metric_stats(&by("unet2", "scene"), |r| Some(r.r_psnr));
            let mut t = Table::new(
                "ablation",
                &["configuration", "r_psnr", "delta_r", "uq_corr"],
            );
            for row in order {
                let rs = by(row, "scene");
                if rs.is_empty() {
                    continue;
                }
                let r = metric_stats(&rs, |r| Some(r.r_psnr)).unwrap();
                let uq = metric_stats(&rs, |r| r.uq_corr);
                let delta = base.map(|b| r.0 - b.0);
                t.push_row(vec![
                    row.to_string(),
                    crate::report::fmt_mean_std(r.0, r.1),
                    if row == "unet2" {
                        "---".into()
                    } else {
                        fmt_opt(delta, 2)
                    },
                    match uq {
                        Some((m, s)) => format!("{m:.3}±{s:.3}"),
                        None => "---".into(),
                    },
                ]);
            }
            tables.push(t);
        }
        ExperimentKind::MainTable => {
            let order = [
                "direct_cnn",
                "unet2",
                "unet3_physics",
                "deep_ens",
                "proposed_noskip",
                "proposed_full",
                "mc_dropout",
            ];
            let mut t = Table::new(
                "main_results",
                &["model", "r_psnr", "s_psnr", "recon_psnr", "uq_corr"],
            );
            let mut cost = Table::new(
                "computational_cost",
                &["model", "params_k", "train_s_per_epoch", "infer_ms"],
            );
            for row in order {
                let rs = by(row, "scene");
                if rs.is_empty() {
                    continue;
                }
                let r = metric_stats(&rs, |r| Some(r.r_psnr)).unwrap();
                let s = metric_stats(&rs, |r| Some(r.s_psnr)).unwrap();
                let recon = metric_stats(&rs, |r| r.recon_psnr);
                let uq = metric_stats(&rs, |r| r.uq_corr);
                t.push_row(vec![
                    row.to_string(),
                    crate::report::fmt_mean_std(r.0, r.1),
                    crate::report::fmt_mean_std(s.0, s.1),
                    recon
                        .map(|(m, s)| crate::report::fmt_mean_std(m, s))
                        .unwrap_or_else(|| "---".into()),
                    uq.map(|(m, s)| format!("{m:.3}±{s:.3}"))
                        .unwrap_or_else(|| "---".into()),
                ]);
                let params = rs[0].params_count as f64 / 1000.0;
                let train_s = metric_stats(&rs, |r| Some(r.timings.0)).unwrap().0;
                let infer = metric_stats(&rs, |r| Some(r.timings.1)).unwrap().0;
                cost.push_row(vec![
                    row.to_string(),
                    format!("{params:.0}"),
                    format!("{train_s:.2}"),
                    format!("{infer:.2}"),
                ]);
            }
            tables.push(t);
            tables.push(cost);
        }
        ExperimentKind::Downstream => {
            let mut t = Table::new(
                "downstream_filtering",
                &["keep_pct", "guided_mse", "random_mse", "benefit_pct"],
            );
            if let Some(r) = reports.iter().find(|r| r.arch_name == "proposed_full") {
                for (keep, guided, random) in &r.filtering_curve {
                    let benefit = if *random > 0.0 {
                        100.0 * (1.0 - guided / random)
                    } else {
                        0.0
                    };
                    t.push_row(vec![
                        format!("{:.0}%", keep * 100.0),
                        format!("{guided:.5}"),
                        format!("{random:.5}"),
                        format!("{benefit:+.1}%"),
                    ]);
                }
            }
            tables.push(t);
        }
        ExperimentKind::ChannelVerify => {
            if let Some(r) = reports.iter().find(|r| r.arch_name == "proposed_full") {
                let names = ["sigma_tex", "sigma_light", "sigma_nl"];
                if let Some(m) = r.channel_corr {
                    let mut t = Table::new(
                        "inter_channel_correlation",
                        &["channel", "sigma_tex", "sigma_light", "sigma_nl"],
                    );
                    for (i, n) in names.iter().enumerate() {
                        t.push_row(vec![
                            n.to_string(),
                            format!("{:.2}", m[i][0]),
                            format!("{:.2}", m[i][1]),
                            format!("{:.2}", m[i][2]),
                        ]);
                    }
                    tables.push(t);
                }
                if let Some(m) = r.cross_corr {
                    let mut t = Table::new(
                        "cross_correlation",
                        &["channel", "err_r", "err_s", "err_n"],
                    );
                    for (i, n) in names.iter().enumerate() {
                        t.push_row(vec![
                            n.to_string(),
                            format!("{:.2}", m[i][0]),
                            format!("{:.2}", m[i][1]),
                            format!("{:.2}", m[i][2]),
                        ]);
                    }
                    tables.push(t);
                }
            }
        }
        ExperimentKind::OodProbe => {
            // the probe table is emitted by run_ood_probe
        }
    }

    // every experiment also gets a flat per-run table
    let mut flat = Table::new(
        "runs",
        &[
            "run_id", "arch", "split", "seed", "r_psnr", "s_psnr", "recon_psnr", "uq_corr",
        ],
    );
    for r in reports {
        flat.push_row(vec![
            r.run_id.clone(),
            r.arch_name.clone(),
            r.split_name.clone(),
            r.seed.to_string(),
            format!("{:.3}", r.r_psnr),
            format!("{:.3}", r.s_psnr),
            fmt_opt(r.recon_psnr, 3),
            fmt_opt(r.uq_corr, 4),
        ]);
    }
    tables.push(flat);

    Ok((tables, ttests))
}
