use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vinescan_core::augment::{generate, split_dataset, AugmentationGrid, Generated, PatchParams};
use vinescan_core::eval::{
    grapevine_level_report, leaf_level_report, registration_stats, MapPair, MetricsReport,
    RegistrationStats,
};
use vinescan_core::fusion::{fuse_maps, overlay, DiseaseLabel, DiseaseMap, Provenance};
use vinescan_core::raster::io::{encode_png, read_png};
use vinescan_core::raster::{Mask, Raster};
use vinescan_core::registration::{
    register_pair, warp, warp_labels, Homography, RegistrationReport,
};
use vinescan_core::segmap::{
    decode_mask, encode_mask, segment_tiled_with_halo, train_baseline, BaselineModel, ClassLabel,
    ClassMap, Modality, TrainParams,
};
use vinescan_core::synth::{pair_seed, synth_pair, SyntheticPair};

use crate::config::{load_config, parse_override, stage_seed, PipelineConfig};
use crate::error::{require_file, CliError, StageContext};
use crate::manifest::{Outputs, RunManifest, Timer};
use crate::{
    AugmentArgs, Cli, Command, EvaluateArgs, FuseArgs, ModalityArg, PipelineArgs, RegisterArgs,
    SegmentArgs, SynthArgs, TrainArgs,
};

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Visible => Modality::Visible,
            ModalityArg::Infrared => Modality::Infrared,
        }
    }
}

/// Ground truth written next to each synthetic pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    /// Maps infrared pixel coordinates into the visible frame.
    pub homography: Homography,
}

/// Runs one parsed command line. On failure every file the command wrote
/// is removed again.
pub fn run(cli: Cli) -> Result<RunManifest, CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::input("config", "--jobs must be at least 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut overrides = cli
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), toml::Value::Integer(seed as i64)));
    }
    if let Command::Pipeline(a) = &cli.command {
        let path = |v: &Option<PathBuf>| v.as_ref().map(|p| toml::Value::String(p.display().to_string()));
        for (key, v) in [
            ("paths.visible", path(&a.vis)),
            ("paths.infrared", path(&a.ir)),
            ("paths.visible_truth", path(&a.vis_truth)),
            ("paths.infrared_truth", path(&a.ir_truth)),
            ("paths.visible_model", path(&a.vis_model)),
            ("paths.infrared_model", path(&a.ir_model)),
            ("paths.out", path(&a.out)),
        ] {
            if let Some(v) = v {
                overrides.push((key.into(), v));
            }
        }
    }
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    let mut out = Outputs::new();
    if let Some(p) = &cli.config {
        out.input(p)?;
    }
    let result = dispatch(&cli.command, &cfg, &mut out, cli.manifest.as_deref());
    if result.is_err() {
        out.cleanup();
    }
    result
}

fn dispatch(
    cmd: &Command,
    cfg: &PipelineConfig,
    out: &mut Outputs,
    manifest: Option<&Path>,
) -> Result<RunManifest, CliError> {
    let mut timer = Timer::start();
    let (name, default_manifest) = match cmd {
        Command::Synth(a) => ("synth", cmd_synth(a, cfg, out, &mut timer).map(|_| a.out.join("manifest.json"))),
        Command::Register(a) => ("register", cmd_register(a, cfg, out, &mut timer).map(|_| sibling(&a.out_report))),
        Command::Segment(a) => ("segment", cmd_segment(a, cfg, out, &mut timer).map(|_| sibling(&a.out))),
        Command::Train(a) => ("train", cmd_train(a, cfg, out, &mut timer).map(|_| sibling(&a.out))),
        Command::Fuse(a) => ("fuse", cmd_fuse(a, cfg, out, &mut timer).map(|_| sibling(&a.out))),
        Command::Evaluate(a) => ("evaluate", cmd_evaluate(a, cfg, out, &mut timer).map(|_| sibling(&a.out))),
        Command::Augment(a) => ("augment", cmd_augment(a, cfg, out, &mut timer).map(|_| a.out.join("manifest.json"))),
        Command::Pipeline(a) => {
            let dir = pipeline_dir(a, cfg);
            ("pipeline", cmd_pipeline(&dir, cfg, out, &mut timer).map(|_| dir.join("manifest.json")))
        }
    };
    let path = manifest.map(Path::to_path_buf).map_or(default_manifest, Ok)?;
    let (stages, total) = timer.finish();
    let m = out.manifest(name, cfg, stages, total);
    let mut text = serde_json::to_string_pretty(&m).map_err(|e| CliError::internal("manifest", e.to_string()))?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        out.dir(parent)?;
    }
    std::fs::write(&path, text).map_err(|e| CliError::internal("manifest", format!("{}: {e}", path.display())))?;
    Ok(m)
}

/// `report.json` -> `report.manifest.json`.
fn sibling(primary: &Path) -> PathBuf {
    let stem = primary.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    primary.with_file_name(format!("{stem}.manifest.json"))
}

fn pipeline_dir(a: &PipelineArgs, cfg: &PipelineConfig) -> PathBuf {
    a.out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("vinescan-out"))
}

fn load_image(stage: &str, path: &Path, out: &mut Outputs) -> Result<Raster, CliError> {
    require_file(stage, path)?;
    out.input(path)?;
    read_png(path).map_err(|e| CliError::input(stage, format!("{}: {e}", path.display())))
}

fn load_labels(stage: &str, path: &Path, modality: Modality, out: &mut Outputs) -> Result<ClassMap, CliError> {
    require_file(stage, path)?;
    out.input(path)?;
    let bytes = std::fs::read(path).map_err(|e| CliError::input(stage, format!("{}: {e}", path.display())))?;
    decode_mask(&bytes, modality).map_err(|e| CliError::input(stage, format!("{}: {e}", path.display())))
}

fn load_model(stage: &str, path: &Path, out: &mut Outputs) -> Result<BaselineModel, CliError> {
    require_file(stage, path)?;
    out.input(path)?;
    BaselineModel::load(path).map_err(|e| CliError::input(stage, format!("{}: {e}", path.display())))
}

fn write_png(out: &mut Outputs, stage: &str, path: &Path, img: &Raster) -> Result<(), CliError> {
    let bytes = encode_png(img).stage(stage)?;
    out.write(path, &bytes)
}

fn write_mask(out: &mut Outputs, stage: &str, path: &Path, map: &ClassMap) -> Result<(), CliError> {
    let bytes = encode_mask(map).stage(stage)?;
    out.write(path, &bytes)
}

fn cmd_synth(a: &SynthArgs, cfg: &PipelineConfig, out: &mut Outputs, timer: &mut Timer) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(CliError::input("synth", "--count must be at least 1"));
    }
    let base = stage_seed(cfg.seed, "synth");
    timer.time("synth", || {
        out.dir(&a.out)?;
        for i in 0..a.count {
            let seed = pair_seed(base, i as u64);
            let pair = synth_pair(&cfg.synth, seed).stage("synth")?;
            let dir = a.out.join(format!("pair_{i:04}"));
            write_synthetic(out, &dir, &pair, seed)?;
        }
        Ok(())
    })
}

fn write_synthetic(out: &mut Outputs, dir: &Path, pair: &SyntheticPair, seed: u64) -> Result<(), CliError> {
    write_png(out, "synth", &dir.join("visible.png"), &pair.visible)?;
    write_png(out, "synth", &dir.join("infrared.png"), &pair.infrared)?;
    write_mask(out, "synth", &dir.join("visible_labels.png"), &pair.visible_labels)?;
    write_mask(out, "synth", &dir.join("infrared_labels.png"), &pair.infrared_labels)?;
    write_mask(
        out,
        "synth",
        &dir.join("infrared_labels_registered.png"),
        &pair.infrared_labels_registered,
    )?;
    out.write_json(&dir.join("truth.json"), &SynthTruth { seed, homography: pair.truth })
}

fn cmd_register(a: &RegisterArgs, cfg: &PipelineConfig, out: &mut Outputs, timer: &mut Timer) -> Result<(), CliError> {
    let vis = load_image("register", &a.vis, out)?;
    let ir = load_image("register", &a.ir, out)?;
    let result = timer
        .time("registration", || register_pair(&vis, &ir, &cfg.registration, stage_seed(cfg.seed, "register")))
        .stage("registration")?;
    let (warped, valid) = timer
        .time("warp", || warp(&ir, &result.homography, vis.width(), vis.height()))
        .stage("warp")?;
    write_png(out, "register", &a.out_warped, &warped)?;
    if let Some(p) = &a.out_mask {
        write_png(out, "register", p, &valid.to_raster())?;
    }
    let report = result.report();
    log::info!("rmse {:.3} px after {} iteration(s)", report.rmse, report.iterations);
    out.write_json(&a.out_report, &report)
}

fn cmd_segment(a: &SegmentArgs, cfg: &PipelineConfig, out: &mut Outputs, timer: &mut Timer) -> Result<(), CliError> {
    let img = load_image("segment", &a.image, out)?;
    let model = load_model("segment", &a.model, out)?;
    let grid = cfg.segmentation.grid(img.width(), img.height())?;
    let map = timer
        .time("segmentation", || {
            segment_tiled_with_halo(&model, &img, &grid, a.modality.into(), cfg.segmentation.halo)
        })
        .stage("segmentation")?;
    write_mask(out, "segment", &a.out, &map)
}

fn train_params(cfg: &PipelineConfig, stage: &str) -> TrainParams {
    TrainParams {
        epochs: cfg.segmentation.epochs,
        lr: cfg.segmentation.learning_rate,
        seed: stage_seed(cfg.seed, stage),
    }
}

/// Synthetic training scenes for one modality.
fn synthetic_samples(cfg: &PipelineConfig, count: usize, modality: Modality) -> Result<Vec<(Raster, ClassMap)>, CliError> {
    let base = stage_seed(cfg.seed, "train-scenes");
    (0..count as u64)
        .map(|i| {
            let p = synth_pair(&cfg.synth, pair_seed(base, i)).stage("train")?;
            Ok(match modality {
                Modality::Visible => (p.visible, p.visible_labels),
                Modality::Infrared => (p.infrared, p.infrared_labels),
            })
        })
        .collect()
}

fn cmd_train(a: &TrainArgs, cfg: &PipelineConfig, out: &mut Outputs, timer: &mut Timer) -> Result<(), CliError> {
    if a.image.len() != a.labels.len() {
        return Err(CliError::input(
            "train",
            format!("{} images but {} label masks", a.image.len(), a.labels.len()),
        ));
    }
    let modality: Modality = a.modality.into();
    let mut samples = Vec::new();
    for (img, lab) in a.image.iter().zip(&a.labels) {
        samples.push((load_image("train", img, out)?, load_labels("train", lab, modality, out)?));
    }
    if let Some(n) = a.synthetic {
        samples.extend(synthetic_samples(cfg, n, modality)?);
    }
    if samples.is_empty() {
        return Err(CliError::input("train", "no training data (give --image/--labels or --synthetic N)"));
    }
    let model = timer
        .time("training", || train_baseline(&samples, &train_params(cfg, "train")))
        .stage("train")?;
    log::info!("training accuracy {:.4}", model.train_accuracy);
    out.write(&a.out, model.to_json().as_bytes())
}

fn load_valid(stage: &str, path: &Path, out: &mut Outputs) -> Result<Mask, CliError> {
    let img = load_image(stage, path, out)?;
    let bits = img
        .data()
        .chunks_exact(img.channels())
        .map(|px| px[0] > 127)
        .collect();
    Ok(Mask::new(img.width(), img.height(), bits))
}

fn cmd_fuse(a: &FuseArgs, cfg: &PipelineConfig, out: &mut Outputs, timer: &mut Timer) -> Result<(), CliError> {
    let v = load_labels("fuse", &a.vis_mask, Modality::Visible, out)?;
    let i = load_labels("fuse", &a.ir_mask, Modality::Infrared, out)?;
    let valid = a.valid.as_ref().map(|p| load_valid("fuse", p, out)).transpose()?;
    let mut d = timer.time("fusion", || fuse_maps(&v, &i, valid.as_ref())).stage("fusion")?;
    d.provenance = Provenance {
        visible: Some(a.vis_mask.display().to_string()),
        infrared: Some(a.ir_mask.display().to_string()),
        registration: None,
    };
    out.write(&a.out, &d.encode_png().stage("fuse")?)?;
    if let (Some(img), Some(dst)) = (&a.image, &a.out_overlay) {
        let vis = load_image("fuse", img, out)?;
        let o = overlay(&vis, &d, cfg.fusion.overlay_alpha).stage("fuse")?;
        write_png(out, "fuse", dst, &o)?;
    }
    Ok(())
}

/// Disease map from a six-class PNG, or from a four-class mask whose
/// symptoms are taken as seen by both modalities.
fn load_disease(stage: &str, path: &Path, out: &mut Outputs) -> Result<DiseaseMap, CliError> {
    require_file(stage, path)?;
    out.input(path)?;
    let bytes = std::fs::read(path).map_err(|e| CliError::input(stage, format!("{}: {e}", path.display())))?;
    if let Ok(d) = DiseaseMap::decode_png(&bytes) {
        return Ok(d);
    }
    let m = decode_mask(&bytes, Modality::Visible)
        .map_err(|e| CliError::input(stage, format!("{}: {e}", path.display())))?;
    let labels = m
        .labels()
        .iter()
        .map(|l| match l {
            ClassLabel::Symptom => DiseaseLabel::SymptomIntersection,
            other => DiseaseLabel::from_code(other.code()).expect("shared codes"),
        })
        .collect();
    DiseaseMap::new(m.width(), m.height(), labels).stage(stage)
}

/// Leaf and grapevine reports for every configured fusion mode.
pub fn metric_reports(cfg: &PipelineConfig, pairs: &[(DiseaseMap, DiseaseMap)]) -> Result<Vec<MetricsReport>, CliError> {
    let mut reports = Vec::new();
    for &mode in &cfg.fusion.modes {
        let collapsed: Vec<MapPair> = pairs
            .iter()
            .map(|(p, t)| (p.evaluation_map(mode), t.evaluation_map(mode)))
            .collect();
        reports.push(leaf_level_report(&collapsed, mode).stage("evaluation")?);
        reports.push(
            grapevine_level_report(&collapsed, cfg.evaluation.window, cfg.evaluation.stride, mode)
                .stage("evaluation")?,
        );
    }
    Ok(reports)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub metrics: Vec<MetricsReport>,
    pub registration: Option<RegistrationStats>,
}

impl EvaluationOutput {
    pub fn to_text(&self) -> String {
        let mut s: Vec<String> = self.metrics.iter().map(MetricsReport::to_text).collect();
        if let Some(r) = &self.registration {
            s.push(r.to_text());
        }
        s.join("\n")
    }

    fn to_csv(&self) -> Result<String, CliError> {
        let mut parts = Vec::new();
        for (i, m) in self.metrics.iter().enumerate() {
            let text = m.to_csv().stage("evaluation")?;
            // one header for the whole metrics block
            parts.push(if i == 0 { text } else { text.lines().skip(1).map(|l| format!("{l}\n")).collect() });
        }
        if let Some(r) = &self.registration {
            parts.push(r.to_csv().stage("evaluation")?);
        }
        Ok(parts.join("\n"))
    }
}

fn cmd_evaluate(a: &EvaluateArgs, cfg: &PipelineConfig, out: &mut Outputs, timer: &mut Timer) -> Result<(), CliError> {
    if a.pred.len() != a.truth.len() {
        return Err(CliError::input(
            "evaluate",
            format!("{} predictions but {} truth maps", a.pred.len(), a.truth.len()),
        ));
    }
    if a.pred.is_empty() && a.reports.is_empty() {
        return Err(CliError::input("evaluate", "nothing to evaluate (give --pred/--truth or --reports)"));
    }
    let mut pairs = Vec::new();
    for (p, t) in a.pred.iter().zip(&a.truth) {
        pairs.push((load_disease("evaluate", p, out)?, load_disease("evaluate", t, out)?));
    }
    let mut reports: Vec<RegistrationReport> = Vec::new();
    for p in &a.reports {
        require_file("evaluate", p)?;
        out.input(p)?;
        let text = std::fs::read_to_string(p).map_err(|e| CliError::input("evaluate", format!("{}: {e}", p.display())))?;
        reports.push(
            serde_json::from_str(&text).map_err(|e| CliError::input("evaluate", format!("{}: {e}", p.display())))?,
        );
    }
    let result = timer.time("evaluation", || -> Result<EvaluationOutput, CliError> {
        let metrics = if pairs.is_empty() { Vec::new() } else { metric_reports(cfg, &pairs)? };
        let registration = if reports.is_empty() {
            None
        } else {
            Some(registration_stats(&reports).stage("evaluation")?)
        };
        Ok(EvaluationOutput { metrics, registration })
    })?;
    print!("{}", result.to_text());
    out.write_json(&a.out, &result)?;
    if let Some(p) = &a.csv {
        out.write(p, result.to_csv()?.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PatchIndex {
    source: String,
    expected: usize,
    emitted: usize,
    skipped: Vec<PatchParams>,
    patches: Vec<PatchEntry>,
    train: Vec<usize>,
    validation: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct PatchEntry {
    image: String,
    labels: String,
    #[serde(flatten)]
    params: PatchParams,
}

fn cmd_augment(a: &AugmentArgs, cfg: &PipelineConfig, out: &mut Outputs, timer: &mut Timer) -> Result<(), CliError> {
    let frame = load_image("augment", &a.frame, out)?;
    let labels = load_labels("augment", &a.labels, Modality::Visible, out)?;
    let grid: AugmentationGrid = match &a.grid {
        Some(p) => {
            require_file("augment", p)?;
            out.input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| CliError::input("augment", format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::input("augment", format!("{}: {e}", p.display())))?
        }
        None => cfg.augmentation.clone(),
    };
    if !(0.0..=1.0).contains(&a.train_fraction) {
        return Err(CliError::input("augment", "--train-fraction must lie in [0, 1]"));
    }
    let source = a.frame.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let iter = generate(&frame, &labels, &grid, &source).stage("augment")?;
    let expected = iter.expected();
    out.dir(&a.out)?;
    let (patches, skipped) = timer.time("augment", || -> Result<_, CliError> {
        let mut patches = Vec::new();
        let mut skipped = Vec::new();
        for item in iter {
            match item {
                Generated::Patch(p) => {
                    let idx = p.provenance.index;
                    let image = format!("patch_{idx:06}.png");
                    let lab = format!("patch_{idx:06}_labels.png");
                    write_png(out, "augment", &a.out.join(&image), &p.image)?;
                    write_mask(out, "augment", &a.out.join(&lab), &p.labels)?;
                    patches.push(PatchEntry { image, labels: lab, params: p.provenance });
                }
                Generated::Skipped(p) => skipped.push(p),
            }
        }
        Ok((patches, skipped))
    })?;
    if patches.len() + skipped.len() != expected {
        return Err(CliError::internal(
            "augment",
            format!("{} patches + {} skipped != {expected} expected", patches.len(), skipped.len()),
        ));
    }
    if !skipped.is_empty() {
        log::warn!("{} of {expected} patches skipped: transformed window leaves the frame", skipped.len());
    }
    let indices: Vec<usize> = patches.iter().map(|p| p.params.index).collect();
    let (train, validation) = split_dataset(indices, a.train_fraction, stage_seed(cfg.seed, "augment-split"));
    let index = PatchIndex {
        source,
        expected,
        emitted: patches.len(),
        skipped,
        patches,
        train,
        validation,
    };
    out.write_json(&a.out.join("patches.json"), &index)
}

/// Runtime line of a pipeline run, in seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuntimeLine {
    pub registration: f64,
    pub segmentation_visible: f64,
    pub segmentation_infrared: f64,
    pub fusion: f64,
    pub total: f64,
}

struct Frames {
    vis: Raster,
    ir: Raster,
    truth: Option<(ClassMap, TruthIr)>,
}

enum TruthIr {
    /// Already in the visible frame.
    Registered(ClassMap),
    /// In the infrared frame; carried over with the estimated homography.
    Raw(ClassMap),
}

fn pipeline_inputs(cfg: &PipelineConfig, out: &mut Outputs) -> Result<Frames, CliError> {
    let p = &cfg.paths;
    match (&p.visible, &p.infrared) {
        (Some(v), Some(i)) => {
            let vis = load_image("input", v, out)?;
            let ir = load_image("input", i, out)?;
            let truth = match (&p.visible_truth, &p.infrared_truth) {
                (Some(vt), Some(it)) => Some((
                    load_labels("input", vt, Modality::Visible, out)?,
                    TruthIr::Raw(load_labels("input", it, Modality::Infrared, out)?),
                )),
                (None, None) => None,
                _ => return Err(CliError::input("input", "give both truth masks or neither")),
            };
            Ok(Frames { vis, ir, truth })
        }
        (None, None) => {
            let pair = synth_pair(&cfg.synth, stage_seed(cfg.seed, "demo")).stage("input")?;
            Ok(Frames {
                vis: pair.visible,
                ir: pair.infrared,
                truth: Some((pair.visible_labels, TruthIr::Registered(pair.infrared_labels_registered))),
            })
        }
        _ => Err(CliError::input("input", "give both --vis and --ir or neither")),
    }
}

fn pipeline_model(
    cfg: &PipelineConfig,
    path: Option<&PathBuf>,
    modality: Modality,
    dir: &Path,
    out: &mut Outputs,
    timer: &mut Timer,
) -> Result<BaselineModel, CliError> {
    if let Some(p) = path {
        return load_model("segmentation", p, out);
    }
    let (name, stage) = match modality {
        Modality::Visible => ("visible", "train-visible"),
        Modality::Infrared => ("infrared", "train-infrared"),
    };
    let samples = synthetic_samples(cfg, cfg.segmentation.training_pairs.max(1), modality)?;
    let model = timer
        .time(&format!("training_{name}"), || train_baseline(&samples, &train_params(cfg, stage)))
        .stage("training")?;
    out.write(&dir.join("models").join(format!("{name}.json")), model.to_json().as_bytes())?;
    Ok(model)
}

fn warp_map(map: &ClassMap, h: &Homography, w: usize, hh: usize, fill: ClassLabel) -> Result<(ClassMap, Mask), CliError> {
    let (codes, valid) = warp_labels(&map.codes(), map.width(), map.height(), h, w, hh, fill.code())
        .stage("registration")?;
    let m = ClassMap::from_codes(w, hh, &codes, map.modality).stage("registration")?;
    Ok((m, valid))
}

fn cmd_pipeline(dir: &Path, cfg: &PipelineConfig, out: &mut Outputs, timer: &mut Timer) -> Result<(), CliError> {
    out.dir(dir)?;
    let frames = pipeline_inputs(cfg, out)?;
    let (vw, vh) = (frames.vis.width(), frames.vis.height());

    let reg = timer
        .time("registration", || {
            register_pair(&frames.vis, &frames.ir, &cfg.registration, stage_seed(cfg.seed, "register"))
        })
        .stage("registration")?;
    let (warped, valid) = warp(&frames.ir, &reg.homography, vw, vh).stage("registration")?;
    let report = reg.report();

    let vis_model = pipeline_model(cfg, cfg.paths.visible_model.as_ref(), Modality::Visible, dir, out, timer)?;
    let ir_model = pipeline_model(cfg, cfg.paths.infrared_model.as_ref(), Modality::Infrared, dir, out, timer)?;
    let seg = &cfg.segmentation;
    let vis_map = timer
        .time("segmentation_visible", || -> Result<ClassMap, CliError> {
            let grid = seg.grid(vw, vh)?;
            segment_tiled_with_halo(&vis_model, &frames.vis, &grid, Modality::Visible, seg.halo).stage("segmentation")
        })?;
    let ir_map = timer
        .time("segmentation_infrared", || -> Result<ClassMap, CliError> {
            let grid = seg.grid(frames.ir.width(), frames.ir.height())?;
            segment_tiled_with_halo(&ir_model, &frames.ir, &grid, Modality::Infrared, seg.halo).stage("segmentation")
        })?;
    let (ir_registered, _) = warp_map(&ir_map, &reg.homography, vw, vh, ClassLabel::Shadow)?;

    let mut disease = timer
        .time("fusion", || fuse_maps(&vis_map, &ir_registered, Some(&valid)))
        .stage("fusion")?;
    let ov = overlay(&frames.vis, &disease, cfg.fusion.overlay_alpha).stage("fusion")?;

    let metrics = match &frames.truth {
        Some((vt, it)) => {
            let it = match it {
                TruthIr::Registered(m) => m.clone(),
                TruthIr::Raw(m) => warp_map(m, &reg.homography, vw, vh, ClassLabel::Shadow)?.0,
            };
            let truth = fuse_maps(vt, &it, Some(&valid)).stage("evaluation")?;
            let pairs = [(disease.clone(), truth)];
            Some(timer.time("evaluation", || metric_reports(cfg, &pairs))?)
        }
        None => None,
    };

    // timings go to the manifest only, so every artifact below is reproducible
    let mut report_json = serde_json::to_value(&report).map_err(|e| CliError::internal("output", e.to_string()))?;
    if let Some(obj) = report_json.as_object_mut() {
        obj.remove("runtime_seconds");
    }
    disease.provenance = Provenance {
        visible: Some("visible_mask.png".into()),
        infrared: Some("infrared_mask.png".into()),
        registration: Some("registration.json".into()),
    };
    out.write_json(&dir.join("registration.json"), &report_json)?;
    write_png(out, "output", &dir.join("warped_infrared.png"), &warped)?;
    write_png(out, "output", &dir.join("valid_mask.png"), &valid.to_raster())?;
    write_mask(out, "output", &dir.join("visible_mask.png"), &vis_map)?;
    write_mask(out, "output", &dir.join("infrared_mask.png"), &ir_registered)?;
    out.write(&dir.join("disease_map.png"), &disease.encode_png().stage("output")?)?;
    write_png(out, "output", &dir.join("overlay.png"), &ov)?;
    out.write_json(&dir.join("provenance.json"), &disease.provenance)?;
    if let Some(m) = metrics {
        let result = EvaluationOutput { metrics: m, registration: None };
        out.write_json(&dir.join("metrics.json"), &result)?;
        out.write(&dir.join("metrics.txt"), result.to_text().as_bytes())?;
    }

    let line = RuntimeLine {
        registration: timer.seconds("registration"),
        segmentation_visible: timer.seconds("segmentation_visible"),
        segmentation_infrared: timer.seconds("segmentation_infrared"),
        fusion: timer.seconds("fusion"),
        total: timer.elapsed(),
    };
    println!(
        "runtime (s): registration {:.3} | segmentation {:.3} + {:.3} | fusion {:.3} | total {:.3}",
        line.registration, line.segmentation_visible, line.segmentation_infrared, line.fusion, line.total
    );
    println!(
        "registration: rmse {:.3} px, {} iteration(s), quality {:?}",
        report.rmse, report.iterations, report.quality
    );
    Ok(())
}
