//! The generational loop: discover, select, train students, build the
//! ensembles and the evaluator, report, then hand the pool on as the next
//! teacher. Every stage persists its outputs under
//! `<runs>/<config-hash>/gen<i>/{masks,manifests,weights,reports}` and leaves
//! a `<stage>.done` marker so a re-run skips it.

pub mod dataset;
pub mod manifest;
pub mod report;
pub mod stages;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{multi_net, StudentPool};
use crate::error::{Error, Result};
use crate::imgcore::{load_frame_png, load_mask_png, save_mask_png, SoftMask};
use crate::masksel::{make_eval_pairs, mean_nonzero_score, train_evaluator, Evaluator, EvaluatorConfig, SelectionPolicy};
use crate::metrics::{evaluate_records, MetricReport};
use crate::postproc::PostprocConfig;
use crate::student::{StudentArch, StudentKind, StudentNet, TrainConfig};
use crate::videopca::VideoPcaConfig;

use dataset::{Dataset, ShotRef};
use manifest::{read_manifest, write_manifest, ManifestRow};
use report::{build_records, candidate_iou, metric_lines, selection_csv, selection_dat, GroundTruth, ScoredCandidate, SelectionRow};
use stages::{ensemble_frame, path_string, to_frame_size, write_text, write_trace, MULTISELECT, MULTI_NET};
use synth::SyntheticSpec;

pub const TEACHER: &str = "teacher";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Corpus roots; the first is the primary root whose last shots are held
    /// out. Empty means: synthesize one from `synth`.
    pub roots: Vec<PathBuf>,
    pub synth: SyntheticSpec,
    /// Roots added from generation 2 on.
    pub extension_roots: Vec<PathBuf>,
    /// Also add a freshly synthesized corpus (seed `synth.seed + i - 1`) at
    /// each generation `i >= 2`.
    pub synth_extension: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            roots: Vec::new(),
            synth: SyntheticSpec::default(),
            extension_roots: Vec::new(),
            synth_extension: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Policy over VideoPCA masks in generation 1.
    pub first: SelectionPolicy,
    /// Policy over evaluator-scored student masks in later generations.
    pub later: SelectionPolicy,
    /// Later generations run the student pool on every n-th training frame.
    pub frame_stride: usize,
    /// Cap on selected pairs in later generations; 0 means none.
    pub max_pairs: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            first: SelectionPolicy::Percentile { keep: 0.1 },
            later: SelectionPolicy::Threshold { tau: 0.8 },
            frame_stride: 3,
            max_pairs: 480,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentsConfig {
    pub archs: Vec<StudentArch>,
    pub train: TrainConfig,
}

impl Default for StudentsConfig {
    fn default() -> Self {
        StudentsConfig {
            archs: StudentKind::ALL.into_iter().map(StudentArch::default_for).collect(),
            train: TrainConfig {
                epochs: 30,
                crop_fraction: 0.9,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorStageConfig {
    pub net: EvaluatorConfig,
    /// Evaluator training uses every n-th training frame.
    pub frame_stride: usize,
}

impl Default for EvaluatorStageConfig {
    fn default() -> Self {
        EvaluatorStageConfig {
            net: EvaluatorConfig::default(),
            frame_stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Box threshold for Multi-Net masks, which are products and so darker
    /// than any single mask.
    pub multi_net_threshold: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            multi_net_threshold: 0.2,
        }
    }
}

/// Everything a run needs. Serialized as TOML; its hash names the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub generations: usize,
    pub corpus: CorpusConfig,
    pub videopca: VideoPcaConfig,
    pub selection: SelectionConfig,
    pub students: StudentsConfig,
    pub evaluator: EvaluatorStageConfig,
    pub postproc: PostprocConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            generations: 2,
            corpus: CorpusConfig::default(),
            videopca: VideoPcaConfig::default(),
            selection: SelectionConfig::default(),
            students: StudentsConfig::default(),
            evaluator: EvaluatorStageConfig::default(),
            postproc: PostprocConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 {
            return Err(Error::Config("generations must be >= 1".into()));
        }
        self.corpus.synth.validate()?;
        self.videopca.validate()?;
        self.selection.first.validate()?;
        self.selection.later.validate()?;
        if self.selection.frame_stride == 0 || self.evaluator.frame_stride == 0 {
            return Err(Error::Config("frame strides must be >= 1".into()));
        }
        if self.students.archs.len() < 2 {
            return Err(Error::Config("the student pool needs at least two architectures".into()));
        }
        let mut ids: Vec<_> = self.students.archs.iter().map(|a| a.id()).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.students.archs.len() {
            return Err(Error::Config("student architectures must be distinct".into()));
        }
        for a in &self.students.archs {
            a.validate()?;
        }
        self.students.train.validate()?;
        self.evaluator.net.validate()?;
        self.postproc.validate()?;
        if !(0.0..=1.0).contains(&self.report.multi_net_threshold) {
            return Err(Error::Config("report.multi_net_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the TOML serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    /// The configuration of generation `iteration` inside `run_dir`.
    pub fn generation(&self, iteration: usize, runs_dir: &Path) -> Result<GenerationConfig> {
        if iteration == 0 {
            return Err(Error::Config("generations are numbered from 1".into()));
        }
        let mut roots = self.corpus.roots.clone();
        if roots.is_empty() {
            roots.push(synth_root(runs_dir, &self.corpus.synth));
        }
        let first = GenerationConfig {
            iteration: 1,
            teacher: TeacherSpec::VideoPca(self.videopca.clone()),
            selection: self.selection.first,
            archs: self.students.archs.clone(),
            train: self.students.train.clone(),
            roots,
        };
        if iteration == 1 {
            return Ok(first);
        }
        let mut added = self.corpus.extension_roots.clone();
        if self.corpus.synth_extension {
            for i in 2..=iteration {
                added.push(synth_root(runs_dir, &self.extension_spec(i)));
            }
        }
        let layout = RunLayout::new(runs_dir, self);
        let mut g = extend_dataset(&first, &added)?;
        g.iteration = iteration;
        g.teacher = TeacherSpec::StudentPool {
            weights_dir: layout.gen_dir(iteration - 1).join("weights"),
        };
        g.selection = self.selection.later;
        Ok(g)
    }

    pub fn extension_spec(&self, iteration: usize) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.corpus.synth.seed + iteration as u64 - 1,
            ..self.corpus.synth.clone()
        }
    }

    /// Seed for one trainer, derived from the run seed and a label.
    pub fn derived_seed(&self, base: u64, label: &str) -> u64 {
        let d = Sha256::digest(format!("{}/{base}/{label}", self.seed).as_bytes());
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

/// Where a synthetic corpus for `spec` lives: shared by all runs in `runs_dir`.
pub fn synth_root(runs_dir: &Path, spec: &SyntheticSpec) -> PathBuf {
    let text = toml::to_string(spec).expect("spec serializes");
    let h = hex::encode(Sha256::digest(text.as_bytes()));
    runs_dir.join("corpus").join(format!("synth-{}", &h[..16]))
}

/// Generates the synthetic corpus for `spec` unless it is already complete.
pub fn ensure_synth(runs_dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    let root = synth_root(runs_dir, spec);
    let marker = root.join("synth.done");
    if !marker.exists() {
        log::info!("synthesizing corpus {}", root.display());
        synth::generate_synthetic(spec, &root)?;
        write_text(&marker, "")?;
    }
    Ok(root)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherSpec {
    VideoPca(VideoPcaConfig),
    /// The previous generation's students and evaluator.
    StudentPool { weights_dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub iteration: usize,
    pub teacher: TeacherSpec,
    pub selection: SelectionPolicy,
    pub archs: Vec<StudentArch>,
    pub train: TrainConfig,
    pub roots: Vec<PathBuf>,
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iteration == 0 {
            return Err(Error::Config("iteration must be >= 1".into()));
        }
        if self.iteration == 1 && !matches!(self.teacher, TeacherSpec::VideoPca(_)) {
            return Err(Error::Config("the first generation's teacher must be VideoPCA".into()));
        }
        if self.roots.is_empty() {
            return Err(Error::Config("no dataset roots".into()));
        }
        if self.archs.len() < 2 {
            return Err(Error::Config("the student pool needs at least two architectures".into()));
        }
        self.selection.validate()?;
        self.train.validate()
    }
}

/// Appends dataset roots; existing roots and their manifests are untouched.
pub fn extend_dataset(cfg: &GenerationConfig, new_roots: &[PathBuf]) -> Result<GenerationConfig> {
    let mut out = cfg.clone();
    for r in new_roots {
        if !r.is_dir() && !is_pending_synth(r) {
            return Err(Error::invalid(format!("dataset root {} does not exist", r.display())));
        }
        out.roots.push(r.clone());
    }
    Ok(out)
}

/// Synthetic roots are created lazily by the runner.
fn is_pending_synth(p: &Path) -> bool {
    p.file_name()
        .is_some_and(|n| n.to_string_lossy().starts_with("synth-"))
        && p.parent().is_some_and(|d| d.ends_with("corpus"))
}

/// Directory layout of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(runs_dir: &Path, cfg: &RunConfig) -> Self {
        RunLayout {
            root: runs_dir.join(cfg.hash()),
        }
    }

    pub fn gen_dir(&self, i: usize) -> PathBuf {
        self.root.join(format!("gen{i}"))
    }
}

/// Metrics of one model on the held-out split; `None` without ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub model: String,
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub generation: usize,
    pub models: Vec<ModelReport>,
    pub selection: Vec<SelectionRow>,
    pub train_pairs: usize,
}

impl GenerationReport {
    pub fn corloc(&self, model: &str) -> Option<f64> {
        self.models
            .iter()
            .find(|m| m.model == model)?
            .metrics
            .as_ref()
            .map(|r| r.average.corloc)
    }

    /// Mean CorLoc over the student rows.
    pub fn mean_student_corloc(&self, archs: &[StudentArch]) -> Option<f64> {
        let v: Option<Vec<f64>> = archs.iter().map(|a| self.corloc(a.id())).collect();
        let v = v?;
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn selection_row(&self, scorer: &str, keep: f64) -> Option<&SelectionRow> {
        self.selection
            .iter()
            .find(|r| r.scorer == scorer && (r.keep - keep).abs() < 1e-12)
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = format!("{}\n", report::METRIC_HEADER);
        for m in &self.models {
            metric_lines(&mut s, self.generation, &m.model, m.metrics.as_ref());
        }
        s
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {name}");
    f().map_err(|e| e.in_stage(name))
}

fn done_marker(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.done"))
}

/// Runs `f` unless its marker exists, then writes the marker.
fn once(dir: &Path, name: &'static str, f: impl FnOnce() -> Result<()>) -> Result<()> {
    let marker = done_marker(dir, name);
    if marker.exists() {
        log::info!("stage {name}: already done");
        return Ok(());
    }
    stage(name, f)?;
    write_text(&marker, "").map_err(|e| e.in_stage(name))
}

fn load_pool(weights_dir: &Path, archs: &[StudentArch]) -> Result<StudentPool> {
    let mut members = Vec::new();
    for a in archs {
        let p = weights_dir.join(format!("{}.fgdn", a.id()));
        if !p.is_file() {
            return Err(Error::InvalidState(format!("missing student weights {}", p.display())));
        }
        members.push(StudentNet::load(&p, a)?);
    }
    StudentPool::new(members)
}

fn load_evaluator(weights_dir: &Path) -> Result<Evaluator> {
    let p = weights_dir.join("evaluator.fgdn");
    if !p.is_file() {
        return Err(Error::InvalidState(format!("missing evaluator weights {}", p.display())));
    }
    Evaluator::load(&p)
}

fn held_out_frames(held: &[&ShotRef]) -> Vec<(PathBuf, PathBuf, String)> {
    let mut out = Vec::new();
    for s in held {
        for t in 0..s.frames.len() {
            out.push((s.frames[t].clone(), s.mask_rel(t), s.frame_id(t)));
        }
    }
    out
}

/// Executes one generation in `dir`, skipping stages already marked done.
pub fn run_generation(run: &RunConfig, gen: &GenerationConfig, dir: &Path) -> Result<GenerationReport> {
    gen.validate()?;
    let data = Dataset::scan(&gen.roots).map_err(|e| e.in_stage("scan"))?;
    let (train, held) = data.split();
    log::info!(
        "generation {}: {} shots ({} held out), {} frames",
        gen.iteration,
        data.shots.len(),
        held.len(),
        data.frame_count()
    );
    let masks_dir = dir.join("masks");
    let manifests = dir.join("manifests");
    let weights = dir.join("weights");
    let reports = dir.join("reports");
    let candidates_csv = manifests.join("candidates.csv");
    let selected_csv = manifests.join("selected.csv");
    let held_frames = held_out_frames(&held);
    let eval_dir = masks_dir.join("eval");

    once(dir, "teacher", || {
        let teacher_dir = masks_dir.join(TEACHER);
        let mut rows = Vec::new();
        match &gen.teacher {
            TeacherSpec::VideoPca(cfg) => {
                for s in &train {
                    rows.extend(stages::discover_shot(s, cfg, &teacher_dir)?);
                }
                for s in &held {
                    stages::discover_shot(s, cfg, &eval_dir.join(TEACHER))?;
                }
            }
            TeacherSpec::StudentPool { weights_dir } => {
                let pool = load_pool(weights_dir, &gen.archs)?;
                let ev = load_evaluator(weights_dir)?;
                let stride = run.selection.frame_stride;
                for s in &train {
                    for t in (0..s.frames.len()).step_by(stride) {
                        let f = load_frame_png(&s.frames[t])?;
                        let masks = pool.predict_all(&f)?;
                        let scores = ev.score_batch(&f, &masks)?;
                        for ((m, sc), member) in masks.iter().zip(scores).zip(pool.members()) {
                            let id = member.arch.id();
                            let p = teacher_dir.join(id).join(s.mask_rel(t));
                            save_mask_png(&to_frame_size(m, f.dims())?, &p)?;
                            rows.push(ManifestRow {
                                frame_path: path_string(&s.frames[t]),
                                mask_path: path_string(&p),
                                score: sc,
                                producer: id.into(),
                            });
                        }
                    }
                }
                // The previous generation's MultiSelect is this generation's teacher.
                for (fp, rel, _) in &held_frames {
                    let f = load_frame_png(fp)?;
                    let (_, _, chosen, _) = ensemble_frame(&pool, &ev, &f)?;
                    save_mask_png(&chosen, eval_dir.join(TEACHER).join(rel))?;
                }
            }
        }
        write_manifest(&candidates_csv, &rows)
    })?;

    once(dir, "select", || {
        let rows = read_manifest(&candidates_csv)?;
        let mut sel = stages::select_rows(rows, &gen.selection)?;
        if gen.iteration > 1 {
            sel = stages::cap_rows(sel, run.selection.max_pairs);
        }
        if sel.is_empty() {
            return Err(Error::DegenerateMask("selection kept no training pairs".into()));
        }
        write_manifest(&selected_csv, &sel)
    })?;

    for (ai, arch) in gen.archs.iter().enumerate() {
        let name: &'static str = match arch.kind {
            StudentKind::TinyLowres => "train-tiny_lowres",
            StudentKind::TinyFconv => "train-tiny_fconv",
            StudentKind::TinyUnet => "train-tiny_unet",
        };
        once(dir, name, || {
            let rows = read_manifest(&selected_csv)?;
            let cfg = TrainConfig {
                seed: run.derived_seed(gen.train.seed, &format!("gen{}/{}/{ai}", gen.iteration, arch.id())),
                ..gen.train.clone()
            };
            let (net, trace) = stages::train_from_manifest(&rows, arch, &cfg)?;
            net.save(weights.join(format!("{}.fgdn", arch.id())))?;
            write_trace(&weights.join(format!("{}.loss.csv", arch.id())), &trace)
        })?;
    }

    once(dir, "evaluator", || {
        let pool = load_pool(&weights, &gen.archs)?;
        let cands = read_manifest(&candidates_csv)?;
        let mut teacher_masks: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in &cands {
            teacher_masks.entry(&r.frame_path).or_default().push(&r.mask_path);
        }
        let mut frames = Vec::new();
        let mut candidates = Vec::new();
        let mut ensembles = Vec::new();
        let stride = run.evaluator.frame_stride;
        for s in &train {
            for t in (0..s.frames.len()).step_by(stride) {
                let f = load_frame_png(&s.frames[t])?;
                let mut c = pool.predict_all(&f)?;
                let product = multi_net(&c)?;
                for mp in teacher_masks.get(path_string(&s.frames[t]).as_str()).into_iter().flatten() {
                    c.push(load_mask_png(mp)?);
                }
                frames.push(f);
                candidates.push(c);
                ensembles.push(Some(product));
            }
        }
        let pairs = make_eval_pairs(&frames, &candidates, &ensembles)?;
        drop(frames);
        let cfg = EvaluatorConfig {
            seed: run.derived_seed(run.evaluator.net.seed, &format!("gen{}/evaluator", gen.iteration)),
            ..run.evaluator.net.clone()
        };
        let (ev, trace) = train_evaluator(&pairs, &cfg)?;
        ev.save(weights.join("evaluator.fgdn"))?;
        write_trace(&weights.join("evaluator.loss.csv"), &trace)
    })?;

    once(dir, "predict", || {
        let pool = load_pool(&weights, &gen.archs)?;
        let ev = load_evaluator(&weights)?;
        for (fp, rel, _) in &held_frames {
            let f = load_frame_png(fp)?;
            let (product, _, chosen, masks) = ensemble_frame(&pool, &ev, &f)?;
            for (m, member) in masks.iter().zip(pool.members()) {
                save_mask_png(&to_frame_size(m, f.dims())?, eval_dir.join(member.arch.id()).join(rel))?;
            }
            save_mask_png(&product, eval_dir.join(MULTI_NET).join(rel))?;
            save_mask_png(&chosen, eval_dir.join(MULTISELECT).join(rel))?;
        }
        Ok(())
    })?;

    let report = stage("report", || {
        let gt = match data.roots.first() {
            Some(r) => GroundTruth::load(&dataset::gt_dir(r))?,
            None => None,
        };
        if gt.is_none() {
            log::warn!("no ground truth for the primary root; metrics left empty");
        }
        let mut models: Vec<String> = vec![TEACHER.into()];
        models.extend(gen.archs.iter().map(|a| a.id().to_string()));
        models.push(MULTI_NET.into());
        models.push(MULTISELECT.into());
        let mut out = Vec::new();
        for model in models {
            let metrics = match &gt {
                Some(gt) if !held_frames.is_empty() => {
                    let preds = held_frames
                        .iter()
                        .map(|(_, rel, id)| Ok((id.clone(), load_mask_png(eval_dir.join(&model).join(rel))?)))
                        .collect::<Result<Vec<(String, SoftMask)>>>()?;
                    let pp = if model == MULTI_NET {
                        PostprocConfig {
                            threshold: run.report.multi_net_threshold,
                            ..run.postproc.clone()
                        }
                    } else {
                        run.postproc.clone()
                    };
                    let recs = build_records(&preds, gt, &pp)?;
                    if recs.is_empty() {
                        None
                    } else {
                        Some(evaluate_records(&recs, pp.threshold)?)
                    }
                }
                _ => None,
            };
            out.push(ModelReport { model, metrics });
        }
        let selection = match &gt {
            Some(gt) => selection_purity(&candidates_csv, &weights, gt, &data, run.postproc.threshold)?,
            None => Vec::new(),
        };
        let train_pairs = read_manifest(&selected_csv)?.len();
        let rep = GenerationReport {
            generation: gen.iteration,
            models: out,
            selection,
            train_pairs,
        };
        write_text(&reports.join("metrics.csv"), &rep.metrics_csv())?;
        write_text(&reports.join("selection.csv"), &selection_csv(gen.iteration, &rep.selection))?;
        write_text(&reports.join("selection_curve.dat"), &selection_dat(&rep.selection))?;
        Ok(rep)
    })?;
    Ok(report)
}

/// Scores this generation's candidate masks from the primary root with both
/// scorers and measures their ground-truth IoU.
fn selection_purity(
    candidates_csv: &Path,
    weights: &Path,
    gt: &GroundTruth,
    data: &Dataset,
    threshold: f64,
) -> Result<Vec<SelectionRow>> {
    let ev = load_evaluator(weights)?;
    let primary_frames: BTreeMap<String, String> = data
        .shots
        .iter()
        .filter(|s| s.root == 0)
        .flat_map(|s| (0..s.frames.len()).map(move |t| (path_string(&s.frames[t]), s.frame_id(t))))
        .collect();
    let mut cands = Vec::new();
    for r in read_manifest(candidates_csv)? {
        let Some(id) = primary_frames.get(&r.frame_path) else { continue };
        let Some(e) = gt.get(id) else { continue };
        let Some(g) = gt.mask(e)? else { continue };
        let f = load_frame_png(&r.frame_path)?;
        let m = load_mask_png(&r.mask_path)?;
        cands.push(ScoredCandidate {
            key: id.clone(),
            producer: r.producer.clone(),
            mean_nonzero: mean_nonzero_score(&m),
            evaluator: ev.score_batch(&f, std::slice::from_ref(&m))?[0],
            iou: candidate_iou(&m, &g, threshold)?,
        });
    }
    Ok(report::selection_rows(&cands))
}

/// Result of a complete run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub dir: PathBuf,
    pub generations: Vec<GenerationReport>,
}

impl RunReport {
    /// Report rows of all generations.
    pub fn metrics_csv(&self) -> String {
        let mut s = format!("{}\n", report::METRIC_HEADER);
        for g in &self.generations {
            for m in &g.models {
                metric_lines(&mut s, g.generation, &m.model, m.metrics.as_ref());
            }
        }
        s
    }

    /// gnuplot data: generation, teacher, mean student, Multi-Net and
    /// MultiSelect CorLoc.
    pub fn generation_dat(&self, archs: &[StudentArch]) -> String {
        let mut s = String::from("# generation teacher mean_student multi_net multiselect train_pairs\n");
        let f = |v: Option<f64>| v.map_or_else(|| "NaN".into(), |x| format!("{x:.6}"));
        for g in &self.generations {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                g.generation,
                f(g.corloc(TEACHER)),
                f(g.mean_student_corloc(archs)),
                f(g.corloc(MULTI_NET)),
                f(g.corloc(MULTISELECT)),
                g.train_pairs
            );
        }
        s
    }
}

/// Runs every configured generation under `<runs_dir>/<hash>/`.
pub fn run(cfg: &RunConfig, runs_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let layout = RunLayout::new(runs_dir, cfg);
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    write_text(&layout.root.join("config.toml"), &cfg.to_toml())?;
    if cfg.corpus.roots.is_empty() {
        stage("synth", || ensure_synth(runs_dir, &cfg.corpus.synth))?;
    }
    let mut gens = Vec::new();
    for i in 1..=cfg.generations {
        if i > 1 && cfg.corpus.synth_extension {
            stage("synth", || ensure_synth(runs_dir, &cfg.extension_spec(i)))?;
        }
        let g = cfg.generation(i, runs_dir)?;
        gens.push(run_generation(cfg, &g, &layout.gen_dir(i))?);
    }
    let rep = RunReport {
        dir: layout.root.clone(),
        generations: gens,
    };
    write_text(&layout.root.join("report.csv"), &rep.metrics_csv())?;
    write_text(
        &layout.root.join("generation_gain.dat"),
        &rep.generation_dat(&cfg.students.archs),
    )?;
    Ok(rep)
}
