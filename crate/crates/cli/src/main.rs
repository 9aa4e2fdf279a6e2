use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use fgd_core::ensemble::StudentPool;
use fgd_core::masksel::{Evaluator, SelectionPolicy};
use fgd_core::metrics::MetricReport;
use fgd_core::pipeline::dataset::Dataset;
use fgd_core::pipeline::manifest::{read_manifest, write_manifest};
use fgd_core::pipeline::report::{evaluate_dirs, metric_lines, METRIC_HEADER};
use fgd_core::pipeline::stages;
use fgd_core::pipeline::synth::generate_synthetic;
use fgd_core::pipeline::{run, RunConfig};
use fgd_core::student::{StudentArch, StudentKind, StudentNet};
use fgd_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "fgd", version, about = "Unsupervised foreground discovery and teacher-student distillation")]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location (file or directory, depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// VideoPCA masks for a corpus root or a single shot directory.
    Discover { input: PathBuf },
    /// Selects training pairs from a scored manifest.
    Select {
        manifest: PathBuf,
        /// Rescore with these evaluator weights and apply the later-generation policy.
        #[arg(long)]
        evaluator: Option<PathBuf>,
    },
    /// Trains one student on a manifest.
    Train {
        manifest: PathBuf,
        #[arg(long)]
        arch: StudentKind,
    },
    /// Student masks for every frame below a directory.
    Predict {
        weights: PathBuf,
        frames: PathBuf,
        #[arg(long)]
        arch: StudentKind,
    },
    /// Multi-Net and MultiSelect masks plus a next-generation manifest.
    Ensemble {
        /// Directory holding `<arch>.fgdn` files and `evaluator.fgdn`.
        weights: PathBuf,
        frames: PathBuf,
    },
    /// Primary bounding box of every mask below a directory.
    Boxes { masks: PathBuf },
    /// Metrics of predicted masks against ground truth.
    Evaluate { predictions: PathBuf, ground_truth: PathBuf },
    /// Runs all configured generations.
    Generation,
    /// Writes a synthetic corpus.
    Synth,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            e => e,
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn arch_for(cfg: &RunConfig, kind: StudentKind) -> StudentArch {
    cfg.students
        .archs
        .iter()
        .find(|a| a.kind == kind)
        .cloned()
        .unwrap_or_else(|| StudentArch::default_for(kind))
}

fn out_or(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn load_pool(dir: &Path, cfg: &RunConfig) -> anyhow::Result<StudentPool> {
    let mut members = Vec::new();
    for a in &cfg.students.archs {
        let p = dir.join(format!("{}.fgdn", a.id()));
        if p.is_file() {
            members.push(StudentNet::load(&p, a)?);
        }
    }
    Ok(StudentPool::new(members)?)
}

fn report_text(report: &MetricReport) -> String {
    let mut s = format!("{METRIC_HEADER}\n");
    metric_lines(&mut s, 0, "predictions", Some(report));
    s
}

fn execute(cli: &Cli, cfg: RunConfig) -> anyhow::Result<()> {
    match &cli.cmd {
        Cmd::Synth => {
            let out = out_or(cli, "corpus");
            let spec = fgd_core::pipeline::synth::SyntheticSpec {
                seed: cli.seed.unwrap_or(cfg.corpus.synth.seed),
                ..cfg.corpus.synth.clone()
            };
            generate_synthetic(&spec, &out)?;
            println!("wrote {} shots to {}", spec.shots, out.display());
        }
        Cmd::Discover { input } => {
            let out = out_or(cli, "masks");
            let rows = if input.join("frames").is_dir() {
                let data = Dataset::scan(std::slice::from_ref(input))?;
                let mut rows = Vec::new();
                for s in &data.shots {
                    rows.extend(stages::discover_shot(s, &cfg.videopca, &out)?);
                }
                rows
            } else {
                stages::discover_dir(input, &cfg.videopca, &out)?
            };
            write_manifest(out.join("scores.csv"), &rows)?;
            println!("{} masks, scores in {}", rows.len(), out.join("scores.csv").display());
        }
        Cmd::Select { manifest, evaluator } => {
            let mut rows = read_manifest(manifest)?;
            let policy: SelectionPolicy = match evaluator {
                Some(w) => {
                    let ev = Evaluator::load(w)?;
                    stages::rescore_rows(&mut rows, &ev)?;
                    cfg.selection.later
                }
                None => cfg.selection.first,
            };
            let sel = stages::select_rows(rows, &policy)?;
            let out = out_or(cli, "selected.csv");
            write_manifest(&out, &sel)?;
            println!("kept {} pairs in {}", sel.len(), out.display());
        }
        Cmd::Train { manifest, arch } => {
            let arch = arch_for(&cfg, *arch);
            let rows = read_manifest(manifest)?;
            if rows.is_empty() {
                bail!(Error::InvalidArgument("manifest has no rows".into()));
            }
            let train = fgd_core::student::TrainConfig {
                seed: cli.seed.unwrap_or(cfg.students.train.seed),
                ..cfg.students.train.clone()
            };
            let (net, trace) = stages::train_from_manifest(&rows, &arch, &train)?;
            let out = out_or(cli, "weights");
            net.save(out.join(format!("{}.fgdn", arch.id())))?;
            stages::write_trace(&out.join(format!("{}.loss.csv", arch.id())), &trace)?;
            println!(
                "{}: final loss {:.6}, weights in {}",
                arch.id(),
                trace.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Cmd::Predict { weights, frames, arch } => {
            let arch = arch_for(&cfg, *arch);
            let net = StudentNet::load(weights, &arch)?;
            let out = out_or(cli, "predictions");
            let n = stages::predict_dir(&net, frames, &out)?;
            println!("{n} masks in {}", out.display());
        }
        Cmd::Ensemble { weights, frames } => {
            let pool = load_pool(weights, &cfg)?;
            let ev = Evaluator::load(weights.join("evaluator.fgdn"))?;
            let tau = match cfg.selection.later {
                SelectionPolicy::Threshold { tau } => tau,
                SelectionPolicy::Percentile { .. } => 0.0,
            };
            let out = out_or(cli, "ensemble");
            let rows = stages::ensemble_dir(&pool, &ev, frames, &out, tau)?;
            write_manifest(out.join("manifest.csv"), &rows)?;
            println!("{} training pairs, masks in {}", rows.len(), out.display());
        }
        Cmd::Boxes { masks } => {
            let rows = stages::boxes_dir(masks, &cfg.postproc)?;
            let out = out_or(cli, "boxes.csv");
            stages::write_boxes(&out, &rows)?;
            println!("{} boxes in {}", rows.len(), out.display());
        }
        Cmd::Evaluate { predictions, ground_truth } => {
            let report = evaluate_dirs(predictions, ground_truth, &cfg.postproc)?;
            let text = report_text(&report);
            match &cli.out {
                Some(dir) => {
                    stages::write_text(&dir.join("metrics.csv"), &text)?;
                    let mut dat = String::from("# class corloc f_beta jaccard mae\n");
                    for r in report.per_class.iter().chain([&report.average]) {
                        let f = |v: Option<f64>| v.map_or_else(|| "NaN".into(), |x| format!("{x:.6}"));
                        dat.push_str(&format!(
                            "{} {:.6} {} {} {}\n",
                            r.class,
                            r.corloc,
                            f(r.f_beta),
                            f(r.jaccard),
                            f(r.mae)
                        ));
                    }
                    stages::write_text(&dir.join("metrics.dat"), &dat)?;
                }
                None => print!("{text}"),
            }
        }
        Cmd::Generation => {
            let runs = out_or(cli, "runs");
            let rep = run(&cfg, &runs)?;
            print!("{}", rep.metrics_csv());
            println!("run directory: {}", rep.dir.display());
        }
    }
    Ok(())
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(c.downcast_ref::<Error>(), Some(Error::Config(_)))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match load_config(&cli).context("loading configuration") {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match execute(&cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_STAGE)
            }
        }
    }
}
