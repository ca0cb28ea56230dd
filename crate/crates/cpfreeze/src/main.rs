use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cpfreeze::config::ExperimentConfig;
use cpfreeze::container::write_perturbation;
use cpfreeze::defense::{run_defense, sweep_postprocess};
use cpfreeze::experiment::{craft, evaluate_frame, frame_inputs_with_noise, Detector, FrameRecord, RunReport};
use cpfreeze::report;
use cpfreeze_core::attack::{AttackConfig, AttackKind};
use cpfreeze_core::scenario::{generate_scenario, Scenario};

#[derive(Parser)]
#[command(name = "cpfreeze", version, about = "Latency attacks on cooperative-perception NMS, at desk scale")]
struct Cli {
    /// Where CSV tables and SVG charts go.
    #[arg(long, global = true, env = "CPFREEZE_REPORT_DIR", default_value = "reports")]
    report_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    None,
    Pgd,
    PriorArt,
    CpFreezer,
}

impl From<Baseline> for AttackKind {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::None => AttackKind::None,
            Baseline::Pgd => AttackKind::Pgd,
            Baseline::PriorArt => AttackKind::PriorArt,
            Baseline::CpFreezer => AttackKind::CpFreezer,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cp-freezer")]
    baseline: Baseline,
    /// Optimize against the stale features as they are, without warping.
    #[arg(long)]
    no_warp: bool,
    /// Skip wall-clock measurement; latencies are reported as zero.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and write it as JSON.
    Gen {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        agents: usize,
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the per-frame online attack and write a run report.
    Attack {
        #[command(flatten)]
        run: RunArgs,
        /// Also write each frame's perturbation as a binary container.
        #[arg(long)]
        save_perturbations: Option<PathBuf>,
    },
    /// Tabulate and chart one or more run reports.
    Bench {
        #[arg(long, required = true, num_args = 1..)]
        report: Vec<PathBuf>,
        /// Directory for the SVG charts; the report directory if omitted.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Sweep post-processing settings against a fixed per-frame attack.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the sampling-consensus defense on attacked frames.
    Defend {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the default config as TOML.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in failures {
                eprintln!("self-check failed: {f}");
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns the failed self-checks; an empty list means success.
fn run(cli: Cli) -> Result<Vec<String>> {
    match cli.command {
        Command::Gen { seed, agents, objects, frames, out } => {
            let s = generate_scenario(seed, agents, objects, frames)?;
            let text = serde_json::to_string_pretty(&s)? + "\n";
            let mut failures = Vec::new();
            if serde_json::from_str::<Scenario>(&text)? != s {
                failures.push("scenario does not survive a JSON round trip".into());
            }
            let path = out.unwrap_or_else(|| cli.report_dir.join(format!("scenario_seed{seed}.json")));
            write_text(&path, &text)?;
            println!("wrote {}", path.display());
            Ok(failures)
        }
        Command::Attack { run, save_perturbations } => attack(&cli.report_dir, &run, save_perturbations.as_deref()),
        Command::Bench { report, svg } => {
            let reports = report
                .iter()
                .map(|p| read_json::<RunReport>(p))
                .collect::<Result<Vec<_>>>()?;
            fs::create_dir_all(&cli.report_dir)?;
            let summary = cli.report_dir.join("summary.csv");
            report::write_summary_csv(BufWriter::new(File::create(&summary)?), &reports)?;
            let svg_dir = svg.unwrap_or_else(|| cli.report_dir.clone());
            write_text(&svg_dir.join("latency_boxplot.svg"), &report::latency_boxplot_svg(&reports))?;
            write_text(&svg_dir.join("asr_curve.svg"), &report::asr_curve_svg(&reports))?;
            for r in &reports {
                println!("{}", describe(r));
            }
            println!("wrote {} and charts in {}", summary.display(), svg_dir.display());
            Ok(Vec::new())
        }
        Command::Ablate { run } => {
            let (scenario, cfg, detector) = load(&run)?;
            let timing = (!run.no_timing).then_some(cfg.timing);
            let rep = sweep_postprocess(
                &scenario,
                &detector,
                run.baseline.into(),
                &cfg.attack,
                !run.no_warp,
                &cfg.ablation,
                timing,
            )?;
            let mut failures = Vec::new();
            for p in &rep.points {
                if p.mean_nms_input_attacked > p.post.max_keep as f64 {
                    failures.push(format!("NMS input exceeds max_keep at {:?}", p.post));
                }
                let roi = p.roi_latency.map(|r| format!("{:.2}", r.per_frame_mean)).unwrap_or_else(|| "n/a".into());
                println!(
                    "score {:.2} iou {:.2} max_keep {:>5}  RoI-L {roi}  NMS input {:.0}",
                    p.post.score_threshold, p.post.iou_threshold, p.post.max_keep, p.mean_nms_input_attacked
                );
            }
            let out = run.out.clone().unwrap_or_else(|| cli.report_dir.join("ablation.json"));
            write_json(&out, &rep)?;
            fs::create_dir_all(&cli.report_dir)?;
            report::write_ablation_csv(BufWriter::new(File::create(cli.report_dir.join("ablation.csv"))?), &rep)?;
            write_text(&cli.report_dir.join("ablation_heatmap.svg"), &report::ablation_heatmap_svg(&rep))?;
            println!("wrote {}", out.display());
            Ok(failures)
        }
        Command::Defend { run } => {
            let (scenario, cfg, detector) = load(&run)?;
            let timing = (!run.no_timing).then_some(cfg.timing);
            let rep = run_defense(
                &scenario,
                &detector,
                run.baseline.into(),
                &cfg.attack,
                !run.no_warp,
                &cfg.robosac,
                timing,
            )?;
            let mut failures = Vec::new();
            for f in &rep.frames {
                if f.pipeline_runs != cfg.robosac.iterations + 1 {
                    failures.push(format!("frame {}: {} pipeline runs", f.frame, f.pipeline_runs));
                }
            }
            if let Some(a) = rep.mean_amplification {
                println!("mean latency amplification {a:.2}x over {} frames", rep.frames.len());
            }
            println!(
                "mean AP: benign {:.3}  undefended {:.3}  defended {:.3}",
                rep.mean_ap_benign, rep.mean_ap_undefended, rep.mean_ap_defended
            );
            println!("consensus metric and schedule are a reconstruction, not a reference implementation");
            let out = run.out.clone().unwrap_or_else(|| cli.report_dir.join("defense.json"));
            write_json(&out, &rep)?;
            println!("wrote {}", out.display());
            Ok(failures)
        }
        Command::Config => {
            print!("{}", ExperimentConfig::default().to_toml_string());
            Ok(Vec::new())
        }
    }
}

fn attack(report_dir: &Path, run: &RunArgs, save: Option<&Path>) -> Result<Vec<String>> {
    let (scenario, cfg, detector) = load(run)?;
    let kind: AttackKind = run.baseline.into();
    let timing = (!run.no_timing).then_some(cfg.timing);
    let mut frames = Vec::new();
    let mut failures = Vec::new();
    if let Some(dir) = save {
        fs::create_dir_all(dir)?;
    }
    for frame in 1..scenario.n_frames {
        let inputs = frame_inputs_with_noise(&scenario, frame, !run.no_warp, &cfg.warp.pose_noise)?;
        let p = craft(kind, &inputs, &detector, &cfg.attack)?;
        if let (Some(dir), Some(p)) = (save, &p) {
            let mut w = BufWriter::new(File::create(dir.join(format!("delta_frame{frame:03}.cpfz")))?);
            write_perturbation(&mut w, &p.delta)?;
        }
        let rec = evaluate_frame(&inputs, &detector, p.as_ref(), timing)?;
        failures.extend(frame_checks(&rec, &cfg.attack, &detector, kind));
        frames.push(rec);
    }
    let rep = RunReport::from_frames(scenario.seed, kind, !run.no_warp, cfg.metrics.asr_threshold_s, frames);
    println!("{}", describe(&rep));
    let stem = format!("run_{}{}", kind.name(), if run.no_warp { "_nowarp" } else { "" });
    let out = run.out.clone().unwrap_or_else(|| report_dir.join(format!("{stem}.json")));
    write_json(&out, &rep)?;
    fs::create_dir_all(report_dir)?;
    report::write_run_csv(BufWriter::new(File::create(report_dir.join(format!("{stem}.csv")))?), &rep)?;
    println!("wrote {}", out.display());
    Ok(failures)
}

fn frame_checks(rec: &FrameRecord, cfg: &AttackConfig, det: &Detector, kind: AttackKind) -> Vec<String> {
    let mut out = Vec::new();
    let f = rec.frame;
    if rec.delta_linf > cfg.linf_budget + 1e-12 {
        out.push(format!("frame {f}: perturbation exceeds the budget ({})", rec.delta_linf));
    }
    if kind != AttackKind::None && rec.trace.len() != cfg.steps {
        out.push(format!("frame {f}: {} optimizer steps recorded, expected {}", rec.trace.len(), cfg.steps));
    }
    for (name, c) in [("benign", &rec.benign), ("attacked", &rec.attacked)] {
        if c.nms_input > c.pre_nms || c.nms_input > det.post.max_keep || c.post_nms > c.nms_input {
            out.push(format!("frame {f}: inconsistent {name} proposal counts"));
        }
        if c.iou_evaluations > (c.nms_input * c.nms_input.saturating_sub(1) / 2) as u64 {
            out.push(format!("frame {f}: {name} NMS exceeded the pairwise bound"));
        }
    }
    out
}

fn describe(r: &RunReport) -> String {
    let roi = |s: Option<cpfreeze_core::metrics::RoiSummary>| s.map(|s| format!("{:.2}", s.per_frame_mean)).unwrap_or_else(|| "n/a".into());
    format!(
        "{}{}: RoI-L {} RoI-P {} median pre-NMS {:.0} (benign {:.0}) ASR {:.2} %RSD {:.1}/{:.1} AP {:.3}/{:.3}",
        r.attack.name(),
        if r.warp { "" } else { " (no warp)" },
        roi(r.roi_latency),
        roi(r.roi_proposals),
        r.median_pre_nms_attacked,
        r.median_pre_nms_benign,
        r.asr,
        r.rsd_benign_percent,
        r.rsd_attacked_percent,
        r.mean_ap_benign,
        r.mean_ap_attacked
    )
}

fn load(run: &RunArgs) -> Result<(Scenario, ExperimentConfig, Detector)> {
    let scenario: Scenario = read_json(&run.scenario)?;
    if scenario.agents.len() < 2 {
        bail!("scenario needs at least two agents");
    }
    let cfg = match &run.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    let detector = Detector::for_scenario(&scenario, cfg.postprocess)?;
    Ok((scenario, cfg, detector))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
