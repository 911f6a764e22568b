use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use obbdet::data::{read_detections, write_detections, ApMetric, Dataset, DetectionRecord, MapReport};
use obbdet::heads::Detection;
use obbdet::selfcheck::{bench_rotated_iou, run_all};
use obbdet::train::{evaluate_detections, load_detector, predict, RunConfig, Trainer, CHECKPOINT_FILE};

mod import;
mod render;

#[derive(Parser)]
#[command(name = "obbdet", version, about = "Oriented object detection with a hybrid-anchor proposal network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Val,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector; writes losses.csv, run.log and checkpoint.bin to the output directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override any configuration key, e.g. --set model.rpn.nms_iou=0.6 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Rotated mAP of a checkpoint, or of saved detections, on a split under
    /// both VOC metrics.
    Eval {
        #[arg(long, required_unless_present = "from")]
        checkpoint: Option<PathBuf>,
        /// Score these detections (JSON lines) instead of running a model.
        #[arg(long, conflicts_with = "checkpoint")]
        from: Option<PathBuf>,
        /// Split definitions to use instead of the ones stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitName,
        /// Evaluate a dataset directory instead of a configured split.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// JSON report path; defaults to eval.json next to the checkpoint
        /// or the detections file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write detections as JSON lines.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Rotated IoU throughput on random box pairs.
    BenchIou {
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the oracle suites; exits nonzero on any failure.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the results as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw detections over an image and write a PPM.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image file (PNG or PNM).
        #[arg(long, conflicts_with = "dataset")]
        image: Option<PathBuf>,
        /// Dataset directory; draws ground truth as well.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0.3)]
        score: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a configured synthetic split to a dataset directory.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitName,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Tile DOTA images and labels into a dataset directory.
    ImportDota {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Comma-separated class names; defaults to the sorted set found in the labels.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long, default_value_t = 1024)]
        tile: usize,
        #[arg(long, default_value_t = 824)]
        stride: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration.
    Config,
}

fn read_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))
        }
        None => Ok(RunConfig::default()),
    }
}

fn split_of(cfg: &RunConfig, split: SplitName) -> &obbdet::train::SplitConfig {
    match split {
        SplitName::Train => &cfg.train,
        SplitName::Val => &cfg.val,
    }
}

fn read_saved(path: &Path, data: &Dataset) -> Result<Vec<Vec<Detection>>> {
    let records = read_detections(File::open(path).with_context(|| format!("reading {}", path.display()))?)?;
    let index: HashMap<&str, usize> = data.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut dets = vec![Vec::new(); data.samples.len()];
    for r in records {
        let Some(&i) = index.get(r.image_id.as_str()) else {
            bail!("{}: image {:?} is not in the split", path.display(), r.image_id);
        };
        dets[i].push(r.to_detection(&data.classes)?);
    }
    Ok(dets)
}

fn print_table(classes: &[String], r07: &MapReport, r12: &MapReport) {
    let width = classes.iter().map(String::len).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>6}  {:>6}  {:>8}  {:>8}", "class", "gts", "dets", "AP07", "AP12");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    for (a, b) in r07.classes.iter().zip(&r12.classes) {
        println!(
            "{:<width$}  {:>6}  {:>6}  {:>8}  {:>8}",
            classes[a.class_id],
            a.num_gts,
            a.num_dets,
            fmt(a.ap),
            fmt(b.ap)
        );
    }
    println!("{:<width$}  {:>6}  {:>6}  {:>8.4}  {:>8.4}", "mAP", "", "", r07.map, r12.map);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            epochs,
            checkpoint,
            out,
            overrides,
        } => {
            let mut cfg = read_config(config.as_deref())?.with_overrides(&overrides)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cfg.validate()?;
            let data = cfg.train.load().context("loading the training split")?;
            let out_dir = cfg.out_dir.clone();
            let mut trainer = match &checkpoint {
                Some(p) => Trainer::resume(cfg, p).with_context(|| format!("resuming from {}", p.display()))?,
                None => Trainer::new(cfg)?,
            };
            let t = Instant::now();
            let summary = trainer.run(&data, &out_dir)?;
            for (i, l) in summary.epoch_rpn.iter().enumerate() {
                println!("epoch {:>3}  mean loss_rpn {l:.4}", summary.epochs_done - summary.epoch_rpn.len() + i + 1);
            }
            println!(
                "trained {} steps in {:.1}s; checkpoint {}",
                summary.steps.len(),
                t.elapsed().as_secs_f64(),
                out_dir.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Eval {
            checkpoint,
            from,
            config,
            split,
            dataset,
            iou,
            out,
            detections,
        } => {
            let (model, stored) = match &checkpoint {
                Some(p) => {
                    let (m, c) = load_detector(p).with_context(|| format!("loading {}", p.display()))?;
                    (Some(m), c)
                }
                None => (None, RunConfig::default()),
            };
            let cfg = match &config {
                Some(p) => read_config(Some(p))?,
                None => stored,
            };
            let data = match &dataset {
                Some(d) => Dataset::load(d).with_context(|| format!("loading {}", d.display()))?,
                None => split_of(&cfg, split).load()?,
            };
            if data.samples.is_empty() {
                bail!("the evaluation split is empty");
            }
            let dets = match (&model, &from) {
                (Some(m), _) => predict(m, &data)?,
                (None, Some(p)) => read_saved(p, &data)?,
                (None, None) => unreachable!("clap requires --checkpoint or --from"),
            };
            let r07 = evaluate_detections(&dets, &data, iou, ApMetric::Voc07)?;
            let r12 = evaluate_detections(&dets, &data, iou, ApMetric::Voc12)?;
            print_table(&data.classes, &r07, &r12);
            let source = checkpoint.or(from).expect("one source is present");
            let path = out.unwrap_or_else(|| source.with_file_name("eval.json"));
            let report = serde_json::json!({
                "source": source,
                "images": data.samples.len(),
                "classes": data.classes,
                "voc07": r07,
                "voc12": r12,
            });
            fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            println!("report {}", path.display());
            if let Some(p) = detections {
                let records: Vec<DetectionRecord> = data
                    .samples
                    .iter()
                    .zip(&dets)
                    .flat_map(|(s, ds)| ds.iter().map(|d| DetectionRecord::new(&s.id, &data.classes, d)))
                    .collect();
                write_detections(BufWriter::new(File::create(&p)?), &records)?;
                println!("detections {}", p.display());
            }
        }
        Command::BenchIou { n, seed } => {
            let b = bench_rotated_iou(n, seed);
            println!(
                "{} pairs in {:.3}s: {:.0} pairs/s (mean IoU {:.4})",
                b.pairs,
                b.seconds,
                b.pairs as f64 / b.seconds,
                b.mean_iou
            );
        }
        Command::Selfcheck { seed, out } => {
            let suites = run_all(seed);
            let mut failed = 0;
            for (name, checks) in &suites {
                println!("[{name}]");
                for c in checks {
                    println!("  {c}");
                    failed += usize::from(!c.passed);
                }
            }
            if let Some(p) = out {
                fs::write(p, serde_json::to_string_pretty(&suites)?)?;
            }
            if failed > 0 {
                bail!("{failed} check(s) failed");
            }
            println!("all checks passed");
        }
        Command::Render {
            checkpoint,
            image,
            dataset,
            index,
            score,
            out,
        } => render::render(&checkpoint, image.as_deref(), dataset.as_deref(), index, score, &out)?,
        Command::GenData {
            config,
            split,
            seed,
            out,
            overrides,
        } => {
            let cfg = read_config(config.as_deref())?.with_overrides(&overrides)?;
            let mut split = split_of(&cfg, split).clone();
            if let Some(s) = seed {
                split.scene.seed = s;
            }
            let data = split.load()?;
            data.save(&out)?;
            println!("{} images written to {}", data.samples.len(), out.display());
        }
        Command::ImportDota {
            images,
            labels,
            classes,
            tile,
            stride,
            out,
        } => {
            let data = import::import_dota(&images, &labels, classes, tile, stride)?;
            data.save(&out)?;
            println!(
                "{} tiles, {} objects, classes {:?} written to {}",
                data.samples.len(),
                data.samples.iter().map(|s| s.objects.len()).sum::<usize>(),
                data.classes,
                out.display()
            );
        }
        Command::Config => print!("{}", RunConfig::default().to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
