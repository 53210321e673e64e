//! The `dsn` command line: train and grow symbol networks, recognize and
//! generate images, run the experiment protocols, and export artifacts.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsn_core::infer::{self, ClassPosteriors, GenerateConfig};
use dsn_core::learn::{self, LayerThresholds, TrainingConfig};
use dsn_core::synth::{self, CorpusSpec, ShapeKind};
use dsn_core::{Image, SymbolId};

use dsn::{config, corpus, experiments, export, persist, pgm};

#[derive(Parser)]
#[command(name = "dsn", version, about = "deep symbolic network toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON training config; defaults apply to absent fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a network from a corpus directory of PGM samples.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Where to write the trained network (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Keep the rotation search off (axis-aligned shape corpora).
        #[arg(long)]
        no_rotations: bool,
    },
    /// Grow an existing network with additional samples.
    TrainIncremental {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recognize the symbols in one PGM image.
    Recognize {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Also print every scan event.
        #[arg(long)]
        trace: bool,
    },
    /// Posterior over candidate symbols given evidence symbols.
    Decide {
        #[arg(long)]
        network: PathBuf,
        /// Comma-separated symbol ids observed as evidence.
        #[arg(long, value_delimiter = ',', required = true)]
        evidence: Vec<u32>,
        /// Comma-separated candidate symbol ids.
        #[arg(long, value_delimiter = ',', required = true)]
        candidates: Vec<u32>,
    },
    /// Render a symbol to a PGM image.
    Generate {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        symbol: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48)]
        size: usize,
        /// Extra std on sampled state parameters.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
    },
    /// Threshold sweep with plateau report.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated layer-0 lambda values.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        /// Comma-separated layer-0 mu values (crossed with lambdas).
        #[arg(long, value_delimiter = ',', default_value = "3")]
        mus: Vec<usize>,
        /// Write the full result JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Symbol-recovery rate versus synthetic training-set size.
    SampleStudy {
        /// Comma-separated ascending corpus sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit class posteriors on a labeled corpus and evaluate on another.
    Eval {
        #[arg(long)]
        network: PathBuf,
        /// Training corpus directory (labels from sidecars).
        #[arg(long)]
        train: PathBuf,
        /// Test corpus directory.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the symbol graph as Graphviz DOT.
    ExportDot {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic shape corpus as PGM files with truth sidecars.
    MakeCorpus(MakeCorpusArgs),
}

#[derive(Args)]
struct MakeCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    per_shape: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are successful exits, not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_training_config(cli: &Cli) -> anyhow::Result<TrainingConfig> {
    let mut cfg = match &cli.config {
        Some(path) => config::load_config(path)?,
        None => TrainingConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_images(dir: &Path) -> anyhow::Result<Vec<(Image, synth::SampleTruth)>> {
    Ok(corpus::load_corpus(dir)?)
}

fn labels_of(samples: &[(Image, synth::SampleTruth)]) -> Vec<u32> {
    samples
        .iter()
        .map(|(_, t)| ShapeKind::ALL.iter().position(|k| *k == t.kind).unwrap_or(0) as u32)
        .collect()
}

fn print_report(report: &learn::LearnReport) {
    for l in &report.layers {
        println!(
            "layer {}: lambda {:.2} mu {} pieces {} clustered {} symbols {}",
            l.layer, l.lambda, l.mu, l.pieces_in, l.pieces_clustered, l.symbols_created
        );
    }
    if let Some(stop) = report.stop {
        println!("stopped: {stop:?}");
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_training_config(&cli)?;
    match &cli.command {
        Command::Train {
            corpus: dir,
            out,
            no_rotations,
        } => {
            let samples = load_images(dir)?;
            let images: Vec<Image> = samples.into_iter().map(|(i, _)| i).collect();
            let mut cfg = cfg;
            if *no_rotations {
                cfg.transform_grid = dsn_core::operator::TransformGrid::identity();
            }
            let (net, report) = learn::learn_unsupervised(&images, &cfg)?;
            print_report(&report);
            println!("symbols: {}", net.len());
            persist::save_network(&net, out)?;
            println!("wrote {}", out.display());
        }
        Command::TrainIncremental {
            network,
            corpus: dir,
            out,
        } => {
            let net = persist::load_network(network)?;
            let cfg = net.meta.config.clone().unwrap_or(cfg);
            let samples = load_images(dir)?;
            let images: Vec<Image> = samples.into_iter().map(|(i, _)| i).collect();
            let (net, report) = learn::incremental_learn(&net, &images, &cfg)?;
            print_report(&report);
            persist::save_network(&net, out)?;
            println!("wrote {}", out.display());
        }
        Command::Recognize {
            network,
            image,
            trace,
        } => {
            let net = persist::load_network(network)?;
            let cfg = net.meta.config.clone().unwrap_or(cfg);
            let img = pgm::read_pgm(image)?;
            let res = infer::recognize(&net, &img, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&res.instances)?);
            if !res.unexplained_boxes.is_empty() {
                println!("unexplained: {:?}", res.unexplained_boxes);
            }
            if *trace {
                for e in &res.scan_log {
                    println!(
                        "scan {:?} tried {} accepted {:?} best {:.3}{}",
                        e.bbox,
                        e.candidates_tried,
                        e.accepted,
                        e.best_score,
                        if e.rescan { " (rescan)" } else { "" }
                    );
                }
            }
        }
        Command::Decide {
            network,
            evidence,
            candidates,
        } => {
            let net = persist::load_network(network)?;
            let cfg = net.meta.config.clone().unwrap_or(cfg);
            let evidence: Vec<SymbolId> = evidence.iter().copied().map(SymbolId).collect();
            let candidates: Vec<SymbolId> = candidates.iter().copied().map(SymbolId).collect();
            let d = infer::decide_bayes(&net, &evidence, &candidates, cfg.max_path_len)?;
            for (s, p) in &d.posterior {
                println!("{s}: {p:.6}");
            }
            println!("best: {}", d.best);
        }
        Command::Generate {
            network,
            symbol,
            out,
            size,
            jitter,
        } => {
            let net = persist::load_network(network)?;
            let gen = GenerateConfig {
                size: *size,
                jitter: *jitter,
                ..GenerateConfig::default()
            };
            let img = infer::generate(&net, SymbolId(*symbol), cfg.seed, &gen)?;
            pgm::write_pgm(&img, out)?;
            println!("wrote {}", out.display());
        }
        Command::Sweep {
            corpus: dir,
            lambdas,
            mus,
            out,
        } => {
            let samples = load_images(dir)?;
            let images: Vec<Image> = samples.into_iter().map(|(i, _)| i).collect();
            let grid: Vec<LayerThresholds> = mus
                .iter()
                .flat_map(|&mu| lambdas.iter().map(move |&lambda| LayerThresholds { lambda, mu }))
                .collect();
            let result = experiments::run_threshold_sweep(&images, &grid, &cfg);
            for p in &result.points {
                match &p.error {
                    None => println!(
                        "lambda {:.2} mu {}: {:?}",
                        p.lambda, p.mu, p.symbols_per_layer
                    ),
                    Some(e) => println!("lambda {:.2} mu {}: failed: {e}", p.lambda, p.mu),
                }
            }
            for pl in &result.plateaus {
                println!(
                    "plateau mu {}: lambda [{:.2}, {:.2}] at {} symbols",
                    pl.mu, pl.lambda_lo, pl.lambda_hi, pl.symbols
                );
            }
            if let Some(out) = out {
                std::fs::write(out, serde_json::to_string_pretty(&result)?)?;
                println!("wrote {}", out.display());
            }
        }
        Command::SampleStudy {
            sizes,
            repeats,
            noise,
            jitter,
            out,
        } => {
            let base = CorpusSpec {
                noise: *noise,
                jitter: *jitter,
                seed: cfg.seed,
                ..CorpusSpec::default()
            };
            let points = experiments::run_sample_size_study(&base, sizes, &cfg, *repeats);
            for p in &points {
                println!(
                    "size {}: recovery {:.2} +- {:.2}",
                    p.size, p.mean, p.std
                );
            }
            if let Some(out) = out {
                std::fs::write(out, serde_json::to_string_pretty(&points)?)?;
                println!("wrote {}", out.display());
            }
        }
        Command::Eval {
            network,
            train,
            test,
            out,
        } => {
            let net = persist::load_network(network)?;
            let cfg = net.meta.config.clone().unwrap_or(cfg);
            let train_set = load_images(train)?;
            let test_set = load_images(test)?;
            let train_images: Vec<Image> = train_set.iter().map(|(i, _)| i.clone()).collect();
            let train_labels = labels_of(&train_set);
            let posts = ClassPosteriors::fit(&net, &train_images, &train_labels, &cfg);
            let test_images: Vec<Image> = test_set.iter().map(|(i, _)| i.clone()).collect();
            let test_labels = labels_of(&test_set);
            let report =
                experiments::evaluate_classifier(&net, &posts, &test_images, &test_labels, &cfg)?;
            println!("accuracy: {:.4} over {}", report.accuracy, report.total);
            for (&(t, p), &n) in &report.confusion {
                println!("true {t} -> predicted {p}: {n}");
            }
            for (&t, &n) in &report.unclassified {
                println!("true {t} -> unclassified: {n}");
            }
            if let Some(out) = out {
                std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
                println!("wrote {}", out.display());
            }
        }
        Command::ExportDot { network, out } => {
            let net = persist::load_network(network)?;
            std::fs::write(out, export::to_dot(&net))?;
            println!("wrote {}", out.display());
        }
        Command::MakeCorpus(args) => {
            let spec = CorpusSpec {
                per_shape: args.per_shape,
                size: args.size,
                noise: args.noise,
                jitter: args.jitter,
                seed: cfg.seed,
                ..CorpusSpec::default()
            };
            let samples = synth::make_corpus(&spec);
            corpus::save_corpus(&args.out, &samples)?;
            println!("wrote {} samples to {}", samples.len(), args.out.display());
        }
    }
    Ok(())
}
