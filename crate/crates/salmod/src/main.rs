//! Command-line entry point: dataset generation, saliency-map generation,
//! the training protocol, and report aggregation, all driven by a flat
//! `key = value` config file. Every subcommand is deterministic given its
//! config; `SALMOD_THREADS` caps the number of parallel experiment cells.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

use salmod::analysis::{ablation_table, line_plot_svg, pearson, scatter_fit_svg};
use salmod::config::{load_config, ExperimentConfig, InitProtocol};
use salmod::data::{self, Dataset};
use salmod::error::{Error, Result};
use salmod::model::{NetworkConfig, Variant};
use salmod::saliency::{attach_maps, MapSource};
use salmod::train::{
    gradient_series_csv, scarce_protocol, CellResult, InitSource, PretrainMode, Pretrainer,
    ProtocolOptions, RunReport,
};

#[derive(Parser)]
#[command(
    name = "salmod",
    version,
    about = "Saliency-modulated classification laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the dataset (or ingest data.folder) into data.dir
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute saliency maps for every image and update the dataset index
    GenSaliency {
        #[arg(long)]
        config: PathBuf,
        /// Override saliency.method (white|center|itti_koch|bms|oracle|import)
        #[arg(long)]
        method: Option<String>,
        /// Override saliency.quality (oracle method only)
        #[arg(long)]
        quality: Option<f64>,
    },
    /// Train the configured variant across the k grid and seeds
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Also instrument gradient energy (adds a baseline twin run and the
        /// paired per-epoch series CSV)
        #[arg(long)]
        grad_energy: bool,
    },
    /// Aggregate result CSVs into a table and SVG plots
    Analyze {
        /// Run reports (k,seed,accuracy) and/or sweep reports (quality,nss,accuracy)
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Render the NSS-vs-accuracy scatter from a sweep report
        #[arg(long)]
        correlation: bool,
        /// Where tables and plots go
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
    },
}

fn main() {
    if let Ok(v) = std::env::var("SALMOD_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: SALMOD_THREADS must be a positive integer, got '{v}'");
                std::process::exit(1);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config } => cmd_gen_data(&config),
        Command::GenSaliency {
            config,
            method,
            quality,
        } => cmd_gen_saliency(&config, method.as_deref(), quality),
        Command::Run {
            config,
            grad_energy,
        } => cmd_run(&config, grad_energy),
        Command::Analyze {
            reports,
            correlation,
            out,
        } => cmd_analyze(&reports, correlation, &out),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn cmd_gen_data(config_path: &Path) -> Result<()> {
    let cfg = load_config(config_path)?;
    let dataset = match &cfg.data_folder {
        Some(folder) => data::ingest_folder(
            folder,
            (cfg.data_width, cfg.data_height),
            cfg.data_seed,
        )?,
        None => data::generate(&cfg.dataset_spec())?,
    };
    data::write_dataset(&cfg.data_dir, &dataset)?;
    println!(
        "wrote {} samples ({} classes) to {}",
        dataset.samples.len(),
        dataset.spec.num_classes,
        cfg.data_dir.display()
    );
    Ok(())
}

fn cmd_gen_saliency(
    config_path: &Path,
    method_override: Option<&str>,
    quality_override: Option<f64>,
) -> Result<()> {
    let cfg = load_config(config_path)?;
    let mut dataset = data::load_dataset(&cfg.data_dir)?;
    // a --method flag replaces the config's source outright; without it the
    // config's method applies and --quality may still override
    let (method, quality) = match method_override {
        Some(m) => (m, quality_override),
        None => (
            cfg.saliency_method.as_str(),
            quality_override.or(cfg.saliency_quality),
        ),
    };
    if method.is_empty() {
        return Err(Error::config(
            "no saliency method: set saliency.method or pass --method".to_string(),
        ));
    }
    let import_dir = if method == "import" {
        cfg.saliency_import_dir.as_deref()
    } else {
        None
    };
    let source = MapSource::parse(method, quality, import_dir)?;
    let warnings = attach_maps(&mut dataset, &source)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    data::update_saliency_files(&cfg.data_dir, &dataset)?;
    println!(
        "wrote {} {} maps under {}",
        dataset.samples.len(),
        source.name(),
        cfg.data_dir.display()
    );
    Ok(())
}

/// The dataset that a run sees: loaded from disk, spec-checked against the
/// config for synthetic data (an ingested folder defines its own class
/// structure, so only the frame size must agree).
fn load_run_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dataset = data::load_dataset(&cfg.data_dir).map_err(|e| {
        Error::data(format!(
            "cannot load dataset from {} (run gen-data first): {e}",
            cfg.data_dir.display()
        ))
    })?;
    if cfg.data_folder.is_none() && dataset.spec != cfg.dataset_spec() {
        return Err(Error::config(format!(
            "dataset in {} was generated from a different data.* section; rerun gen-data",
            cfg.data_dir.display()
        )));
    }
    if dataset.spec.image_size != (cfg.data_width, cfg.data_height) {
        return Err(Error::config(
            "dataset frame size differs from data.width/data.height".to_string(),
        ));
    }
    Ok(dataset)
}

fn cmd_run(config_path: &Path, grad_energy: bool) -> Result<()> {
    let cfg = load_config(config_path)?;
    let dataset = load_run_dataset(&cfg)?;
    let mut net = cfg.network_config();
    net.num_classes = dataset.spec.num_classes;
    if net.variant.needs_saliency() {
        if let Some(s) = dataset.samples.iter().find(|s| s.saliency.is_none()) {
            return Err(Error::data(format!(
                "variant {} needs saliency maps but sample {} has none; run gen-saliency",
                net.variant.name(),
                s.id
            )));
        }
    }
    if grad_energy && !net.variant.needs_saliency() {
        return Err(Error::config(
            "--grad-energy pairs the configured fusion variant against a baseline twin; \
             the configured variant is already the baseline"
                .to_string(),
        ));
    }
    let plan = data::split(&dataset)?;
    let (k_list, full_pool) = cfg.resolve_k_list(plan.min_pool())?;
    let hyper = cfg.hyperparams();

    let pretrainer = match cfg.net_init {
        InitProtocol::Xavier => None,
        _ => {
            let base = data::generate(&cfg.base_spec())?;
            Some(Pretrainer::new(
                base,
                cfg.pretrain_hyperparams(),
                data::mix(cfg.data_seed, 0x12E7),
                cfg.map_source()?,
            ))
        }
    };
    let init_for = |variant_cfg: &NetworkConfig| -> InitSource<'_> {
        match (cfg.net_init, &pretrainer) {
            (InitProtocol::Xavier, _) => InitSource::Xavier,
            (InitProtocol::Scratch, Some(p)) => InitSource::Pretrain(p, PretrainMode::Scratch),
            (InitProtocol::Pretrained, Some(p)) => {
                // a baseline twin has no branch to pretrain; it still shares
                // the backbone stage
                let _ = variant_cfg;
                InitSource::Pretrain(p, PretrainMode::Pretrained)
            }
            _ => unreachable!("pretrainer exists for non-Xavier init"),
        }
    };

    std::fs::create_dir_all(&cfg.out_dir)?;
    let freeze = if cfg.net_freeze_branch {
        vec!["branch".to_string()]
    } else {
        Vec::new()
    };

    eprintln!(
        "training {} over k={:?}, {} seed(s)...",
        net.variant.name(),
        k_list,
        cfg.train_seeds
    );
    let mut report = scarce_protocol(
        &dataset,
        &plan,
        &net,
        &hyper,
        &k_list,
        cfg.train_seeds,
        &ProtocolOptions {
            master_seed: cfg.train_seed,
            init: init_for(&net),
            freeze_prefixes: freeze.clone(),
            instrument: grad_energy,
            checkpoint_dir: Some(cfg.out_dir.join("checkpoints")),
        },
    )?;
    report.full_pool = full_pool;
    write_text(&cfg.out_dir.join("results.csv"), &report.results_csv())?;
    write_text(&cfg.out_dir.join("summary.csv"), &report.summary_csv())?;
    let degenerate: usize = report.cells.iter().map(|c| c.degenerate_events).sum();
    if degenerate > 0 {
        eprintln!("warning: {degenerate} sample pass(es) had zero probe gradient; their energy fraction fell back to the bbox-area ratio");
    }

    if grad_energy {
        let baseline = NetworkConfig {
            variant: Variant::BaselineRgb,
            pool_position: None,
            ..net.clone()
        };
        eprintln!("training the baseline twin for the gradient-energy series...");
        let twin = scarce_protocol(
            &dataset,
            &plan,
            &baseline,
            &hyper,
            &k_list,
            cfg.train_seeds,
            &ProtocolOptions {
                master_seed: cfg.train_seed,
                init: init_for(&baseline),
                freeze_prefixes: Vec::new(),
                instrument: true,
                checkpoint_dir: None,
            },
        )?;
        write_text(
            &cfg.out_dir.join("grad_energy.csv"),
            &gradient_series_csv(&report, &twin)?,
        )?;
    }

    if !cfg.saliency_sweep.is_empty() {
        eprintln!(
            "quality sweep over {:?} at k=5...",
            cfg.saliency_sweep
        );
        let study = salmod::analysis::correlation_study(
            &dataset,
            &plan,
            &net,
            &hyper,
            5,
            &cfg.saliency_sweep,
            cfg.train_seeds,
            &ProtocolOptions {
                master_seed: cfg.train_seed,
                init: init_for(&net),
                freeze_prefixes: freeze,
                instrument: false,
                checkpoint_dir: None,
            },
        )?;
        write_text(&cfg.out_dir.join("correlation.csv"), &study.csv())?;
        println!("NSS/accuracy correlation over the sweep: {:.3}", study.pearson);
    }

    for &k in &k_list {
        let (mean, std) = report.mean_std(k);
        println!("k={}: {:.2} ± {:.2}", report.k_label(k), mean, std);
    }
    println!("reports written to {}", cfg.out_dir.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// A results CSV parsed back into a report. "K" rows keep their label via a
/// sentinel k value.
const K_SENTINEL: usize = usize::MAX;

fn parse_results_csv(name: &str, text: &str) -> Result<RunReport> {
    let mut cells = Vec::new();
    let mut k_list: Vec<usize> = Vec::new();
    let mut saw_full = false;
    let mut seeds = 0usize;
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::format(format!(
                "{name} line {}: expected k,seed,accuracy",
                idx + 1
            )));
        }
        let k = if fields[0] == "K" {
            saw_full = true;
            K_SENTINEL
        } else {
            fields[0]
                .parse()
                .map_err(|_| Error::format(format!("{name}: bad k '{}'", fields[0])))?
        };
        let seed: u64 = fields[1]
            .parse()
            .map_err(|_| Error::format(format!("{name}: bad seed '{}'", fields[1])))?;
        let accuracy: f64 = fields[2]
            .parse()
            .map_err(|_| Error::format(format!("{name}: bad accuracy '{}'", fields[2])))?;
        if !k_list.contains(&k) {
            k_list.push(k);
        }
        seeds = seeds.max(seed as usize + 1);
        cells.push(CellResult {
            k,
            seed,
            accuracy,
            epoch_losses: vec![],
            epoch_fractions: vec![],
            degenerate_events: 0,
        });
    }
    if cells.is_empty() {
        return Err(Error::format(format!("{name}: no result rows")));
    }
    Ok(RunReport {
        k_list,
        n_seeds: seeds,
        cells,
        full_pool: if saw_full { Some(K_SENTINEL) } else { None },
    })
}

fn cmd_analyze(reports: &[PathBuf], correlation: bool, out: &Path) -> Result<()> {
    let mut runs: Vec<(String, RunReport)> = Vec::new();
    let mut sweeps: Vec<(String, Vec<(f64, f64, f64)>)> = Vec::new();
    for path in reports {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("report")
            .to_string();
        match text.lines().next().map(str::trim) {
            Some("k,seed,accuracy") => {
                let report = parse_results_csv(&name, &text)?;
                runs.push((name, report));
            }
            Some("quality,nss,accuracy") => {
                let mut pts = Vec::new();
                for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
                    let f: Vec<&str> = line.split(',').collect();
                    if f.len() != 3 {
                        return Err(Error::format(format!(
                            "{name}: expected quality,nss,accuracy rows"
                        )));
                    }
                    let parse = |s: &str| -> Result<f64> {
                        s.parse()
                            .map_err(|_| Error::format(format!("{name}: bad number '{s}'")))
                    };
                    pts.push((parse(f[0])?, parse(f[1])?, parse(f[2])?));
                }
                sweeps.push((name, pts));
            }
            other => {
                return Err(Error::format(format!(
                    "{}: unrecognized report header {:?}",
                    path.display(),
                    other.unwrap_or("")
                )));
            }
        }
    }
    if runs.is_empty() && !(correlation && !sweeps.is_empty()) {
        return Err(Error::config(
            "no run reports among the inputs (header k,seed,accuracy)".to_string(),
        ));
    }
    std::fs::create_dir_all(out)?;

    if !runs.is_empty() {
        let table = ablation_table(&runs)?;
        write_text(&out.join("ablation.csv"), &table)?;
        print!("{table}");
        let series: Vec<(String, Vec<(f64, f64)>)> = runs
            .iter()
            .map(|(name, r)| {
                let pts = r
                    .k_list
                    .iter()
                    .filter(|&&k| k != K_SENTINEL)
                    .map(|&k| (k as f64, r.mean_std(k).0))
                    .collect();
                (name.clone(), pts)
            })
            .collect();
        let svg = line_plot_svg(
            "test accuracy vs training images per class",
            "k (images per class)",
            "accuracy (%)",
            &series,
        );
        write_text(&out.join("accuracy_vs_k.svg"), &svg)?;
    }

    if correlation {
        let (name, pts) = sweeps.first().ok_or_else(|| {
            Error::config(
                "--correlation needs a sweep report (header quality,nss,accuracy)".to_string(),
            )
        })?;
        if pts.len() < 3 {
            return Err(Error::data(format!(
                "{name}: a correlation needs at least 3 points, got {}",
                pts.len()
            )));
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let r = pearson(&xs, &ys)?;
        let labeled: Vec<(f64, f64, String)> = pts
            .iter()
            .map(|&(q, nss, acc)| (nss, acc, format!("q={q}")))
            .collect();
        let svg = scatter_fit_svg(
            &format!("map quality vs accuracy (r = {r:.3})"),
            "NSS on test fixations",
            "accuracy (%)",
            &labeled,
        );
        write_text(&out.join("correlation.svg"), &svg)?;
        println!("correlation: r = {r:.3} over {} quality levels", pts.len());
    }
    println!("analysis written to {}", out.display());
    Ok(())
}
