use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ecet::data::make_blobs;
use ecet::evidence::Rule;
use ecet::experiment::{
    build_ensemble, detect, evaluate, inject_raw, load_data, prepare, quantify, resolve_seed, run, run_grid, write_confusion,
    write_grid, write_json, write_outputs, write_trace, write_uq_trace, ExperimentConfig, ModelBundle, SEED_ENV,
};
use ecet::selection::GRID_FLAGS;
use ecet::Execution;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "ecet", version, about = "Evidence-fusion ensembles: train, select, quantify uncertainty, detect anomalies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: train, select, calibrate, evaluate, detect and UQ.
    Run(Common),
    /// Train the pool, select and calibrate, then save a model bundle.
    Train(Common),
    /// Print the selected pool and its grid row.
    Select(Common),
    /// Batch uncertainty traces for the selected members and the ensemble.
    Uq(Common),
    /// Classification metrics of the ensemble on the test split.
    Evaluate(Common),
    /// Anomaly detection run, with injection if configured.
    Detect(Common),
    /// Write synthetic blob CSVs.
    Synth(Synth),
    /// Evaluate all ten selection-grid rows.
    Grid(Common),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    rule: Option<Rule>,
    #[arg(long)]
    f_sensitivity: Option<u32>,
    #[arg(long)]
    q_min: Option<f64>,
    #[arg(long)]
    q_max: Option<f64>,
    /// Model bundle to write (train) or read (evaluate, detect).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct Synth {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    n_classes: usize,
    #[arg(long, default_value_t = 300)]
    per_class: usize,
    #[arg(long, default_value_t = 200)]
    test_per_class: usize,
    #[arg(long, default_value_t = 2)]
    n_features: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
}

struct Setup {
    cfg: ExperimentConfig,
    seed: u64,
    exec: Execution,
}

impl Common {
    fn setup(&self) -> Result<Setup> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(n) = self.ensemble_size {
            let mut sel = cfg.selection_config();
            sel.ensemble_size = n;
            cfg.selection = Some(sel);
        }
        if let Some(rule) = self.rule {
            cfg.evidence.label_rule = rule;
        }
        if let Some(f) = self.f_sensitivity {
            cfg.evidence.f_sensitivity = f;
        }
        if let Some(q) = self.q_min {
            cfg.anomaly.q_min = q;
        }
        if let Some(q) = self.q_max {
            cfg.anomaly.q_max = q;
        }
        cfg.validate()?;
        let env = std::env::var(SEED_ENV).ok();
        let seed = resolve_seed(self.seed, cfg.seed, env.as_deref())?;
        let exec = if self.sequential { Execution::Sequential } else { Execution::default() };
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(Setup { cfg, seed, exec })
    }

    fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out.join("model.json"))
    }
}

fn grid_row(sel: &ecet::SelectionConfig) -> String {
    GRID_FLAGS
        .iter()
        .position(|&f| f == sel.flags())
        .map(ecet::selection::grid_row_name)
        .unwrap_or_else(|| "custom".into())
}

/// A saved bundle if one was given, otherwise a freshly trained one.
fn bundle(args: &Common, s: &Setup) -> Result<ModelBundle> {
    if let Some(path) = &args.model {
        return ModelBundle::load(path).with_context(|| format!("loading model {}", path.display()));
    }
    let prep = prepare(&s.cfg, s.seed, s.exec)?;
    let (_, model) = build_ensemble(&prep, &s.cfg.selection_config(), s.exec)?;
    Ok(ModelBundle::from_prepared(&prep, model))
}

fn cmd_run(args: &Common) -> Result<()> {
    let s = args.setup()?;
    let output = run(&s.cfg, s.seed, s.exec)?;
    write_outputs(&output, &args.out)?;
    let r = &output.report;
    println!("seed {}", r.seed);
    println!("selected {}", r.selected_names.join(", "));
    println!("ensemble macro-F1 {:.4}  accuracy {:.4}", r.ensemble.macro_f1, r.ensemble.accuracy);
    if let Some(recall) = r.detection.anomaly_recall {
        println!("anomaly recall {:.4}  false-anomaly rate {:.4}", recall, r.detection.false_anomaly_rate);
    }
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_train(args: &Common) -> Result<()> {
    let s = args.setup()?;
    let prep = prepare(&s.cfg, s.seed, s.exec)?;
    for c in &prep.pool.classifiers {
        println!("{:<12} validation macro-F1 {:.4}", c.name(), c.validation.macro_f1);
    }
    let (selection, model) = build_ensemble(&prep, &s.cfg.selection_config(), s.exec)?;
    let names: Vec<&str> = selection.selected.iter().map(|&i| prep.pool.classifiers[i].name()).collect();
    println!("selected {}", names.join(", "));
    let path = args.model_path();
    ModelBundle::from_prepared(&prep, model).save(&path)?;
    println!("model written to {}", path.display());
    Ok(())
}

fn cmd_select(args: &Common) -> Result<()> {
    let s = args.setup()?;
    let prep = prepare(&s.cfg, s.seed, s.exec)?;
    let sel_cfg = s.cfg.selection_config();
    let y_va = prep.y_valid();
    let selection = ecet::selection::select_from_pool(&prep.pool, prep.valid.x.view(), &y_va, &sel_cfg, s.exec)?;
    println!("grid row {}", grid_row(&sel_cfg));
    for (rank, &i) in selection.selected.iter().enumerate() {
        let c = &prep.pool.classifiers[i];
        println!("{:>2}. {:<12} mean F1 {:.4}", rank + 1, c.name(), selection.mean_f1[i]);
    }
    if let Some(d) = selection.diversity {
        println!("ensemble diversity {d:.4}");
    }
    write_json(&selection, &args.out.join("selection.json"))?;
    Ok(())
}

fn cmd_uq(args: &Common) -> Result<()> {
    let s = args.setup()?;
    let prep = prepare(&s.cfg, s.seed, s.exec)?;
    let (_, model) = build_ensemble(&prep, &s.cfg.selection_config(), s.exec)?;
    println!("{:<12} {:>10} {:>10} {:>10}", "subject", "UQ_P med", "UQ_DS med", "UQ_Y med");
    for (subject, trace) in quantify(&prep, &model, s.exec)? {
        let p = trace.uq_p.map_or("-".to_string(), |p| format!("{:.4}", p.median));
        println!("{:<12} {:>10} {:>10.4} {:>10.4}", subject, p, trace.uq_ds.median, trace.uq_y.median);
        let stem: String = subject.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        write_uq_trace(&trace, &args.out.join(format!("uq_{stem}.csv")))?;
    }
    Ok(())
}

fn cmd_evaluate(args: &Common) -> Result<()> {
    let s = args.setup()?;
    let b = bundle(args, &s)?;
    let (_, raw_test) = load_data(&s.cfg, s.seed)?;
    let test = b.prepare_dataset(&raw_test)?;
    if test.y.contains(&ecet::ANOMALY_CODE) {
        bail!("test data contains labels unknown to the model; use `detect`");
    }
    let report = evaluate(&b.model, &test, s.exec)?;
    println!("{:>8} {:>10} {:>10} {:>10} {:>8}", "label", "precision", "recall", "F1", "support");
    for c in &report.per_class {
        let label = b.label_map.decode_code(c.label).unwrap_or(c.label);
        println!("{:>8} {:>10.4} {:>10.4} {:>10.4} {:>8}", label, c.precision, c.recall, c.f1, c.support);
    }
    println!("macro-F1 {:.4}  accuracy {:.4}", report.macro_f1, report.accuracy);
    write_json(&report, &args.out.join("evaluation.json"))?;
    write_confusion(&report, &b.label_map, &args.out.join("confusion.csv"))?;
    Ok(())
}

fn cmd_detect(args: &Common) -> Result<()> {
    let s = args.setup()?;
    let mut b = bundle(args, &s)?;
    if args.q_min.is_some() || args.q_max.is_some() {
        eprintln!("note: quantile flags apply at calibration time; saved thresholds are used as-is");
    }
    let (_, raw_test) = load_data(&s.cfg, s.seed)?;
    let (raw, injected) = inject_raw(&s.cfg, s.seed, &raw_test)?;
    let ds = b.prepare_dataset(&raw)?;
    b.model.label_rule = s.cfg.evidence.label_rule;
    let (summary, trace) = detect(&b.model, &ds, injected, &b.label_map, s.exec)?;
    println!("injected {}", summary.injected);
    match summary.anomaly_recall {
        Some(r) => println!("anomaly recall {r:.4}"),
        None => println!("anomaly recall n/a"),
    }
    println!("false-anomaly rate {:.4}", summary.false_anomaly_rate);
    println!("branches: below_min {} between {} above_max {}", summary.below_min, summary.between, summary.above_max);
    write_json(&summary, &args.out.join("detection.json"))?;
    write_trace(&trace, &args.out.join("trace.csv"))?;
    write_confusion(&summary.report, &b.label_map, &args.out.join("confusion.csv"))?;
    Ok(())
}

fn cmd_synth(args: &Synth) -> Result<()> {
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(args.seed, None, env.as_deref())?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let write = |name: &str, per_class: usize, seed: u64| -> Result<()> {
        let ds = make_blobs(args.n_classes, per_class, args.n_features, args.separation, seed)?;
        let path: PathBuf = Path::new(&args.out).join(name);
        ds.write_csv(&path)?;
        println!("{} rows -> {}", ds.n_rows(), path.display());
        Ok(())
    };
    write("train.csv", args.per_class, seed)?;
    write("test.csv", args.test_per_class, seed.wrapping_add(1))?;
    Ok(())
}

fn cmd_grid(args: &Common) -> Result<()> {
    let s = args.setup()?;
    let rows = run_grid(&s.cfg, s.seed, s.exec)?;
    println!("{:<5} {:>5} {:>5} {:>5} {:>5} {:>9} {:>9}  selected", "row", "exp", "div", "ver", "pc", "macro-F1", "AN recall");
    for r in &rows {
        let recall = r.anomaly_recall.map_or("-".into(), |v| format!("{v:.4}"));
        println!(
            "{:<5} {:>5} {:>5} {:>5} {:>5} {:>9.4} {:>9}  {}",
            r.row, r.exp, r.div, r.ver, r.pc, r.macro_f1, recall, r.selected.join(",")
        );
    }
    write_grid(&rows, &args.out)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => cmd_run(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Select(a) => cmd_select(&a),
        Command::Uq(a) => cmd_uq(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Grid(a) => cmd_grid(&a),
    }
}
