//! The `est` command line.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (numeric trouble,
//! corrupt checkpoint), 2 on a usage error (bad flag, bad config, missing
//! input).

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{load_id_names, DatasetSummary, Split, TemporalKG};
use crate::error::{EstError, Result};
use crate::eval::{
    analyze_states, evaluate, rank_split, replay_memory, truncation_experiment, write_analysis_csv, FilterMode,
    RankingReport,
};
use crate::memory::DualStateMemory;
use crate::model::{BackboneKind, EstModel, ScorerKind};
use crate::train::{train_with, Ablation};

#[derive(Debug, Parser)]
#[command(name = "est", version, about = "Entity state tuning for temporal knowledge graph reasoning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration. Defaults to <out>/config.resolved when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma list of wo_context, wo_state, wo_ccl (or none).
    #[arg(long, global = true, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    /// rnn, lstm, transformer or mamba.
    #[arg(long, global = true, value_parser = parse_backbone)]
    pub backbone: Option<BackboneKind>,
    /// distmult, mlp, complex or rotate.
    #[arg(long, global = true, value_parser = parse_scorer)]
    pub scorer: Option<ScorerKind>,
    /// rolling or standard.
    #[arg(long, global = true, value_parser = parse_filter)]
    pub filter: Option<FilterMode>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load or generate the dataset and write it out as split files.
    Prepare,
    /// Train a model and write checkpoints and the training log.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Rank a split with the trained checkpoint.
    Evaluate {
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Also write per-query ranks.
        #[arg(long)]
        ranks: bool,
    },
    /// Retrain on chronological prefixes of the training data.
    Truncate {
        /// Comma list of training percentages.
        #[arg(long, value_delimiter = ',')]
        percents: Option<Vec<u32>>,
    },
    /// Report the entities whose slow state moved most over the test period.
    Analyze {
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Turn logs and reports into plain plot-ready CSV files.
    Plotdata,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: EstError| e.to_string())
}
fn parse_backbone(s: &str) -> std::result::Result<BackboneKind, String> {
    s.parse().map_err(|e: EstError| e.to_string())
}
fn parse_scorer(s: &str) -> std::result::Result<ScorerKind, String> {
    s.parse().map_err(|e: EstError| e.to_string())
}
fn parse_filter(s: &str) -> std::result::Result<FilterMode, String> {
    s.parse().map_err(|e: EstError| e.to_string())
}
fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split '{s}' (valid: valid, test)")),
    }
}

/// Metrics file written under `reports/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub config_hash: String,
    pub split: String,
    pub filter: FilterMode,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub query_count: usize,
}

impl MetricsReport {
    fn new(cfg: &RunConfig, split: Split, report: &RankingReport) -> Self {
        MetricsReport {
            run_id: cfg.run_id(),
            config_hash: cfg.hash(),
            split: split.to_string(),
            filter: cfg.filter,
            mrr: report.mrr,
            hits1: report.hits1,
            hits3: report.hits3,
            hits10: report.hits10,
            query_count: report.query_count,
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let layout = Layout::new(&cfg.out_dir);
    match &cli.command {
        Command::Prepare => cmd_prepare(&cfg, &layout, out),
        Command::Train { epochs } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                cfg.epochs = *e;
                cfg.check()?;
            }
            cmd_train(&cfg, &layout, out)
        }
        Command::Evaluate { split, ranks } => cmd_evaluate(&cfg, &layout, *split, *ranks, out),
        Command::Truncate { percents } => {
            let mut cfg = cfg;
            if let Some(p) = percents {
                cfg.truncation_percents = p.clone();
            }
            cmd_truncate(&cfg, &layout, out)
        }
        Command::Analyze { top_k } => {
            let mut cfg = cfg;
            if let Some(k) = top_k {
                cfg.analysis_top_k = *k;
            }
            cmd_analyze(&cfg, &layout, out)
        }
        Command::Plotdata => cmd_plotdata(&layout, out),
    }
}

fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let path = match (&common.config, &common.out) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(out)) => Some(Layout::new(out).config.clone()).filter(|p| p.exists()),
        (None, None) => None,
    };
    let mut cfg = match path {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(a) = common.ablation {
        cfg.ablation = a.to_string();
    }
    if let Some(b) = common.backbone {
        cfg.backbone = b;
    }
    if let Some(s) = common.scorer {
        cfg.scorer = s;
    }
    if let Some(f) = common.filter {
        cfg.filter = f;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.check()?;
    Ok(cfg)
}

/// Paths inside an output directory.
struct Layout {
    root: PathBuf,
    config: PathBuf,
    train_log: PathBuf,
    checkpoints: PathBuf,
    reports: PathBuf,
    plots: PathBuf,
}

impl Layout {
    fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
            config: root.join("config.resolved"),
            train_log: root.join("train_log.csv"),
            checkpoints: root.join("checkpoints"),
            reports: root.join("reports"),
            plots: root.join("plots"),
        }
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| EstError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| EstError::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    let file = fs::File::create(path).map_err(|e| EstError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| EstError::io(path, e))
}

/// Read failures on checkpoints are runtime errors, unlike missing inputs.
fn read_checkpoint(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            EstError::Config(format!("{} not found; run `est train` first", path.display()))
        } else {
            EstError::Deserialize(format!("{}: {e}", path.display()))
        }
    })
}

fn save_checkpoint(dir: &Path, model: &EstModel, memory: &DualStateMemory) -> Result<()> {
    write_file(&dir.join("model.bin"), &model.to_bytes())?;
    write_file(&dir.join("memory.bin"), &memory.to_bytes())
}

fn load_checkpoint(cfg: &RunConfig, layout: &Layout, kg: &TemporalKG) -> Result<(EstModel, DualStateMemory)> {
    let model = EstModel::from_bytes(&read_checkpoint(&layout.checkpoints.join("model.bin"))?)?;
    let memory = DualStateMemory::from_bytes(&read_checkpoint(&layout.checkpoints.join("memory.bin"))?)?;
    let expected = cfg.model_config(kg)?;
    if *model.config() != expected {
        return Err(EstError::Config(format!(
            "checkpoint model {:?} does not match the configured model {:?}",
            model.config(),
            expected
        )));
    }
    if memory.entity_count() != kg.entity_count() || memory.dim() != model.dim() {
        return Err(EstError::Config("checkpoint memory does not match the dataset".into()));
    }
    Ok((model, memory))
}

fn header_lines(cfg: &RunConfig, kg: &TemporalKG) -> Vec<String> {
    let s = DatasetSummary::of(kg);
    vec![
        format!("run_id={}", cfg.run_id()),
        format!("config_hash={}", cfg.hash()),
        format!(
            "entities={} relations={} train={} valid={} test={} snapshots={}",
            s.entities, s.relations, s.train, s.valid, s.test, s.snapshots
        ),
    ]
}

fn io_err(e: std::io::Error) -> EstError {
    EstError::io("<stdout>", e)
}

fn cmd_prepare(cfg: &RunConfig, layout: &Layout, out: &mut dyn Write) -> Result<()> {
    let kg = cfg.load_graph()?;
    let dir = layout.root.join("dataset");
    let base = kg.relation_count_base();
    for split in [Split::Train, Split::Valid, Split::Test] {
        write_with(&dir.join(format!("{split}.txt")), |w| {
            for q in kg.split(split).iter().filter(|q| q.relation < base) {
                writeln!(w, "{}\t{}\t{}\t{}", q.subject, q.relation, q.object, q.time)?;
            }
            Ok(())
        })?;
    }
    write_file(&dir.join("stat.txt"), format!("{}\t{}\n", kg.entity_count(), base).as_bytes())?;
    let summary = DatasetSummary::of(&kg);
    write_file(&layout.reports.join("dataset.txt"), format!("{summary}\n").as_bytes())?;
    writeln!(out, "{summary}").map_err(io_err)?;
    writeln!(out, "wrote {}", dir.display()).map_err(io_err)
}

fn cmd_train(cfg: &RunConfig, layout: &Layout, out: &mut dyn Write) -> Result<()> {
    let kg = cfg.load_graph()?;
    let train_cfg = cfg.train_config()?;
    let mut model = EstModel::new(cfg.model_config(&kg)?, cfg.seed)?;
    let mut memory = DualStateMemory::new(kg.entity_count(), cfg.dim, cfg.memory_params())?;
    write_file(&layout.config, cfg.to_toml().as_bytes())?;
    let every = cfg.checkpoint_every;
    let log = train_with(&kg, &mut model, &mut memory, &train_cfg, |e, m, mem| {
        let mrr = e.valid_mrr.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        writeln!(out, "epoch {:>3}  loss {:.4}  lr {:.2e}  valid_mrr {mrr}", e.epoch, e.loss, e.lr).map_err(io_err)?;
        if every > 0 && e.epoch % every == 0 {
            save_checkpoint(&layout.checkpoints.join(format!("epoch_{:03}", e.epoch)), m, mem)?;
        }
        Ok(())
    })?;
    save_checkpoint(&layout.checkpoints, &model, &memory)?;
    let header = header_lines(cfg, &kg);
    write_with(&layout.train_log, |w| log.write_csv(w, &header))?;
    writeln!(out, "wrote {}", layout.checkpoints.display()).map_err(io_err)
}

fn cmd_evaluate(cfg: &RunConfig, layout: &Layout, split: Split, ranks: bool, out: &mut dyn Write) -> Result<()> {
    let kg = cfg.load_graph()?;
    let (model, mut memory) = load_checkpoint(cfg, layout, &kg)?;
    let opts = cfg.train_config()?.eval_options();
    let report = evaluate(&kg, &model, &mut memory, split, &opts)?;
    let metrics = MetricsReport::new(cfg, split, &report);
    let text = toml::to_string(&metrics).map_err(|e| EstError::Numeric(e.to_string()))?;
    write_file(&layout.reports.join(format!("{split}.txt")), text.as_bytes())?;
    if ranks {
        write_with(&layout.reports.join(format!("{split}_ranks.csv")), |w| report.write_ranks_csv(w))?;
    }
    write!(out, "{text}").map_err(io_err)
}

fn cmd_truncate(cfg: &RunConfig, layout: &Layout, out: &mut dyn Write) -> Result<()> {
    let kg = cfg.load_graph()?;
    let rows = truncation_experiment(&kg, &cfg.model_config(&kg)?, &cfg.train_config()?, &cfg.truncation_percents)?;
    let path = layout.reports.join("truncation.csv");
    write_with(&path, |w| {
        writeln!(w, "percent,train_timestamps,mrr,hits1,hits3,hits10,query_count,note")?;
        for r in &rows {
            match &r.report {
                Some(rep) => writeln!(
                    w,
                    "{},{},{:.6},{:.6},{:.6},{:.6},{},",
                    r.percent, r.train_timestamps, rep.mrr, rep.hits1, rep.hits3, rep.hits10, rep.query_count
                )?,
                None => writeln!(
                    w,
                    "{},{},,,,,,{}",
                    r.percent,
                    r.train_timestamps,
                    r.note.as_deref().unwrap_or("skipped").replace(',', ";")
                )?,
            }
        }
        Ok(())
    })?;
    writeln!(out, "{:>7}  {:>10}  {:>8}  {:>8}", "percent", "timestamps", "mrr", "hits@10").map_err(io_err)?;
    for r in &rows {
        let line = match &r.report {
            Some(rep) => format!("{:>7}  {:>10}  {:>8.4}  {:>8.4}", r.percent, r.train_timestamps, rep.mrr, rep.hits10),
            None => format!(
                "{:>7}  {:>10}  skipped: {}",
                r.percent,
                r.train_timestamps,
                r.note.as_deref().unwrap_or("")
            ),
        };
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

fn cmd_analyze(cfg: &RunConfig, layout: &Layout, out: &mut dyn Write) -> Result<()> {
    let kg = cfg.load_graph()?;
    let (model, mut memory) = load_checkpoint(cfg, layout, &kg)?;
    let opts = cfg.train_config()?.eval_options();
    let train_end = kg.split_range(Split::Train).end;
    let test_start = kg.split_range(Split::Test).start;
    replay_memory(&kg, &model, &mut memory, &kg.facts()[train_end..test_start], &opts)?;
    let baseline = memory.snapshot_slow();
    rank_split(&kg, &model, &mut memory, Split::Test, &opts)?;
    let names = cfg.entity_names.as_deref().map(load_id_names).transpose()?;
    let rows = analyze_states(&memory, Some(&baseline), names.as_ref(), cfg.analysis_top_k)?;
    write_with(&layout.reports.join("analysis.csv"), |w| write_analysis_csv(&rows, w))?;
    write_with(&layout.plots.join("slow_states.csv"), |w| memory.write_slow_csv(w, names.as_ref()))?;
    writeln!(out, "{:>4}  {:<24}  {:>12}  {:>9}  {:>9}  {:>6}", "rank", "entity", "displacement", "gate_mean", "gate_std", "gates")
        .map_err(io_err)?;
    for r in &rows {
        let (mean, std) = match r.gate_count {
            0 => ("-".to_string(), "-".to_string()),
            _ => (format!("{:.4}", r.gate_mean), format!("{:.4}", r.gate_std)),
        };
        writeln!(
            out,
            "{:>4}  {:<24}  {:>12.4}  {mean:>9}  {std:>9}  {:>6}",
            r.rank,
            r.label(),
            r.displacement,
            r.gate_count
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Header and data rows of a small CSV file.
type CsvTable = (Vec<String>, Vec<Vec<String>>);

fn read_csv_rows(path: &Path) -> Result<Option<CsvTable>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(EstError::io(path, e)),
    };
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = match lines.next() {
        Some(h) => h.split(',').map(String::from).collect(),
        None => return Err(EstError::Parse { line: 1, message: format!("{} has no header", path.display()) }),
    };
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    Ok(Some((header, rows)))
}

/// Copies the named columns of `src` into `dst`. Returns false when `src`
/// does not exist.
fn extract_columns(src: &Path, dst: &Path, columns: &[&str]) -> Result<bool> {
    let Some((header, rows)) = read_csv_rows(src)? else {
        return Ok(false);
    };
    let idx = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| EstError::Validation(format!("{} lacks column {c}", src.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    write_with(dst, |w| {
        writeln!(w, "{}", columns.join(","))?;
        for row in &rows {
            let cells: Vec<&str> = idx.iter().map(|&i| row.get(i).map(String::as_str).unwrap_or("")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })?;
    Ok(true)
}

fn cmd_plotdata(layout: &Layout, out: &mut dyn Write) -> Result<()> {
    let jobs: [(PathBuf, &str, &[&str]); 3] = [
        (layout.train_log.clone(), "convergence.csv", &["epoch", "loss", "valid_mrr"]),
        (layout.reports.join("truncation.csv"), "truncation.csv", &["percent", "mrr", "hits10"]),
        (layout.reports.join("analysis.csv"), "displacement.csv", &["entity", "displacement", "gate_mean", "gate_std"]),
    ];
    let mut wrote = 0;
    for (src, name, columns) in jobs {
        let dst = layout.plots.join(name);
        if extract_columns(&src, &dst, columns)? {
            writeln!(out, "wrote {}", dst.display()).map_err(io_err)?;
            wrote += 1;
        }
    }
    if wrote == 0 {
        return Err(EstError::Config(format!(
            "nothing to plot in {}; run train, truncate or analyze first",
            layout.root.display()
        )));
    }
    Ok(())
}
