//! Command-line driver: dataset packing, synthetic fixtures, graph dumps,
//! training, evaluation and inspection exports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};
use egat_core::evaluation::{
    confusion_histograms, evaluate, export_attention, length_breakdown, recognize, EvalItem, LengthKey, Recognized,
};
use egat_core::graph_build::{build_graph, build_local_graph, Connectivity};
use egat_core::ink_io::{parse_inkml, parse_lg, serialize_lg, write_inkml, write_pack, InkExpression, Pack};
use egat_core::label_graph::{to_eslg, LabelGraph, Vocabulary};
use egat_core::model::Model;
use egat_core::training::{
    fit, from_checkpoint, parse_config, to_checkpoint, write_history, CheckpointMeta, RunConfig, Sample,
};
use egat_tensor::{Checkpoint, Float, ParamStore, Precision};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// File name used inside a dataset directory.
pub const PACK_FILE: &str = "dataset.pack";

#[derive(Parser, Debug)]
#[command(name = "egat", version, about = "Stroke-graph attention recognizer for handwritten math")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Config overrides accepted by every command; later wins over the file.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Run configuration file ([model], [train], [data])
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Add the master node
    #[arg(long, global = true, conflicts_with = "local")]
    pub global: bool,
    /// Local graph only, no master node
    #[arg(long, global = true)]
    pub local: bool,
    /// Fully connected stroke graph instead of line of sight
    #[arg(long, global = true)]
    pub fc: bool,
    #[arg(long, global = true)]
    pub no_aux: bool,
    #[arg(long, global = true)]
    pub no_concat: bool,
    #[arg(long, global = true)]
    pub no_residual: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pack an InkML + LG directory tree into one dataset file
    Ingest {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Separate LG directory (default: next to each InkML file)
        #[arg(long, value_name = "DIR")]
        lg: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Write synthetic expressions as InkML, LG and a pack
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        max_symbols: usize,
    },
    /// Dump modeled graphs as JSON
    BuildGraph {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train and write history.csv and model.ckpt
    Train {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Validation set (default: the training set)
        #[arg(long, value_name = "PATH")]
        val: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Score a checkpoint or a directory of predicted LG files
    #[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "pred"])))]
    Eval {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        pred: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Write one predicted LG file per expression
    Infer {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Export last-layer attention matrices as CSV
    Attention {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Only this expression
        #[arg(long)]
        id: Option<String>,
    },
    /// Symbol and relation-pair error tables as JSON
    #[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "pred"])))]
    Confusion {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        pred: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Messages go to `stdout` / `stderr`.
pub fn run<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let text = e.render().to_string();
            return match e.kind() {
                DisplayHelp | DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_DATA
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.train.seed = s;
    }
    if o.global {
        cfg.graph.global = true;
    }
    if o.local {
        cfg.graph.global = false;
    }
    if o.fc {
        cfg.graph.connectivity = Connectivity::Full;
    }
    cfg.model.aux &= !o.no_aux;
    cfg.model.concat &= !o.no_concat;
    cfg.model.residual &= !o.no_residual;
    Ok(cfg.finish()?)
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Ingest { data, lg, out } => {
            let items = read_tree(data, lg.as_deref())?;
            if items.is_empty() {
                bail!("no InkML files under {}", data.display());
            }
            fs::create_dir_all(out)?;
            let path = out.join(PACK_FILE);
            write_pack(&items, fs::File::create(&path)?)?;
            writeln!(stdout, "packed {} expressions into {}", items.len(), path.display())?;
        }
        Command::Synth { out, count, max_symbols } => {
            let seed = cli.overrides.seed.unwrap_or(0);
            let items = egat_core::ink_io::generate_synthetic(seed, *count, *max_symbols)?;
            fs::create_dir_all(out.join("inkml"))?;
            fs::create_dir_all(out.join("lg"))?;
            for (ink, gold) in &items {
                let name = file_stem(&ink.id);
                fs::write(out.join("inkml").join(format!("{name}.inkml")), write_inkml(ink))?;
                fs::write(out.join("lg").join(format!("{name}.lg")), serialize_lg(gold))?;
            }
            write_pack(&items, fs::File::create(out.join(PACK_FILE))?)?;
            writeln!(stdout, "wrote {} synthetic expressions to {}", items.len(), out.display())?;
        }
        Command::BuildGraph { data, out } => {
            let cfg = resolve_config(&cli.overrides)?;
            let dir = out.join("graphs");
            fs::create_dir_all(&dir)?;
            let items = load_data(data)?;
            for (ink, _) in &items {
                let g = build_graph(ink, &cfg.graph).with_context(|| ink.id.clone())?;
                let path = dir.join(format!("{}.json", file_stem(&ink.id)));
                fs::write(path, serde_json::to_vec_pretty(&g.to_json())?)?;
            }
            writeln!(stdout, "wrote {} graphs to {}", items.len(), dir.display())?;
        }
        Command::Train { data, val, out } => {
            let cfg = resolve_config(&cli.overrides)?;
            match cfg.train.precision {
                Precision::F32 => train::<f32>(&cfg, data, val.as_deref(), out, stdout)?,
                Precision::F64 => train::<f64>(&cfg, data, val.as_deref(), out, stdout)?,
            }
        }
        Command::Eval { data, checkpoint, pred, out } => {
            let items = eval_items(&cli.overrides, data, checkpoint.as_deref(), pred.as_deref())?;
            let report = evaluate(&items)?;
            fs::create_dir_all(out)?;
            report.write_csv(fs::File::create(out.join("metrics.csv"))?)?;
            write_lengths(&report.expressions, &out.join("lengths.csv"))?;
            if checkpoint.is_some() {
                write_predictions(out, items.iter().map(|it| (it.id.as_str(), &it.pred)))?;
            }
            writeln!(
                stdout,
                "expressions {}  exp {:.4}  stru {:.4}  sym {:.4}  seg {:.4}  rel {:.4}  node {:.4}  edge {:.4}",
                report.expressions.len(),
                report.exp_rate,
                report.stru_rate,
                report.sym_rate,
                report.seg_rate,
                report.rel_rate,
                report.node_acc,
                report.edge_acc
            )?;
        }
        Command::Infer { data, checkpoint, out } => {
            let items = load_data(data)?;
            let rec = recognize_all(checkpoint, &items)?;
            write_predictions(out, rec.iter().map(|(id, r)| (id.as_str(), &r.slg)))?;
            writeln!(stdout, "wrote {} predictions to {}", rec.len(), out.join("pred").display())?;
        }
        Command::Attention { data, checkpoint, out, id } => {
            let mut items = load_data(data)?;
            if let Some(id) = id {
                items.retain(|(ink, _)| &ink.id == id);
                if items.is_empty() {
                    bail!("no expression with id '{id}'");
                }
            }
            let rec = recognize_all(checkpoint, &items)?;
            let dir = out.join("attention");
            fs::create_dir_all(&dir)?;
            for (id, r) in &rec {
                let f = fs::File::create(dir.join(format!("{}.csv", file_stem(id))))?;
                export_attention(&r.attention, r.n, f)?;
            }
            writeln!(stdout, "wrote {} attention matrices to {}", rec.len(), dir.display())?;
        }
        Command::Confusion { data, checkpoint, pred, out } => {
            let items = eval_items(&cli.overrides, data, checkpoint.as_deref(), pred.as_deref())?;
            let pairs: Vec<(LabelGraph, LabelGraph)> = items.into_iter().map(|it| (it.pred, it.gold)).collect();
            let c = confusion_histograms(&pairs)?;
            fs::create_dir_all(out)?;
            let body = serde_json::json!({
                "symbol_errors": c.symbol_errors(),
                "symbols": c.symbols,
                "pairs": c.pairs,
            });
            fs::write(out.join("confusion.json"), serde_json::to_vec_pretty(&body)?)?;
            writeln!(stdout, "{} symbol classes with errors", c.symbols.len())?;
        }
    }
    Ok(())
}

/// Ids can carry path separators; keep file names flat.
fn file_stem(id: &str) -> String {
    id.chars().map(|c| if matches!(c, '/' | '\\' | ':') { '_' } else { c }).collect()
}

/// Every `*.inkml` under `root` with its LG file of the same stem, sorted by
/// path. The InkML file name (not any id inside it) becomes the id.
pub fn read_tree(root: &Path, lg_dir: Option<&Path>) -> Result<Vec<(InkExpression, LabelGraph)>> {
    let mut inks = Vec::new();
    let mut lgs = std::collections::HashMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry?;
        let p = entry.path();
        match p.extension().and_then(|e| e.to_str()) {
            Some("inkml") => inks.push(p.to_path_buf()),
            Some("lg") if lg_dir.is_none() => {
                lgs.insert(stem(p), p.to_path_buf());
            }
            _ => {}
        }
    }
    if let Some(dir) = lg_dir {
        for entry in walkdir::WalkDir::new(dir) {
            let entry = entry?;
            if entry.path().extension().is_some_and(|e| e == "lg") {
                lgs.insert(stem(entry.path()), entry.path().to_path_buf());
            }
        }
    }
    let mut out = Vec::with_capacity(inks.len());
    for p in inks {
        let id = stem(&p);
        let mut ink = parse_inkml(&fs::read(&p)?).with_context(|| p.display().to_string())?;
        ink.id = id.clone();
        let lp = lgs.get(&id).ok_or_else(|| anyhow!("no LG file for {}", p.display()))?;
        let gold = parse_lg(&fs::read(lp)?).with_context(|| lp.display().to_string())?;
        if gold.len() != ink.len() {
            bail!("{}: {} strokes but the LG labels {}", id, ink.len(), gold.len());
        }
        out.push((ink, gold));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A pack file, a directory holding one, or an InkML tree (ground truth
/// where LG files exist).
pub fn load_data(path: &Path) -> Result<Vec<(InkExpression, Option<LabelGraph>)>> {
    let pack = if path.is_dir() { path.join(PACK_FILE) } else { path.to_path_buf() };
    if pack.is_file() {
        let p = Pack::read(&pack).with_context(|| pack.display().to_string())?;
        return Ok(p.records()?.into_iter().map(|(i, g)| (i, Some(g))).collect());
    }
    if !path.is_dir() {
        bail!("{} does not exist", path.display());
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry?;
        let p = entry.path();
        if p.extension().is_some_and(|e| e == "inkml") {
            let mut ink = parse_inkml(&fs::read(p)?).with_context(|| p.display().to_string())?;
            ink.id = stem(p);
            let lg = p.with_extension("lg");
            let gold = if lg.is_file() { Some(parse_lg(&fs::read(&lg)?)?) } else { None };
            out.push((ink, gold));
        }
    }
    if out.is_empty() {
        bail!("no expressions found in {}", path.display());
    }
    Ok(out)
}

fn labeled(items: Vec<(InkExpression, Option<LabelGraph>)>) -> Result<Vec<(InkExpression, LabelGraph)>> {
    items
        .into_iter()
        .map(|(ink, g)| g.map(|g| (ink.clone(), g)).ok_or_else(|| anyhow!("{} has no ground truth", ink.id)))
        .collect()
}

fn samples(items: &[(InkExpression, LabelGraph)], cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vec<Sample>> {
    items
        .iter()
        .map(|(ink, gold)| Sample::new(ink, gold, &cfg.graph, vocab).with_context(|| ink.id.clone()))
        .collect()
}

fn train<T: Float>(cfg: &RunConfig, data: &Path, val: Option<&Path>, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let vocab = Vocabulary::crohme();
    let mut model_cfg = cfg.model.clone();
    model_cfg.node_classes = vocab.node_classes();
    let train_set = samples(&labeled(load_data(data)?)?, cfg, &vocab)?;
    let val_set = match val {
        Some(v) => samples(&labeled(load_data(v)?)?, cfg, &vocab)?,
        None => Vec::new(),
    };
    let r = fit::<T>(&train_set, &val_set, &model_cfg, &cfg.graph, &cfg.train)?;
    fs::create_dir_all(out)?;
    write_history(&r.history, fs::File::create(out.join("history.csv"))?)?;
    let meta = CheckpointMeta {
        model: r.model.config.clone(),
        graph: cfg.graph.clone(),
        train: cfg.train.clone(),
        best_epoch: r.best_epoch,
        vocabulary: vocab.symbol_classes.clone(),
    };
    to_checkpoint(&meta, &r.params)?.save(out.join("model.ckpt"))?;
    let best = &r.history[r.best_epoch - 1];
    writeln!(
        stdout,
        "{} epochs, best {} (val loss {:.5}, node {:.4}, edge {:.4})",
        r.history.len(),
        r.best_epoch,
        best.val_loss,
        best.node_acc,
        best.edge_acc
    )?;
    Ok(())
}

struct Loaded<T: Float> {
    model: Model,
    params: ParamStore<T>,
    meta: CheckpointMeta,
    vocab: Vocabulary,
}

fn load_checkpoint<T: Float>(ckpt: &Checkpoint) -> Result<Loaded<T>> {
    let (model, params, meta) = from_checkpoint::<T>(ckpt)?;
    let vocab = if meta.vocabulary.is_empty() {
        Vocabulary::crohme()
    } else {
        Vocabulary::new(meta.vocabulary.clone())?
    };
    Ok(Loaded { model, params, meta, vocab })
}

fn recognize_with<T: Float>(
    ckpt: &Checkpoint,
    items: &[(InkExpression, Option<LabelGraph>)],
) -> Result<Recognition> {
    let l = load_checkpoint::<T>(ckpt)?;
    let mut rec = Vec::with_capacity(items.len());
    let mut gold = Vec::with_capacity(items.len());
    for (ink, g) in items {
        let s = match g {
            Some(g) => Some(Sample::new(ink, g, &l.meta.graph, &l.vocab).with_context(|| ink.id.clone())?),
            None => None,
        };
        let input = match &s {
            Some(s) => s.clone(),
            None => Sample::unlabeled(ink, &l.meta.graph)?,
        };
        let r = recognize(&l.model, &l.params, &input, &l.meta.graph, &l.vocab).with_context(|| ink.id.clone())?;
        rec.push((ink.id.clone(), r));
        gold.push(s);
    }
    Ok((rec, gold, l.vocab))
}

/// Predictions, the labeled samples they were run on, and the vocabulary.
type Recognition = (Vec<(String, Recognized)>, Vec<Option<Sample>>, Vocabulary);

fn recognize_ckpt(path: &Path, items: &[(InkExpression, Option<LabelGraph>)]) -> Result<Recognition> {
    let ckpt = Checkpoint::load(path).with_context(|| path.display().to_string())?;
    // parameters are evaluated at the precision they were trained in
    let precision = ckpt
        .metadata
        .pointer("/train/precision")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or(Precision::F32);
    match precision {
        Precision::F32 => recognize_with::<f32>(&ckpt, items),
        Precision::F64 => recognize_with::<f64>(&ckpt, items),
    }
}

fn recognize_all(path: &Path, items: &[(InkExpression, Option<LabelGraph>)]) -> Result<Vec<(String, Recognized)>> {
    Ok(recognize_ckpt(path, items)?.0)
}

/// Evaluation items from a checkpoint or from `pred/{id}.lg` style files.
fn eval_items(
    o: &Overrides,
    data: &Path,
    checkpoint: Option<&Path>,
    pred: Option<&Path>,
) -> Result<Vec<EvalItem>> {
    let items = labeled(load_data(data)?)?;
    let with_gold: Vec<_> = items.iter().map(|(i, g)| (i.clone(), Some(g.clone()))).collect();
    let mut out = Vec::with_capacity(items.len());
    if let Some(ck) = checkpoint {
        let (rec, samples, vocab) = recognize_ckpt(ck, &with_gold)?;
        for ((id, r), ((_, gold), s)) in rec.into_iter().zip(items.iter().zip(samples)) {
            let s = s.expect("labeled input");
            let (_, dropped) = to_eslg(gold, &s.graph.adjacency, &vocab)?;
            out.push(EvalItem { id, pred: r.slg, gold: gold.clone(), pred_eslg: r.eslg, gold_eslg: s.eslg, dropped });
        }
        return Ok(out);
    }
    let dir = pred.expect("clap requires --checkpoint or --pred");
    let cfg = resolve_config(o)?;
    let vocab = Vocabulary::crohme();
    for (ink, gold) in &items {
        let name = file_stem(&ink.id);
        let p = [dir.join(format!("{name}.lg")), dir.join("pred").join(format!("{name}.lg"))]
            .into_iter()
            .find(|p| p.is_file())
            .ok_or_else(|| anyhow!("no prediction for {} in {}", ink.id, dir.display()))?;
        let pred = parse_lg(&fs::read(&p)?).with_context(|| p.display().to_string())?;
        if pred.len() != gold.len() {
            bail!("{}: prediction labels {} strokes, ground truth {}", ink.id, pred.len(), gold.len());
        }
        let graph = build_local_graph(ink, &cfg.graph)?;
        out.push(EvalItem::from_slgs(&ink.id, pred, gold.clone(), &graph.adjacency, &vocab)?);
    }
    Ok(out)
}

fn write_predictions<'a>(out: &Path, preds: impl Iterator<Item = (&'a str, &'a LabelGraph)>) -> Result<()> {
    let dir = out.join("pred");
    fs::create_dir_all(&dir)?;
    for (id, g) in preds {
        fs::write(dir.join(format!("{}.lg", file_stem(id))), serialize_lg(g))?;
    }
    Ok(())
}

fn write_lengths(outcomes: &[egat_core::evaluation::Outcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["key", "length", "correct", "total", "exp_rate"])?;
    for (key, name) in [(LengthKey::Strokes, "strokes"), (LengthKey::Symbols, "symbols")] {
        for (len, (ok, total, rate)) in length_breakdown(outcomes, key) {
            w.write_record([name.to_string(), len.to_string(), ok.to_string(), total.to_string(), rate.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
