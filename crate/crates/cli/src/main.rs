use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use xmatch::dataset::{read_splits, synth_dataset, write_splits, DatasetManifest};
use xmatch::graph::{graph_from_image, read_graph_store, write_graph_store, ModalGraph};
use xmatch::imaging::{extract_contours, load_image, slic_segment, Modality};
use xmatch::pipeline::{build_graphs, evaluate_split, resolve_split, train, RunConfig};
use xmatch::retrieval::{
    ranked_list, relevance_sets, roc_points, score_independent, score_paired, split_scores,
    MetricsReport, ScoreMatrix, ScoreMode,
};
use xmatch::training::{
    load_checkpoint, save_checkpoint, write_epoch_log, Split, SplitAssignment,
};
use xmatch::{Error, Result};

const GRAPH_STORE: &str = "graphs.jsonl";
const SPLITS_FILE: &str = "splits.csv";
const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Parser)]
#[command(name = "xmatch", version, about = "Cross-modal face retrieval over superpixel graphs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

/// Flags shared by every command. Any flag set here beats the config file.
#[derive(Args)]
struct Common {
    /// JSON config with flat kebab-case keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true)]
    image_size: Option<usize>,
    #[arg(long, global = true)]
    n_segments: Option<usize>,
    /// KNN neighbours per node.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    backbone: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    score_mode: Option<String>,
    #[arg(long, global = true)]
    relevance: Option<String>,
    /// Cutoffs for Recall@K / mAP@K, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Any other config key, as `key=json-value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic face/skull dataset.
    Synth {
        #[arg(long, default_value_t = 40)]
        subjects: usize,
    },
    /// Segment one image into superpixels.
    Segment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "face")]
        modality: Modality,
    },
    /// Build the graph store for every manifest row.
    Graph {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train on a graph store; writes a checkpoint and epoch log.
    Train {
        /// Graph store file, or a directory holding `graphs.jsonl`.
        #[arg(long)]
        graphs: PathBuf,
        /// `subject_id,split` CSV; defaults to `splits.csv` beside the store.
        #[arg(long)]
        splits: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        splits: Option<PathBuf>,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Rank a gallery of faces for one query image.
    Query {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "skull")]
        modality: Modality,
        /// Manifest whose face rows form the gallery.
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long, default_value_t = 5)]
        topk: usize,
    },
    /// Train and evaluate once per KNN k.
    SweepK {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "k-values", value_delimiter = ',', default_values_t = vec![4, 6, 8, 10])]
        k_values: Vec<usize>,
    },
    /// Train and evaluate every {CA, OT} on/off combination.
    Ablate {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        splits: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

/// Defaults, overlaid by the config file, overlaid by flags.
fn effective_config(c: &Common) -> Result<RunConfig> {
    let mut obj = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Error::Config(format!("{}: expected a JSON object", p.display()))),
                Err(e) => return Err(Error::Config(format!("{}: {e}", p.display()))),
            }
        }
        None => Map::new(),
    };
    let mut put = |k: &str, v: Value| {
        obj.insert(k.to_string(), v);
    };
    if let Some(v) = c.seed {
        put("seed", v.into());
    }
    if let Some(v) = c.threads {
        put("threads", v.into());
    }
    if let Some(v) = c.image_size {
        put("image-size", v.into());
    }
    if let Some(v) = c.n_segments {
        put("n-segments", v.into());
    }
    if let Some(v) = c.k {
        put("k", v.into());
    }
    if let Some(v) = &c.backbone {
        put("backbone", v.as_str().into());
    }
    if let Some(v) = c.epochs {
        put("epochs", v.into());
    }
    if let Some(v) = c.learning_rate {
        put("learning-rate", v.into());
    }
    if let Some(v) = c.batch_size {
        put("batch-size", v.into());
    }
    if let Some(v) = &c.score_mode {
        put("score-mode", v.as_str().into());
    }
    if let Some(v) = &c.relevance {
        put("relevance", v.as_str().into());
    }
    if let Some(v) = &c.ks {
        put("ks", v.clone().into());
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        put(k, v);
    }
    let cfg: RunConfig =
        serde_json::from_value(Value::Object(obj)).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli.common)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out = cli.common.out.as_path();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    cfg.echo(out)?;
    match cli.cmd {
        Command::Synth { subjects } => {
            let m = synth_dataset(out, subjects, cfg.seed, cfg.image_size)?;
            eprintln!("wrote {} images for {subjects} subjects", m.rows.len());
            Ok(())
        }
        Command::Segment { image, modality } => cmd_segment(&image, modality, &cfg, out),
        Command::Graph { manifest } => cmd_graph(&manifest, &cfg, out),
        Command::Train { graphs, splits } => cmd_train(&graphs, splits.as_deref(), &cfg, out),
        Command::Eval {
            graphs,
            checkpoint,
            splits,
            split,
        } => cmd_eval(&graphs, &checkpoint, splits.as_deref(), &split, &cfg, out),
        Command::Query {
            checkpoint,
            image,
            modality,
            gallery,
            topk,
        } => cmd_query(&checkpoint, &image, modality, &gallery, topk, &cfg, out),
        Command::SweepK { manifest, k_values } => cmd_sweep_k(&manifest, &k_values, &cfg, out),
        Command::Ablate { graphs, splits } => cmd_ablate(&graphs, splits.as_deref(), &cfg, out),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    fs::write(path, s).map_err(|e| io_err(path, e))
}

fn cmd_segment(image: &Path, modality: Modality, cfg: &RunConfig, out: &Path) -> Result<()> {
    let img = load_image(image, (cfg.image_size, cfg.image_size))?.with_labels(modality, "");
    let params = cfg.graph_params(modality == Modality::Sketch);
    let img = if params.contour_blend > 0.0 {
        extract_contours(&img, params.contour_blend)
    } else {
        img
    };
    let seg = slic_segment(&img, &params.slic)?;
    eprintln!("{} superpixels", seg.n_segments);
    write_json(&seg, &out.join("segmentation.json"))
}

#[derive(serde::Serialize)]
struct NodeStats {
    graphs: usize,
    min_nodes: usize,
    max_nodes: usize,
    mean_nodes: f64,
}

fn node_stats(graphs: &[ModalGraph]) -> NodeStats {
    let counts: Vec<usize> = graphs.iter().map(|g| g.n_nodes()).collect();
    NodeStats {
        graphs: counts.len(),
        min_nodes: counts.iter().copied().min().unwrap_or(0),
        max_nodes: counts.iter().copied().max().unwrap_or(0),
        mean_nodes: if counts.is_empty() {
            0.0
        } else {
            counts.iter().sum::<usize>() as f64 / counts.len() as f64
        },
    }
}

fn cmd_graph(manifest: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let m = DatasetManifest::read(manifest)?;
    m.validate()?;
    let graphs = build_graphs(&m, cfg)?;
    write_graph_store(&graphs, &out.join(GRAPH_STORE))?;
    if let Some(split) = m.declared_splits()? {
        write_splits(&split, &out.join(SPLITS_FILE))?;
    }
    let stats = node_stats(&graphs);
    eprintln!(
        "{} graphs, nodes min {} / mean {:.1} / max {}",
        stats.graphs, stats.min_nodes, stats.mean_nodes, stats.max_nodes
    );
    write_json(&stats, &out.join("graph_stats.json"))
}

/// Graph store plus the split file beside it, when one exists.
fn load_store(path: &Path, splits: Option<&Path>) -> Result<(Vec<ModalGraph>, Option<SplitAssignment>)> {
    let (store, dir) = if path.is_dir() {
        (path.join(GRAPH_STORE), path.to_path_buf())
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), dir)
    };
    let graphs = read_graph_store(&store)?;
    let split = match splits {
        Some(p) => Some(read_splits(p)?),
        None if dir.join(SPLITS_FILE).is_file() => Some(read_splits(&dir.join(SPLITS_FILE))?),
        None => None,
    };
    Ok((graphs, split))
}

fn cmd_train(store: &Path, splits: Option<&Path>, cfg: &RunConfig, out: &Path) -> Result<()> {
    let (graphs, declared) = load_store(store, splits)?;
    let split = resolve_split(&graphs, declared, cfg)?;
    let mut progress = |l: &xmatch::training::EpochLog| {
        let val = l.val_recall_at_1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        eprintln!("epoch {:>3}  loss {:.6}  val R@1 {val}", l.epoch, l.train_loss);
    };
    let outcome = train(&graphs, &split, cfg, Some(&mut progress))?;
    save_checkpoint(&outcome.model, &outcome.manifest, &out.join(CHECKPOINT_DIR))?;
    write_epoch_log(&outcome.log, &out.join("epoch_log.csv"))?;
    write_splits(&split, &out.join(SPLITS_FILE))?;
    eprintln!("best epoch {}", outcome.best_epoch);
    Ok(())
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    s.parse::<Split>().map(Some)
}

fn write_roc(scores: &ScoreMatrix, relevant: &[Vec<usize>], path: &Path) -> Result<()> {
    let (genuine, impostor) = split_scores(scores, relevant);
    let mut s = String::from("threshold,tpr,fpr\n");
    for p in roc_points(&genuine, &impostor) {
        s.push_str(&format!("{},{},{}\n", p.threshold, p.tpr, p.fpr));
    }
    fs::write(path, s).map_err(|e| io_err(path, e))
}

fn cmd_eval(
    store: &Path,
    checkpoint: &Path,
    splits: Option<&Path>,
    which: &str,
    cfg: &RunConfig,
    out: &Path,
) -> Result<()> {
    let which = parse_split(which)?;
    let (graphs, declared) = load_store(store, splits)?;
    let (model, _) = load_checkpoint(checkpoint)?;
    let split = match which {
        Some(_) => resolve_split(&graphs, declared, cfg)?,
        None => graphs.iter().map(|g| (g.subject_id.clone(), Split::Test)).collect(),
    };
    let (report, scores) = evaluate_split(&graphs, &split, which.unwrap_or(Split::Test), &model, cfg)?;
    let (queries, gallery) = xmatch::training::split_queries_gallery(&graphs, &split, which.unwrap_or(Split::Test));
    let relevant = relevance_sets(&queries, &gallery, cfg.relevance);
    write_json(&report, &out.join("metrics.json"))?;
    write_roc(&scores, &relevant, &out.join("roc.csv"))?;
    print_report(&report);
    Ok(())
}

fn print_report(r: &MetricsReport) {
    for (k, v) in &r.recall_at {
        eprintln!("R@{k} {v:.4}  mAP@{k} {:.4}", r.map_at[k]);
    }
    match r.roc_auc {
        Some(a) => eprintln!("ROC-AUC {a:.4}"),
        None => eprintln!("ROC-AUC undefined"),
    }
}

fn cmd_query(
    checkpoint: &Path,
    image: &Path,
    modality: Modality,
    gallery: &Path,
    topk: usize,
    cfg: &RunConfig,
    out: &Path,
) -> Result<()> {
    if !modality.is_query() {
        return Err(Error::Argument(format!("`{modality}` is not a query modality")));
    }
    let (model, _) = load_checkpoint(checkpoint)?;
    let mut manifest = DatasetManifest::read(gallery)?;
    manifest.rows.retain(|r| r.modality == Modality::Face);
    if manifest.rows.is_empty() {
        return Err(Error::Argument(format!("{} lists no face images", gallery.display())));
    }
    let faces = build_graphs(&manifest, cfg)?;
    let img = load_image(image, (cfg.image_size, cfg.image_size))?.with_labels(modality, "query");
    let mut q = graph_from_image(&img, &cfg.graph_params(modality == Modality::Sketch))?;
    q.graph_id = image.display().to_string();
    let gallery_refs: Vec<&ModalGraph> = faces.iter().collect();
    let scores = match cfg.score_mode {
        ScoreMode::Paired => score_paired(&[&q], &gallery_refs, &model)?.0,
        ScoreMode::Independent => score_independent(&[&q], &gallery_refs, &model)?,
    };
    let mut s = String::from("rank,gallery_id,subject_id,score\n");
    for (rank, g, score) in ranked_list(scores.row(0), topk) {
        s.push_str(&format!("{rank},{},{},{score}\n", scores.gallery_ids[g], scores.gallery_subjects[g]));
    }
    let path = out.join("ranked.csv");
    fs::write(&path, &s).map_err(|e| io_err(&path, e))?;
    print!("{s}");
    Ok(())
}

/// Header cells and row cells for the recall/mAP columns of a summary table.
fn metric_header(ks: &[usize]) -> String {
    let r: Vec<String> = ks.iter().map(|k| format!("recall@{k}")).collect();
    let m: Vec<String> = ks.iter().map(|k| format!("map@{k}")).collect();
    format!("{},{}", r.join(","), m.join(","))
}

fn metric_cells(r: &MetricsReport) -> String {
    let cells: Vec<String> = r.recall_at.values().chain(r.map_at.values()).map(|v| v.to_string()).collect();
    cells.join(",")
}

/// Trains on the split's train part and reports test metrics.
fn train_and_test(graphs: &[ModalGraph], split: &SplitAssignment, cfg: &RunConfig) -> Result<MetricsReport> {
    let outcome = train(graphs, split, cfg, None)?;
    Ok(evaluate_split(graphs, split, Split::Test, &outcome.model, cfg)?.0)
}

fn cmd_sweep_k(manifest: &Path, k_values: &[usize], cfg: &RunConfig, out: &Path) -> Result<()> {
    if k_values.is_empty() {
        return Err(Error::Argument("no k values given".into()));
    }
    let m = DatasetManifest::read(manifest)?;
    m.validate()?;
    let mut table = format!("k,{}\n", metric_header(&cfg.ks));
    let mut reports = Vec::new();
    for &k in k_values {
        let run = RunConfig { k: Some(k), ..cfg.clone() };
        run.validate()?;
        let graphs = build_graphs(&m, &run)?;
        let split = resolve_split(&graphs, m.declared_splits()?, &run)?;
        let report = train_and_test(&graphs, &split, &run)?;
        eprintln!("k = {k}: R@{} {:.4}", cfg.ks[0], report.recall_at[&cfg.ks[0]]);
        table.push_str(&format!("{k},{}\n", metric_cells(&report)));
        reports.push(serde_json::json!({ "k": k, "metrics": report }));
    }
    let path = out.join("sweep_k.csv");
    fs::write(&path, &table).map_err(|e| io_err(&path, e))?;
    print!("{table}");
    write_json(&reports, &out.join("sweep_k.json"))
}

fn cmd_ablate(store: &Path, splits: Option<&Path>, cfg: &RunConfig, out: &Path) -> Result<()> {
    let (graphs, declared) = load_store(store, splits)?;
    let split = resolve_split(&graphs, declared, cfg)?;
    let mut table = format!("ca,ot,{}\n", metric_header(&cfg.ks));
    let mut reports = Vec::new();
    for (ca, ot) in [(true, true), (true, false), (false, true), (false, false)] {
        let run = RunConfig { ca, ot, ..cfg.clone() };
        let report = train_and_test(&graphs, &split, &run)?;
        table.push_str(&format!("{ca},{ot},{}\n", metric_cells(&report)));
        reports.push(serde_json::json!({ "ca": ca, "ot": ot, "metrics": report }));
    }
    let path = out.join("ablation.csv");
    fs::write(&path, &table).map_err(|e| io_err(&path, e))?;
    print!("{table}");
    write_json(&reports, &out.join("ablation.json"))
}
