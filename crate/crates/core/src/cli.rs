//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid arguments or input data, 2 training or
//! evaluation failure, 3 unsupported model file version.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{CsvLoader, Dataset, Task};
use crate::error::Error;
use crate::eval::{benchmark, generate_v_dataset, kfold_evaluate};
use crate::tree::{explain, Criterion, ModelTree, TrainConfig};
use crate::weak::{GdConfig, NormKind};

#[derive(Debug, Parser)]
#[command(name = "modeltree", version, about = "Shallow model trees with gradient-based splits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model tree and write it as JSON.
    Train(Opts),
    /// Score a CSV of feature rows with a saved model.
    Predict(Opts),
    /// k-fold cross-validation of one configuration.
    Evaluate(Opts),
    /// Cross-validate a grid of criteria and depths plus the plain weak model.
    Benchmark(Opts),
    /// Print split rules and ranked leaf weights of a saved model.
    Explain(Opts),
    /// Write the V-shaped synthetic dataset as CSV.
    Synth(Opts),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Clf,
    Reg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum CriterionArg {
    #[serde(rename = "mt-dt")]
    MtDt,
    #[serde(rename = "mt-g")]
    MtG,
    #[serde(rename = "mt-gr")]
    MtGr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NormArg {
    Z,
    Minmax,
    Identity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    #[default]
    Text,
    Json,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Clf => Task::Classification,
            TaskArg::Reg => Task::Regression,
        }
    }
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::MtDt => Criterion::Impurity,
            CriterionArg::MtG => Criterion::Gradient,
            CriterionArg::MtGr => Criterion::GradientRenorm,
        }
    }
}

impl From<NormArg> for NormKind {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Z => NormKind::Z,
            NormArg::Minmax => NormKind::MinMax,
            NormArg::Identity => NormKind::Identity,
        }
    }
}

/// Every flag the tool understands. Each subcommand accepts a subset; the
/// rest are rejected before any work starts.
#[derive(Clone, Debug, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Opts {
    /// TOML file with defaults for any of these flags (flags win).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    /// Columns to drop before encoding, e.g. row identifiers.
    #[arg(long, value_delimiter = ',')]
    pub ignore: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub criterion: Vec<CriterionArg>,
    #[arg(long, value_delimiter = ',')]
    pub depth: Vec<usize>,
    #[arg(long, value_enum)]
    pub norm: Option<NormArg>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long = "min-leaf")]
    pub min_leaf: Option<usize>,
    #[arg(long = "max-candidates")]
    pub max_candidates: Option<usize>,
    #[arg(long = "unweighted-gain")]
    pub unweighted_gain: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub stratify: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset name used in benchmark reports.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long = "top-k")]
    pub top_k: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Sample count for `synth`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Margin around the class boundary for `synth`.
    #[arg(long)]
    pub gap: Option<f64>,
}

const TRAIN_FLAGS: &[&str] = &[
    "criterion",
    "depth",
    "norm",
    "lr",
    "epochs",
    "tolerance",
    "min-leaf",
    "max-candidates",
    "unweighted-gain",
];
const DATA_FLAGS: &[&str] = &["data", "label", "task", "categorical", "ignore"];

impl Opts {
    /// Names of the flags given on the command line.
    fn present(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut mark = |on: bool, name: &'static str| {
            if on {
                out.push(name)
            }
        };
        mark(self.data.is_some(), "data");
        mark(self.label.is_some(), "label");
        mark(self.task.is_some(), "task");
        mark(!self.categorical.is_empty(), "categorical");
        mark(!self.ignore.is_empty(), "ignore");
        mark(!self.criterion.is_empty(), "criterion");
        mark(!self.depth.is_empty(), "depth");
        mark(self.norm.is_some(), "norm");
        mark(self.lr.is_some(), "lr");
        mark(self.epochs.is_some(), "epochs");
        mark(self.tolerance.is_some(), "tolerance");
        mark(self.min_leaf.is_some(), "min-leaf");
        mark(self.max_candidates.is_some(), "max-candidates");
        mark(self.unweighted_gain, "unweighted-gain");
        mark(self.k.is_some(), "k");
        mark(self.stratify, "stratify");
        mark(self.seed.is_some(), "seed");
        mark(self.threads.is_some(), "threads");
        mark(self.model.is_some(), "model");
        mark(self.out.is_some(), "out");
        mark(self.name.is_some(), "name");
        mark(self.top_k.is_some(), "top-k");
        mark(self.format.is_some(), "format");
        mark(self.n.is_some(), "n");
        mark(self.gap.is_some(), "gap");
        out
    }

    /// Flags win over the file.
    fn merged_with(self, file: Opts) -> Opts {
        fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
            flag.or(file)
        }
        fn pick_vec<T>(flag: Vec<T>, file: Vec<T>) -> Vec<T> {
            if flag.is_empty() {
                file
            } else {
                flag
            }
        }
        Opts {
            config: self.config,
            data: pick(self.data, file.data),
            label: pick(self.label, file.label),
            task: pick(self.task, file.task),
            categorical: pick_vec(self.categorical, file.categorical),
            ignore: pick_vec(self.ignore, file.ignore),
            criterion: pick_vec(self.criterion, file.criterion),
            depth: pick_vec(self.depth, file.depth),
            norm: pick(self.norm, file.norm),
            lr: pick(self.lr, file.lr),
            epochs: pick(self.epochs, file.epochs),
            tolerance: pick(self.tolerance, file.tolerance),
            min_leaf: pick(self.min_leaf, file.min_leaf),
            max_candidates: pick(self.max_candidates, file.max_candidates),
            unweighted_gain: self.unweighted_gain || file.unweighted_gain,
            k: pick(self.k, file.k),
            stratify: self.stratify || file.stratify,
            seed: pick(self.seed, file.seed),
            threads: pick(self.threads, file.threads),
            model: pick(self.model, file.model),
            out: pick(self.out, file.out),
            name: pick(self.name, file.name),
            top_k: pick(self.top_k, file.top_k),
            format: pick(self.format, file.format),
            n: pick(self.n, file.n),
            gap: pick(self.gap, file.gap),
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Benchmark(_) => "benchmark",
            Command::Explain(_) => "explain",
            Command::Synth(_) => "synth",
        }
    }

    fn opts(&self) -> &Opts {
        match self {
            Command::Train(o)
            | Command::Predict(o)
            | Command::Evaluate(o)
            | Command::Benchmark(o)
            | Command::Explain(o)
            | Command::Synth(o) => o,
        }
    }

    fn allowed(&self) -> Vec<&'static str> {
        let mut v: Vec<&'static str> = vec!["threads"];
        match self {
            Command::Train(_) => {
                v.extend(DATA_FLAGS);
                v.extend(TRAIN_FLAGS);
                v.extend(["seed", "model"]);
            }
            Command::Evaluate(_) => {
                v.extend(DATA_FLAGS);
                v.extend(TRAIN_FLAGS);
                v.extend(["seed", "k", "stratify"]);
            }
            Command::Benchmark(_) => {
                v.extend(DATA_FLAGS);
                v.extend(TRAIN_FLAGS);
                v.extend(["seed", "k", "stratify", "out", "name"]);
            }
            Command::Predict(_) => v.extend(["data", "model", "out"]),
            Command::Explain(_) => v.extend(["model", "out", "top-k", "format"]),
            Command::Synth(_) => v.extend(["n", "gap", "seed", "out"]),
        }
        v
    }
}

/// Category of a failure, mapped onto the exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Input(String),
    Training(String),
    Version(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Input(_) => 1,
            Failure::Training(_) => 2,
            Failure::Version(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::FormatVersion { .. } => Failure::Version(msg),
            Error::Divergence { .. }
            | Error::NonFiniteGradient { .. }
            | Error::SingleClass
            | Error::Rsquared(_)
            | Error::FoldMissingClass { .. } => Failure::Training(msg),
            _ => Failure::Input(msg),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> CmdResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_fail(p, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Input(e.to_string())),
    }
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, Failure> {
    v.as_ref()
        .ok_or_else(|| Failure::Usage(format!("missing required flag --{flag}")))
}

/// Everything a run depends on, echoed to stderr before work starts.
#[derive(Debug, Serialize)]
struct Resolved<'a> {
    command: &'a str,
    opts: &'a Opts,
    train: Option<&'a TrainConfig<f64>>,
}

fn train_config(o: &Opts, single_depth: bool) -> Result<TrainConfig<f64>, Failure> {
    let defaults = TrainConfig::<f64>::default();
    if single_depth && o.depth.len() > 1 {
        return Err(Failure::Usage("--depth takes a single value here".into()));
    }
    if single_depth && o.criterion.len() > 1 {
        return Err(Failure::Usage("--criterion takes a single value here".into()));
    }
    let cfg = TrainConfig {
        max_depth: o.depth.first().copied().unwrap_or(defaults.max_depth),
        criterion: o
            .criterion
            .first()
            .map(|&c| c.into())
            .unwrap_or(defaults.criterion),
        normalization: o.norm.map(Into::into).unwrap_or(defaults.normalization),
        gd: GdConfig {
            learning_rate: o.lr.unwrap_or(defaults.gd.learning_rate),
            max_epochs: o.epochs.unwrap_or(defaults.gd.max_epochs),
            tolerance: o.tolerance.unwrap_or(defaults.gd.tolerance),
            ..defaults.gd
        },
        min_samples_leaf: o.min_leaf,
        max_candidates: o.max_candidates.unwrap_or(defaults.max_candidates),
        unweighted_gain: o.unweighted_gain,
        seed: o.seed.unwrap_or(defaults.seed),
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn load_data(o: &Opts) -> Result<Dataset<f64>, Failure> {
    let path = require(&o.data, "data")?;
    let label = require(&o.label, "label")?;
    let task: Task = (*require(&o.task, "task")?).into();
    Ok(CsvLoader::new(label.clone(), task)
        .categorical(&o.categorical)
        .ignore(&o.ignore)
        .load(path)?)
}

fn load_model(o: &Opts) -> Result<ModelTree<f64>, Failure> {
    let path = require(&o.model, "model")?;
    let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    Ok(ModelTree::from_json(&text)?)
}

fn echo(cmd: &str, o: &Opts, train: Option<&TrainConfig<f64>>, stderr: &mut dyn Write) {
    let resolved = Resolved {
        command: cmd,
        opts: o,
        train,
    };
    if let Ok(line) = serde_json::to_string(&resolved) {
        let _ = writeln!(stderr, "config: {line}");
    }
}

fn cmd_train(o: &Opts, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let cfg = train_config(o, true)?;
    let model_path = require(&o.model, "model")?;
    echo("train", o, Some(&cfg), stderr);
    let data = load_data(o)?;
    let tree = crate::tree::build_tree(&data, &crate::data::RowIndexSet::all(data.n_rows()), &cfg)
        .map_err(|e| match Failure::from(e) {
            Failure::Input(m) => Failure::Training(m),
            f => f,
        })?;
    let json = tree.to_json()?;
    fs::write(model_path, json).map_err(|e| io_fail(model_path, e))?;
    let (internal, leaves) = tree.root.count_nodes();
    let summary = format!(
        "trained {} tree: depth {}, {} internal / {} leaf nodes, {} rows\n{}",
        tree.config.criterion.short_name(),
        tree.root.depth(),
        internal,
        leaves,
        data.n_rows(),
        tree.summary()
    );
    write_out(None, &summary, stdout)
}

/// Parses a feature CSV with or without a header into rows of length `m`.
fn read_feature_rows(path: &Path, names: &[String]) -> Result<Vec<Vec<f64>>, Failure> {
    let m = names.len();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let records: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Input(e.to_string()))?;
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let is_header = first.iter().any(|c| c.parse::<f64>().is_err());
    let (columns, body): (Vec<usize>, &[csv::StringRecord]) = if is_header {
        let header: Vec<&str> = first.iter().collect();
        let by_name: Option<Vec<usize>> = names
            .iter()
            .map(|n| header.iter().position(|h| h == n))
            .collect();
        match by_name {
            Some(cols) => (cols, &records[1..]),
            None if header.len() == m => ((0..m).collect(), &records[1..]),
            None => {
                return Err(Failure::Input(format!(
                    "header has {} columns and lacks model features; expected {m} features",
                    header.len()
                )))
            }
        }
    } else {
        ((0..m).collect(), &records[..])
    };
    body.iter()
        .enumerate()
        .map(|(r, rec)| {
            let line = r + 1 + usize::from(is_header);
            if !is_header && rec.len() != m {
                return Err(Failure::Input(format!(
                    "line {line}: expected {m} features, got {}",
                    rec.len()
                )));
            }
            columns
                .iter()
                .map(|&c| {
                    let cell = rec.get(c).unwrap_or("");
                    match cell.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(Failure::Input(format!(
                            "line {line}, column {}: cannot use '{cell}' as a feature",
                            c + 1
                        ))),
                    }
                })
                .collect()
        })
        .collect()
}

fn cmd_predict(o: &Opts, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    echo("predict", o, None, stderr);
    let tree = load_model(o)?;
    let data = require(&o.data, "data")?;
    let rows = read_feature_rows(data, &tree.feature_names)?;
    let mut text = String::new();
    for x in &rows {
        text.push_str(&format!("{}\n", tree.predict(x)?));
    }
    write_out(o.out.as_deref(), &text, stdout)
}

fn cmd_evaluate(o: &Opts, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let cfg = train_config(o, true)?;
    echo("evaluate", o, Some(&cfg), stderr);
    let data = load_data(o)?;
    let k = o.k.unwrap_or(4);
    let res = kfold_evaluate(&data, &cfg, k, o.seed.unwrap_or(0), o.stratify)?;
    let mut text = String::new();
    for (f, fold) in res.folds.iter().enumerate() {
        text.push_str(&format!("fold {f}\t{}\t{:.6}\n", res.metric.name(), fold.value));
    }
    text.push_str(&format!("mean\t{}\t{:.6}\n", res.metric.name(), res.mean));
    write_out(None, &text, stdout)
}

fn cmd_benchmark(o: &Opts, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let cfg = train_config(o, false)?;
    echo("benchmark", o, Some(&cfg), stderr);
    let data = load_data(o)?;
    let methods: Vec<Criterion> = if o.criterion.is_empty() {
        vec![Criterion::Gradient, Criterion::GradientRenorm, Criterion::Impurity]
    } else {
        o.criterion.iter().map(|&c| c.into()).collect()
    };
    let depths = if o.depth.is_empty() {
        vec![1, 2, 3]
    } else {
        o.depth.clone()
    };
    let name = o.name.clone().unwrap_or_else(|| {
        o.data
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    });
    let report = benchmark(
        &data,
        &name,
        &cfg,
        &methods,
        &depths,
        o.k.unwrap_or(4),
        o.seed.unwrap_or(0),
        o.stratify,
    )?;
    if let Some(path) = &o.out {
        fs::write(path, report.to_csv()?).map_err(|e| io_fail(path, e))?;
    }
    write_out(None, &report.to_table(), stdout)
}

fn cmd_explain(o: &Opts, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    echo("explain", o, None, stderr);
    let tree = load_model(o)?;
    let ex = explain(&tree, o.top_k.unwrap_or(5).max(1));
    let text = match o.format.unwrap_or_default() {
        FormatArg::Text => ex.to_string(),
        FormatArg::Json => serde_json::to_string_pretty(&ex).map_err(Error::from)? + "\n",
    };
    write_out(o.out.as_deref(), &text, stdout)
}

fn cmd_synth(o: &Opts, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    echo("synth", o, None, stderr);
    let data: Dataset<f64> =
        generate_v_dataset(o.n.unwrap_or(2000), o.gap.unwrap_or(0.05), o.seed.unwrap_or(0))
            .map_err(|e| Failure::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf, "y")?;
    write_out(
        o.out.as_deref(),
        &String::from_utf8(buf).expect("csv output is utf-8"),
        stdout,
    )
}

/// Fills the defaults a subcommand relies on so the echoed config is complete.
fn with_defaults(cmd: &Command, mut o: Opts) -> Opts {
    match cmd {
        Command::Train(_) => o.seed = o.seed.or(Some(0)),
        Command::Evaluate(_) | Command::Benchmark(_) => {
            o.seed = o.seed.or(Some(0));
            o.k = o.k.or(Some(4));
        }
        Command::Explain(_) => {
            o.top_k = o.top_k.or(Some(5));
            o.format = o.format.or(Some(FormatArg::Text));
        }
        Command::Synth(_) => {
            o.seed = o.seed.or(Some(0));
            o.n = o.n.or(Some(2000));
            o.gap = o.gap.or(Some(0.05));
        }
        Command::Predict(_) => {}
    }
    o
}

fn dispatch(cmd: &Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let given = cmd.opts().present();
    let allowed = cmd.allowed();
    let mut rejected: Vec<&str> = given
        .iter()
        .copied()
        .filter(|f| *f != "config" && !allowed.contains(f))
        .collect();
    rejected.dedup();
    if !rejected.is_empty() {
        let flags: Vec<String> = rejected.iter().map(|f| format!("--{f}")).collect();
        return Err(Failure::Usage(format!(
            "{} does not accept {}",
            cmd.name(),
            flags.join(", ")
        )));
    }

    let opts = match &cmd.opts().config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
            let file: Opts = toml::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            cmd.opts().clone().merged_with(file)
        }
        None => cmd.opts().clone(),
    };
    let opts = with_defaults(cmd, opts);

    let work = |stdout: &mut dyn Write, stderr: &mut dyn Write| match cmd {
        Command::Train(_) => cmd_train(&opts, stdout, stderr),
        Command::Predict(_) => cmd_predict(&opts, stdout, stderr),
        Command::Evaluate(_) => cmd_evaluate(&opts, stdout, stderr),
        Command::Benchmark(_) => cmd_benchmark(&opts, stdout, stderr),
        Command::Explain(_) => cmd_explain(&opts, stdout, stderr),
        Command::Synth(_) => cmd_synth(&opts, stdout, stderr),
    };
    match opts.threads {
        Some(0) => Err(Failure::Usage("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let (res, out, err) = pool.install(|| {
                let (mut out, mut err) = (Vec::new(), Vec::new());
                let res = work(&mut out, &mut err);
                (res, out, err)
            });
            let _ = stderr.write_all(&err);
            stdout
                .write_all(&out)
                .map_err(|e| Failure::Input(e.to_string()))?;
            res
        }
        None => work(stdout, stderr),
    }
}

/// Runs the tool on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(failure) => {
            let code = failure.code();
            match failure {
                Failure::Usage(msg) => {
                    let mut cmd = Cli::command();
                    let usage = cmd
                        .find_subcommand_mut(cli.command.name())
                        .map(|c| c.render_usage().to_string())
                        .unwrap_or_default();
                    let _ = writeln!(stderr, "error: {msg}\n\n{usage}");
                }
                Failure::Input(msg) | Failure::Training(msg) | Failure::Version(msg) => {
                    let _ = writeln!(stderr, "error: {msg}");
                }
            }
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("modeltree").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn rejects_flags_foreign_to_the_subcommand() {
        let (code, _, err) = run_args(&["train", "--k", "4", "--data", "x.csv"]);
        assert_eq!(code, 1);
        assert!(err.contains("--k"));
        assert!(err.contains("Usage"));
    }

    #[test]
    fn unknown_flag_exits_one() {
        let (code, _, _) = run_args(&["train", "--bogus"]);
        assert_eq!(code, 1);
        let (code, _, _) = run_args(&["--help"]);
        assert_eq!(code, 0);
    }

    #[test]
    fn missing_data_file_is_an_input_error() {
        let (code, _, err) = run_args(&[
            "evaluate", "--data", "/nonexistent.csv", "--label", "y", "--task", "clf",
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("nonexistent"));
    }

    #[test]
    fn config_file_supplies_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "n = 150\ngap = 0.1\nseed = 3\n").unwrap();
        let (code, out, err) = run_args(&["synth", "--config", cfg.to_str().unwrap(), "--seed", "4"]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(out.lines().count(), 151);
        assert!(err.contains("\"seed\":4"));
        let (_, same, _) = run_args(&["synth", "--n", "150", "--gap", "0.1", "--seed", "4"]);
        assert_eq!(out, same);
    }

    #[test]
    fn synth_validates_parameters() {
        let (code, _, _) = run_args(&["synth", "--n", "10"]);
        assert_eq!(code, 1);
    }
}
