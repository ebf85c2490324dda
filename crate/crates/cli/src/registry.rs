//! Every run setting the CLI understands, with its parser, printer and the
//! subcommands that read it.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adamore::eval::{MotivationConfig, ProbeConfig, SensitivityAxis};
use adamore::filters::{parse_specs, FilterSpec};
use adamore::graph::SbmConfig;
use adamore::moe::ExpertKind;
use adamore::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Cmd {
    Train,
    Embed,
    EvalProbe,
    EvalCluster,
    EvalFewshot,
    BenchStability,
    ExpOracleWeights,
    ExpNoise,
    ExpSensitivity,
    Motivate,
    GenSbm,
    PrintConfig,
}

impl Cmd {
    pub const ALL: [Cmd; 12] = [
        Cmd::Train,
        Cmd::Embed,
        Cmd::EvalProbe,
        Cmd::EvalCluster,
        Cmd::EvalFewshot,
        Cmd::BenchStability,
        Cmd::ExpOracleWeights,
        Cmd::ExpNoise,
        Cmd::ExpSensitivity,
        Cmd::Motivate,
        Cmd::GenSbm,
        Cmd::PrintConfig,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cmd::Train => "train",
            Cmd::Embed => "embed",
            Cmd::EvalProbe => "eval-probe",
            Cmd::EvalCluster => "eval-cluster",
            Cmd::EvalFewshot => "eval-fewshot",
            Cmd::BenchStability => "bench-stability",
            Cmd::ExpOracleWeights => "exp-oracle-weights",
            Cmd::ExpNoise => "exp-noise",
            Cmd::ExpSensitivity => "exp-sensitivity",
            Cmd::Motivate => "motivate",
            Cmd::GenSbm => "gen-sbm",
            Cmd::PrintConfig => "print-config",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Cmd::Train => "Train a model; write metrics, checkpoint, embeddings and exports",
            Cmd::Embed => "Embed a graph with a saved checkpoint",
            Cmd::EvalProbe => "Linear-probe node classification on embeddings",
            Cmd::EvalCluster => "k-means clustering metrics (ACC, NMI, ARI) on embeddings",
            Cmd::EvalFewshot => "Prototype few-shot node classification on embeddings",
            Cmd::BenchStability => "Loss-curve stability against flat mixture-of-experts baselines",
            Cmd::ExpOracleWeights => "Train with label-derived edge weights of varying distinctiveness",
            Cmd::ExpNoise => "Train with oracle edge weights corrupted by Gaussian noise",
            Cmd::ExpSensitivity => "Sweep lambda_load or the hidden width",
            Cmd::Motivate => "Per-bucket filter accuracy by local homophily and clustering",
            Cmd::GenSbm => "Generate a stochastic block model graph directory",
            Cmd::PrintConfig => "Print every setting with its value and owning module",
        }
    }
}

use Cmd::*;

const TRAINING: &[Cmd] = &[
    Train,
    Embed,
    EvalProbe,
    EvalCluster,
    EvalFewshot,
    BenchStability,
    ExpOracleWeights,
    ExpNoise,
    ExpSensitivity,
];
const EVALS: &[Cmd] = &[EvalProbe, EvalCluster, EvalFewshot];
const MULTI_SEED: &[Cmd] = &[BenchStability, ExpOracleWeights, ExpNoise, ExpSensitivity];
const PROBING: &[Cmd] = &[EvalProbe, ExpOracleWeights, ExpNoise, ExpSensitivity, Motivate];
const WITH_DATA: &[Cmd] = &[
    Train,
    Embed,
    EvalProbe,
    EvalCluster,
    EvalFewshot,
    BenchStability,
    ExpOracleWeights,
    ExpNoise,
    ExpSensitivity,
    Motivate,
];
const WITH_OUT: &[Cmd] = &[
    Train,
    Embed,
    EvalProbe,
    EvalCluster,
    EvalFewshot,
    BenchStability,
    ExpOracleWeights,
    ExpNoise,
    ExpSensitivity,
    Motivate,
    GenSbm,
];
const SEEDED: &[Cmd] = &[
    Train,
    Embed,
    EvalProbe,
    EvalCluster,
    EvalFewshot,
    BenchStability,
    ExpOracleWeights,
    ExpNoise,
    ExpSensitivity,
    Motivate,
    GenSbm,
];

/// Resolved settings of one invocation.
#[derive(Debug, Clone)]
pub struct Settings {
    pub train: TrainConfig,
    pub n_exp: usize,
    pub probe: ProbeConfig,
    pub sbm: SbmConfig,
    pub motivation: MotivationConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub jobs: usize,
    pub seeds: Vec<u64>,
    pub clusters: usize,
    pub kmeans_restarts: usize,
    pub shots: Vec<usize>,
    pub tasks: usize,
    pub homogeneous: bool,
    pub oracle_mode: OracleKind,
    pub oracle_specs: Vec<(f64, f64)>,
    pub noise_base: (f64, f64),
    pub noise_ratios: Vec<f64>,
    pub noise_stddev: f64,
    pub sweep_axis: SensitivityAxis,
    pub sweep_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Distinct,
    Accuracy,
}

impl Default for Settings {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            n_exp: train.coh_bank.len(),
            train,
            probe: ProbeConfig::default(),
            sbm: SbmConfig::default(),
            motivation: MotivationConfig::default(),
            data: None,
            out: Some(PathBuf::from("out")),
            checkpoint: None,
            embeddings: None,
            weights: None,
            jobs: 1,
            seeds: (0..5).collect(),
            clusters: 0,
            kmeans_restarts: 10,
            shots: vec![1, 2, 3],
            tasks: adamore::eval::DEFAULT_TASKS,
            homogeneous: false,
            oracle_mode: OracleKind::Distinct,
            oracle_specs: vec![(0.9, 0.1), (0.7, 0.3), (0.5, 0.5)],
            noise_base: (0.9, 0.1),
            noise_ratios: vec![0.0, 0.2, 0.5, 0.8],
            noise_stddev: 0.5,
            sweep_axis: SensitivityAxis::LambdaLoad,
            sweep_values: vec![0.0, 0.1, 0.5, 1.0],
        }
    }
}

type Apply = fn(&mut Settings, &str) -> Result<(), String>;
type Show = fn(&Settings) -> String;

pub struct Key {
    pub name: &'static str,
    pub module: &'static str,
    pub help: &'static str,
    pub commands: &'static [Cmd],
    pub apply: Apply,
    pub show: Show,
}

impl Key {
    pub fn flag(&self) -> String {
        self.name.replace('_', "-")
    }

    pub fn used_by(&self, cmd: Cmd) -> bool {
        cmd == PrintConfig || self.commands.contains(&cmd)
    }
}

fn num<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: Display,
{
    s.trim().parse::<T>().map_err(|e| format!("{s:?}: {e}"))
}

fn parsed<T: FromStr<Err = adamore::Error>>(s: &str) -> Result<T, String> {
    s.parse::<T>().map_err(|e| e.to_string())
}

fn boolean(s: &str) -> Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(format!("{other:?} is not a boolean")),
    }
}

fn list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    s.split(',').filter(|t| !t.trim().is_empty()).map(num).collect()
}

fn pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once('/')
        .ok_or_else(|| format!("{s:?}: expected a pair written a/b"))?;
    Ok((num(a)?, num(b)?))
}

fn pairs(s: &str) -> Result<Vec<(f64, f64)>, String> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(pair).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show_pairs(xs: &[(f64, f64)]) -> String {
    xs.iter().map(|(a, b)| format!("{a}/{b}")).collect::<Vec<_>>().join(",")
}

fn path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

fn opt_path(s: &str) -> Option<PathBuf> {
    let s = s.trim();
    (!s.is_empty()).then(|| PathBuf::from(s))
}

fn spec(s: &str) -> Result<FilterSpec, String> {
    parsed(s)
}

macro_rules! key {
    ($name:literal, $module:literal, $cmds:expr, $help:literal, |$s:ident, $v:ident| $apply:expr, |$t:ident| $show:expr) => {
        Key {
            name: $name,
            module: $module,
            help: $help,
            commands: $cmds,
            apply: |$s, $v| {
                $apply;
                Ok(())
            },
            show: |$t| $show,
        }
    };
}

/// Registry order is application order: `n_exp` precedes the explicit banks.
pub static KEYS: &[Key] = &[
    key!("data", "cli", WITH_DATA, "Graph directory (edges.tsv, features.tsv, labels.tsv)",
        |s, v| s.data = opt_path(v), |s| path(&s.data)),
    key!("out", "cli", WITH_OUT, "Output directory",
        |s, v| s.out = opt_path(v), |s| path(&s.out)),
    key!("seed", "cli", SEEDED, "Seed of every random choice of the run",
        |s, v| s.train.seed = num(v)?, |s| s.train.seed.to_string()),
    key!("checkpoint", "diff-engine", &[Embed], "Parameter archive written by train",
        |s, v| s.checkpoint = opt_path(v), |s| path(&s.checkpoint)),
    key!("embeddings", "eval-harness", EVALS, "Embedding matrix (.tsv); trains a fresh model when empty",
        |s, v| s.embeddings = opt_path(v), |s| path(&s.embeddings)),
    key!("weights", "view-gating", TRAINING, "Fixed cohesive edge weights (u v w per line) replacing the learned gate",
        |s, v| s.weights = opt_path(v), |s| path(&s.weights)),
    key!("jobs", "cli", MULTI_SEED, "Parallel training sessions",
        |s, v| s.jobs = num(v)?, |s| s.jobs.to_string()),
    key!("seeds", "eval-harness", MULTI_SEED, "Comma-separated session seeds of multi-seed experiments",
        |s, v| s.seeds = list(v)?, |s| join(&s.seeds)),
    key!("epochs", "trainer", TRAINING, "Training epochs",
        |s, v| s.train.epochs = num(v)?, |s| s.train.epochs.to_string()),
    key!("lr", "trainer", TRAINING, "Adam learning rate of both parameter groups",
        |s, v| s.train.lr = num(v)?, |s| s.train.lr.to_string()),
    key!("hidden", "trainer", TRAINING, "Embedding width per channel",
        |s, v| s.train.hidden = num(v)?, |s| s.train.hidden.to_string()),
    key!("mask_ratio", "trainer", TRAINING, "Fraction of nodes masked per reconstruction step",
        |s, v| s.train.mask_ratio = num(v)?, |s| s.train.mask_ratio.to_string()),
    key!("gamma", "trainer", TRAINING, "Exponent of the masked reconstruction error",
        |s, v| s.train.gamma = num(v)?, |s| s.train.gamma.to_string()),
    key!("lambda_load", "trainer", TRAINING, "Weight of the load-balancing loss",
        |s, v| s.train.lambda_load = num(v)?, |s| s.train.lambda_load.to_string()),
    key!("lambda_div", "trainer", TRAINING, "Weight of the CKA diversity loss",
        |s, v| s.train.lambda_div = num(v)?, |s| s.train.lambda_div.to_string()),
    key!("lambda_cls", "trainer", TRAINING, "Weight of the classification loss in few-shot fine-tuning",
        |s, v| s.train.lambda_cls = num(v)?, |s| s.train.lambda_cls.to_string()),
    key!("svg_steps", "trainer", TRAINING, "Edge-gate updates per epoch",
        |s, v| s.train.svg_steps = num(v)?, |s| s.train.svg_steps.to_string()),
    key!("finetune_epochs", "trainer", TRAINING, "Few-shot fine-tuning epochs",
        |s, v| s.train.finetune_epochs = num(v)?, |s| s.train.finetune_epochs.to_string()),
    key!("finetune_lr", "trainer", TRAINING, "Few-shot fine-tuning learning rate",
        |s, v| s.train.finetune_lr = num(v)?, |s| s.train.finetune_lr.to_string()),
    key!("tau", "view-gating", TRAINING, "Gumbel-sigmoid temperature",
        |s, v| s.train.tau = num(v)?, |s| s.train.tau.to_string()),
    key!("gamma_svg", "view-gating", TRAINING, "Exponent of the cross-filter reconstruction error",
        |s, v| s.train.gamma_svg = num(v)?, |s| s.train.gamma_svg.to_string()),
    key!("gate_hidden", "view-gating", TRAINING, "Hidden width of the edge-gate MLP",
        |s, v| s.train.gate_hidden = num(v)?, |s| s.train.gate_hidden.to_string()),
    key!("view_mode", "view-gating", TRAINING, "learned or raw (no reweighting); a weights file selects fixed",
        |s, v| s.train.view_mode = parsed(v)?, |s| s.train.view_mode.to_string()),
    key!("n_exp", "expert-moe", TRAINING, "Experts per bank; rebuilds both default banks",
        |s, v| { s.n_exp = num(v)?; if s.n_exp == 0 { return Err("n_exp must be >= 1".into()); } s.train.set_n_exp(s.n_exp) },
        |s| s.n_exp.to_string()),
    key!("coh_bank", "expert-moe", TRAINING, "Cohesive bank filters, kind:k_hops[:alpha] comma-separated",
        |s, v| s.train.coh_bank = parse_specs(v).map_err(|e| e.to_string())?, |s| join(&s.train.coh_bank)),
    key!("disp_bank", "expert-moe", TRAINING, "Dispersive bank filters, kind:k_hops[:alpha] comma-separated",
        |s, v| s.train.disp_bank = parse_specs(v).map_err(|e| e.to_string())?, |s| join(&s.train.disp_bank)),
    key!("top_k", "expert-moe", TRAINING, "Experts selected per node",
        |s, v| s.train.top_k = num(v)?, |s| s.train.top_k.to_string()),
    key!("residual", "expert-moe", TRAINING, "Residual experts per channel (gcn, sage, gin, gat) or none",
        |s, v| s.train.residual = ExpertKind::parse_list(v).map_err(|e| e.to_string())?,
        |s| if s.train.residual.is_empty() { "none".into() } else { join(&s.train.residual) }),
    key!("div_target", "expert-moe", TRAINING, "Experts compared by the diversity loss: foundational, residual or both",
        |s, v| s.train.div_target = parsed(v)?, |s| s.train.div_target.to_string()),
    key!("fusion", "fusion", TRAINING, "adaptive, cohesive_only, dispersive_only or naive_concat",
        |s, v| s.train.fusion = parsed(v)?, |s| s.train.fusion.to_string()),
    key!("weight_stat", "fusion", TRAINING, "Edge-weight statistic of the structural cue: mean or variance",
        |s, v| s.train.weight_stat = parsed(v)?, |s| s.train.weight_stat.to_string()),
    key!("struct_dim", "graph-core", TRAINING, "Random-walk return probabilities per node",
        |s, v| s.train.struct_dim = num(v)?, |s| s.train.struct_dim.to_string()),
    key!("normalize_features", "graph-core", TRAINING, "Row-normalise features before training",
        |s, v| s.train.normalize_features = boolean(v)?, |s| s.train.normalize_features.to_string()),
    key!("probe_steps", "eval-harness", PROBING, "Gradient steps of the logistic probe",
        |s, v| s.probe.steps = num(v)?, |s| s.probe.steps.to_string()),
    key!("probe_lr", "eval-harness", PROBING, "Learning rate of the logistic probe",
        |s, v| s.probe.lr = num(v)?, |s| s.probe.lr.to_string()),
    key!("probe_split", "eval-harness", PROBING, "Train,validation,test fractions",
        |s, v| {
            let f: Vec<f64> = list(v)?;
            let [a, b, c] = f[..] else { return Err(format!("{v:?}: expected three fractions")) };
            s.probe.fractions = (a, b, c)
        },
        |s| format!("{},{},{}", s.probe.fractions.0, s.probe.fractions.1, s.probe.fractions.2)),
    key!("probe_repeats", "eval-harness", PROBING, "Random splits per probe",
        |s, v| s.probe.repeats = num(v)?, |s| s.probe.repeats.to_string()),
    key!("probe_standardize", "eval-harness", PROBING, "Standardise embedding columns on the train rows",
        |s, v| s.probe.standardize = boolean(v)?, |s| s.probe.standardize.to_string()),
    key!("clusters", "eval-harness", &[EvalCluster], "k-means clusters; 0 uses the number of classes",
        |s, v| s.clusters = num(v)?, |s| s.clusters.to_string()),
    key!("kmeans_restarts", "eval-harness", &[EvalCluster], "k-means++ restarts, best inertia kept",
        |s, v| s.kmeans_restarts = num(v)?, |s| s.kmeans_restarts.to_string()),
    key!("shots", "eval-harness", &[EvalFewshot], "Support nodes per class, comma-separated",
        |s, v| s.shots = list(v)?, |s| join(&s.shots)),
    key!("tasks", "eval-harness", &[EvalFewshot], "Sampled tasks per shot count",
        |s, v| s.tasks = num(v)?, |s| s.tasks.to_string()),
    key!("homogeneous", "eval-harness", &[BenchStability], "Also run the homogeneous flat baseline",
        |s, v| s.homogeneous = boolean(v)?, |s| s.homogeneous.to_string()),
    key!("oracle_mode", "eval-harness", &[ExpOracleWeights], "distinct (w_same/w_diff) or accuracy (p_coh/p_disp)",
        |s, v| s.oracle_mode = match v.trim() {
            "distinct" => OracleKind::Distinct,
            "accuracy" => OracleKind::Accuracy,
            other => return Err(format!("unknown oracle mode {other:?} (expected distinct or accuracy)")),
        },
        |s| match s.oracle_mode { OracleKind::Distinct => "distinct".into(), OracleKind::Accuracy => "accuracy".into() }),
    key!("oracle_specs", "eval-harness", &[ExpOracleWeights], "Oracle settings a/b, comma-separated",
        |s, v| s.oracle_specs = pairs(v)?, |s| show_pairs(&s.oracle_specs)),
    key!("noise_base", "eval-harness", &[ExpNoise], "Distinctiveness w_same/w_diff before corruption",
        |s, v| s.noise_base = pair(v)?, |s| show_pairs(&[s.noise_base])),
    key!("noise_ratios", "eval-harness", &[ExpNoise], "Fractions of corrupted edges, comma-separated",
        |s, v| s.noise_ratios = list(v)?, |s| join(&s.noise_ratios)),
    key!("noise_stddev", "eval-harness", &[ExpNoise], "Standard deviation of the Gaussian corruption",
        |s, v| s.noise_stddev = num(v)?, |s| s.noise_stddev.to_string()),
    key!("sweep_axis", "eval-harness", &[ExpSensitivity], "lambda_load or hidden_dim",
        |s, v| s.sweep_axis = parsed(v)?, |s| s.sweep_axis.to_string()),
    key!("sweep_values", "eval-harness", &[ExpSensitivity], "Values of the swept setting, comma-separated",
        |s, v| s.sweep_values = list(v)?, |s| join(&s.sweep_values)),
    key!("buckets", "eval-harness", &[Motivate], "Quantile buckets per node statistic",
        |s, v| s.motivation.n_buckets = num(v)?, |s| s.motivation.n_buckets.to_string()),
    key!("low_pass", "eval-harness", &[Motivate], "Filter compared on homophilous buckets",
        |s, v| s.motivation.low_pass = spec(v)?, |s| s.motivation.low_pass.to_string()),
    key!("high_pass", "eval-harness", &[Motivate], "Filter compared on heterophilous buckets",
        |s, v| s.motivation.high_pass = spec(v)?, |s| s.motivation.high_pass.to_string()),
    key!("shallow", "eval-harness", &[Motivate], "Shallow filter of the clustering comparison",
        |s, v| s.motivation.shallow = spec(v)?, |s| s.motivation.shallow.to_string()),
    key!("deep", "eval-harness", &[Motivate], "Deep filter of the clustering comparison",
        |s, v| s.motivation.deep = spec(v)?, |s| s.motivation.deep.to_string()),
    key!("blocks", "graph-core", &[GenSbm], "Blocks (classes) of the generated graph",
        |s, v| s.sbm.k_blocks = num(v)?, |s| s.sbm.k_blocks.to_string()),
    key!("per_block", "graph-core", &[GenSbm], "Nodes per block",
        |s, v| s.sbm.n_per_block = num(v)?, |s| s.sbm.n_per_block.to_string()),
    key!("p_in", "graph-core", &[GenSbm], "Edge probability inside a block",
        |s, v| s.sbm.p_in = num(v)?, |s| s.sbm.p_in.to_string()),
    key!("p_out", "graph-core", &[GenSbm], "Edge probability across blocks",
        |s, v| s.sbm.p_out = num(v)?, |s| s.sbm.p_out.to_string()),
    key!("feat_dim", "graph-core", &[GenSbm], "Feature dimension (at least the block count)",
        |s, v| s.sbm.feat_dim = num(v)?, |s| s.sbm.feat_dim.to_string()),
    key!("feat_signal", "graph-core", &[GenSbm], "Length of each block's feature mean",
        |s, v| s.sbm.feat_signal = num(v)?, |s| s.sbm.feat_signal.to_string()),
];

pub fn find(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Where a resolved value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

/// `key = value` lines; `#` starts a comment. Unknown and repeated keys are
/// rejected with their line number.
pub fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut out: Vec<(String, String)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| CliError::Config(format!("{}:{}: {msg}", path.display(), no + 1));
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| at(format!("expected key = value, got {line:?}")))?;
        let k = k.trim();
        if find(k).is_none() {
            return Err(at(format!("unknown key {k:?}")));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(at(format!("key {k:?} set twice")));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Applies file entries then flag values over the defaults, in registry
/// order. Returns the settings and the source of every key.
pub fn resolve(
    file: &[(String, String)],
    flags: &[(String, String)],
) -> Result<(Settings, BTreeMap<&'static str, Source>), CliError> {
    let mut chosen: BTreeMap<&str, (&str, Source)> = BTreeMap::new();
    for (k, v) in file {
        chosen.insert(find(k).expect("validated key").name, (v, Source::File));
    }
    for (k, v) in flags {
        let key = find(k).ok_or_else(|| CliError::Usage(format!("unknown setting {k:?}")))?;
        chosen.insert(key.name, (v, Source::Flag));
    }
    let mut s = Settings::default();
    let mut sources = BTreeMap::new();
    for key in KEYS {
        let source = match chosen.get(key.name) {
            Some(&(v, src)) => {
                (key.apply)(&mut s, v).map_err(|e| CliError::Config(format!("{}: {e}", key.name)))?;
                src
            }
            None => Source::Default,
        };
        sources.insert(key.name, source);
    }
    s.sbm.seed = s.train.seed;
    s.motivation.seed = s.train.seed;
    s.motivation.probe = s.probe;
    Ok((s, sources))
}

/// `key = value  # module` for every key, in registry order.
pub fn render(s: &Settings, sources: &BTreeMap<&'static str, Source>) -> String {
    let width = KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for key in KEYS {
        let origin = match sources.get(key.name) {
            Some(Source::File) => " (config file)",
            Some(Source::Flag) => " (flag)",
            _ => "",
        };
        out.push_str(&format!(
            "{:width$} = {}  # {}{origin}\n",
            key.name,
            (key.show)(s),
            key.module
        ));
    }
    out
}

/// Key/value lines that `parse_config_file` reads back, for the keys a
/// command uses. Paths and the command-local keys are left out when unset.
pub fn render_file(s: &Settings, cmd: Cmd) -> String {
    let mut out = String::new();
    for key in KEYS.iter().filter(|k| k.used_by(cmd)) {
        let v = (key.show)(s);
        if v.is_empty() {
            continue;
        }
        out.push_str(&format!("{} = {v}\n", key.name));
    }
    out
}
