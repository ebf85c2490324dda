use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use adamore::eval::{
    fewshot_tasks, kmeans_eval, median, motivation_analysis, oracle_weight_run, par_map, probe_graph,
    sensitivity_sweep, stability_bench, train_embed, write_curves, write_report, BucketRow, OracleWeightSpec,
    StabilityReport,
};
use adamore::fusion::write_alpha_tsv;
use adamore::graph::{gen_sbm, load_graph, save_graph, Graph};
use adamore::io::{matrix_to_tsv, read_matrix_tsv, write_text};
use adamore::moe::write_routing_csv;
use adamore::trainer::{write_metrics_jsonl, GraphContext, TrainConfig, TrainState, ViewMode};
use adamore::views::{read_weights_tsv, write_weights_tsv};
use adamore::Matrix;
use serde::Serialize;

use crate::error::CliError;
use crate::registry::{render, render_file, Cmd, OracleKind, Settings, Source};

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cmd: Cmd, s: Settings, sources: &BTreeMap<&'static str, Source>) -> Result<()> {
    match cmd {
        Cmd::PrintConfig => {
            print!("{}", render(&s, sources));
            Ok(())
        }
        Cmd::GenSbm => gen(&s),
        Cmd::Train => train(&s),
        Cmd::Embed => embed(&s),
        Cmd::EvalProbe => eval_probe(&s),
        Cmd::EvalCluster => eval_cluster(&s),
        Cmd::EvalFewshot => eval_fewshot(&s),
        Cmd::BenchStability => bench_stability(&s),
        Cmd::ExpOracleWeights => exp_oracle(&s),
        Cmd::ExpNoise => exp_noise(&s),
        Cmd::ExpSensitivity => exp_sensitivity(&s),
        Cmd::Motivate => motivate(&s),
    }
}

fn out_dir(s: &Settings) -> Result<PathBuf> {
    s.out
        .clone()
        .ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn graph(s: &Settings) -> Result<Graph> {
    let dir = s
        .data
        .as_deref()
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{}: not a graph directory", dir.display())));
    }
    Ok(load_graph(dir)?)
}

fn existing(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {}: no such file", p.display())))
    }
}

/// Training settings with the optional fixed weights file folded in.
fn train_config(s: &Settings, g: &Graph) -> Result<TrainConfig> {
    let mut cfg = s.train.clone();
    if let Some(p) = &s.weights {
        existing(p, "weights file")?;
        cfg.view_mode = ViewMode::Fixed(Arc::new(read_weights_tsv(p, g.adjacency())?));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn need_jobs(s: &Settings) -> Result<()> {
    if s.jobs == 0 {
        return Err(CliError::Config("jobs must be >= 1".into()));
    }
    if s.seeds.is_empty() {
        return Err(CliError::Config("seeds must list at least one seed".into()));
    }
    Ok(())
}

fn gen(s: &Settings) -> Result<()> {
    let out = out_dir(s)?;
    let g = gen_sbm(&s.sbm)?;
    save_graph(&out, &g)?;
    println!("{} nodes, {} edges -> {}", g.n_nodes(), g.n_edges(), out.display());
    Ok(())
}

/// Writes the embedding, fusion coefficients and edge weights of a session.
fn write_exports(out: &Path, st: &mut TrainState, ctx: &GraphContext) -> Result<Matrix> {
    let (e, alpha) = st.embed_with_alpha(ctx)?;
    write_text(&out.join("embeddings.tsv"), &matrix_to_tsv(&e))?;
    write_alpha_tsv(&out.join("alpha.tsv"), &alpha)?;
    let w = st.eval_weights(ctx)?;
    write_weights_tsv(&out.join("weights.tsv"), ctx.graph.edges(), &w)?;
    Ok(e)
}

fn train(s: &Settings) -> Result<()> {
    let out = out_dir(s)?;
    let g = graph(s)?;
    let cfg = train_config(s, &g)?;
    let ctx = GraphContext::new(&g, &cfg)?;
    let mut st = TrainState::new(&ctx, cfg)?;
    st.fit(&ctx)?;
    write_metrics_jsonl(&out.join("metrics.jsonl"), &st.history)?;
    st.save_checkpoint(&out.join("model.ckpt"))?;
    write_routing_csv(&out.join("routing.csv"), &st.routing)?;
    write_text(&out.join("config.txt"), &render_file(s, Cmd::Train))?;
    write_exports(&out, &mut st, &ctx)?;
    if let Some(last) = st.history.last() {
        println!("{} epochs, final loss {:.6} -> {}", last.epoch, last.total, out.display());
    }
    Ok(())
}

fn embed(s: &Settings) -> Result<()> {
    let out = out_dir(s)?;
    let ckpt = s
        .checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
    existing(ckpt, "checkpoint")?;
    let g = graph(s)?;
    let cfg = train_config(s, &g)?;
    let ctx = GraphContext::new(&g, &cfg)?;
    let mut st = TrainState::new(&ctx, cfg)?;
    st.load_checkpoint(ckpt)?;
    let e = write_exports(&out, &mut st, &ctx)?;
    println!("{} x {} embedding -> {}", e.nrows(), e.ncols(), out.display());
    Ok(())
}

/// Embeddings from `--embeddings`, or from a freshly trained session.
fn embeddings(s: &Settings, g: &Graph) -> Result<Matrix> {
    match &s.embeddings {
        Some(p) => {
            existing(p, "embeddings")?;
            let e = read_matrix_tsv(p)?;
            if e.nrows() != g.n_nodes() {
                return Err(CliError::Config(format!(
                    "{}: {} rows for {} nodes",
                    p.display(),
                    e.nrows(),
                    g.n_nodes()
                )));
            }
            Ok(e)
        }
        None => Ok(train_embed(g, &train_config(s, g)?)?.0),
    }
}

fn eval_probe(s: &Settings) -> Result<()> {
    let out = out_dir(s)?;
    let g = graph(s)?;
    let e = embeddings(s, &g)?;
    let r = probe_graph(&e, &g, &s.probe, s.train.seed)?;
    let mut csv = String::from("split,accuracy\n");
    for (i, a) in r.accuracies.iter().enumerate() {
        writeln!(csv, "{i},{a}").unwrap();
    }
    write_report(&out, &r, &csv)?;
    println!("probe accuracy {:.4} +/- {:.4}", r.mean, r.std);
    Ok(())
}

fn eval_cluster(s: &Settings) -> Result<()> {
    let out = out_dir(s)?;
    let g = graph(s)?;
    let labels = g.require_labels()?.to_vec();
    let k = if s.clusters == 0 {
        g.n_classes().unwrap_or(1)
    } else {
        s.clusters
    };
    if s.kmeans_restarts == 0 {
        return Err(CliError::Config("kmeans_restarts must be >= 1".into()));
    }
    let e = embeddings(s, &g)?;
    let seeds: Vec<u64> = (0..s.kmeans_restarts as u64).map(|r| s.train.seed.wrapping_add(r)).collect();
    let r = kmeans_eval(&e, &labels, k, &seeds)?;
    write_report(&out, &r, &format!("acc,nmi,ari\n{},{},{}\n", r.acc, r.nmi, r.ari))?;
    println!("ACC {:.4}  NMI {:.4}  ARI {:.4}", r.acc, r.nmi, r.ari);
    Ok(())
}

fn eval_fewshot(s: &Settings) -> Result<()> {
    let out = out_dir(s)?;
    let g = graph(s)?;
    let labels = g.require_labels()?.to_vec();
    if s.shots.is_empty() || s.tasks == 0 {
        return Err(CliError::Config("shots and tasks must be non-empty".into()));
    }
    let e = embeddings(s, &g)?;
    let results = s
        .shots
        .iter()
        .map(|&k| fewshot_tasks(&e, &labels, k, s.tasks, s.train.seed))
        .collect::<adamore::Result<Vec<_>>>()?;
    let mut csv = String::from("k_shot,mean,std,median\n");
    for r in &results {
        writeln!(csv, "{},{},{},{}", r.k_shot, r.mean, r.std, r.median).unwrap();
        println!("{}-shot accuracy {:.4} +/- {:.4}", r.k_shot, r.mean, r.std);
    }
    write_report(&out, &results, &csv)?;
    Ok(())
}

#[derive(Serialize)]
struct StabilitySummary {
    seeds: Vec<u64>,
    volatility_ratios: Vec<f64>,
    median_volatility_ratio: f64,
    median_final_model: f64,
    median_final_heterogeneous: f64,
    runs: Vec<StabilityReport>,
}

fn bench_stability(s: &Settings) -> Result<()> {
    need_jobs(s)?;
    let out = out_dir(s)?;
    let g = graph(s)?;
    let base = train_config(s, &g)?;
    let cfgs: Vec<TrainConfig> = s.seeds.iter().map(|&seed| TrainConfig { seed, ..base.clone() }).collect();
    let runs = par_map(s.jobs, cfgs, |c| stability_bench(&g, &c, s.homogeneous))?;
    let ratios: Vec<f64> = runs.iter().map(StabilityReport::volatility_ratio).collect();
    let mut csv = String::from(
        "seed,volatility_model,volatility_heterogeneous,volatility_homogeneous,ratio,final_model,final_heterogeneous\n",
    );
    let names: Vec<[String; 3]> = s
        .seeds
        .iter()
        .map(|seed| {
            [
                format!("model/seed{seed}"),
                format!("naive_heterogeneous/seed{seed}"),
                format!("naive_homogeneous/seed{seed}"),
            ]
        })
        .collect();
    let mut arms: Vec<(&str, &[f64])> = Vec::new();
    for ((seed, r), n) in s.seeds.iter().zip(&runs).zip(&names) {
        let hom = r.volatility_homogeneous.map_or_else(String::new, |v| v.to_string());
        writeln!(
            csv,
            "{seed},{},{},{hom},{},{},{}",
            r.volatility_model,
            r.volatility_heterogeneous,
            r.volatility_ratio(),
            r.final_model,
            r.final_heterogeneous
        )
        .unwrap();
        arms.push((&n[0], &r.model));
        arms.push((&n[1], &r.naive_heterogeneous));
        if let Some(h) = &r.naive_homogeneous {
            arms.push((&n[2], h));
        }
    }
    write_curves(&out.join("curves.csv"), &arms)?;
    let summary = StabilitySummary {
        seeds: s.seeds.clone(),
        median_volatility_ratio: median(&ratios),
        median_final_model: median(&runs.iter().map(|r| r.final_model).collect::<Vec<_>>()),
        median_final_heterogeneous: median(&runs.iter().map(|r| r.final_heterogeneous).collect::<Vec<_>>()),
        volatility_ratios: ratios,
        runs,
    };
    write_report(&out, &summary, &csv)?;
    println!("median volatility ratio {:.4}", summary.median_volatility_ratio);
    Ok(())
}

#[derive(Serialize)]
struct SpecRow {
    setting: String,
    spec: OracleWeightSpec,
    accuracies: Vec<f64>,
    median: f64,
}

/// One training session per (spec, seed), probed; medians per spec.
fn oracle_rows(s: &Settings, g: &Graph, specs: Vec<(String, OracleWeightSpec)>) -> Result<Vec<SpecRow>> {
    need_jobs(s)?;
    for (_, spec) in &specs {
        spec.validate()?;
    }
    let base = train_config(s, g)?;
    let runs: Vec<(OracleWeightSpec, TrainConfig)> = specs
        .iter()
        .flat_map(|(_, spec)| s.seeds.iter().map(|&seed| (*spec, TrainConfig { seed, ..base.clone() })))
        .collect();
    let accs = par_map(s.jobs, runs, |(spec, c)| Ok(oracle_weight_run(g, &spec, &c, &s.probe)?.mean))?;
    Ok(specs
        .into_iter()
        .zip(accs.chunks(s.seeds.len()))
        .map(|((setting, spec), a)| SpecRow {
            setting,
            spec,
            accuracies: a.to_vec(),
            median: median(a),
        })
        .collect())
}

fn write_rows(out: &Path, rows: &[SpecRow]) -> Result<()> {
    let mut csv = String::from("setting,median,accuracies\n");
    for r in rows {
        let accs: Vec<String> = r.accuracies.iter().map(f64::to_string).collect();
        writeln!(csv, "{},{},{}", r.setting, r.median, accs.join(";")).unwrap();
        println!("{:>12}  median accuracy {:.4}", r.setting, r.median);
    }
    write_report(out, &rows, &csv)?;
    Ok(())
}

fn exp_oracle(s: &Settings) -> Result<()> {
    let out = out_dir(s)?;
    let g = graph(s)?;
    g.require_labels()?;
    let specs = s
        .oracle_specs
        .iter()
        .map(|&(a, b)| {
            let spec = match s.oracle_mode {
                OracleKind::Distinct => OracleWeightSpec::distinct(a, b),
                OracleKind::Accuracy => OracleWeightSpec::accuracy(a, b),
            };
            (format!("{a}/{b}"), spec)
        })
        .collect();
    let rows = oracle_rows(s, &g, specs)?;
    write_rows(&out, &rows)
}

fn exp_noise(s: &Settings) -> Result<()> {
    let out = out_dir(s)?;
    let g = graph(s)?;
    g.require_labels()?;
    let (same, diff) = s.noise_base;
    let specs = s
        .noise_ratios
        .iter()
        .map(|&r| {
            (
                format!("{r}"),
                OracleWeightSpec::distinct(same, diff).with_noise(r, s.noise_stddev),
            )
        })
        .collect();
    let rows = oracle_rows(s, &g, specs)?;
    write_rows(&out, &rows)
}

fn exp_sensitivity(s: &Settings) -> Result<()> {
    need_jobs(s)?;
    let out = out_dir(s)?;
    let g = graph(s)?;
    let cfg = train_config(s, &g)?;
    let rows = sensitivity_sweep(&g, s.sweep_axis, &s.sweep_values, &cfg, &s.probe, &s.seeds, s.jobs)?;
    let mut csv = format!("{},median,accuracies\n", s.sweep_axis);
    for r in &rows {
        let accs: Vec<String> = r.accuracies.iter().map(f64::to_string).collect();
        writeln!(csv, "{},{},{}", r.value, r.median, accs.join(";")).unwrap();
        println!("{} = {:<8} median accuracy {:.4}", s.sweep_axis, r.value, r.median);
    }
    write_report(&out, &rows, &csv)?;
    Ok(())
}

fn motivate(s: &Settings) -> Result<()> {
    let out = out_dir(s)?;
    let g = graph(s)?;
    let r = motivation_analysis(&g, &s.motivation)?;
    if r.homophily.len() <= 1 {
        eprintln!("warning: local homophily falls into a single bucket; the comparison is degenerate");
    }
    let mut csv = String::from("analysis,bucket,lo,hi,n_test,acc_a,acc_b\n");
    let mut rows = |name: &str, xs: &[BucketRow]| {
        for b in xs {
            writeln!(csv, "{name},{},{},{},{},{},{}", b.bucket, b.lo, b.hi, b.n_test, b.acc_a, b.acc_b).unwrap();
        }
    };
    rows("homophily", &r.homophily);
    rows("clustering", &r.clustering);
    write_report(&out, &r, &csv)?;
    println!(
        "{} buckets by homophily ({} vs {}), {} by clustering ({} vs {})",
        r.homophily.len(),
        r.filter_a_homophily,
        r.filter_b_homophily,
        r.clustering.len(),
        r.filter_a_clustering,
        r.filter_b_clustering
    );
    Ok(())
}
