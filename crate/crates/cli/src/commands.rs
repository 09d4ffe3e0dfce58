use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowgn::dataset::{load_dataset, DatasetBundle, LoadOptions, Split};
use flowgn::graph::{grid_torus, shortest_path_stats, Graph};
use flowgn::influence::verify_theorem;
use flowgn::model::{checkpoint, train, ModelParams, TrainReport};
use flowgn::walk::pathgen;
use flowgn::{FlowError, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

/// Graphs up to this size get an exact average shortest path.
pub const EXACT_SP_LIMIT: usize = 5000;
const SP_SAMPLE_SOURCES: usize = 1000;

pub fn load(dir: &Path) -> Result<DatasetBundle> {
    load_dataset(dir, &LoadOptions::default())
}

pub fn stats(dir: &Path, seed: u64) -> Result<()> {
    let bundle = load(dir)?;
    let g = &bundle.graph;
    let n = g.num_nodes();
    let sample = (n >= EXACT_SP_LIMIT).then_some((SP_SAMPLE_SOURCES, seed));
    let sp = shortest_path_stats(g, sample);
    println!("nodes\t{n}");
    println!("edges\t{}", g.num_edges());
    println!("edge_lines\t{}", bundle.raw_edge_lines);
    println!("classes\t{}", bundle.num_classes);
    println!("features\t{}", bundle.feature_dim());
    println!(
        "split\t{}/{}/{}",
        bundle.split_count(Split::Train),
        bundle.split_count(Split::Val),
        bundle.split_count(Split::Test)
    );
    println!("unlabeled_split\t{}", bundle.split_count(Split::Unlabeled));
    if sp.sources < sp.component_size {
        println!(
            "avg_sp\t{:.4} ± {:.4} (95% CI, {} sampled sources)",
            sp.mean, sp.ci95, sp.sources
        );
    } else {
        println!("avg_sp\t{:.4}", sp.mean);
    }
    println!("lcc_nodes\t{}", sp.component_size);
    if sp.component_size < n {
        println!(
            "note\tgraph is disconnected; average shortest path is over the largest component ({} of {n} nodes)",
            sp.component_size
        );
    }
    Ok(())
}

pub enum WalkSource {
    Dataset(PathBuf),
    Torus(usize, usize),
}

pub fn walks(source: &WalkSource, cfg: &RunConfig, layer: usize, out: &Path) -> Result<()> {
    let graph: Graph = match source {
        WalkSource::Dataset(dir) => load(dir)?.graph,
        WalkSource::Torus(r, c) => grid_torus(*r, *c)?,
    };
    let started = Instant::now();
    let paths = pathgen(&graph, &cfg.walk, layer)?;
    let secs = started.elapsed().as_secs_f64();
    let mut w = BufWriter::new(fs::File::create(out)?);
    paths.write_dump(&mut w)?;
    w.flush()?;
    println!("paths\t{}", paths.len());
    println!("seconds\t{secs:.3}");
    println!("paths_per_sec\t{:.0}", paths.len() as f64 / secs.max(1e-9));
    if paths.isolated_skipped > 0 {
        println!("isolated_skipped\t{}", paths.isolated_skipped);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Metrics {
    pub schema: u32,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub seed: u64,
    pub config_hash: String,
    pub runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_acc_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_run_test_acc: Option<Vec<f64>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains `cfg.runs` models with seeds `seed, seed + 1, ...`.
pub fn fit_runs(bundle: &DatasetBundle, cfg: &RunConfig) -> Result<Vec<(ModelParams, TrainReport)>> {
    (0..cfg.runs)
        .map(|i| {
            let mut run = cfg.clone();
            let seed = cfg.model.seed.wrapping_add(i as u64);
            run.model.seed = seed;
            run.walk.seed = seed;
            let out = train(bundle, &run.model, &[run.walk])?;
            log::info!("run {}: test accuracy {:.4}", i + 1, out.1.accuracy.test);
            Ok(out)
        })
        .collect()
}

pub fn summarize(cfg: &RunConfig, results: &[(ModelParams, TrainReport)]) -> Metrics {
    let pick = |f: fn(&TrainReport) -> f64| results.iter().map(|(_, r)| f(r)).collect::<Vec<_>>();
    let tests = pick(|r| r.accuracy.test);
    let (test_mean, test_std) = mean_std(&tests);
    let multi = results.len() > 1;
    Metrics {
        schema: 1,
        train_acc: mean_std(&pick(|r| r.accuracy.train)).0,
        val_acc: mean_std(&pick(|r| r.accuracy.val)).0,
        test_acc: test_mean,
        seed: cfg.model.seed,
        config_hash: cfg.hash(),
        runs: results.len(),
        test_acc_std: multi.then_some(test_std),
        per_run_test_acc: multi.then_some(tests),
    }
}

pub fn train_cmd(dir: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let bundle = load(dir)?;
    fs::create_dir_all(out)?;
    let results = fit_runs(&bundle, cfg)?;
    for (i, (params, report)) in results.iter().enumerate() {
        let suffix = if results.len() > 1 {
            format!("-run{}", i + 1)
        } else {
            String::new()
        };
        let mut run_cfg = cfg.model.clone();
        run_cfg.seed = cfg.model.seed.wrapping_add(i as u64);
        checkpoint::save(&out.join(format!("model{suffix}.bin")), params, &run_cfg)?;
        let mut csv = BufWriter::new(fs::File::create(out.join(format!("report{suffix}.csv")))?);
        report.write_csv(&mut csv)?;
        csv.flush()?;
    }
    let metrics = summarize(cfg, &results);
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    match metrics.test_acc_std {
        Some(std) => println!(
            "test accuracy {:.2} ± {:.2} over {} runs",
            100.0 * metrics.test_acc,
            100.0 * std,
            metrics.runs
        ),
        None => println!(
            "train {:.4} val {:.4} test {:.4}",
            metrics.train_acc, metrics.val_acc, metrics.test_acc
        ),
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct Grid {
    pub l: Vec<usize>,
    pub q: Vec<f64>,
    pub k: Vec<usize>,
}

impl Grid {
    pub fn cells(&self, base: &RunConfig) -> Result<Vec<RunConfig>> {
        let axes = [!self.l.is_empty(), !self.q.is_empty(), !self.k.is_empty()]
            .iter()
            .filter(|&&a| a)
            .count();
        if axes == 0 {
            return Err(FlowError::Argument("sweep grid is empty".into()));
        }
        if axes > 2 {
            return Err(FlowError::Argument(
                "sweep grid may vary at most two of l, q and K".into(),
            ));
        }
        let ls = if self.l.is_empty() { vec![base.walk.length] } else { self.l.clone() };
        let qs = if self.q.is_empty() { vec![base.walk.q] } else { self.q.clone() };
        let ks = if self.k.is_empty() { vec![base.model.layers] } else { self.k.clone() };
        let mut cells = Vec::new();
        for &l in &ls {
            for &q in &qs {
                for &k in &ks {
                    let mut c = base.clone();
                    c.walk.length = l;
                    c.walk.q = q;
                    c.model.layers = k;
                    c.validate()?;
                    cells.push(c);
                }
            }
        }
        Ok(cells)
    }
}

pub fn sweep(dir: &Path, base: &RunConfig, grid: &Grid, out: &Path) -> Result<()> {
    let bundle = load(dir)?;
    let cells = grid.cells(base)?;
    log::info!("sweeping {} cells", cells.len());
    // collect keeps grid order whatever the completion order
    let rows = cells
        .par_iter()
        .map(|cell| {
            let results = fit_runs(&bundle, cell)?;
            let m = summarize(cell, &results);
            Ok((cell.walk.length, cell.walk.q, cell.model.layers, m.test_acc, m.test_acc_std.unwrap_or(0.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = BufWriter::new(fs::File::create(out)?);
    writeln!(w, "l,q,K,test_acc,std")?;
    for (l, q, k, acc, std) in &rows {
        writeln!(w, "{l},{q},{k},{acc},{std}")?;
    }
    w.flush()?;
    for (l, q, k, acc, std) in rows {
        println!("l={l} q={q} K={k}: {acc:.4} ± {std:.4}");
    }
    Ok(())
}

pub struct InfluenceArgs {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub samples: usize,
    pub seed: u64,
    pub threshold: f64,
}

pub fn influence(args: &InfluenceArgs, out: Option<&Path>) -> Result<()> {
    let report = verify_theorem(args.rows, args.cols, args.k, args.samples, args.seed)?;
    let verdict = if report.tv < args.threshold { "pass" } else { "fail" };
    println!("tv\t{:.6}", report.tv);
    println!("threshold\t{}", args.threshold);
    println!("verdict\t{verdict}");
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}
