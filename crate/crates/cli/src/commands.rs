//! One function per subcommand.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use trisim::encoder::file::load_block_stack;
use trisim::encoder::BlockStack;
use trisim::gradsuite::run_suite_with;
use trisim::training::dataset::write_splits;
use trisim::training::{
    bench_latency, evaluate, gen_synth_dataset, prepare, train as fit, EpochLog, SynthSpec,
};
use trisim::{Checkpoint, Error, Model, OpKind, RunConfig};

use crate::data::{self, StackSplits};
use crate::grid::{self, Cell};
use crate::report::{create_dir, f, write_file, Table};
use crate::{
    load_config, AblateArgs, BenchArgs, CliError, DumpSimArgs, EvalArgs, GenDataArgs,
    GradcheckArgs, GridData, RobustArgs, TrainArgs,
};

type Res = Result<(), CliError>;

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        println!("{}", msg.as_ref());
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// File-name form of a cell name.
fn file_stem(name: &str) -> String {
    name.replace(':', "_")
}

fn log_lines(log: &[EpochLog]) -> String {
    log.iter().map(|l| l.to_json() + "\n").collect()
}

pub fn gen_data(a: &GenDataArgs, quiet: bool) -> Res {
    let mut spec = SynthSpec::new(a.pairs, a.vocab, a.seed);
    spec.min_len = a.min_len;
    spec.max_len = a.max_len;
    spec.synonym_group = a.synonym_group;
    let splits = gen_synth_dataset(&spec)?;
    write_splits(&a.out, &splits)?;
    for (name, pairs) in splits.iter() {
        say(quiet, format!("{name}: {} pairs", pairs.len()));
    }
    Ok(())
}

struct Trained {
    model: Model<f32>,
    log: Vec<EpochLog>,
    test_accuracy: f64,
}

/// Initializes with the training seed, fits, and scores the test split.
fn train_cell(
    cfg: &RunConfig,
    data: &StackSplits,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained, Error> {
    let model = Model::<f32>::init(&cfg.model(), cfg.train.seed)?;
    let tr = prepare(&model, &data.train)?;
    let va = prepare(&model, &data.val)?;
    let te = prepare(&model, &data.test)?;
    let out = fit(model, &tr, &va, &cfg.train, &mut on_epoch)?;
    let test_accuracy = evaluate(&out.model, &te)?.accuracy;
    Ok(Trained {
        model: out.model,
        log: out.log,
        test_accuracy,
    })
}

pub fn train(a: &TrainArgs, quiet: bool) -> Res {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    let data = data::load_all(&cfg, &a.data)?;
    let t = train_cell(&cfg, &data, |l| say(quiet, l.to_json()))?;
    create_dir(&a.out)?;
    Checkpoint::new(cfg.clone(), t.model.into_params()).save(a.out.join("model.tsc"))?;
    write_file(&a.out.join("metrics.jsonl"), log_lines(&t.log))?;
    write_file(&a.out.join("config.json"), cfg.to_json())?;
    say(
        quiet,
        json!({ "split": "test", "accuracy": t.test_accuracy }).to_string(),
    );
    Ok(())
}

/// The checkpoint's model, checked against `--config` when one is given.
fn load_model(
    checkpoint: &Path,
    config: Option<&Path>,
) -> Result<(RunConfig, Model<f32>), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => ckpt.config.clone(),
    };
    let model = ckpt.into_model(&cfg)?;
    Ok((cfg, model))
}

pub fn eval(a: &EvalArgs, quiet: bool) -> Res {
    data::check_split(&a.split)?;
    let (cfg, model) = load_model(&a.checkpoint, a.config.as_deref())?;
    let pairs = data::load_split(&cfg, &a.data, &a.split)?;
    let m = evaluate(&model, &prepare(&model, &pairs)?)?;
    let line =
        json!({ "split": a.split, "accuracy": m.accuracy, "loss": m.loss, "pairs": m.pairs })
            .to_string();
    if let Some(out) = &a.out {
        write_file(out, line.clone() + "\n")?;
    }
    say(quiet, line);
    Ok(())
}

/// Per-seed datasets: the shared `--data` directory, or one generated
/// dataset per seed.
fn grid_datasets(cfg: &RunConfig, g: &GridData, seeds: &[u64]) -> Result<Vec<StackSplits>, Error> {
    match &g.data {
        Some(dir) => {
            let shared = data::load_all(cfg, dir)?;
            Ok(seeds.iter().map(|_| shared.clone()).collect())
        }
        None => seeds
            .iter()
            .map(|&s| data::generate(cfg, g.pairs, s))
            .collect(),
    }
}

struct Run {
    cell: usize,
    seed: u64,
    trained: Trained,
}

/// Trains every (cell, seed) job, in parallel across jobs.
fn run_grid(
    cells: &[Cell],
    seeds: &[u64],
    datasets: &[StackSplits],
    quiet: bool,
) -> Result<Vec<Run>, Error> {
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..seeds.len()).map(move |s| (c, s)))
        .collect();
    jobs.par_iter()
        .map(|&(c, s)| {
            let mut cfg = cells[c].config.clone();
            cfg.train.seed = seeds[s];
            let trained = train_cell(&cfg, &datasets[s], |_| {})?;
            say(
                quiet,
                format!(
                    "{} seed {}: accuracy {}",
                    cells[c].name,
                    seeds[s],
                    f(trained.test_accuracy)
                ),
            );
            Ok(Run {
                cell: c,
                seed: seeds[s],
                trained,
            })
        })
        .collect()
}

fn seeds_of(g: &GridData, n: u64) -> Result<Vec<u64>, Error> {
    if n == 0 {
        return Err(Error::Argument("need at least one seed".into()));
    }
    Ok((g.seed..g.seed + n).collect())
}

/// Writes each cell's configuration and every run's metric log.
fn write_echoes(out: &Path, cells: &[Cell], runs: &[Run]) -> Result<(), Error> {
    let configs = out.join("configs");
    let logs = out.join("logs");
    create_dir(&configs)?;
    create_dir(&logs)?;
    for c in cells {
        write_file(
            &configs.join(format!("{}.json", file_stem(&c.name))),
            c.config.to_json(),
        )?;
    }
    for r in runs {
        let name = format!("{}_seed{}.jsonl", file_stem(&cells[r.cell].name), r.seed);
        write_file(&logs.join(name), log_lines(&r.trained.log))?;
    }
    Ok(())
}

/// Median-accuracy comparisons: every RFM-family cell against the pooling
/// cell with the same attention, and SA+FA-3 against SA within each fusion.
pub fn directional_checks(summary: &[(String, f64)]) -> Table {
    let mut t = Table::new(&["comparison", "left", "right", "delta_points", "holds"]);
    let get = |n: &str| summary.iter().find(|(c, _)| c == n).map(|&(_, a)| a);
    let mut push = |l: &str, r: &str| {
        if let (Some(a), Some(b)) = (get(l), get(r)) {
            t.push(vec![
                format!("{l} >= {r}"),
                f(a),
                f(b),
                format!("{:.2}", 100.0 * (a - b)),
                (a >= b).to_string(),
            ]);
        }
    };
    for (name, _) in summary {
        if let Some((fusion, attn)) = name.split_once(':') {
            if fusion != "pooling" {
                push(name, &format!("pooling:{attn}"));
            }
        }
    }
    for fusion in ["pooling", "rfm", "inception", "dilated"] {
        push(&format!("{fusion}:sa+fa3"), &format!("{fusion}:sa"));
    }
    t
}

pub fn ablate(a: &AblateArgs, quiet: bool) -> Res {
    let base = load_config(&a.config)?;
    let cells = grid::resolve(&a.grid, &base)?;
    for c in &cells {
        c.config.validate()?;
    }
    if a.reps == 0 {
        return Err(Error::Argument("need at least one timing repetition".into()).into());
    }
    let seeds = seeds_of(&a.data, a.seeds)?;
    let datasets = grid_datasets(&base, &a.data, &seeds)?;
    let runs = run_grid(&cells, &seeds, &datasets, quiet)?;

    // Timing runs one model at a time for stable numbers.
    let mut table = Table::new(&["cell", "seed", "accuracy", "params", "ms_per_pair"]);
    let mut per_cell: Vec<(Vec<f64>, Vec<f64>, usize)> =
        vec![(Vec::new(), Vec::new(), 0); cells.len()];
    for r in &runs {
        let model = &r.trained.model;
        let s = seeds
            .iter()
            .position(|&x| x == r.seed)
            .expect("seed listed");
        let te = prepare(model, &datasets[s].test)?;
        let ms = bench_latency(model, &te, a.reps)?;
        let params = model.params().count();
        table.push(vec![
            cells[r.cell].name.clone(),
            r.seed.to_string(),
            f(r.trained.test_accuracy),
            params.to_string(),
            f(ms),
        ]);
        let e = &mut per_cell[r.cell];
        e.0.push(r.trained.test_accuracy);
        e.1.push(ms);
        e.2 = params;
    }
    let mut summary = Table::new(&[
        "cell",
        "median_accuracy",
        "params",
        "median_ms_per_pair",
        "seeds",
    ]);
    let mut medians = Vec::new();
    for (c, (acc, ms, params)) in cells.iter().zip(&per_cell) {
        let m = median(acc);
        medians.push((c.name.clone(), m));
        summary.push(vec![
            c.name.clone(),
            f(m),
            params.to_string(),
            f(median(ms)),
            acc.len().to_string(),
        ]);
    }
    let checks = directional_checks(&medians);

    create_dir(&a.data.out)?;
    table.write(&a.data.out, "ablate")?;
    summary.write(&a.data.out, "summary")?;
    checks.write(&a.data.out, "checks")?;
    write_echoes(&a.data.out, &cells, &runs)?;
    say(quiet, summary.to_text());
    say(quiet, checks.to_text());
    Ok(())
}

pub fn robust(a: &RobustArgs, quiet: bool) -> Res {
    let base = load_config(&a.config)?;
    let cells = grid::robust_grid(&base);
    for c in &cells {
        c.config.validate()?;
    }
    let seeds = seeds_of(&a.data, a.seeds)?;
    let datasets = grid_datasets(&base, &a.data, &seeds)?;
    let runs = run_grid(&cells, &seeds, &datasets, quiet)?;

    let mut table = Table::new(&["cell", "seed", "accuracy"]);
    let mut acc: Vec<Vec<f64>> = vec![Vec::new(); cells.len()];
    for r in &runs {
        table.push(vec![
            cells[r.cell].name.clone(),
            r.seed.to_string(),
            f(r.trained.test_accuracy),
        ]);
        acc[r.cell].push(r.trained.test_accuracy);
    }
    let mut summary = Table::new(&["cell", "mean", "std", "min", "max", "seeds"]);
    let mut arm_means: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (c, v) in cells.iter().zip(&acc) {
        let (mean, std) = mean_std(v);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        summary.push(vec![
            c.name.clone(),
            f(mean),
            f(std),
            f(lo),
            f(hi),
            v.len().to_string(),
        ]);
        arm_means[usize::from(!c.config.blocks.adaptive)].push(mean);
    }
    let mut spread = Table::new(&["arm", "across_strategy_spread", "min_mean", "max_mean"]);
    let mut spreads = [0.0; 2];
    for (i, arm) in ["afe", "fe"].into_iter().enumerate() {
        let lo = arm_means[i].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = arm_means[i]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        spreads[i] = hi - lo;
        spread.push(vec![arm.into(), f(hi - lo), f(lo), f(hi)]);
    }

    create_dir(&a.data.out)?;
    table.write(&a.data.out, "robust")?;
    summary.write(&a.data.out, "summary")?;
    spread.write(&a.data.out, "spread")?;
    write_echoes(&a.data.out, &cells, &runs)?;
    say(quiet, summary.to_text());
    say(quiet, spread.to_text());
    say(
        quiet,
        format!(
            "afe spread {} {} fe spread {}",
            f(spreads[0]),
            if spreads[0] <= spreads[1] { "<=" } else { ">" },
            f(spreads[1])
        ),
    );
    Ok(())
}

pub fn bench(a: &BenchArgs, quiet: bool) -> Res {
    let base = load_config(&a.config)?;
    let cells = grid::resolve(&a.grid, &base)?;
    for c in &cells {
        c.config.validate()?;
    }
    data::check_split(&a.split)?;
    if a.reps == 0 {
        return Err(Error::Argument("need at least one timing repetition".into()).into());
    }
    let pairs = data::load_split(&base, &a.data, &a.split)?;
    let mut table = Table::new(&["cell", "params", "pairs", "ms_per_pair"]);
    for c in &cells {
        let model = Model::<f32>::init(&c.config.model(), a.seed)?;
        let data = prepare(&model, &pairs)?;
        let ms = bench_latency(&model, &data, a.reps)?;
        table.push(vec![
            c.name.clone(),
            model.params().count().to_string(),
            data.len().to_string(),
            f(ms),
        ]);
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        table.write(out, "bench")?;
    }
    say(quiet, table.to_text());
    Ok(())
}

fn matrix_csv(labels: &[String], rows: usize, data: &[f32]) -> String {
    let cols = labels.len();
    let mut out = labels.join(",");
    out.push('\n');
    for r in 0..rows {
        let row: Vec<String> = data[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| v.to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn load_stack(path: &Path) -> Result<BlockStack, Error> {
    BlockStack::unmasked(load_block_stack(path)?)
}

pub fn dump_sim(a: &DumpSimArgs, quiet: bool) -> Res {
    let (cfg, model) = load_model(&a.checkpoint, a.config.as_deref())?;
    if !cfg.attention.sa {
        return Err(Error::Argument(
            "spatial attention is disabled in this model; there are no maps".into(),
        )
        .into());
    }
    let (x, y) = match (&a.data, a.pair, &a.x, &a.y) {
        (Some(dir), Some(i), _, _) => {
            let pairs = data::load_split(&cfg, dir, &a.split)?;
            let p = pairs.get(i).ok_or_else(|| {
                Error::Argument(format!(
                    "pair {i} out of range; split `{}` has {} pairs",
                    a.split,
                    pairs.len()
                ))
            })?;
            (model.prepare(&p.x)?, model.prepare(&p.y)?)
        }
        (None, None, Some(x), Some(y)) => (
            model.prepare(&load_stack(x)?)?,
            model.prepare(&load_stack(y)?)?,
        ),
        _ => {
            return Err(CliError::Usage(
                "give either --data with --pair, or --x with --y".into(),
            ))
        }
    };
    let maps = model
        .similarity_maps(&x, &y)?
        .ok_or_else(|| Error::State("forward pass recorded no attention maps".into()))?;
    let (n, _) = maps.scores.dims2()?;
    let l = cfg.encoder.l;
    let labels: Vec<String> = (0..n).map(|i| format!("h{}l{}", i / l, i % l)).collect();
    create_dir(&a.out)?;
    for (name, m) in [
        ("scores", &maps.scores),
        ("m_y", &maps.m_y),
        ("m_x", &maps.m_x),
    ] {
        write_file(
            &a.out.join(format!("{name}.csv")),
            matrix_csv(&labels, n, m.data()),
        )?;
    }
    say(quiet, format!("wrote {n}×{n} maps to {}", a.out.display()));
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs, quiet: bool) -> Res {
    let fault = match &a.inject_fault {
        None => None,
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| {
            let names: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Usage(format!(
                "unknown op `{name}`; known ops: {}",
                names.join(", ")
            ))
        })?),
    };
    let extra = match &a.config {
        Some(p) => Some(load_config(p)?.model()),
        None => None,
    };
    let start = Instant::now();
    let rows = run_suite_with(a.seed, fault, extra.as_ref())?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut table = Table::new(&[
        "row",
        "kind",
        "max_rel_error",
        "plain_rel_error",
        "coords",
        "redraws",
        "status",
    ]);
    for r in &rows {
        table.push(vec![
            r.name.clone(),
            r.kind.name().into(),
            format!("{:.3e}", r.max_rel_error),
            format!("{:.3e}", r.plain_rel_error),
            r.coords.to_string(),
            r.redraws.to_string(),
            if r.passed() { "pass" } else { "FAIL" }.into(),
        ]);
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        table.write(out, "gradcheck")?;
    }
    say(quiet, table.to_text());
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.clone())
        .collect();
    say(
        quiet,
        format!(
            "{} rows, {} failed, {elapsed:.1}s",
            rows.len(),
            failed.len()
        ),
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed))
    }
}
