//! One function per subcommand. Each produces one primary CSV plus one
//! JSON sidecar in the output directory and is deterministic given the
//! config file (seeds included there).

use crate::config::{self, ExperimentConfig, SweepMode};
use crate::error::CliError;
use crate::output::{fmt_f, write_json, Csv};
use serde_json::json;
use std::path::Path;
use tempaug_core::composite::{
    self, consistency_matrix, eval_full, memory_window, region_map,
};
use tempaug_core::dataio::LabeledDataset;
use tempaug_core::memory::{
    bound_check, empirical_memory, theorem2_check, MemoryParams,
};
use tempaug_core::nn::train;
use tempaug_core::noise::{covariance, isotropic_baseline, one_step_perturb, spectrum_report};
use tempaug_core::stats::{sphericity_test, welch_ttest};
use tempaug_core::trajectory::TrajectoryStore;

fn open_store(dir: &Path) -> Result<TrajectoryStore, CliError> {
    Ok(TrajectoryStore::open(dir)?)
}

fn eval_dataset(config: &ExperimentConfig, max_samples: Option<usize>) -> Result<LabeledDataset, CliError> {
    let mut ds = config.dataset.load()?;
    if let Some(n) = max_samples {
        ds = ds.take(n);
    }
    Ok(ds)
}

pub fn cmd_train(config: &ExperimentConfig, store_dir: &Path, out: &Path) -> Result<(), CliError> {
    let section = ExperimentConfig::section(&config.train, "train")?;
    let dataset = config.dataset.load()?;
    let arch = config.arch.build()?;
    let tc = section.build();
    let run = train(&arch, &dataset, &tc, &section.run_id)?;
    let store = TrajectoryStore::save_run(store_dir, &run, tc.seed, dataset.fingerprint())?;

    let mut csv = Csv::new(&["epoch", "mean_loss", "accuracy"]);
    for m in &run.metrics {
        csv.row(&[m.epoch.to_string(), fmt_f(m.mean_loss), fmt_f(m.accuracy)]);
    }
    csv.write(&out.join("metrics.csv"))?;
    write_json(
        &out.join("train.json"),
        &json!({
            "run_id": section.run_id,
            "epochs_stored": store.epochs(),
            "dataset_fingerprint": format!("{:#018x}", dataset.fingerprint()),
            "n_samples": dataset.len(),
            "final_accuracy": run.metrics.last().map(|m| m.accuracy),
            "final_mean_loss": run.metrics.last().map(|m| m.mean_loss),
        }),
    )
}

pub fn cmd_consistency(
    config: &ExperimentConfig,
    store_dir: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let section = ExperimentConfig::section(&config.consistency, "consistency")?;
    let store = open_store(store_dir)?;
    let dataset = eval_dataset(config, section.max_samples)?;
    let split = config::split_for(section.depth, store.arch())?;
    let cells = consistency_matrix(&section.t_grid, split, &dataset, &store)?;

    let mut csv = Csv::new(&["t1", "t2", "depth", "value", "n_samples"]);
    for c in &cells {
        csv.row(&[
            c.t1.to_string(),
            c.t2.to_string(),
            c.depth.to_string(),
            fmt_f(c.value),
            c.n_samples.to_string(),
        ]);
    }
    csv.write(&out.join("consistency.csv"))?;

    let windows: Vec<_> = {
        let mut grid = section.t_grid.clone();
        grid.sort_unstable();
        grid.dedup();
        grid.iter()
            .map(|&t2| json!({"t2": t2, "window": memory_window(&cells, t2, section.threshold)}))
            .collect()
    };
    write_json(
        &out.join("consistency.json"),
        &json!({
            "depth": section.depth,
            "threshold": section.threshold,
            "n_samples": dataset.len(),
            "memory_windows": windows,
        }),
    )
}

pub fn cmd_sweep(config: &ExperimentConfig, store_dir: &Path, out: &Path) -> Result<(), CliError> {
    let section = ExperimentConfig::section(&config.sweep, "sweep")?;
    let store = open_store(store_dir)?;
    let dataset = eval_dataset(config, section.max_samples)?;
    let split = config::split_for(section.depth, store.arch())?;
    let points = match section.mode {
        SweepMode::Memory => {
            composite::memory_sweep(&section.grid, section.fixed, split, &dataset, &store)?
        }
        SweepMode::Transfer => {
            composite::transferability_sweep(section.fixed, &section.grid, split, &dataset, &store)?
        }
    };

    let mut csv = Csv::new(&["t", "cross_entropy", "accuracy", "consistency"]);
    for p in &points {
        csv.row(&[
            p.t.to_string(),
            fmt_f(p.report.cross_entropy),
            fmt_f(p.report.accuracy),
            p.consistency.map(fmt_f).unwrap_or_default(),
        ]);
    }
    csv.write(&out.join("sweep.csv"))?;

    let reference = store
        .load_epoch(section.fixed)
        .ok()
        .map(|ckpt| eval_full(&ckpt, &dataset))
        .transpose()?;
    write_json(
        &out.join("sweep.json"),
        &json!({
            "mode": match section.mode { SweepMode::Memory => "memory", SweepMode::Transfer => "transfer" },
            "fixed_epoch": section.fixed,
            "depth": section.depth,
            "n_samples": dataset.len(),
            "reference_accuracy": reference.as_ref().map(|r| r.accuracy),
            "points": points.len(),
        }),
    )
}

/// Compute one-step perturbation deltas per the `[perturb]` section.
fn perturb_deltas(
    config: &ExperimentConfig,
    store: &TrajectoryStore,
) -> Result<(tempaug_core::noise::PerturbationBatch, LabeledDataset), CliError> {
    let section = ExperimentConfig::section(&config.perturb, "perturb")?;
    let dataset = config.dataset.load()?;
    if section.sample_index >= dataset.len() {
        return Err(CliError::MissingData(format!(
            "sample_index {} outside dataset of {} samples",
            section.sample_index,
            dataset.len()
        )));
    }
    let eta = match (section.eta, &config.train) {
        (Some(eta), _) => eta,
        (None, Some(t)) => t.learning_rate,
        (None, None) => {
            return Err(CliError::Config(
                "perturb.eta omitted and no [train] section to take it from".into(),
            ))
        }
    };
    let ckpt = store.load_epoch(section.epoch)?;
    let split = config::split_for(section.depth, &ckpt.arch)?;
    let x = dataset.inputs[section.sample_index].clone();
    let batch = one_step_perturb(
        &ckpt,
        &x,
        split,
        &dataset,
        section.batch_size,
        section.count,
        eta,
        section.seed,
    )?;
    Ok((batch, dataset))
}

pub fn cmd_perturb(config: &ExperimentConfig, store_dir: &Path, out: &Path) -> Result<(), CliError> {
    let section = ExperimentConfig::section(&config.perturb, "perturb")?;
    let store = open_store(store_dir)?;
    let (batch, _) = perturb_deltas(config, &store)?;
    let finite = batch.finite_deltas();
    let cov = covariance(&finite, section.centering()?)?;
    let baseline_batch = isotropic_baseline(&cov, finite.len(), section.seed)?;
    let baseline_cov = covariance(&baseline_batch.deltas, section.centering()?)?;
    let report = spectrum_report(&cov, &baseline_cov, section.top_k);

    let dim = batch.deltas[0].len();
    let header: Vec<String> = std::iter::once("b".to_string())
        .chain(std::iter::once("finite".to_string()))
        .chain((0..dim).map(|k| format!("dz{k}")))
        .collect();
    let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for (b, (delta, ok)) in batch.deltas.iter().zip(&batch.finite).enumerate() {
        let mut row = vec![b.to_string(), ok.to_string()];
        row.extend(delta.iter().map(|&v| fmt_f(v)));
        csv.row(&row);
    }
    csv.write(&out.join("perturb.csv"))?;

    write_json(
        &out.join("perturb.json"),
        &json!({
            "epoch": section.epoch,
            "depth": section.depth,
            "eta": batch.eta,
            "count": batch.deltas.len(),
            "finite_count": finite.len(),
            "trace": cov.trace,
            "eigenvalues_top": report.sgd_top,
            "baseline_eigenvalues_top": report.baseline_top,
            "anisotropy_ratio": report.sgd_ratio,
            "baseline_anisotropy_ratio": report.baseline_ratio,
            "k": report.k,
        }),
    )
}

pub fn cmd_isotropy(config: &ExperimentConfig, store_dir: &Path, out: &Path) -> Result<(), CliError> {
    let section = ExperimentConfig::section(&config.isotropy, "isotropy")?;
    let perturb = ExperimentConfig::section(&config.perturb, "perturb")?;
    let store = open_store(store_dir)?;
    let (batch, _) = perturb_deltas(config, &store)?;
    let finite = batch.finite_deltas();
    let sgd_result = sphericity_test(&finite, section.bootstrap_b, section.seed)?;
    let cov = covariance(&finite, perturb.centering()?)?;
    let baseline = isotropic_baseline(&cov, finite.len(), section.seed)?;
    let baseline_result =
        sphericity_test(&baseline.deltas, section.bootstrap_b, section.seed.wrapping_add(1))?;
    let verdict = |p: f64| {
        if p < section.alpha {
            "reject"
        } else {
            "fail-to-reject"
        }
    };

    let baseline_cov = covariance(&baseline.deltas, perturb.centering()?)?;
    let k = cov.eigenvalues.len();
    let mut csv = Csv::new(&["index", "sgd_eigenvalue", "baseline_eigenvalue"]);
    for i in 0..k {
        csv.row(&[
            i.to_string(),
            fmt_f(cov.eigenvalues[i]),
            fmt_f(baseline_cov.eigenvalues[i]),
        ]);
    }
    csv.write(&out.join("isotropy.csv"))?;

    write_json(
        &out.join("isotropy.json"),
        &json!({
            "alpha": section.alpha,
            "bootstrap_b": section.bootstrap_b,
            "sgd": {
                "t_obs": sgd_result.t_obs,
                "tau": sgd_result.tau,
                "p_value": sgd_result.p_value,
                "verdict": verdict(sgd_result.p_value),
            },
            "baseline": {
                "t_obs": baseline_result.t_obs,
                "tau": baseline_result.tau,
                "p_value": baseline_result.p_value,
                "verdict": verdict(baseline_result.p_value),
            },
            "n_samples": sgd_result.n_samples,
            "dim": sgd_result.dim,
            "underdetermined": sgd_result.underdetermined,
        }),
    )
}

fn read_values(path: &str) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::MissingData(format!("{path}: {e}")))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        values.push(line.parse::<f64>().map_err(|e| {
            CliError::Config(format!("{path} line {}: {e}", i + 1))
        })?);
    }
    Ok(values)
}

pub fn cmd_ttest(config: &ExperimentConfig, _store_dir: &Path, out: &Path) -> Result<(), CliError> {
    let section = ExperimentConfig::section(&config.ttest, "ttest")?;
    let a = read_values(&section.file1)?;
    let b = read_values(&section.file2)?;
    let r = welch_ttest(&a, &b)?;

    let mut csv = Csv::new(&["t_stat", "nu", "p_value", "mean1", "mean2", "var1", "var2", "n1", "n2"]);
    csv.row(&[
        fmt_f(r.t_stat),
        fmt_f(r.nu),
        fmt_f(r.p_value),
        fmt_f(r.mean1),
        fmt_f(r.mean2),
        fmt_f(r.var1),
        fmt_f(r.var2),
        r.n1.to_string(),
        r.n2.to_string(),
    ]);
    csv.write(&out.join("ttest.csv"))?;
    write_json(
        &out.join("ttest.json"),
        &json!({
            "t_stat": r.t_stat,
            "nu": r.nu,
            "p_value": r.p_value,
            "mean1": r.mean1,
            "mean2": r.mean2,
            "var1": r.var1,
            "var2": r.var2,
            "n1": r.n1,
            "n2": r.n2,
        }),
    )
}

pub fn cmd_memory(config: &ExperimentConfig, store_dir: &Path, out: &Path) -> Result<(), CliError> {
    let section = ExperimentConfig::section(&config.memory, "memory")?;
    let store = open_store(store_dir)?;
    let dataset = eval_dataset(config, section.max_samples)?;
    let params = MemoryParams {
        delta: section.delta,
        window: section.window,
        anchor: section.anchor,
        split: config::split_for(section.depth, store.arch())?,
        mode: config::parse_window_mode(&section.mode)?,
    };
    let em = empirical_memory(&dataset, &params, &store)?;
    let theorem2 = if section.q.is_empty() {
        None
    } else {
        Some(theorem2_check(&em.per_sample, section.delta, &section.q)?)
    };

    let mut csv = Csv::new(&["sample_index", "score"]);
    for (i, s) in em.per_sample.iter().enumerate() {
        csv.row(&[i.to_string(), fmt_f(*s)]);
    }
    csv.write(&out.join("memory.csv"))?;

    write_json(
        &out.join("memory.json"),
        &json!({
            "delta": section.delta,
            "window": section.window,
            "anchor": section.anchor,
            "depth": section.depth,
            "mode": section.mode,
            "score": em.score,
            "holds": em.holds,
            "theorem2": theorem2.map(|r| json!({
                "applicable": r.applicable,
                "mean_score": r.mean_score,
                "entries": r.entries.iter().map(|e| json!({
                    "q": e.q,
                    "fraction": e.fraction,
                    "threshold": e.threshold,
                    "pass": e.pass,
                })).collect::<Vec<_>>(),
            })),
        }),
    )
}

pub fn cmd_bound(config: &ExperimentConfig, store_dir: &Path, out: &Path) -> Result<(), CliError> {
    let section = ExperimentConfig::section(&config.bound, "bound")?;
    let store = open_store(store_dir)?;
    let train_ds = config.dataset.load()?;
    let heldout = section.heldout.load()?;
    let params = MemoryParams {
        // delta is derived inside the bound (1 - measured score); the
        // field only gates the internal holds flag, which is unused here.
        delta: 0.0,
        window: section.window,
        anchor: section.anchor,
        split: config::split_for(section.depth, store.arch())?,
        mode: config::parse_window_mode(&section.mode)?,
    };
    let r = bound_check(
        &train_ds,
        &heldout,
        section.class,
        &params,
        &store,
        section.bins_per_axis,
    )?;

    let mut csv = Csv::new(&[
        "class", "train_error", "heldout_error", "gap", "tv", "delta", "eps_est", "bound", "holds",
    ]);
    csv.row(&[
        r.class.to_string(),
        fmt_f(r.train_error),
        fmt_f(r.heldout_error),
        fmt_f(r.gap),
        fmt_f(r.tv),
        fmt_f(r.delta),
        fmt_f(r.eps_est),
        fmt_f(r.bound),
        r.holds.to_string(),
    ]);
    csv.write(&out.join("bound.csv"))?;

    write_json(
        &out.join("bound.json"),
        &json!({
            "class": r.class,
            "train_error": r.train_error,
            "heldout_error": r.heldout_error,
            "gap": r.gap,
            "tv": r.tv,
            "delta": r.delta,
            "eps_est": r.eps_est,
            "bound": r.bound,
            "verdict": r.holds,
            "bins_per_axis": r.bins_per_axis,
            "pool_size": r.pool_size,
            "heldout_size": r.heldout_size,
            // The held-out sample stands in for the unobservable true
            // class distribution.
            "heldout_is_proxy": true,
        }),
    )
}

pub fn cmd_region(config: &ExperimentConfig, store_dir: &Path, out: &Path) -> Result<(), CliError> {
    let section = ExperimentConfig::section(&config.region, "region")?;
    let store = open_store(store_dir)?;
    let ckpt = store.load_epoch(section.epoch)?;
    let split = config::split_for(section.depth, &ckpt.arch)?;
    let map = region_map(
        &ckpt,
        split,
        (section.xmin, section.xmax, section.ymin, section.ymax),
        section.resolution,
    )?;

    let mut csv = Csv::new(&["x", "y", "class"]);
    for (iy, &y) in map.ys.iter().enumerate() {
        for (ix, &x) in map.xs.iter().enumerate() {
            csv.row(&[
                fmt_f(x),
                fmt_f(y),
                map.classes[iy * map.xs.len() + ix].to_string(),
            ]);
        }
    }
    csv.write(&out.join("region.csv"))?;

    write_json(
        &out.join("region.json"),
        &json!({
            "epoch": section.epoch,
            "depth": section.depth,
            "bounds": [section.xmin, section.xmax, section.ymin, section.ymax],
            "resolution": section.resolution,
        }),
    )
}
