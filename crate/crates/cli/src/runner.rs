//! Verb implementations: `generate`, `fit`, `study`, `report`.
//!
//! Every verb works against a run directory of plain files: the config
//! snapshot, dataset CSV + manifest, per-epoch loss CSV, a binary
//! checkpoint, per-cell study CSVs, aggregated summary CSVs, a result
//! TOML, and SVG plots. Resume contracts:
//!
//! * `fit --resume` restores the checkpoint and continues; the loss CSV
//!   is truncated to the checkpointed epoch so the resumed file is
//!   bit-identical to an uninterrupted run.
//! * `study --resume` skips cells already present in the per-cell CSV.
//!   Cells are computed by a worker pool but appended strictly in
//!   canonical order by a single writer, so the done set is always a
//!   prefix and the file content does not depend on `--jobs`.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use hamlearn_autodiff::Checkpoint;
use hamlearn_core::query::generate_dataset;
use hamlearn_core::{DatasetEntry, HamiltonianModel, LocalUnitary, QueryGrid};
use hamlearn_learners::nnqs::preps_from_dataset;
use hamlearn_learners::{
    dnn_train, fit_power_law, ipinn_probe_select, ipinn_train, mse, run_cr_calibration,
    run_cr_calibration_noisy, run_drift_experiment, saturation_point, shots_for, CrGateSpec,
    EpochRow, IpinnTrainer, LearnError,
};
use serde::Serialize;

use crate::config::{
    CrMode, IpinnParams, LearnerKind, ResolvedScenario, RunConfig, ScenarioConfig, SourceKind,
    StudyConfig,
};
use crate::csvio::{append_csv, fmt_f64, read_csv, write_csv};
use crate::dataset_io::{read_dataset, write_dataset, write_manifest, Manifest};
use crate::svg::{Plot, Series};
use crate::CliError;

const LOSS_CSV: &str = "loss.csv";
const CHECKPOINT: &str = "checkpoint.bin";

fn ensure_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

/// Writes the effective configuration next to the artifacts so the run
/// can be reproduced from the directory alone.
fn snapshot_config(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| CliError::io(&path, e))
}

fn settings_and_times(
    cfg: &RunConfig,
    sc: &ResolvedScenario,
) -> Result<(Vec<(LocalUnitary, LocalUnitary)>, Vec<f64>), CliError> {
    let settings = cfg.dataset.settings.build(sc.num_qubits)?;
    let times = QueryGrid::uniform_times(cfg.dataset.dt, cfg.dataset.t_max);
    Ok((settings, times))
}

/// Builds or loads the dataset named by the config. Generated datasets
/// are persisted (CSV + manifest) into the run directory.
fn obtain_dataset(
    cfg: &RunConfig,
    sc: &ResolvedScenario,
    out: &Path,
) -> Result<Vec<DatasetEntry>, CliError> {
    match cfg.dataset.source {
        SourceKind::Load => {
            let path = cfg
                .dataset
                .path
                .as_ref()
                .expect("validate() requires dataset.path for load");
            read_dataset(path)
        }
        SourceKind::Generate => {
            let (settings, times) = settings_and_times(cfg, sc)?;
            let shots = shots_for(cfg.dataset.total_queries, settings.len(), times.len());
            let num_settings = settings.len();
            let num_times = times.len();
            let grid = QueryGrid::new(settings, times, shots)?;
            let noise = if cfg.dataset.noisy {
                sc.noise.as_ref()
            } else {
                None
            };
            let data = generate_dataset(&sc.model, noise, &grid, cfg.run.seed)?;
            let path = cfg
                .dataset
                .path
                .clone()
                .unwrap_or_else(|| out.join("dataset.csv"));
            write_dataset(&path, &data)?;
            write_manifest(
                &out.join("manifest.toml"),
                &Manifest {
                    seed: cfg.run.seed,
                    truth: sc.truth.clone(),
                    num_settings,
                    num_times,
                    shots_per_cell: shots,
                    entries: data.len(),
                    noisy: cfg.dataset.noisy,
                },
            )?;
            println!("wrote {} ({} queries)", path.display(), data.len());
            Ok(data)
        }
    }
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    snapshot_config(cfg, out)?;
    let sc = cfg.scenario.resolve()?;
    obtain_dataset(cfg, &sc, out)?;
    Ok(())
}

// ---------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------

/// The natural-parameter vector the fit's MSE is taken against: θ, plus
/// (q, μ) when the learner estimates the noise channel.
fn fit_truth(cfg: &RunConfig, sc: &ResolvedScenario) -> Vec<f64> {
    let mut truth = sc.truth.clone();
    if cfg.learner.kind == LearnerKind::Ipinn && cfg.learner.ipinn.fit_noise.is_some() {
        if let ScenarioConfig::CrGate { q, mu, .. } = &cfg.scenario {
            truth.push(*q);
            truth.push(*mu);
        }
    }
    truth
}

fn loss_header(natural_len: usize) -> String {
    let mut h = String::from("epoch,l_data,l_physics,l_initial,l_total,mse");
    for k in 0..natural_len {
        h.push_str(&format!(",p{k}"));
    }
    h
}

fn epoch_row_csv(row: &EpochRow) -> String {
    let mut s = format!(
        "{},{},{},{},{},{}",
        row.epoch,
        fmt_f64(row.l_data),
        fmt_f64(row.l_physics),
        fmt_f64(row.l_initial),
        fmt_f64(row.total),
        row.mse.map(fmt_f64).unwrap_or_default(),
    );
    for p in &row.params {
        s.push(',');
        s.push_str(&fmt_f64(*p));
    }
    s
}

/// Keeps the first `rows` data rows of a CSV (drops rows written after
/// the last checkpoint was taken).
fn truncate_csv_rows(path: &Path, header: &str, rows: usize) -> Result<(), CliError> {
    let existing = read_csv(path, header)?;
    if existing.len() < rows {
        return Err(CliError::Usage(format!(
            "{}: {} rows on disk but the checkpoint is at epoch {}; \
             the run directory is inconsistent — delete it and rerun",
            path.display(),
            existing.len(),
            rows
        )));
    }
    if existing.len() > rows {
        let kept: Vec<String> = existing[..rows].iter().map(|r| r.join(",")).collect();
        write_csv(path, header, &kept)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    learner: String,
    epochs: usize,
    wall_seconds: f64,
    final_mse: Option<f64>,
    theta_hat: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clamp_events: Option<u64>,
}

fn write_report(out: &Path, report: &FitReport) -> Result<(), CliError> {
    let path = out.join("result.toml");
    let text = toml::to_string_pretty(report)
        .map_err(|e| CliError::Usage(format!("result serialize error: {e}")))?;
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Checkpointed iPINN fit. Training runs in `checkpoint_every` chunks;
/// each chunk's rows are appended to the loss CSV before the checkpoint
/// is updated, so on a crash the CSV is at or ahead of the checkpoint
/// and resume truncates it back into agreement.
fn fit_ipinn(
    model: &HamiltonianModel,
    truth: &[f64],
    data: &[DatasetEntry],
    params: &IpinnParams,
    seed: u64,
    out: &Path,
    resume: bool,
) -> Result<FitReport, CliError> {
    let started = Instant::now();
    let tc = params.to_train_config(seed);
    let natural_len = model.num_params() + if tc.fit_noise.is_some() { 2 } else { 0 };
    let header = loss_header(natural_len);
    let preps = preps_from_dataset(data);
    let ck_path = out.join(CHECKPOINT);
    let loss_path = out.join(LOSS_CSV);

    let mut trainer;
    let mut done;
    if resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path).map_err(LearnError::from)?;
        trainer = IpinnTrainer::new(model, preps, tc.clone())?;
        trainer.restore(&ck)?;
        done = trainer.epochs_done();
        truncate_csv_rows(&loss_path, &header, done)?;
        println!("resumed at epoch {done}");
    } else {
        let (t, rows) = ipinn_probe_select(model, preps, data, &tc, Some(truth))?;
        trainer = t;
        let csv_rows: Vec<String> = rows.iter().map(epoch_row_csv).collect();
        write_csv(&loss_path, &header, &csv_rows)?;
        done = rows.len();
        if params.checkpoint_every > 0 && done > 0 {
            trainer.checkpoint().save(&ck_path).map_err(LearnError::from)?;
        }
    }

    while done < tc.epochs {
        let chunk = if params.checkpoint_every == 0 {
            tc.epochs - done
        } else {
            params.checkpoint_every.min(tc.epochs - done)
        };
        let rows = trainer.train_on(data, chunk, Some(truth), None)?;
        let csv_rows: Vec<String> = rows.iter().map(epoch_row_csv).collect();
        append_csv(&loss_path, &header, &csv_rows)?;
        done += chunk;
        if params.checkpoint_every > 0 {
            trainer.checkpoint().save(&ck_path).map_err(LearnError::from)?;
        }
    }

    let (q_hat, mu_hat) = trainer.noise_hat().map_or((None, None), |(q, m)| {
        (Some(q), Some(m))
    });
    Ok(FitReport {
        learner: "ipinn".into(),
        epochs: done,
        wall_seconds: started.elapsed().as_secs_f64(),
        final_mse: Some(mse(&trainer.natural_params(), truth)?),
        theta_hat: trainer.theta_hat(),
        q_hat,
        mu_hat,
        clamp_events: Some(trainer.clamp_events()),
    })
}

fn fit_dnn(
    model: &HamiltonianModel,
    truth: &[f64],
    data: &[DatasetEntry],
    cfg: &RunConfig,
    out: &Path,
) -> Result<FitReport, CliError> {
    let dc = cfg.learner.dnn.to_dnn_config(cfg.run.seed);
    let r = dnn_train(model, data, &dc, Some(truth), None)?;
    let header = loss_header(truth.len());
    let rows: Vec<String> = r.trace.iter().map(epoch_row_csv).collect();
    write_csv(&out.join(LOSS_CSV), &header, &rows)?;
    Ok(FitReport {
        learner: "dnn".into(),
        epochs: r.trace.len(),
        wall_seconds: r.wall.as_secs_f64(),
        final_mse: r.final_mse,
        theta_hat: r.theta_hat,
        q_hat: r.q_hat,
        mu_hat: r.mu_hat,
        clamp_events: None,
    })
}

pub fn cmd_fit(cfg: &RunConfig, out: &Path, resume: bool) -> Result<(), CliError> {
    ensure_dir(out)?;
    snapshot_config(cfg, out)?;
    let sc = cfg.scenario.resolve()?;
    let data = obtain_dataset(cfg, &sc, out)?;
    let truth = fit_truth(cfg, &sc);
    let report = match cfg.learner.kind {
        LearnerKind::Ipinn => fit_ipinn(
            &sc.model,
            &truth,
            &data,
            &cfg.learner.ipinn,
            cfg.run.seed,
            out,
            resume,
        )?,
        LearnerKind::Dnn => fit_dnn(&sc.model, &truth, &data, cfg, out)?,
    };
    write_report(out, &report)?;
    if cfg.report.plots {
        plot_fit(out)?;
    }
    println!(
        "fit: learner={} epochs={} mse={} wall={:.1}s",
        report.learner,
        report.epochs,
        report
            .final_mse
            .map(|m| format!("{m:.3e}"))
            .unwrap_or_else(|| "n/a".into()),
        report.wall_seconds
    );
    println!("wrote {}", out.join("result.toml").display());
    Ok(())
}

/// Renders the loss-trace and MSE plots from the loss CSV.
fn plot_fit(out: &Path) -> Result<(), CliError> {
    let path = out.join(LOSS_CSV);
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return Ok(());
    };
    if !header.starts_with("epoch,l_data,l_physics,l_initial,l_total,mse") {
        return Err(CliError::Usage(format!(
            "{}: unrecognized loss CSV header",
            path.display()
        )));
    }
    let mut ld = Vec::new();
    let mut lp = Vec::new();
    let mut li = Vec::new();
    let mut ms = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 6 {
            continue;
        }
        let e: f64 = cols[0].parse().unwrap_or(f64::NAN);
        let parse = |s: &str| s.parse::<f64>().ok();
        if let Some(v) = parse(cols[1]) {
            ld.push((e, v));
        }
        if let Some(v) = parse(cols[2]) {
            lp.push((e, v));
        }
        if let Some(v) = parse(cols[3]) {
            li.push((e, v));
        }
        if let Some(v) = parse(cols[5]) {
            ms.push((e, v));
        }
    }
    let thin = |v: Vec<(f64, f64)>| -> Vec<(f64, f64)> {
        let step = (v.len() / 1_000).max(1);
        v.into_iter().step_by(step).collect()
    };
    let series = |label: &str, pts: Vec<(f64, f64)>| Series {
        label: label.into(),
        points: thin(pts),
        line: true,
        markers: false,
    };
    let loss_svg = Plot::new("Training losses", "epoch", "loss")
        .with_series(series("data", ld))
        .with_series(series("physics", lp))
        .with_series(series("initial", li))
        .render();
    let p1 = out.join("loss.svg");
    std::fs::write(&p1, loss_svg).map_err(|e| CliError::io(&p1, e))?;
    println!("wrote {}", p1.display());
    if !ms.is_empty() {
        let mut plot = Plot::new("Parameter error", "epoch", "MSE");
        plot.log_y = true;
        let svg = plot.with_series(series("mse", ms)).render();
        let p2 = out.join("mse.svg");
        std::fs::write(&p2, svg).map_err(|e| CliError::io(&p2, e))?;
        println!("wrote {}", p2.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------
// study: worker pool with ordered single-writer persistence
// ---------------------------------------------------------------------

/// Runs `work` over `cells` on up to `jobs` threads, delivering each
/// cell's rows to `sink` strictly in cell order. The first error stops
/// new work and is returned after in-flight cells finish.
fn run_pool<C: Sync>(
    jobs: usize,
    cells: &[C],
    work: impl Fn(&C) -> Result<Vec<String>, CliError> + Sync,
    mut sink: impl FnMut(&C, Vec<String>) -> Result<(), CliError>,
) -> Result<(), CliError> {
    if cells.is_empty() {
        return Ok(());
    }
    let jobs = jobs.clamp(1, cells.len());
    if jobs == 1 {
        for c in cells {
            let rows = work(c)?;
            sink(c, rows)?;
        }
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<String>, CliError>)>();
    std::thread::scope(|scope| {
        let next = &next;
        let stop = &stop;
        let work = &work;
        for _ in 0..jobs {
            let tx = tx.clone();
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let r = work(&cells[i]);
                if r.is_err() {
                    stop.store(true, Ordering::Relaxed);
                }
                if tx.send((i, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        let mut next_write = 0usize;
        let mut first_err: Option<CliError> = None;
        for (i, r) in rx {
            match r {
                Ok(rows) => {
                    pending.insert(i, rows);
                }
                Err(e) => {
                    if first_err.is_none() {
                        first_err = Some(e);
                    }
                }
            }
            while let Some(rows) = pending.remove(&next_write) {
                if first_err.is_none() {
                    if let Err(e) = sink(&cells[next_write], rows) {
                        first_err = Some(e);
                        stop.store(true, Ordering::Relaxed);
                    }
                }
                next_write += 1;
            }
        }
        match first_err {
            None => Ok(()),
            Some(e) => Err(e),
        }
    })
}

/// The set of `key_cols` tuples already present in a cells CSV (empty
/// when the file is absent or `resume` is off — in the latter case the
/// stale file is removed so a fresh run never mixes configurations).
fn done_keys(
    path: &Path,
    header: &str,
    key_cols: &[usize],
    resume: bool,
) -> Result<HashSet<Vec<String>>, CliError> {
    if !resume {
        if path.exists() {
            std::fs::remove_file(path).map_err(|e| CliError::io(path, e))?;
        }
        return Ok(HashSet::new());
    }
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let rows = read_csv(path, header)?;
    Ok(rows
        .iter()
        .map(|r| key_cols.iter().map(|&c| r[c].clone()).collect())
        .collect())
}

/// One trained MSE for a study cell, honoring the configured learner.
fn train_cell(
    cfg: &RunConfig,
    model: &HamiltonianModel,
    truth: &[f64],
    data: &[DatasetEntry],
    seed: u64,
) -> Result<f64, CliError> {
    let m = match cfg.learner.kind {
        LearnerKind::Ipinn => {
            let tc = cfg.learner.ipinn.to_train_config(seed);
            ipinn_train(model, data, &tc, Some(truth), None)?.final_mse
        }
        LearnerKind::Dnn => {
            let dc = cfg.learner.dnn.to_dnn_config(seed);
            dnn_train(model, data, &dc, Some(truth), None)?.final_mse
        }
    };
    Ok(m.expect("truth supplied"))
}

pub fn cmd_study(cfg: &RunConfig, out: &Path, resume: bool) -> Result<(), CliError> {
    ensure_dir(out)?;
    snapshot_config(cfg, out)?;
    let study = cfg.study.as_ref().ok_or_else(|| {
        CliError::Usage("the study verb requires a [study] section in the config".into())
    })?;
    let sc = cfg.scenario.resolve()?;
    match study {
        StudyConfig::Scaling { counts, seeds } => {
            study_scaling(cfg, &sc, counts, seeds, out, resume)?;
            aggregate_scaling(cfg, out)?;
        }
        StudyConfig::Dt {
            dt_values,
            um_budget,
            seeds,
        } => {
            study_dt(cfg, &sc, dt_values, *um_budget, seeds, out, resume)?;
            aggregate_dt(cfg, out)?;
        }
        StudyConfig::Constraint {
            p_values,
            total_queries,
            seeds,
            ..
        } => {
            study_constraint(cfg, &sc, p_values, *total_queries, seeds, out, resume)?;
            aggregate_constraint(cfg, out)?;
        }
        StudyConfig::Drift { seeds, .. } => {
            study_drift(cfg, &sc, seeds, out, resume)?;
            aggregate_drift(cfg, out)?;
        }
        StudyConfig::Cr { seeds, .. } => {
            study_cr(cfg, seeds, out, resume)?;
            aggregate_cr(cfg, out)?;
        }
    }
    Ok(())
}

const SCALING_HEADER: &str = "count,actual_n,seed,mse";

fn study_scaling(
    cfg: &RunConfig,
    sc: &ResolvedScenario,
    counts: &[usize],
    seeds: &[u64],
    out: &Path,
    resume: bool,
) -> Result<(), CliError> {
    let path = out.join("scaling_cells.csv");
    let done = done_keys(&path, SCALING_HEADER, &[0, 2], resume)?;
    let (settings, times) = settings_and_times(cfg, sc)?;
    let mut cells = Vec::new();
    for &count in counts {
        for &seed in seeds {
            if !done.contains(&vec![count.to_string(), seed.to_string()]) {
                cells.push((count, seed));
            }
        }
    }
    let noise = if cfg.dataset.noisy { sc.noise.clone() } else { None };
    run_pool(
        cfg.run.jobs,
        &cells,
        |&(count, seed)| {
            let shots = shots_for(count, settings.len(), times.len());
            let grid = QueryGrid::new(settings.clone(), times.clone(), shots)?;
            let actual = grid.num_entries();
            let data = generate_dataset(&sc.model, noise.as_ref(), &grid, seed)?;
            let m = train_cell(cfg, &sc.model, &sc.truth, &data, seed)?;
            Ok(vec![format!("{count},{actual},{seed},{}", fmt_f64(m))])
        },
        |&(count, seed), rows| {
            append_csv(&path, SCALING_HEADER, &rows)?;
            println!("cell count={count} seed={seed}: {}", rows[0]);
            Ok(())
        },
    )
}

/// Means per count plus the power-law fit, written from the cells CSV so
/// resumed and fresh runs aggregate identically.
fn aggregate_scaling(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let path = out.join("scaling_cells.csv");
    if !path.exists() {
        return Ok(false);
    }
    let rows = read_csv(&path, SCALING_HEADER)?;
    let mut order: Vec<(usize, usize)> = Vec::new(); // (count, actual)
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let count: usize = parse_col(&path, r, 0)?;
        let actual: usize = parse_col(&path, r, 1)?;
        let m: f64 = parse_col(&path, r, 3)?;
        if !order.iter().any(|&(c, _)| c == count) {
            order.push((count, actual));
        }
        groups.entry(count).or_default().push(m);
    }
    let mut summary = Vec::new();
    let mut points = Vec::new();
    for &(count, actual) in &order {
        let g = &groups[&count];
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        summary.push(format!("{count},{actual},{}", fmt_f64(mean)));
        points.push((actual as f64, mean));
    }
    write_csv(&out.join("scaling.csv"), "count,actual_n,mean_mse", &summary)?;
    let fit = fit_power_law(&points)?;
    let note = format!("fit: MSE ~ N^{:.3}", fit.ell);
    #[derive(Serialize)]
    struct ScalingReport {
        kind: &'static str,
        ell: f64,
        amplitude_log: f64,
        residual: f64,
    }
    let report = ScalingReport {
        kind: "scaling",
        ell: fit.ell,
        amplitude_log: fit.amplitude_log,
        residual: fit.residual,
    };
    write_study_report(out, &report)?;
    if cfg.report.plots {
        let svg = Plot::new("Query-count scaling", "total queries N", "mean MSE")
            .log_log()
            .with_series(Series {
                label: learner_label(cfg),
                points,
                line: true,
                markers: true,
            })
            .with_note(note)
            .render();
        write_plot(out, "scaling.svg", &svg)?;
    }
    println!("wrote {}", out.join("scaling.csv").display());
    Ok(true)
}

const DT_HEADER: &str = "dt,seed,mse";

fn study_dt(
    cfg: &RunConfig,
    sc: &ResolvedScenario,
    dt_values: &[f64],
    um_budget: usize,
    seeds: &[u64],
    out: &Path,
    resume: bool,
) -> Result<(), CliError> {
    let path = out.join("dt_cells.csv");
    let done = done_keys(&path, DT_HEADER, &[0, 1], resume)?;
    let (settings, _) = settings_and_times(cfg, sc)?;
    let shots = shots_for(um_budget, settings.len(), 1);
    let mut cells = Vec::new();
    for &dt in dt_values {
        for &seed in seeds {
            if !done.contains(&vec![fmt_f64(dt), seed.to_string()]) {
                cells.push((dt, seed));
            }
        }
    }
    run_pool(
        cfg.run.jobs,
        &cells,
        |&(dt, seed)| {
            let times = QueryGrid::uniform_times(dt, cfg.dataset.t_max);
            let grid = QueryGrid::new(settings.clone(), times, shots)?;
            let data = generate_dataset(&sc.model, None, &grid, seed)?;
            let m = train_cell(cfg, &sc.model, &sc.truth, &data, seed)?;
            Ok(vec![format!("{},{seed},{}", fmt_f64(dt), fmt_f64(m))])
        },
        |&(dt, seed), rows| {
            append_csv(&path, DT_HEADER, &rows)?;
            println!("cell dt={dt} seed={seed}: {}", rows[0]);
            Ok(())
        },
    )
}

fn aggregate_dt(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let path = out.join("dt_cells.csv");
    if !path.exists() {
        return Ok(false);
    }
    let rows = read_csv(&path, DT_HEADER)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let key = r[0].clone();
        if !order.contains(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(parse_col(&path, r, 2)?);
    }
    let mut summary = Vec::new();
    let mut points = Vec::new();
    for key in &order {
        let g = &groups[key];
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        summary.push(format!("{key},{}", fmt_f64(mean)));
        let dt: f64 = key.parse().map_err(|_| bad_cell(&path, key))?;
        points.push((dt, mean));
    }
    write_csv(&out.join("dt.csv"), "dt,mean_mse", &summary)?;
    if cfg.report.plots {
        let svg = Plot::new("Time-grid refinement", "Δt", "mean MSE")
            .log_log()
            .with_series(Series {
                label: learner_label(cfg),
                points,
                line: true,
                markers: true,
            })
            .render();
        write_plot(out, "dt.svg", &svg)?;
    }
    println!("wrote {}", out.join("dt.csv").display());
    Ok(true)
}

const CONSTRAINT_HEADER: &str = "p,seed,mse";

fn study_constraint(
    cfg: &RunConfig,
    sc: &ResolvedScenario,
    p_values: &[usize],
    total_queries: usize,
    seeds: &[u64],
    out: &Path,
    resume: bool,
) -> Result<(), CliError> {
    if cfg.learner.kind != LearnerKind::Ipinn {
        return Err(CliError::Usage(
            "study.kind = \"constraint\" sweeps collocation points and requires \
             learner.kind = \"ipinn\""
                .into(),
        ));
    }
    let path = out.join("constraint_cells.csv");
    let done = done_keys(&path, CONSTRAINT_HEADER, &[0, 1], resume)?;
    let (settings, times) = settings_and_times(cfg, sc)?;
    let shots = shots_for(total_queries, settings.len(), times.len());
    let mut cells = Vec::new();
    for &p in p_values {
        for &seed in seeds {
            if !done.contains(&vec![p.to_string(), seed.to_string()]) {
                cells.push((p, seed));
            }
        }
    }
    run_pool(
        cfg.run.jobs,
        &cells,
        |&(p, seed)| {
            // Same dataset for every P at a given seed: generation is
            // deterministic in (grid, seed).
            let grid = QueryGrid::new(settings.clone(), times.clone(), shots)?;
            let data = generate_dataset(&sc.model, None, &grid, seed)?;
            let mut tc = cfg.learner.ipinn.to_train_config(seed);
            tc.p_points = p;
            let r = ipinn_train(&sc.model, &data, &tc, Some(&sc.truth), None)?;
            let m = r.final_mse.expect("truth supplied");
            Ok(vec![format!("{p},{seed},{}", fmt_f64(m))])
        },
        |&(p, seed), rows| {
            append_csv(&path, CONSTRAINT_HEADER, &rows)?;
            println!("cell p={p} seed={seed}: {}", rows[0]);
            Ok(())
        },
    )
}

fn aggregate_constraint(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let path = out.join("constraint_cells.csv");
    if !path.exists() {
        return Ok(false);
    }
    let threshold = match &cfg.study {
        Some(StudyConfig::Constraint { threshold, .. }) => *threshold,
        _ => 0.05,
    };
    let rows = read_csv(&path, CONSTRAINT_HEADER)?;
    let mut order: Vec<usize> = Vec::new();
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let p: usize = parse_col(&path, r, 0)?;
        if !order.contains(&p) {
            order.push(p);
        }
        groups.entry(p).or_default().push(parse_col(&path, r, 2)?);
    }
    let means: Vec<f64> = order
        .iter()
        .map(|p| {
            let g = &groups[p];
            g.iter().sum::<f64>() / g.len() as f64
        })
        .collect();
    let (improvements, saturation_p) = saturation_point(&order, &means, threshold);
    let mut summary = Vec::new();
    for (i, p) in order.iter().enumerate() {
        let imp = if i == 0 {
            String::new()
        } else {
            fmt_f64(improvements[i - 1])
        };
        summary.push(format!("{p},{},{imp}", fmt_f64(means[i])));
    }
    write_csv(
        &out.join("constraint.csv"),
        "p,mean_mse,improvement",
        &summary,
    )?;
    #[derive(Serialize)]
    struct ConstraintReport {
        kind: &'static str,
        threshold: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        saturation_p: Option<usize>,
        improvements: Vec<f64>,
    }
    write_study_report(
        out,
        &ConstraintReport {
            kind: "constraint",
            threshold,
            saturation_p,
            improvements,
        },
    )?;
    if cfg.report.plots {
        let points: Vec<(f64, f64)> = order
            .iter()
            .zip(&means)
            .map(|(&p, &m)| (p as f64, m))
            .collect();
        let mut plot = Plot::new("Collocation-point saturation", "P", "mean MSE");
        plot.log_y = true;
        let mut plot = plot.with_series(Series {
            label: "iPINN".into(),
            points,
            line: true,
            markers: true,
        });
        if let Some(p) = saturation_p {
            plot = plot.with_note(format!("saturates at P = {p}"));
        }
        write_plot(out, "constraint.svg", &plot.render())?;
    }
    println!("wrote {}", out.join("constraint.csv").display());
    Ok(true)
}

const DRIFT_HEADER: &str = "seed,batch,mse";

fn study_drift(
    cfg: &RunConfig,
    sc: &ResolvedScenario,
    seeds: &[u64],
    out: &Path,
    resume: bool,
) -> Result<(), CliError> {
    let Some(StudyConfig::Drift {
        pretrain_total,
        delta_n,
        batches,
        epochs_per_batch,
        threshold,
        ..
    }) = &cfg.study
    else {
        unreachable!("dispatched on study kind");
    };
    let after = sc
        .after
        .as_ref()
        .expect("validate() requires the drift scenario");
    let path = out.join("drift_cells.csv");
    let done = done_keys(&path, DRIFT_HEADER, &[0], resume)?;
    let (settings, times) = settings_and_times(cfg, sc)?;
    let cells: Vec<u64> = seeds
        .iter()
        .copied()
        .filter(|s| !done.contains(&vec![s.to_string()]))
        .collect();
    run_pool(
        cfg.run.jobs,
        &cells,
        |&seed| {
            let tc = cfg.learner.ipinn.to_train_config(seed);
            let trace = run_drift_experiment(
                &sc.model,
                after,
                &settings,
                &times,
                *pretrain_total,
                *delta_n,
                *batches,
                *epochs_per_batch,
                *threshold,
                &tc,
                seed,
            )?;
            // Batch 0 is the pretrain MSE against the pre-change truth;
            // batches 1.. are against the post-change truth.
            let mut rows = vec![format!("{seed},0,{}", fmt_f64(trace.pre_mse))];
            for (b, m) in trace.batch_mse.iter().enumerate() {
                rows.push(format!("{seed},{},{}", b + 1, fmt_f64(*m)));
            }
            Ok(rows)
        },
        |&seed, rows| {
            append_csv(&path, DRIFT_HEADER, &rows)?;
            println!("cell seed={seed}: {} batches", rows.len() - 1);
            Ok(())
        },
    )
}

fn aggregate_drift(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let path = out.join("drift_cells.csv");
    if !path.exists() {
        return Ok(false);
    }
    let threshold = match &cfg.study {
        Some(StudyConfig::Drift { threshold, .. }) => *threshold,
        _ => 1e-2,
    };
    let rows = read_csv(&path, DRIFT_HEADER)?;
    let mut batches: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut per_seed: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    for r in &rows {
        let seed: u64 = parse_col(&path, r, 0)?;
        let b: usize = parse_col(&path, r, 1)?;
        let m: f64 = parse_col(&path, r, 2)?;
        batches.entry(b).or_default().push(m);
        per_seed.entry(seed).or_default().push((b, m));
    }
    let mut summary = Vec::new();
    let mut points = Vec::new();
    for (b, g) in &batches {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        summary.push(format!("{b},{}", fmt_f64(mean)));
        points.push((*b as f64, mean));
    }
    write_csv(&out.join("drift.csv"), "batch,mean_mse", &summary)?;
    let first_hits: Vec<Option<usize>> = per_seed
        .values()
        .map(|trace| {
            trace
                .iter()
                .filter(|(b, _)| *b >= 1)
                .find(|(_, m)| *m < threshold)
                .map(|(b, _)| *b)
        })
        .collect();
    #[derive(Serialize)]
    struct DriftReport {
        kind: &'static str,
        threshold: f64,
        seeds: Vec<u64>,
        first_hit: Vec<i64>,
    }
    write_study_report(
        out,
        &DriftReport {
            kind: "drift",
            threshold,
            seeds: per_seed.keys().copied().collect(),
            first_hit: first_hits
                .iter()
                .map(|h| h.map(|b| b as i64).unwrap_or(-1))
                .collect(),
        },
    )?;
    if cfg.report.plots {
        let mut plot = Plot::new("Drift compensation", "batch (0 = pretrain)", "mean MSE");
        plot.log_y = true;
        let svg = plot
            .with_series(Series {
                label: "iPINN".into(),
                points,
                line: true,
                markers: true,
            })
            .with_note(format!("threshold {threshold:e}"))
            .render();
        write_plot(out, "drift.svg", &svg)?;
    }
    println!("wrote {}", out.join("drift.csv").display());
    Ok(true)
}

const CR_HEADER: &str = "seed,mse,final_loss,c0,c1,c2,c3,c4,c5,c6,q,mu";

fn study_cr(cfg: &RunConfig, seeds: &[u64], out: &Path, resume: bool) -> Result<(), CliError> {
    let Some(StudyConfig::Cr {
        mode,
        times,
        epochs,
        lr,
        restarts,
        total_queries,
        ..
    }) = &cfg.study
    else {
        unreachable!("dispatched on study kind");
    };
    let ScenarioConfig::CrGate { c, q, mu, t0 } = &cfg.scenario else {
        unreachable!("validate() requires the cr_gate scenario");
    };
    let spec = CrGateSpec {
        c: *c,
        q: *q,
        mu: *mu,
        t0: *t0,
    };
    let path = out.join("cr_cells.csv");
    let done = done_keys(&path, CR_HEADER, &[0], resume)?;
    let cells: Vec<u64> = seeds
        .iter()
        .copied()
        .filter(|s| !done.contains(&vec![s.to_string()]))
        .collect();
    run_pool(
        cfg.run.jobs,
        &cells,
        |&seed| {
            let cal = match mode {
                CrMode::Distribution => {
                    run_cr_calibration(&spec, times, *epochs, *lr, *restarts, seed)?
                }
                CrMode::Sampled => run_cr_calibration_noisy(
                    &spec,
                    times,
                    *total_queries,
                    *epochs,
                    *lr,
                    *restarts,
                    seed,
                    (0.0, 0.0),
                )?,
            };
            let mut row = format!("{seed},{},{}", fmt_f64(cal.mse), fmt_f64(cal.final_loss));
            for v in &cal.c_hat {
                row.push(',');
                row.push_str(&fmt_f64(*v));
            }
            row.push(',');
            row.push_str(&cal.q_hat.map(fmt_f64).unwrap_or_default());
            row.push(',');
            row.push_str(&cal.mu_hat.map(fmt_f64).unwrap_or_default());
            Ok(vec![row])
        },
        |&seed, rows| {
            append_csv(&path, CR_HEADER, &rows)?;
            println!("cell seed={seed}: {}", rows[0]);
            Ok(())
        },
    )
}

fn aggregate_cr(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let path = out.join("cr_cells.csv");
    if !path.exists() {
        return Ok(false);
    }
    let rows = read_csv(&path, CR_HEADER)?;
    let mut seeds = Vec::new();
    let mut mses = Vec::new();
    for r in &rows {
        seeds.push(parse_col::<u64>(&path, r, 0)?);
        mses.push(parse_col::<f64>(&path, r, 1)?);
    }
    let mean = mses.iter().sum::<f64>() / mses.len().max(1) as f64;
    write_csv(
        &out.join("cr.csv"),
        "mean_mse",
        &[fmt_f64(mean)],
    )?;
    #[derive(Serialize)]
    struct CrReport {
        kind: &'static str,
        mean_mse: f64,
        seeds: Vec<u64>,
        per_seed_mse: Vec<f64>,
    }
    write_study_report(
        out,
        &CrReport {
            kind: "cr",
            mean_mse: mean,
            seeds: seeds.clone(),
            per_seed_mse: mses.clone(),
        },
    )?;
    if cfg.report.plots {
        let points: Vec<(f64, f64)> = seeds
            .iter()
            .zip(&mses)
            .map(|(&s, &m)| (s as f64, m))
            .collect();
        let mut plot = Plot::new("CR calibration", "seed", "MSE");
        plot.log_y = true;
        let svg = plot
            .with_series(Series {
                label: "calibration".into(),
                points,
                line: false,
                markers: true,
            })
            .render();
        write_plot(out, "cr.svg", &svg)?;
    }
    println!("wrote {}", out.join("cr.csv").display());
    Ok(true)
}

/// Regenerates summaries and plots from whatever artifacts the run
/// directory holds.
pub fn cmd_report(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut any = false;
    if out.join(LOSS_CSV).exists() {
        plot_fit(out)?;
        any = true;
    }
    any |= aggregate_scaling(cfg, out)?;
    any |= aggregate_dt(cfg, out)?;
    any |= aggregate_constraint(cfg, out)?;
    any |= aggregate_drift(cfg, out)?;
    any |= aggregate_cr(cfg, out)?;
    if !any {
        return Err(CliError::Usage(format!(
            "{}: no reportable artifacts (expected loss.csv or *_cells.csv)",
            out.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// small shared helpers
// ---------------------------------------------------------------------

fn learner_label(cfg: &RunConfig) -> String {
    match cfg.learner.kind {
        LearnerKind::Ipinn => "iPINN".into(),
        LearnerKind::Dnn => "DNN".into(),
    }
}

fn write_plot(out: &Path, name: &str, svg: &str) -> Result<(), CliError> {
    let path = out.join(name);
    std::fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_study_report<T: Serialize>(out: &Path, report: &T) -> Result<(), CliError> {
    let path = out.join("study_result.toml");
    let text = toml::to_string_pretty(report)
        .map_err(|e| CliError::Usage(format!("report serialize error: {e}")))?;
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

fn parse_col<T: std::str::FromStr>(
    path: &Path,
    row: &[String],
    col: usize,
) -> Result<T, CliError> {
    row.get(col)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad_cell(path, &row.join(",")))
}

fn bad_cell(path: &Path, row: &str) -> CliError {
    CliError::Usage(format!("{}: malformed row {row:?}", path.display()))
}

/// Resolves the run directory: explicit flag, then the config, then
/// $HAMLEARN_OUT/<config stem>, then ./runs/<config stem>.
pub fn resolve_out_dir(
    flag: Option<&Path>,
    cfg: &RunConfig,
    config_path: &Path,
) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.run.out_dir {
        return p.clone();
    }
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    match std::env::var_os("HAMLEARN_OUT") {
        Some(root) => PathBuf::from(root).join(stem),
        None => PathBuf::from("runs").join(stem),
    }
}
