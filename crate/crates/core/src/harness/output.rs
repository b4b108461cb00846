//! CSV persistence. Every file starts with a `# config_hash=<sha256>` line,
//! followed by a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::run::{ExperimentResult, RunLog, SummaryRow};

pub const STEPS_FILE: &str = "steps.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const WORLD_FILE: &str = "world.json";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create(path: &Path, hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# config_hash={hash}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(w))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(path, e)
}

pub fn step_header(dim: usize, timing: bool) -> Vec<String> {
    let mut h: Vec<String> = ["run_id", "episode", "step", "state"].iter().map(|s| s.to_string()).collect();
    h.extend((0..dim).map(|i| format!("z_{i}")));
    h.extend(["labeled", "reward", "d_gap", "mahalanobis_true", "beta"].iter().map(|s| s.to_string()));
    if timing {
        h.push("elapsed_ns".into());
    }
    h
}

pub fn write_steps(path: &Path, hash: &str, runs: &[RunLog], dim: usize, timing: bool) -> Result<()> {
    let mut w = create(path, hash)?;
    let err = csv_err(path);
    w.write_record(step_header(dim, timing)).map_err(&err)?;
    for run in runs {
        for s in &run.steps {
            let mut row = vec![
                run.run_id.clone(),
                s.episode.to_string(),
                s.step.to_string(),
                s.state.to_string(),
            ];
            row.extend(s.z.iter().map(|v| v.to_string()));
            row.push((s.labeled as u8).to_string());
            row.push(opt(s.reward));
            row.push(opt(s.d_gap));
            row.push(opt(s.mahalanobis_true));
            row.push(opt(s.beta));
            if timing {
                row.push(s.elapsed_ns.map(|n| n.to_string()).unwrap_or_default());
            }
            w.write_record(&row).map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_episodes(path: &Path, hash: &str, runs: &[RunLog]) -> Result<()> {
    let mut w = create(path, hash)?;
    let err = csv_err(path);
    w.write_record(["run_id", "episode", "G_hat", "G_star", "regret_cum", "labels_cum", "zhat_err"])
        .map_err(&err)?;
    for run in runs {
        for e in &run.episodes {
            w.write_record([
                run.run_id.clone(),
                e.episode.to_string(),
                e.g_hat.to_string(),
                e.g_star.to_string(),
                e.regret_cum.to_string(),
                e.labels_cum.to_string(),
                opt(e.zhat_err),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, hash: &str, rows: &[SummaryRow]) -> Result<()> {
    let mut w = create(path, hash)?;
    let err = csv_err(path);
    let mut header = vec!["agent".to_string(), "episode".into(), "n_seeds".into()];
    for m in ["G_hat", "G_star", "regret_cum", "labels_cum"] {
        for s in ["mean", "min", "max"] {
            header.push(format!("{m}_{s}"));
        }
    }
    w.write_record(&header).map_err(&err)?;
    for r in rows {
        let mut row = vec![r.agent.clone(), r.episode.to_string(), r.n_seeds.to_string()];
        for block in [&r.g_hat, &r.g_star, &r.regret_cum, &r.labels_cum] {
            row.extend(block.iter().map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the step, episode and summary CSVs plus the world snapshot.
/// Returns the written paths.
pub fn write_experiment(result: &ExperimentResult, config: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = config.hash();
    let paths: Vec<PathBuf> = [STEPS_FILE, EPISODES_FILE, SUMMARY_FILE, WORLD_FILE]
        .iter()
        .map(|f| out.join(f))
        .collect();
    write_steps(&paths[0], &hash, &result.runs, result.world.dim(), config.timing)?;
    write_episodes(&paths[1], &hash, &result.runs)?;
    write_summary(&paths[2], &hash, &result.summary)?;
    result.world.save(&paths[3], Some(&config.world))?;
    Ok(paths)
}

/// Visited states of one run, in order, read back from a step log.
pub fn read_run_states(path: &Path, run_id: &str) -> Result<Vec<usize>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("missing column {name:?}")))
    };
    let (id_col, state_col) = (col("run_id")?, col("state")?);
    let mut states = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        if &rec[id_col] == run_id {
            let s = rec[state_col]
                .parse()
                .map_err(|e| Error::format(path, format!("bad state {:?}: {e}", &rec[state_col])))?;
            states.push(s);
        }
    }
    Ok(states)
}

/// Run ids present in a step log, in first-seen order.
pub fn read_run_ids(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let mut ids: Vec<String> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        if ids.last().map(|s| s.as_str()) != Some(&rec[0]) && !ids.iter().any(|s| s == &rec[0]) {
            ids.push(rec[0].to_string());
        }
    }
    Ok(ids)
}
