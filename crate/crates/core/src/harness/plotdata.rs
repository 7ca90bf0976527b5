//! Plot-ready CSVs derived from a run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::case::CaseFile;
use crate::error::{Error, Result};
use crate::orchestrator::{read_solutions, IterationMetrics, Workspace, METRICS_HEADER};
use crate::sim::ForwardModel;

pub const DEFAULT_WINDOW: usize = 10;
pub const REWARD_HEADER: &str = "iteration,global_step,mean_reward,smoothed_reward";
pub const MATCH_HEADER: &str = "series,step,time_days,quantity,observed,simulated";

pub fn parse_metrics(text: &str) -> Result<Vec<IterationMetrics>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => return Err(Error::Config(format!("unexpected metrics header {other:?}"))),
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Config(format!("metrics row has {} fields: {l:?}", f.len())));
            }
            let bad = |i: usize| Error::Config(format!("bad metrics field {:?}", f[i]));
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(i));
            let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad(i));
            Ok(IterationMetrics {
                iteration: int(0)?,
                global_step: int(1)?,
                mean_reward: num(2)?,
                policy_loss: num(3)?,
                value_loss: num(4)?,
                clip_fraction: num(5)?,
                sims_total: int(6)?,
                solutions: int(7)? as usize,
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text)
}

/// Trailing moving average; the first `window - 1` points average what is
/// available.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut acc = 0.0;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            acc += x;
            if i >= w {
                acc -= xs[i - w];
            }
            acc / (i + 1).min(w) as f64
        })
        .collect()
}

pub fn reward_curve_csv(history: &[IterationMetrics], window: usize) -> String {
    let rewards: Vec<f64> = history.iter().map(|m| m.mean_reward).collect();
    let smoothed = smooth(&rewards, window);
    let mut out = format!("{REWARD_HEADER}\n");
    for (m, s) in history.iter().zip(smoothed) {
        let _ = writeln!(out, "{},{},{},{}", m.iteration, m.global_step, m.mean_reward, s);
    }
    out
}

fn push_series(out: &mut String, name: &str, case: &CaseFile, simulated: &[f64]) {
    let per = case.schedule.observations_per_step();
    let labels: Vec<String> = case.schedule.observed.iter().map(|q| q.label()).collect();
    for (i, (obs, sim)) in case.objective.observations.iter().zip(simulated).enumerate() {
        let step = i / per;
        let t = (step + 1) as f64 * case.schedule.dt;
        let _ = writeln!(out, "{name},{},{t},{},{obs},{sim}", step + 1, labels[i % per]);
    }
}

/// Long-format observed vs simulated series for the start vector and every
/// archived solution in `run_dir`.
pub fn solutions_match_csv(case: &CaseFile, model: &dyn ForwardModel, run_dir: &Path) -> Result<String> {
    let ws = Workspace::open(run_dir)?;
    let solutions = read_solutions(&ws.solutions_dir())?;
    let mut out = format!("{MATCH_HEADER}\n");
    let start = model.simulate(case.start.as_slice(), &case.schedule)?;
    push_series(&mut out, "start", case, &start.observations);
    for s in &solutions {
        let sim = if s.entry.observations.len() == case.objective.observations.len() {
            s.entry.observations.clone()
        } else {
            model.simulate(&s.entry.params, &case.schedule)?.observations
        };
        push_series(&mut out, &format!("sol_{}", s.index), case, &sim);
    }
    Ok(out)
}

/// Writes `reward_curve.csv`, `solutions_match.csv` and, when a bench table
/// is given, a verbatim copy as `scalability.csv`. Returns the written paths.
pub fn write_plotdata(
    case: &CaseFile,
    model: &dyn ForwardModel,
    run_dir: &Path,
    out_dir: &Path,
    window: usize,
    bench_csv: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let ws = Workspace::open(run_dir)?;
    let history = read_metrics(&ws.metrics_path())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put("reward_curve.csv", reward_curve_csv(&history, window))?;
    put("solutions_match.csv", solutions_match_csv(case, model, run_dir)?)?;
    if let Some(src) = bench_csv {
        let body = std::fs::read_to_string(src).map_err(|e| Error::io(src, e))?;
        super::bench::parse_bench_csv(&body)?;
        put("scalability.csv", body)?;
    }
    Ok(written)
}
