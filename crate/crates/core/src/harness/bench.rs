//! Time-to-first-solution sweep over environment counts.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::case::CaseFile;
use crate::error::{Error, Result};
use crate::field::derive_seed;
use crate::orchestrator::{RunConfig, Trainer};

pub const BENCH_SCOPE: &str =
    "# timing scope: wall clock of the training loop only; case generation and workspace I/O excluded";
pub const BENCH_HEADER: &str =
    "n_envs,mean_seconds,std_seconds,mean_sims,speedup,ideal_speedup,per_doubling_speedup,completed,censored";
pub const RUNS_HEADER: &str = "n_envs,repeat,seed,seconds,sims,first_solution_step,solved";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    /// strictly increasing
    pub env_counts: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    /// training configuration shared by every run; `n_envs`, `seed`,
    /// `stop_after_solutions` and workspace settings are overridden
    pub base: RunConfig,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.env_counts.is_empty() || self.env_counts[0] == 0 {
            return Err(Error::Config("env counts must be non-empty and positive".into()));
        }
        if self.env_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("env counts must be strictly increasing".into()));
        }
        for &n in &self.env_counts {
            if !self.base.batch_size.is_multiple_of(n) {
                return Err(Error::Config(format!(
                    "batch size {} is not divisible by {n} environments",
                    self.base.batch_size
                )));
            }
        }
        Ok(())
    }

    /// Master seed of repeat `r`, shared by every environment count.
    pub fn repeat_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, r as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub n_envs: usize,
    pub repeat: usize,
    pub seed: u64,
    pub seconds: f64,
    /// simulator calls spent when the run stopped
    pub sims: u64,
    pub first_solution_step: Option<u64>,
}

impl BenchRun {
    pub fn solved(&self) -> bool {
        self.first_solution_step.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_envs: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub mean_sims: f64,
    pub speedup: f64,
    pub ideal_speedup: f64,
    pub per_doubling_speedup: f64,
    pub completed: usize,
    pub censored: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub runs: Vec<BenchRun>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Aggregates runs into one row per environment count. Censored runs are
/// excluded from the means; speedups are relative to the first row.
pub fn summarize(env_counts: &[usize], runs: &[BenchRun]) -> Vec<BenchRow> {
    let mut rows: Vec<BenchRow> = env_counts
        .iter()
        .map(|&n| {
            let mine: Vec<&BenchRun> = runs.iter().filter(|r| r.n_envs == n).collect();
            let done: Vec<&BenchRun> = mine.iter().copied().filter(|r| r.solved()).collect();
            let secs: Vec<f64> = done.iter().map(|r| r.seconds).collect();
            let sims: Vec<f64> = done.iter().map(|r| r.sims as f64).collect();
            let (mean_seconds, std_seconds) = mean_std(&secs);
            BenchRow {
                n_envs: n,
                mean_seconds,
                std_seconds,
                mean_sims: mean_std(&sims).0,
                speedup: f64::NAN,
                ideal_speedup: n as f64,
                per_doubling_speedup: f64::NAN,
                completed: done.len(),
                censored: mine.len() - done.len(),
            }
        })
        .collect();
    let Some(base) = rows.first().map(|r| (r.n_envs, r.mean_seconds)) else {
        return rows;
    };
    for r in &mut rows {
        r.speedup = base.1 / r.mean_seconds;
        let doublings = (r.n_envs as f64 / base.0 as f64).log2();
        r.per_doubling_speedup = if doublings > 0.0 { r.speedup.powf(1.0 / doublings) } else { 1.0 };
    }
    rows
}

/// Trains to the first archived solution once per (environment count,
/// repeat). `progress` sees every finished run.
pub fn run_bench(case: &CaseFile, spec: &BenchSpec, mut progress: impl FnMut(&BenchRun)) -> Result<BenchTable> {
    spec.validate()?;
    let mut runs = Vec::new();
    for &n in &spec.env_counts {
        for r in 0..spec.repeats {
            let cfg = RunConfig {
                n_envs: n,
                seed: spec.repeat_seed(r),
                env_seeds: None,
                workspace_root: None,
                checkpoint_every: 0,
                stop_after_solutions: Some(1),
                ..spec.base.clone()
            };
            let mut trainer = Trainer::new(cfg, case.clone())?;
            let t = Instant::now();
            let report = trainer.run()?;
            let run = BenchRun {
                n_envs: n,
                repeat: r,
                seed: spec.repeat_seed(r),
                seconds: t.elapsed().as_secs_f64(),
                sims: report.sims_total,
                first_solution_step: report.first_solution_step,
            };
            progress(&run);
            runs.push(run);
        }
    }
    Ok(BenchTable {
        rows: summarize(&spec.env_counts, &runs),
        runs,
    })
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{BENCH_SCOPE}\n{BENCH_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.n_envs,
                r.mean_seconds,
                r.std_seconds,
                r.mean_sims,
                r.speedup,
                r.ideal_speedup,
                r.per_doubling_speedup,
                r.completed,
                r.censored
            );
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = format!("{RUNS_HEADER}\n");
        for r in &self.runs {
            let step = r.first_solution_step.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{},{}", r.n_envs, r.repeat, r.seed, r.seconds, r.sims, step, r.solved());
        }
        out
    }

    /// Writes `bench.csv` and `bench_runs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("bench.csv", self.to_csv()), ("bench_runs.csv", self.runs_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn row(&self, n_envs: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.n_envs == n_envs)
    }
}

/// Parses a `bench.csv` body back into rows, skipping comment lines.
pub fn parse_bench_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Config("empty bench table".into()))?;
    if header != BENCH_HEADER {
        return Err(Error::Config(format!("unexpected bench header {header:?}")));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Config(format!("bench row has {} fields: {l:?}", f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| Error::Config(format!("bad number {:?}", f[i])));
            let int = |i: usize| f[i].parse::<usize>().map_err(|_| Error::Config(format!("bad integer {:?}", f[i])));
            Ok(BenchRow {
                n_envs: int(0)?,
                mean_seconds: num(1)?,
                std_seconds: num(2)?,
                mean_sims: num(3)?,
                speedup: num(4)?,
                ideal_speedup: num(5)?,
                per_doubling_speedup: num(6)?,
                completed: int(7)?,
                censored: int(8)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(n: usize, secs: f64, sims: u64, solved: bool) -> BenchRun {
        BenchRun {
            n_envs: n,
            repeat: 0,
            seed: 0,
            seconds: secs,
            sims,
            first_solution_step: solved.then_some(sims),
        }
    }

    #[test]
    fn speedup_is_relative_to_first_row() {
        let runs = vec![
            run(1, 8.0, 100, true),
            run(1, 12.0, 300, true),
            run(2, 5.0, 200, true),
            run(4, 2.5, 200, true),
            run(4, 100.0, 900, false),
        ];
        let rows = summarize(&[1, 2, 4], &runs);
        assert_eq!(rows[0].speedup, 1.0);
        assert_eq!(rows[0].per_doubling_speedup, 1.0);
        assert_eq!(rows[1].speedup, 2.0);
        assert_eq!(rows[2].speedup, 4.0);
        assert!((rows[2].per_doubling_speedup - 2.0).abs() < 1e-12);
        assert_eq!(rows[2].ideal_speedup, 4.0);
        assert_eq!((rows[2].completed, rows[2].censored), (1, 1));
        assert_eq!(rows[0].mean_sims, 200.0);
        assert!((rows[0].std_seconds - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let runs = vec![run(1, 3.0, 64, true), run(2, 2.0, 64, true)];
        let table = BenchTable {
            rows: summarize(&[1, 2], &runs),
            runs,
        };
        let text = table.to_csv();
        assert!(text.starts_with("# timing scope"));
        assert_eq!(parse_bench_csv(&text).unwrap(), table.rows);
    }

    #[test]
    fn spec_validation() {
        let mut spec = BenchSpec {
            env_counts: vec![1, 2, 4],
            repeats: 10,
            seed: 0,
            base: RunConfig::default(),
        };
        assert!(spec.validate().is_ok());
        spec.env_counts = vec![1, 4, 2];
        assert!(spec.validate().is_err());
        spec.env_counts = vec![1, 3];
        assert!(spec.validate().is_err());
        spec.env_counts = vec![1];
        spec.repeats = 0;
        assert!(spec.validate().is_err());
    }
}
