//! Distinct matched parameter vectors, persisted as they are accepted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PARAMS_FORMAT: &str = "hmrl-case-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub params: Vec<f64>,
    pub objective: f64,
    pub env_id: usize,
    pub global_step: u64,
    /// simulated observations at `params`
    #[serde(default)]
    pub observations: Vec<f64>,
}

/// On-disk form of one archived solution (`sol_<k>.case-params`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub version: u32,
    pub case_name: String,
    pub index: usize,
    #[serde(flatten)]
    pub entry: ArchiveEntry,
}

impl SolutionFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sol: SolutionFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if sol.format != PARAMS_FORMAT {
            return Err(Error::format(path, format!("unexpected format {:?}", sol.format)));
        }
        if sol.version != PARAMS_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: sol.version,
                expected: PARAMS_VERSION,
            });
        }
        Ok(sol)
    }
}

/// Solutions in a directory, ordered by index.
pub fn read_solutions(dir: &Path) -> Result<Vec<SolutionFile>> {
    let mut out = Vec::new();
    let listing = match std::fs::read_dir(dir) {
        Ok(l) => l,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for item in listing {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "case-params") {
            out.push(SolutionFile::read(&path)?);
        }
    }
    out.sort_by_key(|s| s.index);
    Ok(out)
}

/// `‖u − v‖ / ‖v‖`
pub fn relative_distance(u: &[f64], v: &[f64]) -> f64 {
    let num = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

#[derive(Clone, Debug)]
pub struct SolutionArchive {
    entries: Vec<ArchiveEntry>,
    threshold: f64,
    epsilon: f64,
    case_name: String,
    dir: Option<PathBuf>,
}

impl SolutionArchive {
    pub fn new(case_name: impl Into<String>, epsilon: f64, threshold: f64) -> Self {
        Self {
            entries: Vec::new(),
            threshold,
            epsilon,
            case_name: case_name.into(),
            dir: None,
        }
    }

    /// Writes held entries to `dir/sol_<k>.case-params`, then keeps writing
    /// each accepted one.
    pub fn persist_to(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dir = Some(dir.to_path_buf());
        (1..=self.entries.len()).try_for_each(|k| self.write_entry(k))
    }

    fn write_entry(&self, index: usize) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let file = SolutionFile {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            case_name: self.case_name.clone(),
            index,
            entry: self.entries[index - 1].clone(),
        };
        let path = dir.join(format!("sol_{index}.case-params"));
        let body = serde_json::to_string_pretty(&file)?;
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_distinct(&self, u: &[f64]) -> bool {
        self.entries
            .iter()
            .all(|e| relative_distance(u, &e.params) >= self.threshold)
    }

    /// Adds the entry if it is at least `threshold` away from every stored
    /// vector. The entry stays in memory even when writing it fails; the
    /// write error is returned.
    pub fn submit(&mut self, entry: ArchiveEntry) -> Result<bool> {
        if !(entry.objective < self.epsilon) {
            return Err(Error::Config(format!(
                "objective {} is not below tolerance {}",
                entry.objective, self.epsilon
            )));
        }
        if !self.is_distinct(&entry.params) {
            return Ok(false);
        }
        self.entries.push(entry);
        self.write_entry(self.entries.len())?;
        Ok(true)
    }

    /// Restores entries without re-writing them.
    pub fn restore(&mut self, entries: Vec<ArchiveEntry>) {
        self.entries = entries;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(params: Vec<f64>) -> ArchiveEntry {
        ArchiveEntry {
            params,
            objective: 1.0,
            env_id: 0,
            global_step: 1,
            observations: vec![],
        }
    }

    #[test]
    fn empty_archive_accepts() {
        let mut a = SolutionArchive::new("t", 10.0, 0.01);
        assert!(a.submit(entry(vec![1.0, 2.0])).unwrap());
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn identical_vector_is_rejected() {
        let mut a = SolutionArchive::new("t", 10.0, 0.01);
        a.submit(entry(vec![1.0, 2.0])).unwrap();
        assert!(!a.submit(entry(vec![1.0, 2.0])).unwrap());
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn boundary_distance_is_accepted() {
        let mut a = SolutionArchive::new("t", 10.0, 0.5);
        a.submit(entry(vec![2.0, 0.0])).unwrap();
        assert_eq!(relative_distance(&[2.0, 1.0], &[2.0, 0.0]), 0.5);
        assert!(a.submit(entry(vec![2.0, 1.0])).unwrap());
        assert!(!a.submit(entry(vec![2.0, 0.999])).unwrap());
    }

    #[test]
    fn unsolved_entry_is_an_error() {
        let mut a = SolutionArchive::new("t", 1.0, 0.01);
        let mut e = entry(vec![1.0]);
        e.objective = 1.0;
        assert!(a.submit(e).is_err());
    }

    #[test]
    fn accepted_entries_are_written_immediately() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = SolutionArchive::new("case", 10.0, 0.01);
        a.persist_to(dir.path()).unwrap();
        a.submit(entry(vec![1.0, 2.0])).unwrap();
        a.submit(entry(vec![5.0, 2.0])).unwrap();
        let back = read_solutions(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].index, 2);
        assert_eq!(back[1].entry.params, vec![5.0, 2.0]);
        assert_eq!(back[0].case_name, "case");
    }

    #[test]
    fn restored_entries_are_written_on_attach() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = SolutionArchive::new("case", 10.0, 0.01);
        a.restore(vec![entry(vec![1.0]), entry(vec![3.0])]);
        a.persist_to(dir.path()).unwrap();
        assert_eq!(read_solutions(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn write_failure_keeps_entry() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = SolutionArchive::new("case", 10.0, 0.01);
        let sub = dir.path().join("sols");
        a.persist_to(&sub).unwrap();
        std::fs::remove_dir(&sub).unwrap();
        assert!(a.submit(entry(vec![1.0])).is_err());
        assert_eq!(a.len(), 1);
    }
}
