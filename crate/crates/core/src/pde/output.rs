//! Run manifests and trajectory CSV files.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::Trajectory;

/// Ordered `key = value` text. Floats use 17 significant digits; lists are
/// comma separated; nothing is quoted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        let key = key.into();
        let value = value.into();
        assert!(!key.contains('=') && !key.contains('\n') && !value.contains('\n'));
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn set_f64(&mut self, key: impl Into<String>, v: f64) -> &mut Self {
        self.set(key, fmt_f64(v))
    }

    pub fn set_list(&mut self, key: impl Into<String>, vs: &[f64]) -> &mut Self {
        let s: Vec<String> = vs.iter().map(|v| fmt_f64(*v)).collect();
        self.set(key, s.join(","))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Inverse of [`render`](Self::render); blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut m = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.render())
    }
}

/// Writes `u_NNNN.csv` (columns `r,u`) for the datum (index 0) and every
/// output time, and records the mass ledger in `manifest`.
pub fn write_trajectory(traj: &Trajectory, dir: &Path, manifest: &mut Manifest) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (k, f) in traj.all_fields().enumerate() {
        let path = dir.join(format!("u_{k:04}.csv"));
        let mut out = io::BufWriter::new(fs::File::create(&path)?);
        writeln!(out, "# t={}", fmt_f64(f.t))?;
        writeln!(out, "r,u")?;
        for (r, u) in f.grid.centers().iter().zip(&f.u) {
            writeln!(out, "{},{}", fmt_f64(*r), fmt_f64(*u))?;
        }
        out.flush()?;
        paths.push(path);
    }
    let d = &traj.diagnostics;
    let col = |g: fn(&super::LedgerEntry) -> f64| d.ledger.iter().map(g).collect::<Vec<_>>();
    manifest
        .set("trajectory.files", paths.len().to_string())
        .set_list("trajectory.times", &col(|e| e.t))
        .set_list("trajectory.mass", &col(|e| e.mass))
        .set_list("trajectory.inflow", &col(|e| e.inflow))
        .set_list("trajectory.sup", &col(|e| e.sup))
        .set("solver.steps", d.steps.to_string())
        .set("solver.newton_iterations", d.newton_iterations.to_string())
        .set("solver.bisections", d.bisections.to_string())
        .set_f64("solver.max_mass_defect", d.max_mass_defect)
        .set_f64("solver.max_sup_increase", d.max_sup_increase);
    Ok(paths)
}
