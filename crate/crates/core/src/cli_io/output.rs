//! Plain-text artifacts: structured-grid snapshots, CSV tables and the run
//! report. Numbers use `{:e}` formatting, independent of locale.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use faer::c64;

use crate::error::Result;
use crate::grid::Grid2D;
use crate::sources::FullState;

/// Shortest round-trip representation in exponent form.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn snapshot_text(grid: &Grid2D, s: &FullState) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# nsf-plate structured-grid snapshot");
    let _ = writeln!(out, "# t = {}", num(s.t));
    let _ = writeln!(out, "# grid nx = {} ny = {} L = {} H = {}", grid.nx, grid.ny, num(grid.l), num(grid.h));
    let _ = writeln!(out, "# fluid nodes, row-major in x: x y rho v1 v2 theta");
    for j in 0..=grid.ny {
        for i in 0..=grid.nx {
            let k = grid.idx(i, j);
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                num(grid.x(i)),
                num(grid.y(j)),
                num(s.rho[k]),
                num(s.v[0][k]),
                num(s.v[1][k]),
                num(s.theta[k])
            );
        }
    }
    let _ = writeln!(out, "# beam nodes: x eta1 eta2");
    for i in 0..=grid.nx {
        let _ = writeln!(out, "{} {} {}", num(grid.x(i)), num(s.eta1[i]), num(s.eta2[i]));
    }
    out
}

/// A CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn eigen_csv(ev: &[c64]) -> Csv {
    let mut c = Csv::new(&["re", "im"]);
    let mut sorted = ev.to_vec();
    sorted.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    for z in sorted {
        c.push(vec![num(z.re), num(z.im)]);
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Info,
}

impl CheckStatus {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Info => "INFO",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportLine {
    pub name: String,
    pub value: String,
    pub tolerance: String,
    pub status: CheckStatus,
}

/// Plain-text summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub command: String,
    pub config: String,
    pub lines: Vec<ReportLine>,
    pub files: Vec<String>,
    pub error: Option<String>,
    pub exit_code: i32,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn new(command: &str, config: String) -> Self {
        RunReport {
            command: command.into(),
            config,
            lines: Vec::new(),
            files: Vec::new(),
            error: None,
            exit_code: 0,
            wall_seconds: 0.0,
        }
    }

    pub fn check(&mut self, name: &str, value: String, tolerance: &str, ok: bool) {
        self.lines.push(ReportLine {
            name: name.into(),
            value,
            tolerance: tolerance.into(),
            status: CheckStatus::from_bool(ok),
        });
    }

    pub fn info(&mut self, name: &str, value: String) {
        self.lines.push(ReportLine { name: name.into(), value, tolerance: "-".into(), status: CheckStatus::Info });
    }

    pub fn passed(&self) -> bool {
        self.error.is_none() && self.lines.iter().all(|l| l.status != CheckStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&ReportLine> {
        self.lines.iter().find(|l| l.name == name)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nsf-plate run report");
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(s, "status: {}", if self.passed() { "PASS" } else { "FAIL" });
        let _ = writeln!(s, "exit code: {}", self.exit_code);
        let _ = writeln!(s, "wall clock: {:.3} s", self.wall_seconds);
        if let Some(e) = &self.error {
            let _ = writeln!(s, "error: {e}");
        }
        let _ = writeln!(s, "\n[checks]");
        let w = self.lines.iter().map(|l| l.name.len()).max().unwrap_or(0);
        for l in &self.lines {
            let _ = writeln!(s, "{:<4} {:<w$}  value = {}  tolerance = {}", l.status.name(), l.name, l.value, l.tolerance);
        }
        if !self.files.is_empty() {
            let _ = writeln!(s, "\n[files]");
            for f in &self.files {
                let _ = writeln!(s, "{f}");
            }
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config);
        s
    }
}

/// Creates the directory and writes files relative to it.
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<String> {
        let p = self.root.join(name);
        fs::write(&p, contents)?;
        Ok(name.to_string())
    }
}
