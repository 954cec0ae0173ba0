use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{closed_loop, lean, open_loop, ExperimentId};
use crate::error::{Error, Result};

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
    Flag(bool),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Int(i) => Some(i as f64),
            Cell::Num(x) => Some(x),
            _ => None,
        }
    }

    fn parse(field: &str) -> Cell {
        match field {
            "true" => Cell::Flag(true),
            "false" => Cell::Flag(false),
            _ => field.parse::<f64>().map_or_else(|_| Cell::Text(field.to_owned()), Cell::Num),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(i) => write!(f, "{i}"),
            // Shortest representation that parses back to the same bits.
            Cell::Num(x) => write!(f, "{x}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Flag(b) => write!(f, "{b}"),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Flag(b)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_owned())
    }
}

/// A named data series with a fixed column schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub description: String,
    /// `(name, unit)` per column.
    pub columns: Vec<(String, String)>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, description: &str, columns: &[(&str, &str)]) -> Self {
        Self {
            name: name.to_owned(),
            description: description.to_owned(),
            columns: columns.iter().map(|(n, u)| ((*n).to_owned(), (*u).to_owned())).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match table `{}`", self.name);
        assert!(
            row.iter().all(|c| !matches!(c, Cell::Text(s) if s.contains([',', '\n', '\r']))),
            "text cells may not contain separators"
        );
        self.rows.push(row);
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    fn index(&self, column: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|(n, _)| n == column)
            .ok_or_else(|| Error::Report(format!("table `{}` has no column `{column}`", self.name)))
    }

    pub fn cells(&self, column: &str) -> Result<Vec<&Cell>> {
        let i = self.index(column)?;
        Ok(self.rows.iter().map(|r| &r[i]).collect())
    }

    pub fn floats(&self, column: &str) -> Result<Vec<f64>> {
        self.cells(column)?
            .into_iter()
            .map(|c| {
                c.as_f64()
                    .ok_or_else(|| Error::Report(format!("`{}.{column}` holds a non-numeric cell `{c}`", self.name)))
            })
            .collect()
    }

    pub fn texts(&self, column: &str) -> Result<Vec<String>> {
        Ok(self.cells(column)?.into_iter().map(|c| c.to_string()).collect())
    }

    pub fn flags(&self, column: &str) -> Result<Vec<bool>> {
        self.cells(column)?
            .into_iter()
            .map(|c| match c {
                Cell::Flag(b) => Ok(*b),
                other => Err(Error::Report(format!("`{}.{column}` holds a non-boolean cell `{other}`", self.name))),
            })
            .collect()
    }

    /// Rows whose `column` renders as `value`.
    pub fn filter(&self, column: &str, value: &str) -> Result<Table> {
        let i = self.index(column)?;
        let mut out = Table {
            rows: Vec::new(),
            ..self.clone()
        };
        out.rows = self.rows.iter().filter(|r| r[i].to_string() == value).cloned().collect();
        Ok(out)
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    /// CSV text: one `#` schema line, one header line, LF endings.
    pub fn to_csv(&self) -> String {
        let schema: Vec<String> = self.columns.iter().map(|(n, u)| format!("{n} [{u}]")).collect();
        let mut out = format!("# {}: {}; columns: {}\n", self.name, self.description, schema.join(" "));
        out.push_str(&self.column_names().join(","));
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(name: &str, text: &str) -> Result<Table> {
        let mut lines = text.lines();
        let mut description = String::new();
        let mut units = Vec::new();
        let header = loop {
            let line = lines
                .next()
                .ok_or_else(|| Error::Report(format!("`{name}` has no header line")))?;
            if let Some(comment) = line.strip_prefix("# ") {
                if let Some((head, cols)) = comment.split_once("; columns: ") {
                    description = head.split_once(": ").map_or(head, |(_, d)| d).to_owned();
                    units = cols
                        .split(' ')
                        .filter_map(|c| c.split_once(" [").or_else(|| c.split_once('[')))
                        .map(|(_, u)| u.trim_end_matches(']').to_owned())
                        .collect();
                }
                continue;
            }
            break line;
        };
        let names: Vec<&str> = header.split(',').collect();
        let columns = names
            .iter()
            .enumerate()
            .map(|(i, n)| ((*n).to_owned(), units.get(i).cloned().unwrap_or_default()))
            .collect();
        let mut table = Table {
            name: name.to_owned(),
            description,
            columns,
            rows: Vec::new(),
        };
        for (lineno, line) in lines.enumerate() {
            let row: Vec<Cell> = line.split(',').map(Cell::parse).collect();
            if row.len() != names.len() {
                return Err(Error::Report(format!(
                    "`{name}` row {} has {} fields, header has {}",
                    lineno + 1,
                    row.len(),
                    names.len()
                )));
            }
            table.rows.push(row);
        }
        Ok(table)
    }
}

/// An acceptance-tagged assertion evaluated on a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            detail,
        }
    }

    /// `|value - target| <= rel * |target|`.
    pub fn within(name: &str, value: f64, target: f64, rel: f64) -> Self {
        let err = (value - target).abs() / target.abs();
        Self::new(
            name,
            err <= rel,
            format!("{value:.4} vs {target} (rel. error {:.2}%, limit {:.0}%)", 100.0 * err, 100.0 * rel),
        )
    }

    /// `|value - target| <= tol`.
    pub fn near(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self::new(
            name,
            (value - target).abs() <= tol,
            format!("{value:.4} vs {target} (limit ±{tol})"),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    /// All experiments are deterministic; no random seed is involved.
    pub seed: Option<u64>,
    pub version: String,
}

impl Provenance {
    pub fn new(config_hash: String) -> Self {
        Self {
            config_hash,
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub id: ExperimentId,
    pub tables: Vec<Table>,
    pub summary: Map<String, Value>,
    pub checks: Vec<Check>,
    /// Wall-clock measurements; kept apart because they are not reproducible.
    pub timing: Map<String, Value>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct SummaryFile {
    id: ExperimentId,
    title: String,
    tables: Vec<String>,
    summary: Map<String, Value>,
    checks: Vec<Check>,
    provenance: Provenance,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Summary of `tables` for experiment `id`.
pub(crate) fn summarize(id: ExperimentId, tables: &[Table]) -> Result<Map<String, Value>> {
    match id {
        ExperimentId::Exp1 => open_loop::summarize_exp1(tables),
        ExperimentId::Exp2 => open_loop::summarize_exp2(tables),
        ExperimentId::Exp3 => open_loop::summarize_exp3(tables),
        ExperimentId::Exp4 => open_loop::summarize_exp4(tables),
        ExperimentId::Exp5 => open_loop::summarize_exp5(tables),
        ExperimentId::Exp6 => open_loop::summarize_exp6(tables),
        ExperimentId::Exp7 => lean::summarize_exp7(tables),
        ExperimentId::Exp8 => closed_loop::summarize_exp8(tables),
    }
}

pub(crate) fn table<'a>(tables: &'a [Table], name: &str) -> Result<&'a Table> {
    tables
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Report(format!("missing table `{name}`")))
}

pub(crate) fn number(summary: &Map<String, Value>, key: &str) -> f64 {
    summary.get(key).and_then(Value::as_f64).unwrap_or(f64::NAN)
}

pub(crate) fn flag(summary: &Map<String, Value>, key: &str) -> bool {
    summary.get(key).and_then(Value::as_bool).unwrap_or(false)
}

fn values_match(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| values_match(v, w)))
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(v, w)| values_match(v, w)),
        _ => a == b,
    }
}

impl ExperimentReport {
    pub(crate) fn assemble(
        id: ExperimentId,
        tables: Vec<Table>,
        extra_checks: Vec<Check>,
        timing: Map<String, Value>,
        config_hash: String,
    ) -> Result<Self> {
        let summary = summarize(id, &tables)?;
        let mut checks = match id {
            ExperimentId::Exp1 => open_loop::checks_exp1(&summary),
            ExperimentId::Exp2 => open_loop::checks_exp2(&summary),
            ExperimentId::Exp3 => open_loop::checks_exp3(&summary),
            ExperimentId::Exp4 => open_loop::checks_exp4(&summary),
            ExperimentId::Exp5 => open_loop::checks_exp5(&summary),
            ExperimentId::Exp6 => open_loop::checks_exp6(&summary),
            ExperimentId::Exp7 => lean::checks_exp7(&summary),
            ExperimentId::Exp8 => closed_loop::checks_exp8(&summary),
        };
        checks.extend(extra_checks);
        Ok(Self {
            id,
            tables,
            summary,
            checks,
            timing,
            provenance: Provenance::new(config_hash),
        })
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        table(&self.tables, name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn number(&self, key: &str) -> f64 {
        number(&self.summary, key)
    }

    /// Recomputes the summary from the tables and compares it with the stored one.
    pub fn verify_closure(&self) -> Result<()> {
        let fresh = summarize(self.id, &self.tables)?;
        for (key, stored) in &self.summary {
            match fresh.get(key) {
                Some(v) if values_match(stored, v) => {}
                Some(v) => {
                    return Err(Error::Report(format!(
                        "{}: summary `{key}` = {stored} but the records give {v}",
                        self.id
                    )))
                }
                None => return Err(Error::Report(format!("{}: summary `{key}` cannot be recomputed", self.id))),
            }
        }
        if fresh.len() != self.summary.len() {
            return Err(Error::Report(format!("{}: summary field set differs from recomputation", self.id)));
        }
        Ok(())
    }

    /// One-line human summary; every number in it is also in the summary JSON.
    pub fn headline(&self) -> String {
        let s = &self.summary;
        match self.id {
            ExperimentId::Exp1 => format!(
                "eps_star={:.2}m mact_eps={:.2}m certificate={}",
                number(s, "eps_star"),
                number(s, "mact_eps"),
                if flag(s, "certificate") { "OK" } else { "FAIL" }
            ),
            ExperimentId::Exp2 => format!(
                "eps_star(v=12)={:.2}m eps_star(v=18)={:.2}m monotone={} a2_anal_bound_holds={}",
                number(s, "eps_star_first"),
                number(s, "eps_star_last"),
                flag(s, "monotone"),
                flag(s, "anal_bound_holds")
            ),
            ExperimentId::Exp3 => format!(
                "r_squared={:.4} eps_star={:.2}m..{:.2}m",
                number(s, "r_squared"),
                number(s, "eps_star_first"),
                number(s, "eps_star_last")
            ),
            ExperimentId::Exp4 => format!(
                "a2={:.3} r_squared={:.3} a2_safe={:.3}",
                number(s, "a2"),
                number(s, "r_squared"),
                number(s, "a2_safe")
            ),
            ExperimentId::Exp5 => format!(
                "waste_fixed={:.2}cm waste_mact={:.2}cm reduction={:.1}% safe none/fixed/mact={:.0}/{:.0}/{:.0}%",
                100.0 * number(s, "mean_waste_fixed"),
                100.0 * number(s, "mean_waste_mact"),
                100.0 * number(s, "reduction"),
                100.0 * number(s, "safe_rate_none"),
                100.0 * number(s, "safe_rate_fixed"),
                100.0 * number(s, "safe_rate_mact")
            ),
            ExperimentId::Exp6 => format!(
                "eps_star={:.2}m..{:.2}m ratio={:.3}..{:.3} monotone={}",
                number(s, "eps_star_first"),
                number(s, "eps_star_last"),
                number(s, "ratio_first"),
                number(s, "ratio_last"),
                flag(s, "ratio_non_increasing")
            ),
            ExperimentId::Exp7 => format!(
                "a2_bic={:.3} r_squared={:.3} ratio_to_car={:.2} demo: no_margin_exits={} mact_inside={}",
                number(s, "a2_bic"),
                number(s, "r_squared"),
                number(s, "ratio_to_car"),
                flag(s, "no_margin_exits"),
                flag(s, "mact_inside")
            ),
            ExperimentId::Exp8 => {
                let mut parts = vec![format!("a2_cl={:.3e}", number(s, "a2_cl"))];
                if let Some(Value::Object(policies)) = s.get("policies") {
                    for (name, p) in policies {
                        if let Value::Object(p) = p {
                            parts.push(format!(
                                "{name}: safe={:.0}% eps_mean={:.3}cm",
                                number(p, "safe_pct"),
                                number(p, "mean_eps_cm")
                            ));
                        }
                    }
                }
                if s.contains_key("ratio_mact_tube") {
                    parts.push(format!("mact/tube={:.3}", number(s, "ratio_mact_tube")));
                }
                parts.join(" | ")
            }
        }
    }

    /// Writes `<out>/<exp-id>/`: one CSV per table, `summary.json` and `timing.json`.
    pub fn emit(&self, out: &Path) -> Result<PathBuf> {
        let dir = out.join(self.id.dir_name());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for t in &self.tables {
            let path = dir.join(t.file_name());
            fs::write(&path, t.to_csv()).map_err(io_err(&path))?;
        }
        let file = SummaryFile {
            id: self.id,
            title: self.id.title().to_owned(),
            tables: self.tables.iter().map(Table::file_name).collect(),
            summary: self.summary.clone(),
            checks: self.checks.clone(),
            provenance: self.provenance.clone(),
        };
        let path = dir.join("summary.json");
        let mut json = serde_json::to_string_pretty(&file)?;
        json.push('\n');
        fs::write(&path, json).map_err(io_err(&path))?;
        let path = dir.join("timing.json");
        let mut json = serde_json::to_string_pretty(&self.timing)?;
        json.push('\n');
        fs::write(&path, json).map_err(io_err(&path))?;
        Ok(dir)
    }

    /// Reads a report written by [`emit`](Self::emit) and checks that its summary
    /// is recomputable from the CSV records.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("summary.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let file: SummaryFile = serde_json::from_str(&text)?;
        let mut tables = Vec::with_capacity(file.tables.len());
        for name in &file.tables {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            tables.push(Table::from_csv(name.trim_end_matches(".csv"), &text)?);
        }
        let path = dir.join("timing.json");
        let timing = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Map::new(),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let report = Self {
            id: file.id,
            tables,
            summary: file.summary,
            checks: file.checks,
            timing,
            provenance: file.provenance,
        };
        report.verify_closure()?;
        Ok(report)
    }
}
