//! Plain-text persistence: vector tables, dataset manifests, PCA sidecars,
//! model files and tabular reports.
//!
//! Every format is line oriented UTF-8. Header lines start with `#` and hold
//! `key value` pairs; floats are written with Rust's shortest round-trip
//! formatting so a write/read cycle is bit exact.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::mapping::{Activation, MappingModel, TrainingMeta, Variant};
use crate::scenario::{
    default_combo_table, Combination, CompositionMode, Dataset, Expression, QuantKind, Scenario, Split,
};
use crate::vecmath::PcaModel;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
}

/// Config digest and seed stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub digest: String,
    pub seed: u64,
}

impl Provenance {
    fn header(&self) -> String {
        format!("#config_digest {}\n#seed {}\n", self.digest, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorTable {
    pub dim: usize,
    pub rows: Vec<(String, Vec<f64>)>,
}

/// `#key value` lines collected from a file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Header {
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn provenance(&self) -> Option<Provenance> {
        Some(Provenance {
            digest: self.get("config_digest")?.to_string(),
            seed: self.get("seed")?.parse().ok()?,
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(io_err(path))
}

struct Lines<'a> {
    path: &'a Path,
    header: Header,
    /// (1-based line number, content) for non-header, non-blank lines.
    body: Vec<(usize, &'a str)>,
}

impl<'a> Lines<'a> {
    fn split(path: &'a Path, text: &'a str) -> Self {
        let mut header = Header::default();
        let mut body = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                header.entries.push((k.to_string(), v.trim().to_string()));
            } else if !line.trim().is_empty() {
                body.push((i + 1, line));
            }
        }
        Self { path, header, body }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> FormatError {
        FormatError::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn require<T: FromStr>(&self, key: &str) -> Result<T, FormatError> {
        let raw = self
            .header
            .get(key)
            .ok_or_else(|| self.err(1, format!("missing #{key} header")))?;
        raw.parse()
            .map_err(|_| self.err(self.header_line(key), format!("bad #{key} value {raw:?}")))
    }

    fn header_line(&self, key: &str) -> usize {
        self.header.entries.iter().position(|(k, _)| k == key).map_or(1, |i| i + 1)
    }
}

fn parse_floats(text: &str, expected: Option<usize>) -> Result<Vec<f64>, String> {
    let v = text
        .split_ascii_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("bad number {t:?}"))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    match expected {
        Some(n) if v.len() != n => Err(format!("expected {n} values, found {}", v.len())),
        _ => Ok(v),
    }
}

fn join_floats(out: &mut String, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{x}").expect("write to string");
    }
}

// --- vector tables -------------------------------------------------------

pub fn format_vector_table(table: &VectorTable, prov: Option<&Provenance>) -> String {
    let mut out = format!("#dim {}\n", table.dim);
    if let Some(p) = prov {
        out.push_str(&p.header());
    }
    for (name, v) in &table.rows {
        out.push_str(name);
        out.push('\t');
        join_floats(&mut out, v);
        out.push('\n');
    }
    out
}

pub fn parse_vector_table(path: &Path, text: &str) -> Result<(VectorTable, Header), FormatError> {
    let lines = Lines::split(path, text);
    let dim: usize = lines.require("dim")?;
    let mut rows = Vec::with_capacity(lines.body.len());
    let mut seen = std::collections::HashSet::new();
    for &(n, line) in &lines.body {
        let (name, values) = line
            .split_once('\t')
            .ok_or_else(|| lines.err(n, "expected name<TAB>values"))?;
        if !seen.insert(name) {
            return Err(lines.err(n, format!("duplicate name {name:?}")));
        }
        let v = parse_floats(values, Some(dim)).map_err(|m| lines.err(n, m))?;
        rows.push((name.to_string(), v));
    }
    Ok((VectorTable { dim, rows }, lines.header))
}

pub fn read_vector_table(path: &Path) -> Result<VectorTable, FormatError> {
    let text = read_text(path)?;
    Ok(parse_vector_table(path, &text)?.0)
}

pub fn write_vector_table(path: &Path, table: &VectorTable, prov: Option<&Provenance>) -> Result<(), FormatError> {
    write_text(path, &format_vector_table(table, prov))
}

// --- dataset manifests ---------------------------------------------------

const MANIFEST_COLUMNS: &str = "split kind expression target numerator denominator distractors vector";

pub fn format_manifest(ds: &Dataset, prov: Option<&Provenance>) -> String {
    let dim = ds.scenarios.first().map_or(0, |s| s.vector.len());
    let mut out = format!(
        "#kind {}\n#mode {}\n#dim {dim}\n",
        ds.kind.as_str(),
        ds.mode.as_str()
    );
    if let Some(p) = prov {
        out.push_str(&p.header());
    }
    writeln!(out, "#columns {MANIFEST_COLUMNS}").expect("write to string");
    for s in &ds.scenarios {
        write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t",
            s.split.as_str(),
            ds.kind.as_str(),
            s.expression.as_str(),
            s.target,
            s.combination.numerator(),
            s.combination.denominator(),
            s.distractors.join(",")
        )
        .expect("write to string");
        join_floats(&mut out, &s.vector);
        out.push('\n');
    }
    out
}

/// Parses a manifest. The concat PCA, if any, lives in a separate file and
/// is attached by the caller.
pub fn parse_manifest(path: &Path, text: &str) -> Result<(Dataset, Header), FormatError> {
    let lines = Lines::split(path, text);
    let kind: QuantKind = lines.require("kind")?;
    let mode: CompositionMode = lines.require("mode")?;
    let dim: usize = lines.require("dim")?;
    let mut scenarios = Vec::with_capacity(lines.body.len());
    for &(n, line) in &lines.body {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(lines.err(n, format!("expected 8 tab-separated fields, found {}", fields.len())));
        }
        let bad = |what: &str, v: &str| lines.err(n, format!("bad {what} {v:?}"));
        let split: Split = fields[0].parse().map_err(|_| bad("split", fields[0]))?;
        let row_kind: QuantKind = fields[1].parse().map_err(|_| bad("kind", fields[1]))?;
        if row_kind != kind {
            return Err(lines.err(n, format!("row kind {row_kind} in a {kind} manifest")));
        }
        let expression: Expression = fields[2].parse().map_err(|_| bad("expression", fields[2]))?;
        let num: usize = fields[4].parse().map_err(|_| bad("numerator", fields[4]))?;
        let den: usize = fields[5].parse().map_err(|_| bad("denominator", fields[5]))?;
        let combination = Combination::new(num, den).map_err(|e| lines.err(n, e.to_string()))?;
        let distractors = if fields[6].is_empty() {
            Vec::new()
        } else {
            fields[6].split(',').map(str::to_string).collect()
        };
        let vector = parse_floats(fields[7], Some(dim)).map_err(|m| lines.err(n, m))?;
        scenarios.push(Scenario {
            target: fields[3].to_string(),
            combination,
            expression,
            split,
            vector,
            distractors,
        });
    }
    let ds = Dataset {
        kind,
        mode,
        scenarios,
        table: default_combo_table(kind),
        concat_pca: None,
    };
    Ok((ds, lines.header))
}

pub fn write_manifest(path: &Path, ds: &Dataset, prov: Option<&Provenance>) -> Result<(), FormatError> {
    write_text(path, &format_manifest(ds, prov))
}

pub fn read_manifest(path: &Path) -> Result<(Dataset, Header), FormatError> {
    let text = read_text(path)?;
    parse_manifest(path, &text)
}

// --- PCA sidecar ---------------------------------------------------------

pub fn format_pca(pca: &PcaModel, prov: Option<&Provenance>) -> String {
    let mut out = format!("#input_dim {}\n#output_dim {}\n", pca.input_dim(), pca.output_dim());
    if let Some(p) = prov {
        out.push_str(&p.header());
    }
    let mut row = |key: &str, v: &[f64]| {
        out.push_str(key);
        out.push('\t');
        join_floats(&mut out, v);
        out.push('\n');
    };
    row("mean", &pca.mean);
    for b in &pca.basis {
        row("component", b);
    }
    row("variance", &pca.explained_variance);
    out
}

pub fn parse_pca(path: &Path, text: &str) -> Result<PcaModel, FormatError> {
    let lines = Lines::split(path, text);
    let d_in: usize = lines.require("input_dim")?;
    let d_out: usize = lines.require("output_dim")?;
    let mut mean = None;
    let mut basis = Vec::with_capacity(d_out);
    let mut variance = None;
    for &(n, line) in &lines.body {
        let (key, values) = line
            .split_once('\t')
            .ok_or_else(|| lines.err(n, "expected key<TAB>values"))?;
        let want = if key == "variance" { d_out } else { d_in };
        let v = parse_floats(values, Some(want)).map_err(|m| lines.err(n, m))?;
        match key {
            "mean" => mean = Some(v),
            "component" => basis.push(v),
            "variance" => variance = Some(v),
            other => return Err(lines.err(n, format!("unknown key {other:?}"))),
        }
    }
    let last = lines.body.last().map_or(1, |l| l.0);
    if basis.len() != d_out {
        return Err(lines.err(last, format!("expected {d_out} components, found {}", basis.len())));
    }
    Ok(PcaModel {
        mean: mean.ok_or_else(|| lines.err(last, "missing mean"))?,
        basis,
        explained_variance: variance.ok_or_else(|| lines.err(last, "missing variance"))?,
    })
}

// --- model files ---------------------------------------------------------

pub fn format_model(model: &MappingModel, prov: Option<&Provenance>) -> String {
    let mut out = String::from("#model\n");
    if let Some(p) = prov {
        out.push_str(&p.header());
    }
    let m = &model.meta;
    write!(
        out,
        "variant\t{}\nexpression\t{}\nkind\t{}\nd_in\t{}\nd_out\t{}\nactivation\t{}\n\
         epochs\t{}\ninitial_loss\t{}\nfinal_loss\t{}\ntrain_seed\t{}\n",
        model.variant,
        model.expression,
        model.expression.kind(),
        model.d_in(),
        model.d_out(),
        model.activation.as_str(),
        m.epochs,
        m.initial_loss,
        m.final_loss,
        m.seed
    )
    .expect("write to string");
    let mut row = Vec::with_capacity(model.d_in());
    for r in 0..model.d_out() {
        row.clear();
        row.extend(model.weights.row(r).iter());
        out.push_str("weights\t");
        join_floats(&mut out, &row);
        out.push('\n');
    }
    out.push_str("bias\t");
    join_floats(&mut out, &model.bias);
    out.push('\n');
    out
}

pub fn parse_model(path: &Path, text: &str) -> Result<(MappingModel, Header), FormatError> {
    let lines = Lines::split(path, text);
    let mut fields: Vec<(usize, &str, &str)> = Vec::new();
    let mut weight_rows: Vec<(usize, &str)> = Vec::new();
    let mut bias = None;
    for &(n, line) in &lines.body {
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| lines.err(n, "expected key<TAB>value"))?;
        match key {
            "weights" => weight_rows.push((n, value)),
            "bias" => bias = Some((n, value)),
            _ => fields.push((n, key, value)),
        }
    }
    let last = lines.body.last().map_or(1, |l| l.0);
    let field = |key: &str| -> Result<(usize, &str), FormatError> {
        fields
            .iter()
            .find(|(_, k, _)| *k == key)
            .map(|&(n, _, v)| (n, v))
            .ok_or_else(|| lines.err(last, format!("missing field {key:?}")))
    };
    fn parsed<T: FromStr>(lines: &Lines<'_>, (n, v): (usize, &str), key: &str) -> Result<T, FormatError> {
        v.parse().map_err(|_| lines.err(n, format!("bad {key} {v:?}")))
    }
    let variant: Variant = parsed(&lines, field("variant")?, "variant")?;
    let expression: Expression = parsed(&lines, field("expression")?, "expression")?;
    let kind: QuantKind = parsed(&lines, field("kind")?, "kind")?;
    if expression.kind() != kind {
        return Err(lines.err(field("kind")?.0, format!("{expression} is not a {kind}")));
    }
    let d_in: usize = parsed(&lines, field("d_in")?, "d_in")?;
    let d_out: usize = parsed(&lines, field("d_out")?, "d_out")?;
    let activation: Activation = parsed(&lines, field("activation")?, "activation")?;
    let epochs: usize = parsed(&lines, field("epochs")?, "epochs")?;
    let initial_loss: f64 = parsed(&lines, field("initial_loss")?, "initial_loss")?;
    let final_loss: f64 = parsed(&lines, field("final_loss")?, "final_loss")?;
    let seed: u64 = parsed(&lines, field("train_seed")?, "train_seed")?;

    if weight_rows.len() != d_out {
        return Err(lines.err(last, format!("expected {d_out} weight rows, found {}", weight_rows.len())));
    }
    let mut weights = DMatrix::zeros(d_out, d_in);
    for (r, &(n, text)) in weight_rows.iter().enumerate() {
        let v = parse_floats(text, Some(d_in)).map_err(|m| lines.err(n, m))?;
        for (c, x) in v.into_iter().enumerate() {
            weights[(r, c)] = x;
        }
    }
    let (bn, btext) = bias.ok_or_else(|| lines.err(last, "missing bias"))?;
    let bias = parse_floats(btext, Some(d_out)).map_err(|m| lines.err(bn, m))?;
    let model = MappingModel {
        expression,
        variant,
        weights,
        bias,
        activation,
        meta: TrainingMeta {
            epochs,
            initial_loss,
            final_loss,
            seed,
        },
    };
    Ok((model, lines.header))
}

pub fn write_model(path: &Path, model: &MappingModel, prov: Option<&Provenance>) -> Result<(), FormatError> {
    write_text(path, &format_model(model, prov))
}

pub fn read_model(path: &Path) -> Result<(MappingModel, Header), FormatError> {
    let text = read_text(path)?;
    parse_model(path, &text)
}

// --- reports -------------------------------------------------------------

/// A small table rendered both as CSV and as aligned text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTable {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ReportTable {
    pub fn new(title: impl Into<String>, headers: &[&str]) -> Self {
        Self {
            title: title.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in std::iter::once(&self.headers).chain(&self.rows) {
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// First column left aligned, the rest right aligned.
    pub fn to_aligned(&self) -> String {
        let cols = self.headers.len();
        let mut width = vec![0; cols];
        for line in std::iter::once(&self.headers).chain(&self.rows) {
            for (w, cell) in width.iter_mut().zip(line) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        for line in std::iter::once(&self.headers).chain(&self.rows) {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = width[i])
                    } else {
                        format!("{c:>w$}", w = width[i])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.txt`. Several tables may share
/// one report; the CSV separates them with a blank line.
pub fn write_report(dir: &Path, stem: &str, tables: &[ReportTable], prov: &Provenance) -> Result<(), FormatError> {
    let mut csv = prov.header();
    let mut txt = prov.header();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            csv.push('\n');
            txt.push('\n');
        }
        if !t.title.is_empty() {
            writeln!(csv, "#table {}", t.title).expect("write to string");
        }
        csv.push_str(&t.to_csv());
        txt.push_str(&t.to_aligned());
    }
    write_text(&dir.join(format!("{stem}.csv")), &csv)?;
    write_text(&dir.join(format!("{stem}.txt")), &txt)
}
