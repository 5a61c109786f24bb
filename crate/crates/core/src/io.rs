//! On-disk formats: TOML model files, dataset / augmented-design / statistics
//! CSV files and selection JSON.
//!
//! Model file example:
//!
//! ```toml
//! type = "hmm"
//! p = 4
//! initial = [0.5, 0.5]
//! transition = [[0.9, 0.1],
//!               [0.2, 0.8]]
//! emission = [[0.7, 0.2, 0.1],
//!             [0.1, 0.2, 0.7]]
//! ```
//!
//! `transition` / `emission` give one matrix repeated along the chain (and
//! then `p` is required); `transitions` / `emissions` list one matrix per
//! step. Gaussian files use `mean` + `covariance`, block models use `p`,
//! `block_size` and `rho`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::knockoffs::{AugmentedDesign, Provenance};
use crate::model::{
    make_block_model, Dataset, GaussianModel, HiddenMarkovModel, MarkovChainModel, STOCHASTIC_TOL,
};
use crate::selection::SelectionResult;
use crate::stats::{ImportanceScores, StatKind};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    MarkovChain(MarkovChainModel),
    Hmm(HiddenMarkovModel),
    Gaussian(GaussianModel),
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::MarkovChain(_) => "markov_chain",
            ModelFile::Hmm(_) => "hmm",
            ModelFile::Gaussian(_) => "gaussian",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelFile::MarkovChain(m) => m.len(),
            ModelFile::Hmm(m) => m.len(),
            ModelFile::Gaussian(m) => m.dim(),
        }
    }
}

type Rows = Vec<Spanned<Vec<f64>>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(rename = "type")]
    kind: Spanned<String>,
    #[serde(default)]
    description: Option<String>,
    p: Option<Spanned<usize>>,
    initial: Option<Spanned<Vec<f64>>>,
    transition: Option<Spanned<Rows>>,
    transitions: Option<Spanned<Vec<Spanned<Rows>>>>,
    emission: Option<Spanned<Rows>>,
    emissions: Option<Spanned<Vec<Spanned<Rows>>>>,
    mean: Option<Spanned<Vec<f64>>>,
    covariance: Option<Spanned<Rows>>,
    block_size: Option<Spanned<usize>>,
    rho: Option<Spanned<f64>>,
}

struct Source<'a> {
    path: &'a str,
    text: &'a str,
}

impl Source<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].bytes().filter(|b| *b == b'\n').count() + 1
    }

    fn err(&self, span: Range<usize>, detail: impl Into<String>) -> Error {
        Error::AtLine {
            path: self.path.to_string(),
            line: self.line(span),
            detail: detail.into(),
        }
    }

    fn require<'b, T>(&self, field: &'b Option<T>, name: &str, kind: &Spanned<String>) -> Result<&'b T> {
        field
            .as_ref()
            .ok_or_else(|| self.err(kind.span(), format!("model type '{}' requires '{name}'", kind.get_ref())))
    }

    fn prob_row(&self, row: &Spanned<Vec<f64>>, label: &str) -> Result<()> {
        let v = row.get_ref();
        if v.is_empty() {
            return Err(self.err(row.span(), format!("{label} is empty")));
        }
        if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(self.err(row.span(), format!("{label} has a negative entry {x}")));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(self.err(row.span(), format!("{label} sums to {s}, expected 1")));
        }
        Ok(())
    }

    /// Dense matrix from spanned rows, checking a rectangular shape and,
    /// when `stochastic`, every row.
    fn matrix(
        &self,
        rows: &Spanned<Rows>,
        label: &str,
        shape: (Option<usize>, Option<usize>),
        stochastic: bool,
    ) -> Result<DMatrix<f64>> {
        let r = rows.get_ref();
        if r.is_empty() {
            return Err(self.err(rows.span(), format!("{label} has no rows")));
        }
        if let Some(n) = shape.0 {
            if r.len() != n {
                return Err(self.err(rows.span(), format!("{label} has {} rows, expected {n}", r.len())));
            }
        }
        let width = shape.1.unwrap_or(r[0].get_ref().len());
        for (i, row) in r.iter().enumerate() {
            if row.get_ref().len() != width {
                return Err(self.err(
                    row.span(),
                    format!("{label} row {i} has {} entries, expected {width}", row.get_ref().len()),
                ));
            }
            if stochastic {
                self.prob_row(row, &format!("{label} row {i}"))?;
            }
        }
        Ok(DMatrix::from_fn(r.len(), width, |i, j| r[i].get_ref()[j]))
    }

    /// Either one repeated matrix (`single`, needs `count`) or a list.
    fn matrices(
        &self,
        kind: &Spanned<String>,
        single: &Option<Spanned<Rows>>,
        list: &Option<Spanned<Vec<Spanned<Rows>>>>,
        names: (&str, &str),
        count: Option<usize>,
        shape: (Option<usize>, Option<usize>),
    ) -> Result<Vec<DMatrix<f64>>> {
        match (single, list) {
            (Some(_), Some(l)) => Err(self.err(
                l.span(),
                format!("give either '{}' or '{}', not both", names.0, names.1),
            )),
            (Some(m), None) => {
                let count = count.ok_or_else(|| {
                    self.err(m.span(), format!("'{}' needs the chain length 'p'", names.0))
                })?;
                let mat = self.matrix(m, names.0, shape, true)?;
                Ok(vec![mat; count])
            }
            (None, Some(l)) => {
                if let Some(c) = count {
                    if l.get_ref().len() != c {
                        return Err(self.err(
                            l.span(),
                            format!("'{}' lists {} matrices, expected {c}", names.1, l.get_ref().len()),
                        ));
                    }
                }
                l.get_ref()
                    .iter()
                    .enumerate()
                    .map(|(t, m)| self.matrix(m, &format!("{}[{t}]", names.1), shape, true))
                    .collect()
            }
            (None, None) if count == Some(0) => Ok(Vec::new()),
            (None, None) => Err(self.err(
                kind.span(),
                format!("model requires '{}' or '{}'", names.0, names.1),
            )),
        }
    }

    fn chain(&self, raw: &RawModel, p: Option<usize>) -> Result<MarkovChainModel> {
        let initial = self.require(&raw.initial, "initial", &raw.kind)?;
        self.prob_row(initial, "initial")?;
        let k = initial.get_ref().len();
        let steps = p.map(|p| p.saturating_sub(1));
        let transitions = self.matrices(
            &raw.kind,
            &raw.transition,
            &raw.transitions,
            ("transition", "transitions"),
            steps,
            (Some(k), Some(k)),
        )?;
        MarkovChainModel::new(initial.get_ref().clone(), transitions)
            .map_err(|e| self.err(initial.span(), e.to_string()))
    }

    fn parse(&self) -> Result<ModelFile> {
        let raw: RawModel = toml::from_str(self.text).map_err(|e| {
            let line = e.span().map_or(1, |s| self.line(s));
            Error::AtLine {
                path: self.path.to_string(),
                line,
                detail: e.message().to_string(),
            }
        })?;
        let _ = &raw.description;
        let p = raw.p.as_ref().map(|p| *p.get_ref());
        if let (Some(0), Some(sp)) = (p, &raw.p) {
            return Err(self.err(sp.span(), "p must be at least 1"));
        }
        match raw.kind.get_ref().as_str() {
            "markov_chain" => {
                self.forbid(&raw, &["emission", "emissions", "mean", "covariance", "block_size", "rho"])?;
                Ok(ModelFile::MarkovChain(self.chain(&raw, p)?))
            }
            "hmm" => {
                self.forbid(&raw, &["mean", "covariance", "block_size", "rho"])?;
                // chain length may come from either list
                let p = p
                    .or_else(|| raw.emissions.as_ref().map(|e| e.get_ref().len()))
                    .or_else(|| raw.transitions.as_ref().map(|t| t.get_ref().len() + 1));
                let latent = self.chain(&raw, p)?;
                let k = latent.states();
                let emissions = self.matrices(
                    &raw.kind,
                    &raw.emission,
                    &raw.emissions,
                    ("emission", "emissions"),
                    Some(latent.len()),
                    (Some(k), None),
                )?;
                HiddenMarkovModel::new(latent, emissions)
                    .map(ModelFile::Hmm)
                    .map_err(|e| self.err(raw.kind.span(), e.to_string()))
            }
            "gaussian" => {
                self.forbid(&raw, &["initial", "transition", "transitions", "emission", "emissions", "block_size", "rho"])?;
                let mean = self.require(&raw.mean, "mean", &raw.kind)?;
                let d = mean.get_ref().len();
                if let Some(p) = p {
                    if p != d {
                        return Err(self.err(mean.span(), format!("mean has length {d}, p = {p}")));
                    }
                }
                let cov_rows = self.require(&raw.covariance, "covariance", &raw.kind)?;
                let cov = self.matrix(cov_rows, "covariance", (Some(d), Some(d)), false)?;
                GaussianModel::new(DVector::from_vec(mean.get_ref().clone()), cov)
                    .map(ModelFile::Gaussian)
                    .map_err(|e| self.err(cov_rows.span(), e.to_string()))
            }
            "block_gaussian" => {
                self.forbid(&raw, &["initial", "transition", "transitions", "emission", "emissions", "mean", "covariance"])?;
                let p_field = self.require(&raw.p, "p", &raw.kind)?;
                let b = self.require(&raw.block_size, "block_size", &raw.kind)?;
                let rho = self.require(&raw.rho, "rho", &raw.kind)?;
                make_block_model(*p_field.get_ref(), *b.get_ref(), *rho.get_ref())
                    .map(ModelFile::Gaussian)
                    .map_err(|e| self.err(b.span(), e.to_string()))
            }
            other => Err(self.err(
                raw.kind.span(),
                format!("unknown model type '{other}' (expected markov_chain, hmm, gaussian or block_gaussian)"),
            )),
        }
    }

    fn forbid(&self, raw: &RawModel, fields: &[&str]) -> Result<()> {
        let present = |name: &str| -> Option<Range<usize>> {
            match name {
                "initial" => raw.initial.as_ref().map(Spanned::span),
                "transition" => raw.transition.as_ref().map(Spanned::span),
                "transitions" => raw.transitions.as_ref().map(Spanned::span),
                "emission" => raw.emission.as_ref().map(Spanned::span),
                "emissions" => raw.emissions.as_ref().map(Spanned::span),
                "mean" => raw.mean.as_ref().map(Spanned::span),
                "covariance" => raw.covariance.as_ref().map(Spanned::span),
                "block_size" => raw.block_size.as_ref().map(Spanned::span),
                "rho" => raw.rho.as_ref().map(Spanned::span),
                _ => None,
            }
        };
        for f in fields {
            if let Some(span) = present(f) {
                return Err(self.err(
                    span,
                    format!("'{f}' does not apply to model type '{}'", raw.kind.get_ref()),
                ));
            }
        }
        Ok(())
    }
}

/// Parse model text; `label` names the source in error messages.
pub fn parse_model(text: &str, label: &str) -> Result<ModelFile> {
    Source { path: label, text }.parse()
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path)?;
    parse_model(&text, &path.display().to_string())
}

fn write_vec(out: &mut String, v: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (i, x) in v.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{x:?}");
    }
    out.push(']');
}

fn write_matrix(out: &mut String, m: &DMatrix<f64>, indent: &str) {
    out.push('[');
    for r in 0..m.nrows() {
        if r > 0 {
            out.push_str(",\n");
            out.push_str(indent);
            out.push(' ');
        }
        write_vec(out, m.row(r).iter().copied());
    }
    out.push(']');
}

fn write_matrix_list(out: &mut String, key: &str, ms: &[DMatrix<f64>]) {
    // a list whose entries are all equal is written once
    if ms.len() > 1 && ms.iter().all(|m| m == &ms[0]) {
        let single = key.trim_end_matches('s');
        let _ = write!(out, "{single} = ");
        write_matrix(out, &ms[0], &" ".repeat(single.len() + 2));
    } else {
        let _ = writeln!(out, "{key} = [");
        for m in ms {
            out.push_str("  ");
            write_matrix(out, m, "  ");
            out.push_str(",\n");
        }
        out.push(']');
    }
    out.push('\n');
}

/// Render a model in the format read by [`parse_model`].
pub fn model_to_toml(model: &ModelFile, description: Option<&str>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "type = \"{}\"", model.kind());
    if let Some(d) = description {
        let _ = writeln!(out, "description = {:?}", d);
    }
    let _ = writeln!(out, "p = {}", model.dim());
    let chain = |out: &mut String, c: &MarkovChainModel| {
        out.push_str("initial = ");
        write_vec(out, c.initial().iter().copied());
        out.push('\n');
        if c.len() > 1 {
            write_matrix_list(out, "transitions", c.transitions());
        }
    };
    match model {
        ModelFile::MarkovChain(c) => chain(&mut out, c),
        ModelFile::Hmm(h) => {
            chain(&mut out, h.latent());
            write_matrix_list(&mut out, "emissions", h.emissions());
        }
        ModelFile::Gaussian(g) => {
            out.push_str("mean = ");
            write_vec(&mut out, g.mean().iter().copied());
            out.push_str("\ncovariance = ");
            write_matrix(&mut out, g.covariance(), "            ");
            out.push('\n');
        }
    }
    out
}

fn fmt_value(v: f64, discrete: bool) -> String {
    if discrete {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn write_lines(path: &Path, head: &str, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let file = fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(file);
    buf.write_all(head.as_bytes())?;
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Split the leading `# key=value ...` line from a CSV body.
fn read_with_comment(path: &Path) -> Result<(Vec<(String, String)>, csv::Reader<BufReader<fs::File>>)> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut meta = Vec::new();
    let mut peek = reader.fill_buf()?;
    if peek.first() == Some(&b'#') {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        for tok in line.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                meta.push((k.to_string(), v.to_string()));
            }
        }
        peek = reader.fill_buf()?;
    }
    let _ = peek;
    Ok((meta, csv::ReaderBuilder::new().from_reader(reader)))
}

fn parse_cell(path: &Path, row: usize, col: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::AtLine {
        path: path.display().to_string(),
        line: row + 2,
        detail: format!("column '{col}': cannot parse '{s}' as a number"),
    })
}

/// Columns `x0..x{p-1}` and optionally `y`.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let p = data.p();
    let mut header: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    if data.y.is_some() {
        header.push("y".into());
    }
    let head = format!("# dataset discrete={}\n", data.discrete);
    let rows = (0..data.n()).map(|i| {
        let mut r: Vec<String> = (0..p).map(|j| fmt_value(data.x[(i, j)], data.discrete)).collect();
        if let Some(y) = &data.y {
            r.push(fmt_value(y[i], false));
        }
        r
    });
    write_lines(path, &head, &header, rows)
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<(Vec<(String, String)>, Table)> {
    let (meta, mut rdr) = read_with_comment(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let offset = usize::from(!meta.is_empty());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .zip(&header)
            .map(|(s, h)| parse_cell(path, i + offset, h, s))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((meta, Table { header, rows }))
}

fn columns_named(t: &Table, prefix: &str) -> Vec<usize> {
    let mut cols: Vec<(usize, usize)> = t
        .header
        .iter()
        .enumerate()
        .filter_map(|(c, h)| {
            h.strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|j| (j, c))
        })
        .collect();
    cols.sort_unstable();
    cols.into_iter().map(|(_, c)| c).collect()
}

fn gather(t: &Table, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(t.rows.len(), cols.len(), |i, j| t.rows[i][cols[j]])
}

fn response(t: &Table) -> Option<DVector<f64>> {
    t.header
        .iter()
        .position(|h| h == "y")
        .map(|c| DVector::from_iterator(t.rows.len(), t.rows.iter().map(|r| r[c])))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let (meta, t) = read_table(path)?;
    let xs = columns_named(&t, "x");
    if xs.is_empty() {
        return Err(Error::AtLine {
            path: path.display().to_string(),
            line: 1 + usize::from(!meta.is_empty()),
            detail: "no x0.. columns in header".into(),
        });
    }
    let x = gather(&t, &xs);
    let discrete = match meta.iter().find(|(k, _)| k == "discrete") {
        Some((_, v)) => v == "true",
        None => x.iter().all(|v| v.fract() == 0.0 && *v >= 0.0),
    };
    let mut data = if discrete {
        Dataset {
            x,
            y: None,
            discrete: true,
        }
    } else {
        Dataset::continuous(x)
    };
    if let Some(y) = response(&t) {
        data = data.with_response(y)?;
    }
    Ok(data)
}

/// Leading `# provenance=... seed=...` line, then columns `x*`, `xt*`, `y`.
pub fn write_augmented(path: &Path, design: &AugmentedDesign) -> Result<()> {
    let p = design.p();
    let discrete = design.provenance.is_discrete();
    let mut header: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    header.extend((0..p).map(|j| format!("xt{j}")));
    if design.y.is_some() {
        header.push("y".into());
    }
    let head = format!("# provenance={} seed={} p={}\n", design.provenance, design.seed, p);
    let rows = (0..design.n()).map(|i| {
        let mut r: Vec<String> = (0..p).map(|j| fmt_value(design.x[(i, j)], discrete)).collect();
        r.extend((0..p).map(|j| fmt_value(design.x_tilde[(i, j)], discrete)));
        if let Some(y) = &design.y {
            r.push(fmt_value(y[i], false));
        }
        r
    });
    write_lines(path, &head, &header, rows)
}

pub fn read_augmented(path: &Path) -> Result<AugmentedDesign> {
    let (meta, t) = read_table(path)?;
    let get = |k: &str| meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let bad = |detail: String| Error::AtLine {
        path: path.display().to_string(),
        line: 1,
        detail,
    };
    let provenance: Provenance = get("provenance")
        .ok_or_else(|| bad("missing '# provenance=...' header line".into()))?
        .parse()?;
    let seed = get("seed")
        .unwrap_or("0")
        .parse::<u64>()
        .map_err(|e| bad(format!("bad seed: {e}")))?;
    let x = gather(&t, &columns_named(&t, "x"));
    let xt = gather(&t, &columns_named(&t, "xt"));
    AugmentedDesign::new(x, xt, response(&t), provenance, seed)
}

pub fn write_scores(path: &Path, scores: &ImportanceScores) -> Result<()> {
    let header: Vec<String> = ["index", "z_original", "z_knockoff", "w", "kind"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = (0..scores.len()).map(|j| {
        vec![
            j.to_string(),
            fmt_value(scores.z_original[j], false),
            fmt_value(scores.z_knockoff[j], false),
            fmt_value(scores.w[j], false),
            scores.kind.as_str().to_string(),
        ]
    });
    write_lines(path, "", &header, rows)
}

#[derive(Deserialize)]
struct ScoreRow {
    index: usize,
    z_original: f64,
    z_knockoff: f64,
    w: f64,
    kind: String,
}

pub fn read_scores(path: &Path) -> Result<ImportanceScores> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows: Vec<ScoreRow> = Vec::new();
    for r in rdr.deserialize() {
        rows.push(r?);
    }
    if rows.is_empty() {
        return Err(Error::invalid("statistics", format!("{} has no rows", path.display())));
    }
    rows.sort_by_key(|r| r.index);
    if rows.iter().enumerate().any(|(i, r)| r.index != i) {
        return Err(Error::invalid("statistics", "indices must be 0..p-1 without gaps"));
    }
    let kind: StatKind = rows[0].kind.parse()?;
    Ok(ImportanceScores {
        z_original: rows.iter().map(|r| r.z_original).collect(),
        z_knockoff: rows.iter().map(|r| r.z_knockoff).collect(),
        w: rows.iter().map(|r| r.w).collect(),
        kind,
    })
}

#[derive(Serialize, Deserialize)]
struct SelectionJson {
    method: String,
    q: f64,
    threshold: Option<f64>,
    indices: Vec<usize>,
}

pub fn selection_to_json(sel: &SelectionResult) -> Result<String> {
    let j = SelectionJson {
        method: sel.method.as_str().to_string(),
        q: sel.q,
        threshold: sel.threshold.is_finite().then_some(sel.threshold),
        indices: sel.selected.clone(),
    };
    Ok(serde_json::to_string_pretty(&j)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = "type = \"markov_chain\"\ninitial = [0.6, 0.4]\ntransitions = [\n  [[0.7, 0.3], [0.2, 0.8]],\n  [[0.5, 0.5], [0.1, 0.9]],\n]\n";

    #[test]
    fn parses_chain_with_list() {
        let m = parse_model(CHAIN, "chain.toml").unwrap();
        let ModelFile::MarkovChain(c) = m else { panic!() };
        assert_eq!(c.len(), 3);
        assert_eq!(c.transition(1, 1, 1), 0.9);
    }

    #[test]
    fn bad_row_is_reported_with_line() {
        let text = "type = \"markov_chain\"\np = 3\ninitial = [0.5, 0.5]\ntransition = [[0.9, 0.1],\n              [0.5, 0.48]]\n";
        let e = parse_model(text, "m.toml").unwrap_err();
        let msg = e.to_string();
        assert!(msg.starts_with("m.toml:5:"), "{msg}");
        assert!(msg.contains("transition row 1 sums to 0.98"), "{msg}");
        assert!(e.is_validation());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse_model("type = \"markov_chain\"\np = 2\ninitail = [1.0]\n", "x").unwrap_err();
        assert!(e.to_string().contains("x:3:"), "{e}");
    }

    #[test]
    fn hmm_roundtrip() {
        let text = "type = \"hmm\"\np = 4\ninitial = [0.5, 0.5]\ntransition = [[0.9, 0.1], [0.2, 0.8]]\nemission = [[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]]\n";
        let m = parse_model(text, "h").unwrap();
        let back = parse_model(&model_to_toml(&m, Some("test")), "h2").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn gaussian_and_block() {
        let g = parse_model("type = \"gaussian\"\nmean = [0.0, 1.0]\ncovariance = [[1.0, 0.5], [0.5, 1.0]]\n", "g").unwrap();
        assert_eq!(g.dim(), 2);
        let b = parse_model("type = \"block_gaussian\"\np = 6\nblock_size = 2\nrho = 0.9\n", "b").unwrap();
        assert_eq!(b.dim(), 6);
        let bad = parse_model("type = \"gaussian\"\nmean = [0.0, 0.0]\ncovariance = [[1.0, 2.0], [2.0, 1.0]]\n", "g");
        assert!(bad.unwrap_err().to_string().contains("g:3:"));
        assert!(parse_model("type = \"block_gaussian\"\np = 6\nblock_size = 2\nrho = 1.5\n", "b").is_err());
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = Dataset::from_codes(&[vec![0, 1, 2], vec![2, 2, 0]])
            .with_response(DVector::from_vec(vec![0.5, -1.25]))
            .unwrap();
        write_dataset(&path, &d).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), d);
        let c = Dataset::continuous(DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.0, 1e-300]));
        write_dataset(&path, &c).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), c);
    }
}
