//! Dataset file formats: dense TSV or MatrixMarket counts, coordinate,
//! composition and edge-list tables. Rows are aligned by spot ID and gene
//! name, never by position.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use svgene_core::{
    validate_dataset, CellCompositions, Coordinates, CountMatrix, GeneNetwork, ModelError, ValidatedDataset,
};
use thiserror::Error;

/// Rows of a composition table may miss 1 by this much before rounding
/// repair; beyond it the row is rejected.
pub const COMPOSITION_ROUNDING: f64 = 1e-4;

pub const MTX_HEADER: &str = "%%MatrixMarket matrix coordinate integer general";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: unknown gene '{name}'")]
    UnknownGene { path: PathBuf, line: usize, name: String },
    #[error("{path}:{line}: unknown spot '{name}'")]
    UnknownSpot { path: PathBuf, line: usize, name: String },
    #[error("{path}: no row for spot '{name}'")]
    MissingSpot { path: PathBuf, name: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl IoError {
    /// Stable category name for error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Io { .. } => "IoError",
            Self::Parse { .. } => "ParseError",
            Self::UnknownGene { .. } => "UnknownGene",
            Self::UnknownSpot { .. } => "UnknownSpot",
            Self::MissingSpot { .. } => "MissingSpot",
            Self::Model(_) => "InvalidData",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((idx + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn fields(line: &str) -> Vec<&str> {
    line.split('\t').map(str::trim).collect()
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, text: &str, what: &str) -> Result<T, IoError> {
    text.parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} '{text}'")))
}

fn index_names(path: &Path, names: &[(usize, String)], what: &str) -> Result<HashMap<String, usize>, IoError> {
    let mut map = HashMap::with_capacity(names.len());
    for (pos, (line, name)) in names.iter().enumerate() {
        if map.insert(name.clone(), pos).is_some() {
            return Err(parse_err(path, *line, format!("duplicate {what} '{name}'")));
        }
    }
    Ok(map)
}

/// Counts with their spot IDs and gene names.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedCounts {
    pub counts: CountMatrix,
    pub spots: Vec<String>,
    pub genes: Vec<String>,
}

/// Dense TSV: a header of gene names after one leading label cell, then one
/// row per spot starting with its ID.
pub fn read_dense_counts(path: &Path) -> Result<NamedCounts, IoError> {
    let lines = read_lines(path)?;
    let Some(((head_line, header), rows)) = lines.split_first() else {
        return Err(parse_err(path, 1, "empty count table"));
    };
    let genes: Vec<(usize, String)> = fields(header).iter().skip(1).map(|g| (*head_line, g.to_string())).collect();
    if genes.is_empty() {
        return Err(parse_err(path, *head_line, "header names no genes"));
    }
    index_names(path, &genes, "gene")?;
    let p = genes.len();
    let mut spots = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * p);
    for (line, text) in rows {
        let f = fields(text);
        if f.len() != p + 1 {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", p + 1, f.len())));
        }
        spots.push((*line, f[0].to_string()));
        for v in &f[1..] {
            values.push(parse_num::<u32>(path, *line, v, "count")?);
        }
    }
    index_names(path, &spots, "spot")?;
    let counts = CountMatrix::from_dense(spots.len(), p, &values)?;
    Ok(NamedCounts {
        counts,
        spots: spots.into_iter().map(|(_, s)| s).collect(),
        genes: genes.into_iter().map(|(_, g)| g).collect(),
    })
}

/// One name per line, first column only.
pub fn read_names(path: &Path) -> Result<Vec<(usize, String)>, IoError> {
    Ok(read_lines(path)?
        .into_iter()
        .map(|(l, text)| (l, fields(&text)[0].to_string()))
        .collect())
}

/// MatrixMarket coordinate integer matrix with genes as rows and spots as
/// columns. Explicit zeros are accepted and dropped; repeated entries are
/// rejected.
pub fn read_mtx_counts(path: &Path, genes_path: &Path, spots_path: &Path) -> Result<NamedCounts, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let first = first.map_err(io_err(path))?;
    let banner: Vec<String> = first.split_whitespace().map(str::to_ascii_lowercase).collect();
    let expected: Vec<String> = MTX_HEADER.split_whitespace().map(str::to_ascii_lowercase).collect();
    if banner != expected {
        return Err(parse_err(path, 1, format!("expected banner '{MTX_HEADER}'")));
    }
    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('%') {
            continue;
        }
        let f: Vec<&str> = text.split_whitespace().collect();
        if f.len() != 3 {
            return Err(parse_err(path, line_no, format!("expected 3 fields, found {}", f.len())));
        }
        match size {
            None => {
                size = Some((
                    parse_num(path, line_no, f[0], "row count")?,
                    parse_num(path, line_no, f[1], "column count")?,
                    parse_num(path, line_no, f[2], "entry count")?,
                ));
            }
            Some((rows, cols, _)) => {
                let g: usize = parse_num(path, line_no, f[0], "row index")?;
                let s: usize = parse_num(path, line_no, f[1], "column index")?;
                let v: u32 = parse_num(path, line_no, f[2], "count")?;
                if g == 0 || g > rows || s == 0 || s > cols {
                    return Err(parse_err(path, line_no, format!("entry ({g}, {s}) outside {rows} x {cols}")));
                }
                triplets.push((s - 1, g - 1, v, line_no));
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| parse_err(path, 1, "missing size line"))?;
    let genes = read_names(genes_path)?;
    let spots = read_names(spots_path)?;
    if genes.len() != rows {
        return Err(parse_err(genes_path, 1, format!("{} names for {rows} matrix rows", genes.len())));
    }
    if spots.len() != cols {
        return Err(parse_err(spots_path, 1, format!("{} names for {cols} matrix columns", spots.len())));
    }
    index_names(genes_path, &genes, "gene")?;
    index_names(spots_path, &spots, "spot")?;
    if triplets.len() != nnz {
        return Err(parse_err(path, 1, format!("declared {nnz} entries, found {}", triplets.len())));
    }
    triplets.sort_unstable();
    if let Some(w) = triplets.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
        return Err(parse_err(path, w[1].3, format!("entry ({}, {}) repeated", w[1].1 + 1, w[1].0 + 1)));
    }
    let entries = triplets.into_iter().map(|(i, j, v, _)| (i, j, v));
    let counts = CountMatrix::from_triplets(cols, rows, entries)?;
    Ok(NamedCounts {
        counts,
        spots: spots.into_iter().map(|(_, s)| s).collect(),
        genes: genes.into_iter().map(|(_, g)| g).collect(),
    })
}

/// Looks up each spot row of a per-spot table; every spot must appear once.
fn align_spots<T>(path: &Path, spot_index: &HashMap<String, usize>, spots: &[String], rows: Vec<(usize, String, T)>) -> Result<Vec<T>, IoError> {
    let mut slots: Vec<Option<T>> = (0..spots.len()).map(|_| None).collect();
    for (line, id, value) in rows {
        let &pos = spot_index.get(&id).ok_or_else(|| IoError::UnknownSpot {
            path: path.to_path_buf(),
            line,
            name: id.clone(),
        })?;
        if slots[pos].is_some() {
            return Err(parse_err(path, line, format!("duplicate spot '{id}'")));
        }
        slots[pos] = Some(value);
    }
    slots
        .into_iter()
        .zip(spots)
        .map(|(v, id)| {
            v.ok_or_else(|| IoError::MissingSpot {
                path: path.to_path_buf(),
                name: id.clone(),
            })
        })
        .collect()
}

/// `spot_id, x, y` with a header line.
pub fn read_coords(path: &Path, spots: &[String]) -> Result<Coordinates, IoError> {
    let lines = read_lines(path)?;
    let mut rows = Vec::with_capacity(lines.len());
    for (line, text) in lines.iter().skip(1) {
        let f = fields(text);
        if f.len() != 3 {
            return Err(parse_err(path, *line, format!("expected 3 fields, found {}", f.len())));
        }
        let x: f64 = parse_num(path, *line, f[1], "coordinate")?;
        let y: f64 = parse_num(path, *line, f[2], "coordinate")?;
        rows.push((*line, f[0].to_string(), [x, y]));
    }
    let index = spot_positions(spots);
    Ok(Coordinates::new(align_spots(path, &index, spots, rows)?)?)
}

/// Cell-type proportions with their column names.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedCompositions {
    pub comps: CellCompositions,
    pub cell_types: Vec<String>,
}

/// `spot_id` then one proportion column per cell type, with a header naming
/// the types. Rows off by at most [`COMPOSITION_ROUNDING`] are renormalized.
pub fn read_comps(path: &Path, spots: &[String]) -> Result<NamedCompositions, IoError> {
    let lines = read_lines(path)?;
    let Some(((head_line, header), body)) = lines.split_first() else {
        return Err(parse_err(path, 1, "empty composition table"));
    };
    let cell_types: Vec<String> = fields(header).iter().skip(1).map(|s| s.to_string()).collect();
    if cell_types.is_empty() {
        return Err(parse_err(path, *head_line, "header names no cell types"));
    }
    let k = cell_types.len();
    let mut rows = Vec::with_capacity(body.len());
    for (line, text) in body {
        let f = fields(text);
        if f.len() != k + 1 {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", k + 1, f.len())));
        }
        let mut w = f[1..]
            .iter()
            .map(|v| parse_num::<f64>(path, *line, v, "proportion"))
            .collect::<Result<Vec<f64>, _>>()?;
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > COMPOSITION_ROUNDING || w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(parse_err(path, *line, format!("proportions must lie in [0, 1] and sum to 1, got sum {sum}")));
        }
        w.iter_mut().for_each(|v| *v /= sum);
        rows.push((*line, f[0].to_string(), w));
    }
    let index = spot_positions(spots);
    let aligned = align_spots(path, &index, spots, rows)?;
    let comps = CellCompositions::new(spots.len(), k, aligned.concat())?;
    Ok(NamedCompositions { comps, cell_types })
}

fn spot_positions(spots: &[String]) -> HashMap<String, usize> {
    spots.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

/// Network with the number of repeated edges that were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedNetwork {
    pub network: GeneNetwork,
    pub duplicate_edges: usize,
}

/// Two-column edge list of gene names; undirected, repeats ignored.
pub fn read_network(path: &Path, genes: &[String]) -> Result<LoadedNetwork, IoError> {
    let index: HashMap<&str, usize> = genes.iter().enumerate().map(|(j, g)| (g.as_str(), j)).collect();
    let mut seen = BTreeSet::new();
    let mut duplicate_edges = 0;
    for (line, text) in read_lines(path)? {
        let f = fields(&text);
        if f.len() != 2 {
            return Err(parse_err(path, line, format!("expected 2 fields, found {}", f.len())));
        }
        let mut ends = [0usize; 2];
        for (slot, name) in ends.iter_mut().zip(&f) {
            *slot = *index.get(name).ok_or_else(|| IoError::UnknownGene {
                path: path.to_path_buf(),
                line,
                name: name.to_string(),
            })?;
        }
        if ends[0] == ends[1] {
            return Err(parse_err(path, line, format!("self loop on '{}'", f[0])));
        }
        if !seen.insert((ends[0].min(ends[1]), ends[0].max(ends[1]))) {
            duplicate_edges += 1;
        }
    }
    if duplicate_edges > 0 {
        warn!("{}: ignored {duplicate_edges} duplicate edges", path.display());
    }
    let edges: Vec<(usize, usize)> = seen.into_iter().collect();
    Ok(LoadedNetwork {
        network: GeneNetwork::from_edges(genes.len(), &edges)?,
        duplicate_edges,
    })
}

/// Input file locations. MatrixMarket counts take gene and spot names from
/// `genes.tsv` and `spots.tsv` beside the matrix unless given explicitly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetPaths {
    pub counts: PathBuf,
    pub coords: PathBuf,
    pub comps: PathBuf,
    /// Without a network every gene is its own sub-network.
    pub network: Option<PathBuf>,
    pub genes: Option<PathBuf>,
    pub spots: Option<PathBuf>,
}

impl DatasetPaths {
    pub fn is_mtx(&self) -> bool {
        self.counts.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"))
    }

    fn sidecar(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given
            .clone()
            .unwrap_or_else(|| self.counts.parent().unwrap_or(Path::new(".")).join(name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub data: ValidatedDataset,
    pub genes: Vec<String>,
    pub spots: Vec<String>,
    pub cell_types: Vec<String>,
    pub duplicate_edges: usize,
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<LoadedDataset, IoError> {
    let named = if paths.is_mtx() {
        read_mtx_counts(
            &paths.counts,
            &paths.sidecar(&paths.genes, "genes.tsv"),
            &paths.sidecar(&paths.spots, "spots.tsv"),
        )?
    } else {
        read_dense_counts(&paths.counts)?
    };
    let coords = read_coords(&paths.coords, &named.spots)?;
    let comps = read_comps(&paths.comps, &named.spots)?;
    let net = match &paths.network {
        Some(p) => read_network(p, &named.genes)?,
        None => LoadedNetwork {
            network: GeneNetwork::edgeless(named.genes.len()),
            duplicate_edges: 0,
        },
    };
    let data = validate_dataset(named.counts, coords, comps.comps, net.network)?;
    Ok(LoadedDataset {
        data,
        genes: named.genes,
        spots: named.spots,
        cell_types: comps.cell_types,
        duplicate_edges: net.duplicate_edges,
    })
}

/// `x` with six significant digits, trailing zeros removed. Plain
/// notation for exponents in [-4, 6), scientific otherwise, as `%g`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| s.trim_end_matches('0').trim_end_matches('.').to_string();
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        let fixed = format!("{x:.decimals$}");
        if fixed.contains('.') {
            trim(&fixed)
        } else {
            fixed
        }
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

/// Buffered writer that always emits LF line endings.
pub struct TsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TsvWriter {
    pub fn create(path: &Path) -> Result<Self, IoError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn row<I, S>(&mut self, cells: I) -> Result<(), IoError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut line = String::new();
        for (idx, c) in cells.into_iter().enumerate() {
            if idx > 0 {
                line.push('\t');
            }
            line.push_str(c.as_ref());
        }
        line.push('\n');
        self.out.write_all(line.as_bytes()).map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

pub fn write_dense_counts(path: &Path, counts: &CountMatrix, spots: &[String], genes: &[String]) -> Result<(), IoError> {
    let mut w = TsvWriter::create(path)?;
    w.row(std::iter::once("spot").chain(genes.iter().map(String::as_str)))?;
    let mut rows = vec![vec![0u32; counts.n_genes()]; counts.n_spots()];
    for (i, j, v) in counts.iter_nonzeros() {
        rows[i][j] = v;
    }
    for (id, row) in spots.iter().zip(rows) {
        w.row(std::iter::once(id.clone()).chain(row.iter().map(u32::to_string)))?;
    }
    w.finish()
}

/// Writes the matrix plus `genes.tsv` and `spots.tsv` in the same directory.
pub fn write_mtx_counts(path: &Path, counts: &CountMatrix, spots: &[String], genes: &[String]) -> Result<(), IoError> {
    let mut text = String::with_capacity(32 * counts.nnz() + 128);
    writeln!(text, "{MTX_HEADER}").expect("writing to a string");
    writeln!(text, "{} {} {}", counts.n_genes(), counts.n_spots(), counts.nnz()).expect("writing to a string");
    for (i, j, v) in counts.iter_nonzeros() {
        writeln!(text, "{} {} {v}", j + 1, i + 1).expect("writing to a string");
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    write_names(&dir.join("genes.tsv"), genes)?;
    write_names(&dir.join("spots.tsv"), spots)
}

pub fn write_names(path: &Path, names: &[String]) -> Result<(), IoError> {
    let mut w = TsvWriter::create(path)?;
    for n in names {
        w.row([n])?;
    }
    w.finish()
}

pub fn write_coords(path: &Path, coords: &Coordinates, spots: &[String]) -> Result<(), IoError> {
    let mut w = TsvWriter::create(path)?;
    w.row(["spot", "x", "y"])?;
    for (id, p) in spots.iter().zip(coords.points()) {
        w.row([id.clone(), fmt_num(p[0]), fmt_num(p[1])])?;
    }
    w.finish()
}

pub fn write_comps(path: &Path, comps: &CellCompositions, spots: &[String], cell_types: &[String]) -> Result<(), IoError> {
    let mut w = TsvWriter::create(path)?;
    w.row(std::iter::once("spot").chain(cell_types.iter().map(String::as_str)))?;
    for (i, id) in spots.iter().enumerate() {
        w.row(std::iter::once(id.clone()).chain(comps.row(i).iter().map(|&v| fmt_num(v))))?;
    }
    w.finish()
}

pub fn write_network(path: &Path, network: &GeneNetwork, genes: &[String]) -> Result<(), IoError> {
    let mut w = TsvWriter::create(path)?;
    for &(a, b) in network.edges() {
        w.row([&genes[a], &genes[b]])?;
    }
    w.finish()
}
