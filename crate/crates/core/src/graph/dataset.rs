//! Line-oriented JSON dataset files.
//!
//! ```text
//! {"format":"pigvae-graphs","version":1}
//! {"n":4,"edges":[[0,1],[1,3]],"family":"erdos_renyi","params":{"p":0.5}}
//! ```
//!
//! Node features are omitted when they are the default single constant
//! channel; otherwise they are stored under `"x"` as `n` rows.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Family, Graph, Result};
use crate::error::GraphError;

pub const FORMAT_NAME: &str = "pigvae-graphs";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    n: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<Vec<Vec<f64>>>,
}

impl Record {
    fn from_graph(g: &Graph) -> Self {
        let default_x = g.d_v() == 1 && g.node_features().iter().all(|&v| v == 1.0);
        Self {
            n: g.n(),
            edges: g.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            family: g.family().map(|f| f.name().to_string()),
            params: g.family().map(Family::params_json),
            x: (!default_x).then(|| g.node_features().chunks(g.d_v().max(1)).map(<[f64]>::to_vec).collect()),
        }
    }

    fn into_graph(self) -> std::result::Result<Graph, String> {
        let mut edges = Vec::with_capacity(self.edges.len());
        for [i, j] in self.edges {
            if i >= j {
                return Err(format!("edge [{i},{j}] must satisfy i < j"));
            }
            edges.push((i, j));
        }
        let mut g = Graph::from_edges(self.n, &edges).map_err(|e| e.to_string())?;
        if let Some(rows) = self.x {
            let d_v = rows.first().map_or(0, Vec::len);
            if rows.len() != self.n || rows.iter().any(|r| r.len() != d_v) {
                return Err("feature rows do not match n".into());
            }
            g = g.with_node_features(d_v, rows.concat()).map_err(|e| e.to_string())?;
        }
        match (self.family, self.params) {
            (Some(name), params) => {
                let f = Family::from_parts(&name, params.unwrap_or(serde_json::json!({}))).map_err(|e| e.to_string())?;
                Ok(g.with_family(f))
            }
            (None, None) => Ok(g),
            (None, Some(_)) => Err("params given without a family".into()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io { path: path.to_path_buf(), source }
}

pub fn write_dataset(path: impl AsRef<Path>, graphs: &[Graph]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let header = Header { format: FORMAT_NAME.into(), version: FORMAT_VERSION };
    let line = serde_json::to_string(&header).expect("header serializes");
    writeln!(w, "{line}").map_err(io_err(path))?;
    for g in graphs {
        let line = serde_json::to_string(&Record::from_graph(g)).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Graph>> {
    DatasetReader::open(path)?.collect()
}

/// Streaming reader yielding one graph per line.
pub struct DatasetReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl DatasetReader {
    /// Opens `path` and checks the header. An empty file is an empty dataset.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut reader = Self { lines: BufReader::new(file).lines(), path, line_no: 0 };
        if let Some(first) = reader.next_line()? {
            let header: Header = serde_json::from_str(&first).map_err(|e| GraphError::Version {
                path: reader.path.clone(),
                detail: format!("line 1 is not a header: {e}"),
            })?;
            if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
                return Err(GraphError::Version {
                    path: reader.path.clone(),
                    detail: format!(
                        "found {} v{}, expected {FORMAT_NAME} v{FORMAT_VERSION}",
                        header.format, header.version
                    ),
                });
            }
        }
        Ok(reader)
    }

    fn next_line(&mut self) -> Result<Option<String>> {
        loop {
            let Some(line) = self.lines.next() else { return Ok(None) };
            self.line_no += 1;
            let line = line.map_err(io_err(&self.path))?;
            if !line.trim().is_empty() {
                return Ok(Some(line));
            }
        }
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Graph>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.next_line() {
            Ok(Some(line)) => line,
            Ok(None) => return None,
            Err(e) => return Some(Err(e)),
        };
        let parsed = serde_json::from_str::<Record>(&line)
            .map_err(|e| e.to_string())
            .and_then(Record::into_graph);
        Some(parsed.map_err(|detail| GraphError::Parse { path: self.path.clone(), line: self.line_no, detail }))
    }
}
