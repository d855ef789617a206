//! Edge-list text files and the `row,col,value` matrix CSV.
//!
//! Matrix CSV layout:
//! ```text
//! rows,cols,nnz
//! 3,3,4
//! 0,0,0.5
//! ...
//! ```
//! Values are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Graph, SparseMatrix};
use crate::error::{Error, Result};

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    match fs::File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

/// Parse an edge list. Returns `(line number, u, v)` for each edge line.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut it = t.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(malformed(path, lineno, "expected two node ids"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| malformed(path, lineno, format!("bad node id {s:?}")))
        };
        out.push((lineno, parse(a)?, parse(b)?));
    }
    Ok(out)
}

/// Read an edge list into a graph on `num_nodes` nodes. Edges naming a node
/// `>= num_nodes` are reported as malformed lines; duplicates are rejected.
pub fn load_graph(path: &Path, num_nodes: usize) -> Result<Graph> {
    let edges = read_edge_list(path)?;
    for &(line, u, v) in &edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(malformed(
                path,
                line,
                format!("edge ({u}, {v}) references a node outside 0..{num_nodes}"),
            ));
        }
        if u == v {
            return Err(malformed(path, line, format!("self-loop on node {u}")));
        }
    }
    Graph::new(num_nodes, edges.into_iter().map(|(_, u, v)| (u, v)).collect())
}

pub fn write_edge_list(graph: &Graph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# nodes {} edges {}", graph.num_nodes(), graph.num_edges())?;
    for &(u, v) in graph.edges() {
        writeln!(w, "{u} {v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn matrix_to_csv(m: &SparseMatrix) -> String {
    let mut s = String::with_capacity(m.nnz() * 24 + 32);
    s.push_str("rows,cols,nnz\n");
    let _ = writeln!(s, "{},{},{}", m.rows(), m.cols(), m.nnz());
    for (r, c, v) in m.iter() {
        let _ = writeln!(s, "{r},{c},{v:?}");
    }
    s
}

pub fn write_matrix_csv(m: &SparseMatrix, path: &Path) -> Result<()> {
    fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<SparseMatrix> {
    let mut lines = open(path)?.lines().enumerate();
    let mut next = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            Some((i, l)) => Ok(Some((i + 1, l?))),
            None => Ok(None),
        }
    };
    match next()? {
        Some((_, h)) if h.trim() == "rows,cols,nnz" => {}
        Some((n, _)) => return Err(malformed(path, n, "expected header `rows,cols,nnz`")),
        None => return Err(malformed(path, 1, "empty file")),
    }
    let (n, dims) = next()?.ok_or_else(|| malformed(path, 2, "missing dimensions"))?;
    let fields: Vec<&str> = dims.trim().split(',').collect();
    let parse_usize = |s: &str, line| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| malformed(path, line, format!("bad integer {s:?}")))
    };
    if fields.len() != 3 {
        return Err(malformed(path, n, "expected rows,cols,nnz values"));
    }
    let (rows, cols, nnz) = (
        parse_usize(fields[0], n)?,
        parse_usize(fields[1], n)?,
        parse_usize(fields[2], n)?,
    );
    let mut triplets = Vec::with_capacity(nnz);
    while let Some((n, line)) = next()? {
        let t = line.trim();
        if t.is_empty() || t == "row,col,value" {
            continue;
        }
        let f: Vec<&str> = t.split(',').collect();
        if f.len() != 3 {
            return Err(malformed(path, n, "expected row,col,value"));
        }
        let (r, c) = (parse_usize(f[0], n)?, parse_usize(f[1], n)?);
        let v: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| malformed(path, n, format!("bad value {:?}", f[2])))?;
        if r >= rows || c >= cols {
            return Err(Error::IndexOutOfRange {
                path: path.to_path_buf(),
                index: r.max(c),
                limit: if r >= rows { rows } else { cols },
            });
        }
        triplets.push((r, c, v));
    }
    if triplets.len() != nnz {
        return Err(malformed(
            path,
            2,
            format!("header announces {nnz} entries, found {}", triplets.len()),
        ));
    }
    SparseMatrix::from_triplets(rows, cols, &triplets)
}
