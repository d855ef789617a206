//! Dataset directories and train/val/test splits.
//!
//! A dataset directory holds
//! - `edges.txt`: edge list, one `u v` pair per line, `#` comments allowed
//! - `features.csv`: one row per node, `d` columns (optional header)
//! - `labels.csv`: one row per node; either `k` real columns (header `y0,y1,...`)
//!   or a single integer `class` column, expanded to one-hot targets
//! - `grouping.csv` (optional): `node,group`
//! - `meta.toml` (optional): free-form generator metadata

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::io::{load_graph, write_edge_list};
use crate::graph::Graph;
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    /// `d × N`.
    pub features: Array2<f64>,
    /// `k × N`.
    pub labels: Array2<f64>,
    /// Integer classes when the labels file held a class column.
    pub classes: Option<Vec<usize>>,
    pub groups: Option<Vec<usize>>,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    match fs::File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Comma-separated table with an optional non-numeric header row.
struct Table {
    header: Option<Vec<String>>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut header = None;
    let mut rows = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = t.split(',').map(|f| f.trim().to_string()).collect();
        if header.is_none() && rows.is_empty() && fields[0].parse::<f64>().is_err() {
            header = Some(fields);
            continue;
        }
        rows.push((i + 1, fields));
    }
    Ok(Table { header, rows })
}

fn parse_matrix(path: &Path, table: &Table) -> Result<Array2<f64>> {
    let width = table.rows.first().map_or(0, |r| r.1.len());
    let mut out = Array2::zeros((width, table.rows.len()));
    for (n, (line, fields)) in table.rows.iter().enumerate() {
        if fields.len() != width {
            return Err(malformed(
                path,
                *line,
                format!("expected {width} columns, found {}", fields.len()),
            ));
        }
        for (j, f) in fields.iter().enumerate() {
            out[[j, n]] = f
                .parse()
                .map_err(|_| malformed(path, *line, format!("bad number {f:?}")))?;
        }
    }
    Ok(out)
}

fn parse_classes(path: &Path, table: &Table) -> Result<Vec<usize>> {
    table
        .rows
        .iter()
        .map(|(line, f)| {
            if f.len() != 1 {
                return Err(malformed(path, *line, "expected a single class column"));
            }
            f[0].parse::<usize>()
                .map_err(|_| malformed(path, *line, format!("bad class {:?}", f[0])))
        })
        .collect()
}

pub fn one_hot(classes: &[usize]) -> Array2<f64> {
    let k = classes.iter().max().map_or(1, |m| m + 1);
    let mut y = Array2::zeros((k, classes.len()));
    for (n, &c) in classes.iter().enumerate() {
        y[[c, n]] = 1.0;
    }
    y
}

fn is_class_table(table: &Table) -> bool {
    match &table.header {
        Some(h) => h.len() == 1 && h[0].eq_ignore_ascii_case("class"),
        None => {
            table.rows.first().is_some_and(|r| r.1.len() == 1)
                && table
                    .rows
                    .iter()
                    .all(|(_, f)| f.len() == 1 && f[0].parse::<usize>().is_ok())
        }
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let fpath = dir.join("features.csv");
    let mut features = parse_matrix(&fpath, &read_table(&fpath)?)?;
    let n = features.ncols();
    let mut renormalized = 0;
    for mut col in features.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if (norm - 1.0).abs() > 1e-6 && norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
            renormalized += 1;
        }
    }
    if renormalized > 0 {
        warn!("{renormalized} feature columns were rescaled to unit norm");
    }

    let lpath = dir.join("labels.csv");
    let ltable = read_table(&lpath)?;
    let (labels, classes) = if is_class_table(&ltable) {
        let classes = parse_classes(&lpath, &ltable)?;
        (one_hot(&classes), Some(classes))
    } else {
        (parse_matrix(&lpath, &ltable)?, None)
    };
    if labels.ncols() != n {
        return Err(Error::dims(format!(
            "{n} feature rows but {} label rows",
            labels.ncols()
        )));
    }

    let graph = load_graph(&dir.join("edges.txt"), n)?;

    let gpath = dir.join("grouping.csv");
    let groups = if gpath.exists() {
        let table = read_table(&gpath)?;
        let mut groups = vec![usize::MAX; n];
        for (line, f) in &table.rows {
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| malformed(&gpath, *line, format!("bad integer {s:?}")))
            };
            if f.len() != 2 {
                return Err(malformed(&gpath, *line, "expected node,group"));
            }
            let node = parse(&f[0])?;
            if node >= n {
                return Err(Error::IndexOutOfRange {
                    path: gpath.clone(),
                    index: node,
                    limit: n,
                });
            }
            groups[node] = parse(&f[1])?;
        }
        if groups.contains(&usize::MAX) {
            return Err(Error::InvalidGrouping("grouping.csv does not cover every node".into()));
        }
        Some(groups)
    } else {
        None
    };

    Ok(Dataset {
        graph,
        features,
        labels,
        classes,
        groups,
    })
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

fn matrix_rows(m: &Array2<f64>) -> impl Iterator<Item = String> + '_ {
    m.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","))
}

fn prefixed_header(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

/// Write a dataset directory; `meta` (if any) is stored verbatim as `meta.toml`.
pub fn save_dataset(ds: &Dataset, dir: &Path, meta: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_edge_list(&ds.graph, &dir.join("edges.txt"))?;
    write_rows(
        &dir.join("features.csv"),
        &prefixed_header("x", ds.features.nrows()),
        matrix_rows(&ds.features),
    )?;
    match &ds.classes {
        Some(classes) => write_rows(&dir.join("labels.csv"), "class", classes.iter().map(|c| c.to_string()))?,
        None => write_rows(
            &dir.join("labels.csv"),
            &prefixed_header("y", ds.labels.nrows()),
            matrix_rows(&ds.labels),
        )?,
    }
    if let Some(groups) = &ds.groups {
        write_rows(
            &dir.join("grouping.csv"),
            "node,group",
            groups.iter().enumerate().map(|(n, g)| format!("{n},{g}")),
        )?;
    }
    if let Some(meta) = meta {
        fs::write(dir.join("meta.toml"), meta)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.test_frac];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::config("split fractions must lie in (0, 1)"));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("split fractions must sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Integer sizes summing to `n`: floors first, leftovers to the largest remainders
/// (earlier parts win ties).
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

fn shuffled(n: usize, stream: &Stream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream.rng());
    perm
}

pub fn make_split(n: usize, spec: &SplitSpec, stream: &Stream) -> Result<Split> {
    spec.validate()?;
    if n < 3 {
        return Err(Error::config("a three-way split needs at least 3 nodes"));
    }
    let sizes = largest_remainder(n, &[spec.train_frac, spec.val_frac, spec.test_frac]);
    let perm = shuffled(n, stream);
    let mut parts = [
        perm[..sizes[0]].to_vec(),
        perm[sizes[0]..sizes[0] + sizes[1]].to_vec(),
        perm[sizes[0] + sizes[1]..].to_vec(),
    ];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    let [train, val, test] = parts;
    Ok(Split { train, val, test })
}

/// `labeled` random nodes for training, the rest for testing.
pub fn split_labeled(n: usize, labeled: usize, stream: &Stream) -> Result<Split> {
    if labeled == 0 || labeled >= n {
        return Err(Error::config(format!("labeled count {labeled} must lie in 1..{n}")));
    }
    let perm = shuffled(n, stream);
    let mut train = perm[..labeled].to_vec();
    let mut test = perm[labeled..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        val: Vec::new(),
        test,
    })
}

pub fn write_split_csv(split: &Split, path: &Path) -> Result<()> {
    let mut rows: Vec<(usize, &str)> = Vec::new();
    rows.extend(split.train.iter().map(|&n| (n, "train")));
    rows.extend(split.val.iter().map(|&n| (n, "val")));
    rows.extend(split.test.iter().map(|&n| (n, "test")));
    rows.sort_unstable();
    write_rows(
        path,
        "node,partition",
        rows.into_iter().map(|(n, p)| format!("{n},{p}")),
    )
}

pub fn read_split_csv(path: &Path) -> Result<Split> {
    let table = read_table(path)?;
    let mut split = Split {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for (line, f) in &table.rows {
        if f.len() != 2 {
            return Err(malformed(path, *line, "expected node,partition"));
        }
        let node: usize = f[0].parse().map_err(|_| malformed(path, *line, "bad node id"))?;
        match f[1].as_str() {
            "train" => split.train.push(node),
            "val" => split.val.push(node),
            "test" => split.test.push(node),
            other => return Err(malformed(path, *line, format!("unknown partition {other:?}"))),
        }
    }
    Ok(split)
}
