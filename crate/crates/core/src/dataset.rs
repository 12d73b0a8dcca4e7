//! Node-classification datasets and their on-disk directory format.
//!
//! A dataset directory holds:
//!
//! * `edges.csv`: two integer columns, one undirected edge per line, no header;
//! * `features.bin`: `b"ADRC"`, `u32` version (1), `u32` N, `u32` D, then
//!   `N*D` little-endian `f32` values in row-major order;
//! * `labels.csv`: one integer label per line;
//! * `masks.csv` (optional): a header naming each mask, then one `0`/`1` row
//!   per node.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::util::Fnv64;

pub const FEATURES_MAGIC: &[u8; 4] = b"ADRC";
pub const FEATURES_VERSION: u32 = 1;

pub const TRAIN_MASK: &str = "train";
pub const VAL_MASK: &str = "val";
pub const TEST_MASK: &str = "test";

#[derive(Debug)]
pub struct Dataset {
    graph: Graph,
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    masks: BTreeMap<String, Vec<bool>>,
    fingerprint: OnceLock<u64>,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Self {
            graph: self.graph.clone(),
            features: self.features.clone(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            masks: self.masks.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.graph == other.graph
            && self.features == other.features
            && self.labels == other.labels
            && self.num_classes == other.num_classes
            && self.masks == other.masks
    }
}

impl Dataset {
    pub fn new(
        graph: Graph,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        masks: BTreeMap<String, Vec<bool>>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset feature rows",
                expected: n,
                actual: features.nrows(),
            });
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: n,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} not below num_classes {num_classes}"
            )));
        }
        for (name, mask) in &masks {
            if mask.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "mask `{name}` has length {} but graph has {n} nodes",
                    mask.len()
                )));
            }
        }
        Ok(Self {
            graph,
            features,
            labels,
            num_classes,
            masks,
            fingerprint: OnceLock::new(),
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn masks(&self) -> &BTreeMap<String, Vec<bool>> {
        &self.masks
    }

    pub fn mask(&self, name: &str) -> Option<&[bool]> {
        self.masks.get(name).map(Vec::as_slice)
    }

    /// Same features, labels and masks on a different graph.
    pub fn with_graph(&self, graph: Graph) -> Result<Self> {
        Self::new(
            graph,
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
            self.masks.clone(),
        )
    }

    /// Content hash over graph, features, labels and masks. Computed once.
    pub fn fingerprint(&self) -> u64 {
        *self.fingerprint.get_or_init(|| {
            let mut h = Fnv64::new();
            h.write_usize(self.graph.num_nodes());
            for &o in self.graph.row_offsets() {
                h.write_usize(o);
            }
            for &v in self.graph.neighbor_ids() {
                h.write_u32(v);
            }
            h.write_usize(self.features.ncols());
            for &x in self.features.iter() {
                h.write_f64(x);
            }
            for &y in &self.labels {
                h.write_usize(y);
            }
            for (name, mask) in &self.masks {
                h.write_bytes(name.as_bytes());
                for &m in mask {
                    h.write_u8(m as u8);
                }
            }
            h.finish()
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;

        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(dir.join("edges.csv"))?;
        for (u, v) in self.graph.edges() {
            w.write_record(&[u.to_string(), v.to_string()])?;
        }
        w.flush()?;

        write_features(&dir.join("features.bin"), &self.features)?;

        let mut w = BufWriter::new(File::create(dir.join("labels.csv"))?);
        for y in &self.labels {
            writeln!(w, "{y}")?;
        }
        w.flush()?;

        if !self.masks.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("masks.csv"))?;
            w.write_record(self.masks.keys())?;
            for i in 0..self.num_nodes() {
                w.write_record(self.masks.values().map(|m| if m[i] { "1" } else { "0" }))?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let features = read_features(&dir.join("features.bin"))?;
        let n = features.nrows();

        let mut edges = Vec::new();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(dir.join("edges.csv"))?;
        for record in r.records() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::format("edges.csv", format!("expected 2 columns, got {}", record.len())));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::format("edges.csv", format!("`{s}`: {e}")))
            };
            edges.push((parse(&record[0])?, parse(&record[1])?));
        }
        let graph = Graph::from_edges(n, &edges)?;

        let text = fs::read_to_string(dir.join("labels.csv"))?;
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<usize>()
                    .map_err(|e| Error::format("labels.csv", format!("`{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);

        let mut masks = BTreeMap::new();
        let masks_path = dir.join("masks.csv");
        if masks_path.exists() {
            let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&masks_path)?;
            let names: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
            let mut columns = vec![Vec::with_capacity(n); names.len()];
            for record in r.records() {
                let record = record?;
                for (col, value) in columns.iter_mut().zip(record.iter()) {
                    col.push(match value {
                        "1" | "true" => true,
                        "0" | "false" => false,
                        other => return Err(Error::format("masks.csv", format!("bad flag `{other}`"))),
                    });
                }
            }
            masks = names.into_iter().zip(columns).collect();
        }

        Self::new(graph, features, labels, num_classes, masks)
    }
}

pub fn write_features(path: &Path, features: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&FEATURES_VERSION.to_le_bytes())?;
    w.write_all(&(features.nrows() as u32).to_le_bytes())?;
    w.write_all(&(features.ncols() as u32).to_le_bytes())?;
    for &x in features.iter() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURES_MAGIC {
        return Err(Error::format("features.bin", "bad magic"));
    }
    let mut word = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let version = read_u32(&mut r)?;
    if version != FEATURES_VERSION {
        return Err(Error::format("features.bin", format!("unsupported version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let mut bytes = Vec::with_capacity(n * d * 4);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * d * 4 {
        return Err(Error::format(
            "features.bin",
            format!("expected {} payload bytes, found {}", n * d * 4, bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((n, d), values).expect("shape"))
}
