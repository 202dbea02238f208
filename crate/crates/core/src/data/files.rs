use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Vector;

pub const FEATURE_MAGIC: &str = "BICAP-FEAT";
const FEATURE_VERSION: u32 = 1;

/// Parses `image_id<TAB>caption text` lines. Blank lines are skipped.
pub fn parse_captions(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, caption) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("captions line {}: missing tab", lineno + 1)))?;
        out.push((id.to_owned(), caption.to_owned()));
    }
    Ok(out)
}

pub fn read_captions(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_captions(&text)
}

/// Image features keyed by image id, kept in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    dim: usize,
    rows: Vec<(String, Vector)>,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        FeatureTable {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, feature: Vector) -> Result<()> {
        let id = id.into();
        if feature.len() != self.dim {
            return Err(Error::shape(format!(
                "feature for `{id}` has length {}, table dimension is {}",
                feature.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Data(format!("duplicate feature row for `{id}`")));
        }
        self.index.insert(id.clone(), self.rows.len());
        self.rows.push((id, feature));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Vector> {
        self.index.get(id).map(|&i| &self.rows[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vector)> {
        self.rows.iter().map(|(id, f)| (id.as_str(), f))
    }
}

/// Serialises with 17 significant digits so values round-trip exactly.
pub fn write_features(table: &FeatureTable) -> String {
    let mut out = format!("{FEATURE_MAGIC} {FEATURE_VERSION} {} {}\n", table.len(), table.dim);
    for (id, f) in table.iter() {
        out.push_str(id);
        out.push('\t');
        for (k, v) in f.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_features(text: &str) -> Result<FeatureTable> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("feature file is empty".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || Error::Data(format!("bad feature header `{header}`"));
    if fields.len() != 4 || fields[0] != FEATURE_MAGIC {
        return Err(bad_header());
    }
    let version: u32 = fields[1].parse().map_err(|_| bad_header())?;
    if version != FEATURE_VERSION {
        return Err(Error::Data(format!("unsupported feature file version {version}")));
    }
    let count: usize = fields[2].parse().map_err(|_| bad_header())?;
    let dim: usize = fields[3].parse().map_err(|_| bad_header())?;

    let mut table = FeatureTable::new(dim);
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = lineno + 2;
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("feature line {lineno}: missing tab")))?;
        let v = values
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Data(format!("feature line {lineno}: bad value `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if v.len() != dim {
            return Err(Error::Data(format!(
                "feature line {lineno}: {} values, header declares {dim}",
                v.len()
            )));
        }
        table.insert(id, v.into())?;
    }
    if table.len() != count {
        return Err(Error::Data(format!(
            "feature header declares {count} rows, found {}",
            table.len()
        )));
    }
    Ok(table)
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text)
}
