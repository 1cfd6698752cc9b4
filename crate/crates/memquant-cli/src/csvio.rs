//! CSV reading and writing.
//!
//! All numeric output uses Rust's shortest round-trip formatting, so a
//! written file replays bit-identically when read back.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use memquant::rng::Rng;
use memquant::{Error, Observation, Result};

/// A dataset loaded from CSV: header `y,x1,...,xp`.
pub struct Dataset {
    pub p: usize,
    pub rows: Vec<Observation>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig(format!("{}: empty file", path.display())))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"y") {
            return Err(Error::InvalidConfig(format!(
                "{}: first column must be y, got {:?}",
                path.display(),
                cols.first()
            )));
        }
        for (i, c) in cols[1..].iter().enumerate() {
            let want = format!("x{}", i + 1);
            if *c != want {
                return Err(Error::InvalidConfig(format!(
                    "{}: expected column {want}, got {c:?}",
                    path.display()
                )));
            }
        }
        let p = cols.len() - 1;
        let mut rows = Vec::new();
        for (lineno, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut y = None;
            let mut x = Vec::with_capacity(p);
            for (idx, field) in line.split(',').enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "{}:{}: bad number {field:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                if idx == 0 {
                    y = Some(v);
                } else {
                    x.push(v);
                }
            }
            if x.len() != p {
                return Err(Error::InvalidConfig(format!(
                    "{}:{}: expected {} fields, got {}",
                    path.display(),
                    lineno + 1,
                    p + 1,
                    x.len() + 1
                )));
            }
            rows.push(Observation::new(y.unwrap(), x)?);
        }
        if rows.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{}: no data rows",
                path.display()
            )));
        }
        Ok(Dataset { p, rows })
    }

    /// Deterministic in-place shuffle.
    pub fn shuffle(&mut self, seed: u64) {
        let mut rng = Rng::new(seed);
        for i in (1..self.rows.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            self.rows.swap(i, j);
        }
    }

    /// Sequential blocks of `m` rows in file order (the last block may
    /// be shorter).
    pub fn partitions(&self, m: usize) -> Vec<&[Observation]> {
        self.rows.chunks(m.max(1)).collect()
    }
}

pub fn write_dataset(path: &Path, rows: &[Observation], p: usize) -> Result<()> {
    let mut out = String::new();
    out.push('y');
    for j in 1..=p {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for obs in rows {
        let _ = write!(out, "{}", obs.y());
        for v in obs.x() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out)
        .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", path.display())))
}

/// Generic CSV writer: a header plus stringified rows.
pub fn write_rows(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 32 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)
        .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", path.display())))
}

/// Load a topology file: rows `node_id,parent_id` with an empty parent
/// field marking the root.
pub fn load_topology(path: &Path) -> Result<memquant::nettree::TreeTopology> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut entries: Vec<(usize, Option<usize>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("node") {
            continue;
        }
        let mut fields = line.split(',');
        let node: usize = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| {
                Error::InvalidConfig(format!("{}:{}: bad node id", path.display(), lineno + 1))
            })?;
        let parent_field = fields.next().unwrap_or("").trim();
        let parent = if parent_field.is_empty() {
            None
        } else {
            Some(parent_field.parse().map_err(|_| {
                Error::InvalidConfig(format!("{}:{}: bad parent id", path.display(), lineno + 1))
            })?)
        };
        entries.push((node, parent));
    }
    entries.sort_by_key(|e| e.0);
    for (idx, (node, _)) in entries.iter().enumerate() {
        if *node != idx {
            return Err(Error::InvalidConfig(format!(
                "{}: node ids must be 0..n-1 without gaps",
                path.display()
            )));
        }
    }
    memquant::nettree::TreeTopology::from_parents(entries.into_iter().map(|e| e.1).collect())
}
