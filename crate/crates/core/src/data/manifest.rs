//! Flat `name.key = value` manifest describing where datasets live.
//!
//! ```text
//! # AOD data, RMSE reported x100
//! modis.path = data/modis.csv
//! modis.scale = 100
//! misr2.path = data/misr2.csv
//! misr2.scale = 100
//! misr2.instance_count = 100
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{filter_by_instance_count, load_csv, Dataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
    /// Multiplier applied to reported RMSE (100 for AOD, 1 for crop yield).
    pub scale: f64,
    pub instance_count: Option<usize>,
}

impl DatasetEntry {
    /// Reads the CSV and applies the optional instance-count filter.
    pub fn load(&self) -> Result<Dataset> {
        let ds = load_csv(&self.path)?.with_name(self.name.clone());
        match self.instance_count {
            Some(n) => filter_by_instance_count(&ds, n),
            None => Ok(ds),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<String, DatasetEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, &path.display().to_string())
    }

    pub fn parse(text: &str, base: &Path, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line: line as u64,
            message,
        };
        #[derive(Default)]
        struct Partial {
            path: Option<PathBuf>,
            scale: Option<f64>,
            instance_count: Option<usize>,
        }
        let mut partial: BTreeMap<String, Partial> = BTreeMap::new();

        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(lineno, format!("expected `name.key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let (name, field) = key
                .rsplit_once('.')
                .ok_or_else(|| err(lineno, format!("key `{key}` has no dataset prefix")))?;
            let entry = partial.entry(name.to_string()).or_default();
            match field {
                "path" => {
                    let p = PathBuf::from(value);
                    entry.path = Some(if p.is_absolute() { p } else { base.join(p) });
                }
                "scale" => {
                    let s: f64 = value
                        .parse()
                        .map_err(|_| err(lineno, format!("scale `{value}` is not a number")))?;
                    if s != 1.0 && s != 100.0 {
                        return Err(err(lineno, format!("scale must be 1 or 100, got {s}")));
                    }
                    entry.scale = Some(s);
                }
                "instance_count" => {
                    let n: usize = value.parse().map_err(|_| {
                        err(lineno, format!("instance_count `{value}` is not a count"))
                    })?;
                    if n == 0 {
                        return Err(err(lineno, "instance_count must be at least 1".into()));
                    }
                    entry.instance_count = Some(n);
                }
                other => return Err(err(lineno, format!("unknown key `{other}`"))),
            }
        }

        let mut entries = BTreeMap::new();
        for (name, p) in partial {
            let path = p.path.ok_or_else(|| {
                Error::Data(format!("manifest {source}: dataset `{name}` has no path"))
            })?;
            entries.insert(
                name.clone(),
                DatasetEntry {
                    name,
                    path,
                    scale: p.scale.unwrap_or(1.0),
                    instance_count: p.instance_count,
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Result<&DatasetEntry> {
        self.entries.get(name).ok_or_else(|| {
            Error::Config(format!(
                "dataset `{name}` not in manifest (known: {})",
                self.entries.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.values()
    }
}
