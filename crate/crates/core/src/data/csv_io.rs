//! `bag_id,label,f1,...,fd` CSV files.
//!
//! Rows need not be grouped by bag; bags appear in order of first
//! occurrence and instances keep file order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Bag, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, &name, &path.display().to_string())
}

/// Parses a dataset from any reader; `source` labels error messages.
pub fn read_csv<R: Read>(reader: R, name: &str, source: &str) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "bag_id" || &header[1] != "label" {
        return Err(parse_err(
            1,
            "header must be `bag_id,label,f1,...,fd` with at least one feature".into(),
        ));
    }
    let d = header.len() - 2;

    struct Pending {
        id: String,
        label: f64,
        values: Vec<f64>,
    }
    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let number = |col: usize| -> Result<f64> {
            let field = &record[col];
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(
                    line,
                    format!(
                        "column `{}`: `{field}` is not a finite number",
                        &header[col]
                    ),
                )),
            }
        };
        let id = record[0].to_string();
        let label = number(1)?;
        let slot = match index.get(&id) {
            Some(&i) => {
                if order[i].label.to_bits() != label.to_bits() {
                    return Err(parse_err(
                        line,
                        format!(
                            "bag {id}: label {label} conflicts with earlier label {}",
                            order[i].label
                        ),
                    ));
                }
                i
            }
            None => {
                index.insert(id.clone(), order.len());
                order.push(Pending {
                    id,
                    label,
                    values: Vec::new(),
                });
                order.len() - 1
            }
        };
        for col in 2..header.len() {
            let v = number(col)?;
            order[slot].values.push(v);
        }
    }

    let bags = order
        .into_iter()
        .map(|p| {
            let rows = p.values.len() / d;
            Bag::new(p.id, p.label, Tensor::matrix(rows, d, p.values)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, d, bags)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(ds, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes with shortest round-trip float formatting, so reading the output
/// back reproduces every value bit for bit.
pub fn write_csv<W: Write>(ds: &Dataset, w: &mut W) -> std::io::Result<()> {
    write!(w, "bag_id,label")?;
    for j in 1..=ds.feature_count() {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for bag in ds.bags() {
        for row in bag.instances().row_iter() {
            write!(w, "{},{:?}", bag.id(), bag.label())?;
            for v in row {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
