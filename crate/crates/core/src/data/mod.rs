//! Bags, datasets and their on-disk formats.

mod csv_io;
mod manifest;
mod standardize;
mod synth;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};
pub use manifest::{DatasetEntry, Manifest};
pub use standardize::{apply_standardizer, fit_standardizer, StandardizationStats};
pub use synth::{synth_generate, LabelRule, SynthSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One labeled set of instances; `instances` is an `L x d` matrix whose rows
/// are the instances in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    id: String,
    label: f64,
    instances: Tensor,
}

impl Bag {
    pub fn new(id: impl Into<String>, label: f64, instances: Tensor) -> Result<Self> {
        let id = id.into();
        if instances.rank() != 2 || instances.rows() == 0 || instances.cols() == 0 {
            return Err(Error::Data(format!(
                "bag {id}: instances must be a non-empty matrix, got shape {:?}",
                instances.shape()
            )));
        }
        if !label.is_finite() {
            return Err(Error::Data(format!(
                "bag {id}: label {label} is not finite"
            )));
        }
        Ok(Self {
            id,
            label,
            instances,
        })
    }

    pub fn from_rows(id: impl Into<String>, label: f64, rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(id, label, Tensor::from_rows(rows)?)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    pub fn instances(&self) -> &Tensor {
        &self.instances
    }

    /// Number of instances `L`.
    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn feature_count(&self) -> usize {
        self.instances.cols()
    }

    pub fn instance(&self, l: usize) -> &[f64] {
        self.instances.row(l)
    }

    /// Same id and label with different instances.
    pub fn with_instances(&self, instances: Tensor) -> Result<Self> {
        Self::new(self.id.clone(), self.label, instances)
    }

    /// Instances reordered so that row `l` of the result is row `order[l]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::shape("permute", &[self.len()], &[order.len()]));
        }
        let d = self.feature_count();
        let mut data = Vec::with_capacity(self.instances.len());
        for &l in order {
            data.extend_from_slice(self.instance(l));
        }
        self.with_instances(Tensor::matrix(order.len(), d, data)?)
    }
}

/// Named collection of bags sharing one feature count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    feature_count: usize,
    bags: Vec<Bag>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, feature_count: usize, bags: Vec<Bag>) -> Result<Self> {
        let name = name.into();
        if let Some(bad) = bags.iter().find(|b| b.feature_count() != feature_count) {
            return Err(Error::Data(format!(
                "dataset {name}: bag {} has {} features, expected {feature_count}",
                bad.id(),
                bad.feature_count()
            )));
        }
        Ok(Self {
            name,
            feature_count,
            bags,
        })
    }

    /// Infers the feature count from the first bag.
    pub fn from_bags(name: impl Into<String>, bags: Vec<Bag>) -> Result<Self> {
        let d = match bags.first() {
            Some(b) => b.feature_count(),
            None => return Err(Error::Data("dataset has no bags".into())),
        };
        Self::new(name, d, bags)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn bag_count(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.bags.iter().map(Bag::label).collect()
    }

    pub fn instance_count(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    /// Bags at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            feature_count: self.feature_count,
            bags: indices.iter().map(|&i| self.bags[i].clone()).collect(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Applies `f` to every bag; the result may have a new feature count.
    pub fn map_bags(&self, f: impl Fn(&Bag) -> Result<Bag>) -> Result<Dataset> {
        let bags = self.bags.iter().map(f).collect::<Result<Vec<_>>>()?;
        match bags.first() {
            Some(b) => Dataset::new(self.name.clone(), b.feature_count(), bags),
            None => Ok(self.clone()),
        }
    }
}

/// Keeps only bags with exactly `n` instances, preserving order.
pub fn filter_by_instance_count(ds: &Dataset, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config(
            "instance count filter must be at least 1".into(),
        ));
    }
    let bags: Vec<Bag> = ds.bags().iter().filter(|b| b.len() == n).cloned().collect();
    if bags.is_empty() {
        return Err(Error::Data(format!(
            "dataset {}: no bags with exactly {n} instances",
            ds.name()
        )));
    }
    Dataset::new(ds.name(), ds.feature_count(), bags)
}
