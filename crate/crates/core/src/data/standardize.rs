use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-feature pooled mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    /// Deviation used as divisor: zero deviations become 1.
    fn divisor(&self, j: usize) -> f64 {
        if self.std[j] > 0.0 {
            self.std[j]
        } else {
            1.0
        }
    }

    pub fn feature_count(&self) -> usize {
        self.mean.len()
    }

    fn transform(&self, ds: &Dataset, f: impl Fn(f64, usize) -> f64) -> Result<Dataset> {
        if ds.feature_count() != self.feature_count() {
            return Err(Error::shape(
                "standardize",
                &[self.feature_count()],
                &[ds.feature_count()],
            ));
        }
        let d = ds.feature_count();
        ds.map_bags(|bag| {
            let data = bag
                .instances()
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| f(v, i % d))
                .collect();
            bag.with_instances(Tensor::matrix(bag.len(), d, data)?)
        })
    }

    /// Undoes [`apply_standardizer`].
    pub fn invert(&self, ds: &Dataset) -> Result<Dataset> {
        self.transform(ds, |v, j| v * self.divisor(j) + self.mean[j])
    }
}

/// Fits statistics over all instances of `train`, pooled across bags.
pub fn fit_standardizer(train: &Dataset) -> StandardizationStats {
    let d = train.feature_count();
    let n = train.instance_count().max(1) as f64;
    let mut mean = vec![0.0; d];
    for bag in train.bags() {
        for row in bag.instances().row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for bag in train.bags() {
        for row in bag.instances().row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    StandardizationStats { mean, std }
}

pub fn apply_standardizer(stats: &StandardizationStats, ds: &Dataset) -> Result<Dataset> {
    stats.transform(ds, |v, j| (v - stats.mean[j]) / stats.divisor(j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Bag;

    fn one_feature(values: &[f64]) -> Dataset {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        Dataset::from_bags("t", vec![Bag::from_rows("a", 0.0, &rows).unwrap()]).unwrap()
    }

    #[test]
    fn two_point_feature() {
        let ds = one_feature(&[1.0, 3.0]);
        let stats = fit_standardizer(&ds);
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.std, vec![1.0]);
        let z = apply_standardizer(&stats, &ds).unwrap();
        assert_eq!(z.bags()[0].instances().data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let ds = one_feature(&[4.0, 4.0, 4.0]);
        let stats = fit_standardizer(&ds);
        assert_eq!(stats.std, vec![0.0]);
        let z = apply_standardizer(&stats, &ds).unwrap();
        assert!(z.bags()[0].instances().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn held_out_data_keeps_training_stats() {
        let stats = fit_standardizer(&one_feature(&[0.0, 2.0]));
        let z = apply_standardizer(&stats, &one_feature(&[5.0, 7.0])).unwrap();
        let mean: f64 = z.bags()[0].instances().data().iter().sum::<f64>() / 2.0;
        assert_eq!(mean, 5.0);
    }

    #[test]
    fn feature_count_mismatch() {
        let stats = fit_standardizer(&one_feature(&[0.0, 2.0]));
        let two = Dataset::from_bags(
            "t",
            vec![Bag::from_rows("a", 0.0, &[vec![1.0, 2.0]]).unwrap()],
        )
        .unwrap();
        assert!(apply_standardizer(&stats, &two).is_err());
    }
}
