//! Labelled feature vectors: a seeded Gaussian-blob generator and CSV I/O.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::contract("feature rows have different lengths"));
        }
        if features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::contract("non-finite feature value"));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Dataset {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// First `⌊frac·len⌋` samples and the rest.
    pub fn split(&self, frac: f64) -> (Dataset, Dataset) {
        let k = ((self.len() as f64) * frac.clamp(0.0, 1.0)).floor() as usize;
        let part = |r: std::ops::Range<usize>| Dataset {
            features: self.features[r.clone()].to_vec(),
            labels: self.labels[r].to_vec(),
            classes: self.classes,
        };
        (part(0..k), part(k..self.len()))
    }

    /// Reads `feature...,label` rows. A first row whose label field is not
    /// an integer is taken as a header.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::format("dataset csv", e))?;
            let fields: Vec<&str> = record.iter().collect();
            let Some((label, feats)) = fields.split_last() else {
                continue;
            };
            let label = match label.parse::<usize>() {
                Ok(l) => l,
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::format("dataset csv", format!("line {}: label: {e}", line + 1))),
            };
            let row = feats
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format("dataset csv", format!("line {}: {e}", line + 1)))?;
            features.push(row);
            labels.push(label);
        }
        Dataset::new(features, labels)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::format("dataset csv", e);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(e)?;
        for (x, &y) in self.features.iter().zip(&self.labels) {
            let mut row: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
            row.push(y.to_string());
            w.write_record(&row).map_err(e)?;
        }
        w.flush().map_err(|e| Error::format("dataset csv", e))
    }
}

/// Isotropic unit-variance Gaussian blobs. Class centres are random
/// directions scaled to `separation / 2` from the origin; samples are
/// shuffled.
pub fn gaussian_blobs(seed: u64, per_class: usize, dim: usize, classes: usize, separation: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            dir.iter().map(|x| x / norm * separation / 2.0).collect()
        })
        .collect();
    let mut samples: Vec<(Vec<f64>, usize)> = Vec::with_capacity(per_class * classes);
    for (k, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            let x = centre
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + z
                })
                .collect();
            samples.push((x, k));
        }
    }
    samples.shuffle(&mut rng);
    let (features, labels) = samples.into_iter().unzip();
    Dataset {
        features,
        labels,
        classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_seeded() {
        let a = gaussian_blobs(4, 50, 3, 2, 3.0);
        assert_eq!(a, gaussian_blobs(4, 50, 3, 2, 3.0));
        assert_ne!(a, gaussian_blobs(5, 50, 3, 2, 3.0));
        assert_eq!(a.len(), 100);
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 50);
    }

    #[test]
    fn csv_round_trip() {
        let d = gaussian_blobs(1, 5, 4, 3, 2.0);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("f0,f1,f2,f3,label\n"));
        assert_eq!(Dataset::from_csv(&buf[..]).unwrap(), d);
    }

    #[test]
    fn csv_without_header_and_errors() {
        let d = Dataset::from_csv("1.5,-2,0\n0.25,3,1\n".as_bytes()).unwrap();
        assert_eq!(d.features, vec![vec![1.5, -2.0], vec![0.25, 3.0]]);
        assert_eq!(d.labels, vec![0, 1]);
        assert!(Dataset::from_csv("1,2,0\n1,x,1\n".as_bytes()).is_err());
        assert!(Dataset::from_csv("1,2,0\n1,2,z\n".as_bytes()).is_err());
        assert!(Dataset::from_csv("1,2,0\n1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn split_sizes() {
        let d = gaussian_blobs(2, 10, 2, 2, 1.0);
        let (a, b) = d.split(0.75);
        assert_eq!((a.len(), b.len()), (15, 5));
        assert_eq!(a.features[0], d.features[0]);
    }
}
