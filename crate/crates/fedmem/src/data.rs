//! Synthetic Gaussian-blob generation, CSV tabular I/O, and stratified
//! train/test splitting.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// A labelled feature matrix. `class_means` is present only for
/// synthetically generated data, where it doubles as ground-truth class
/// semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub class_means: Option<Tensor>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Dimension {
                context: "dataset features rank".into(),
                expected: 2,
                actual: features.shape().len(),
            });
        }
        if features.rows() != labels.len() {
            return Err(Error::Dimension {
                context: "dataset labels".into(),
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::config(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            class_means: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimensionality.
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// New dataset keeping the given rows, in the given order. Class means
    /// and class count carry over.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_means: self.class_means.clone(),
        }
    }

    pub fn label_histogram(&self) -> LabelHistogram {
        LabelHistogram::from_labels(&self.labels, self.num_classes)
    }

    /// Row indices carrying each class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }
}

/// Per-class row counts of a dataset or shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHistogram {
    counts: Vec<usize>,
}

impl LabelHistogram {
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Self {
        let mut counts = vec![0usize; num_classes];
        for &y in labels {
            counts[y] += 1;
        }
        LabelHistogram { counts }
    }

    pub fn from_counts(counts: Vec<usize>) -> Self {
        LabelHistogram { counts }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Classes with at least one row, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(y, _)| y)
            .collect()
    }
}

/// Generate an isotropic Gaussian-blob classification problem.
///
/// Class means are drawn uniformly from `[-5, 5]^d` under `layout_seed`,
/// redrawing any mean that lands closer than `2 * spread` to an already
/// placed one, so the problem is learnable but non-trivial at every seed.
/// Each class then receives exactly `n_per_class` samples `mean + eps`,
/// `eps ~ N(0, spread^2 I)`, drawn under `sample_seed`. Rows are grouped
/// by class in ascending label order.
pub fn make_blobs(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    layout_seed: u64,
    sample_seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::config("make_blobs requires at least 2 classes"));
    }
    if dim < 2 {
        return Err(Error::config("make_blobs requires dimension >= 2"));
    }
    if n_per_class < 10 {
        return Err(Error::config(
            "make_blobs requires at least 10 samples per class",
        ));
    }
    if spread <= 0.0 {
        return Err(Error::config("make_blobs requires spread > 0"));
    }

    let mut layout_rng = rng::stream(layout_seed, &[rng::tag("blob-layout")]);
    let min_sep = 2.0 * spread;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let mut attempts = 0usize;
    while means.len() < num_classes {
        use rand::Rng;
        let candidate: Vec<f64> = (0..dim)
            .map(|_| layout_rng.random_range(-5.0..5.0))
            .collect();
        let ok = means.iter().all(|m| {
            let d2: f64 = m
                .iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() >= min_sep
        });
        if ok {
            means.push(candidate);
        } else {
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::config(format!(
                    "cannot place {num_classes} class means with separation {min_sep} in [-5,5]^{dim}; reduce spread or class count"
                )));
            }
        }
    }

    let mut sample_rng = rng::stream(sample_seed, &[rng::tag("blob-samples")]);
    let normal = StandardNormal;
    let n = num_classes * n_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean {
                let eps: f64 = normal.sample(&mut sample_rng);
                data.push(m + spread * eps);
            }
            labels.push(c);
        }
    }

    let mut ds = Dataset::new(Tensor::new(vec![n, dim], data)?, labels, num_classes)?;
    ds.class_means = Some(Tensor::from_rows(&means)?);
    Ok(ds)
}

/// Write a dataset as comma-separated values: a `#`-prefixed header naming
/// the columns, then one row per sample with the integer label last.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let cols: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    writeln!(f, "# {},label", cols.join(","))?;
    for i in 0..ds.len() {
        let row: Vec<String> = ds.features.row(i).iter().map(f64::to_string).collect();
        writeln!(f, "{},{}", row.join(","), ds.labels[i])?;
    }
    f.flush()?;
    Ok(())
}

/// Load a dataset from comma-separated values. The final column is the
/// integer label; the class count is inferred as `max label + 1`. Lines
/// starting with `#` are ignored.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    let reader = BufReader::new(f);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: "need at least one feature column and a label column".into(),
            });
        }
        let d = fields.len() - 1;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("row has {d} feature columns, expected {w}"),
                });
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(d);
        for field in &fields[..d] {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid real value {field:?}"),
            })?;
            row.push(v);
        }
        let label: i64 = fields[d].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid integer label {:?}", fields[d]),
        })?;
        if label < 0 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("negative label {label}"),
            });
        }
        labels.push(label as usize);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no data rows".into(),
        });
    }
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(Tensor::from_rows(&rows)?, labels, num_classes)
}

/// Stratified split of row indices into (train, test).
///
/// Per class, a seeded shuffle decides which rows become test; the test
/// count is `round_half_up(count * fraction)`, clamped to `[1, count-1]`
/// when the class has at least two rows. A single-row class stays entirely
/// in train (with a logged warning). Both index lists come back sorted
/// ascending.
pub fn split_indices(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut idx) in ds.indices_by_class().into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() == 1 {
            log::warn!("class {c} has a single row; keeping it in train");
            train.push(idx[0]);
            continue;
        }
        let mut r = rng::stream(seed, &[rng::tag("split"), c as u64]);
        idx.shuffle(&mut r);
        let raw = (idx.len() as f64 * test_fraction + 0.5).floor() as usize;
        let n_test = raw.clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified train/test split; see [`split_indices`] for the policy.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(ds, test_fraction, seed)?;
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn blobs_are_deterministic_and_uniform() {
        let a = make_blobs(4, 3, 20, 0.5, 11, 12).unwrap();
        let b = make_blobs(4, 3, 20, 0.5, 11, 12).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 80);
        assert_eq!(a.label_histogram().counts(), &[20, 20, 20, 20]);
        // Different sample seed keeps the layout but changes the samples.
        let c = make_blobs(4, 3, 20, 0.5, 11, 13).unwrap();
        assert_eq!(a.class_means, c.class_means);
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn blob_means_are_separated() {
        let spread = 1.25;
        let ds = make_blobs(6, 2, 15, spread, 3, 4).unwrap();
        let means = ds.class_means.as_ref().unwrap();
        for i in 0..6 {
            for j in (i + 1)..6 {
                let d2: f64 = means
                    .row(i)
                    .iter()
                    .zip(means.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(d2.sqrt() >= 2.0 * spread, "means {i},{j} too close");
            }
        }
    }

    #[test]
    fn vanishing_spread_is_linearly_separable() {
        // With near-zero spread the two blobs collapse onto their means, so
        // the max-margin separator (perpendicular bisector of the means)
        // classifies every sample correctly.
        let ds = make_blobs(2, 2, 50, 1e-6, 21, 22).unwrap();
        let means = ds.class_means.as_ref().unwrap();
        let w: Vec<f64> = means
            .row(1)
            .iter()
            .zip(means.row(0))
            .map(|(a, b)| a - b)
            .collect();
        let mid: Vec<f64> = means
            .row(1)
            .iter()
            .zip(means.row(0))
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        let bias: f64 = -w.iter().zip(&mid).map(|(wi, mi)| wi * mi).sum::<f64>();
        let correct = (0..ds.len())
            .filter(|&i| {
                let score: f64 =
                    ds.features.row(i).iter().zip(&w).map(|(x, wi)| x * wi).sum::<f64>() + bias;
                (score > 0.0) == (ds.labels[i] == 1)
            })
            .count();
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn empirical_means_match_stored_means() {
        // Central-limit bound: each coordinate of the per-class sample mean
        // lies within 3*spread/sqrt(n) of the stored mean.
        let (c, d, n, spread) = (10, 8, 200, 1.0);
        let ds = make_blobs(c, d, n, spread, 7, 8).unwrap();
        let means = ds.class_means.as_ref().unwrap();
        let bound = 3.0 * spread / (n as f64).sqrt();
        let by_class = ds.indices_by_class();
        for (y, idx) in by_class.iter().enumerate() {
            let mut emp = vec![0.0; d];
            for &i in idx {
                for (e, x) in emp.iter_mut().zip(ds.features.row(i)) {
                    *e += x;
                }
            }
            for (j, e) in emp.iter().enumerate() {
                let diff = (e / n as f64 - means.row(y)[j]).abs();
                assert!(diff < bound, "class {y} coord {j}: |{diff}| >= {bound}");
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blobs.csv");
        let ds = make_blobs(3, 4, 12, 0.7, 5, 6).unwrap();
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.num_classes, ds.num_classes);
        for (a, b) in back.features.data().iter().zip(ds.features.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_parsing_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.csv");
        std::fs::write(&path, "# f0,f1,label\n1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,0\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.labels, vec![0, 1, 0]);

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_csv(&empty).is_err());

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "1.0,2.0,0\n1.0,zzz,1\n").unwrap();
        match load_csv(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn split_counts_follow_fraction() {
        let ds = make_blobs(3, 2, 100, 0.5, 1, 2).unwrap();
        let (train, test) = split_train_test(&ds, 0.1, 99).unwrap();
        assert_eq!(test.label_histogram().counts(), &[10, 10, 10]);
        assert_eq!(train.label_histogram().counts(), &[90, 90, 90]);
    }

    #[test]
    fn split_is_a_partition() {
        let ds = make_blobs(4, 2, 25, 0.8, 2, 3).unwrap();
        let (train_idx, test_idx) = split_indices(&ds, 0.2, 5).unwrap();
        let train_set: HashSet<_> = train_idx.iter().collect();
        let test_set: HashSet<_> = test_idx.iter().collect();
        assert!(train_set.is_disjoint(&test_set));
        assert_eq!(train_idx.len() + test_idx.len(), ds.len());
        let mut all: Vec<usize> = train_idx.iter().chain(&test_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn split_minimums_and_singletons() {
        // Two rows per class under fraction 0.5: one row on each side.
        let feats = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![0.1, 0.1],
            vec![5.0, 5.0],
            vec![5.1, 5.1],
        ])
        .unwrap();
        let ds = Dataset::new(feats, vec![0, 0, 1, 1], 2).unwrap();
        let (train, test) = split_train_test(&ds, 0.5, 0).unwrap();
        assert_eq!(train.label_histogram().counts(), &[1, 1]);
        assert_eq!(test.label_histogram().counts(), &[1, 1]);

        // A single-row class stays in train.
        let feats = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let ds = Dataset::new(feats, vec![0, 0, 1], 2).unwrap();
        let (train, test) = split_train_test(&ds, 0.5, 0).unwrap();
        assert_eq!(train.label_histogram().counts()[1], 1);
        assert_eq!(test.label_histogram().counts()[1], 0);
    }

    #[test]
    fn split_stratification_bound() {
        let ds = make_blobs(5, 2, 40, 0.6, 9, 10).unwrap();
        let (train, test) = split_train_test(&ds, 0.25, 17).unwrap();
        let min_class = 40.0;
        for c in 0..5 {
            let tr = train.label_histogram().counts()[c] as f64 / train.len() as f64;
            let te = test.label_histogram().counts()[c] as f64 / test.len() as f64;
            assert!((tr - te).abs() <= 1.0 / min_class);
        }
    }

    #[test]
    fn blob_preconditions() {
        assert!(make_blobs(1, 2, 20, 1.0, 0, 0).is_err());
        assert!(make_blobs(3, 1, 20, 1.0, 0, 0).is_err());
        assert!(make_blobs(3, 2, 5, 1.0, 0, 0).is_err());
        assert!(make_blobs(3, 2, 20, 0.0, 0, 0).is_err());
        // Impossible separation in the unit box.
        assert!(make_blobs(10, 2, 20, 10.0, 0, 0).is_err());
    }
}
