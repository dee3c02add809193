//! Dataset generation, non-IID partitioning, CSV ingestion, and splits.
//!
//! Partition plans map source sample indices to clients. Every partitioner
//! produces an exact partition: each index lands on exactly one client, and
//! fractional shares are resolved with largest-remainder rounding so no
//! resampling is needed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};

use crate::error::{Error, Result};
use crate::numcore::LabeledDataset;

/// Per-client lists of sample indices into a source dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    /// Check conservation and disjointness against a source of `n` samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        let mut total = 0usize;
        for (client, indices) in self.assignments.iter().enumerate() {
            for &i in indices {
                if i >= n {
                    return Err(Error::Invariant(format!(
                        "client {} references out-of-range index {}",
                        client, i
                    )));
                }
                if seen[i] {
                    return Err(Error::Invariant(format!(
                        "sample index {} assigned twice",
                        i
                    )));
                }
                seen[i] = true;
                total += 1;
            }
        }
        if total != n {
            return Err(Error::Invariant(format!(
                "partition covers {} of {} samples",
                total, n
            )));
        }
        Ok(())
    }

    /// Materialize per-client datasets.
    pub fn split(&self, ds: &LabeledDataset) -> Result<Vec<LabeledDataset>> {
        self.assignments
            .iter()
            .map(|indices| ds.subset(indices))
            .collect()
    }
}

/// Shape of a synthetic Gaussian-blob classification task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Distance of each class mean from the origin.
    pub class_sep: f64,
    /// Per-coordinate noise standard deviation.
    pub noise_sd: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2
            || self.dim < 1
            || self.per_class < 1
            || !(self.class_sep > 0.0)
            || !(self.noise_sd > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "bad synthetic spec {:?}",
                self
            )));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.num_classes * self.per_class
    }
}

/// Gaussian blobs: class `c` is centered at `class_sep * e_{c mod dim}`
/// (axis-aligned, cycling through the axes), with N(0, noise_sd^2) noise.
/// Samples are emitted class-major, so labels come out sorted.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sd).expect("validated noise_sd");
    let mut features = Vec::with_capacity(spec.total_samples());
    let mut labels = Vec::with_capacity(spec.total_samples());
    for class in 0..spec.num_classes {
        let axis = class % spec.dim;
        for _ in 0..spec.per_class {
            let mut row: Vec<f64> = (0..spec.dim).map(|_| noise.sample(&mut rng)).collect();
            row[axis] += spec.class_sep;
            features.push(row);
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels)
}

/// Split `total` into integer parts proportional to `weights` using
/// largest-remainder rounding. Ties go to the lower index.
fn largest_remainder_split(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        // Degenerate weights: spread as evenly as possible.
        let base = total / weights.len();
        let extra = total % weights.len();
        return (0..weights.len())
            .map(|i| base + usize::from(i < extra))
            .collect();
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        sizes[i] += 1;
    }
    sizes
}

/// Hetero-Dirichlet partition: per class, client shares are drawn from a
/// symmetric Dirichlet with concentration `x`, and the class's shuffled
/// samples are split by those shares. A client that ends up empty steals one
/// sample from the largest client so every client can train.
pub fn partition_dirichlet(
    ds: &LabeledDataset,
    num_clients: usize,
    x: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if !(x > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dirichlet concentration must be positive, got {}",
            x
        )));
    }
    if num_clients < 1 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if ds.len() < num_clients {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot cover {} clients",
            ds.len(),
            num_clients
        )));
    }
    let num_classes = ds.labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if by_class.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidArgument(
            "every class must have at least one sample".into(),
        ));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let gamma = Gamma::new(x, 1.0).expect("validated concentration");
    let mut assignments = vec![Vec::new(); num_clients];
    for indices in &mut by_class {
        indices.shuffle(&mut rng);
        // Dirichlet draw via normalized Gamma variates.
        let mut shares: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = shares.iter().sum();
        if total > 0.0 && total.is_finite() {
            for s in &mut shares {
                *s /= total;
            }
        } else {
            shares = vec![1.0 / num_clients as f64; num_clients];
        }
        let sizes = largest_remainder_split(&shares, indices.len());
        let mut offset = 0;
        for (client, &size) in sizes.iter().enumerate() {
            assignments[client].extend_from_slice(&indices[offset..offset + size]);
            offset += size;
        }
    }
    rebalance_empty_clients(&mut assignments)?;
    let plan = PartitionPlan { assignments };
    plan.validate(ds.len())?;
    Ok(plan)
}

/// Give every empty client one sample stolen from the currently largest one.
fn rebalance_empty_clients(assignments: &mut [Vec<usize>]) -> Result<()> {
    loop {
        let Some(empty) = assignments.iter().position(Vec::is_empty) else {
            return Ok(());
        };
        let largest = (0..assignments.len())
            .max_by_key(|&i| assignments[i].len())
            .expect("nonempty assignment list");
        if assignments[largest].len() < 2 {
            return Err(Error::InvalidArgument(
                "not enough samples to give every client at least one".into(),
            ));
        }
        let moved = assignments[largest].pop().expect("largest is nonempty");
        assignments[empty].push(moved);
    }
}

/// Log-normal partition: within each group, per-client sizes are
/// proportional to i.i.d. LogNormal(0, sigma^2) weights. Clients of a group
/// receive only that group's samples; group `g` owns clients
/// `[g * clients_per_group, (g + 1) * clients_per_group)`.
pub fn partition_lognormal(
    ds: &LabeledDataset,
    group_of: impl Fn(usize) -> usize,
    sigma: f64,
    clients_per_group: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {}",
            sigma
        )));
    }
    if clients_per_group < 1 {
        return Err(Error::InvalidArgument(
            "need at least one client per group".into(),
        ));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.len() {
        groups.entry(group_of(i)).or_default().push(i);
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("dataset has no samples".into()));
    }
    let num_groups = groups.keys().copied().max().expect("nonempty") + 1;
    for g in 0..num_groups {
        if !groups.contains_key(&g) {
            return Err(Error::InvalidArgument(format!("group {} is empty", g)));
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let lognormal = LogNormal::new(0.0, sigma).expect("validated sigma");
    let mut assignments = vec![Vec::new(); num_groups * clients_per_group];
    for (group, indices) in &mut groups {
        indices.shuffle(&mut rng);
        let weights: Vec<f64> = (0..clients_per_group)
            .map(|_| lognormal.sample(&mut rng))
            .collect();
        let sizes = largest_remainder_split(&weights, indices.len());
        let mut offset = 0;
        for (slot, &size) in sizes.iter().enumerate() {
            let client = group * clients_per_group + slot;
            assignments[client].extend_from_slice(&indices[offset..offset + size]);
            offset += size;
        }
        // Heavy-tailed weights can round a client down to nothing; every
        // client must end up with at least one of its group's samples.
        let start = group * clients_per_group;
        rebalance_empty_clients(&mut assignments[start..start + clients_per_group])?;
    }
    let plan = PartitionPlan { assignments };
    plan.validate(ds.len())?;
    Ok(plan)
}

/// IID partition: seeded shuffle, then near-equal contiguous chunks.
pub fn partition_iid(ds: &LabeledDataset, num_clients: usize, seed: u64) -> Result<PartitionPlan> {
    if num_clients < 1 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if ds.len() < num_clients {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot cover {} clients",
            ds.len(),
            num_clients
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    indices.shuffle(&mut rng);
    let sizes = largest_remainder_split(&vec![1.0; num_clients], ds.len());
    let mut assignments = Vec::with_capacity(num_clients);
    let mut offset = 0;
    for size in sizes {
        assignments.push(indices[offset..offset + size].to_vec());
        offset += size;
    }
    let plan = PartitionPlan { assignments };
    plan.validate(ds.len())?;
    Ok(plan)
}

/// Column schema for [`load_csv`]: which columns become features, which one
/// is the label, and the category vocabulary for one-hot encoded columns.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    /// Column name -> ordered category list. Feature columns not listed here
    /// are parsed as numerics and min-max scaled to [0, 1].
    pub categorical: BTreeMap<String, Vec<String>>,
}

/// Load a comma-delimited, header-bearing CSV file into a dataset.
///
/// Categorical columns are one-hot encoded against the schema vocabulary;
/// numeric columns are min-max scaled to [0, 1] (a constant column maps to
/// 0). Label values are mapped to contiguous ids in sorted order.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))?
        .clone();
    let column_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{}' not found in header", name)))
    };
    let label_idx = column_index(&schema.label_column)?;
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;

    let mut raw_labels: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 2; // 1-based, counting the header line
        let record = record.map_err(|e| Error::Data(format!("row {}: {}", row_no, e)))?;
        let label = record
            .get(label_idx)
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Data(format!("row {}: missing label value", row_no)))?;
        raw_labels.push(label.to_string());
        rows.push(
            feature_idx
                .iter()
                .map(|&j| record.get(j).unwrap_or("").trim().to_string())
                .collect(),
        );
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    // Contiguous label ids in sorted vocabulary order.
    let mut vocab: Vec<String> = raw_labels.clone();
    vocab.sort();
    vocab.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| vocab.binary_search(l).expect("label is in vocabulary"))
        .collect();

    // First pass over numeric columns for min/max.
    let mut numeric_range: Vec<Option<(f64, f64)>> = vec![None; feature_idx.len()];
    for (col, name) in schema.feature_columns.iter().enumerate() {
        if schema.categorical.contains_key(name) {
            continue;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, row) in rows.iter().enumerate() {
            let v: f64 = row[col].parse().map_err(|_| {
                Error::Data(format!(
                    "row {}: cannot parse '{}' in column '{}' as a number",
                    i + 2,
                    row[col],
                    name
                ))
            })?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        numeric_range[col] = Some((lo, hi));
    }

    let mut features = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut out = Vec::new();
        for (col, name) in schema.feature_columns.iter().enumerate() {
            if let Some(categories) = schema.categorical.get(name) {
                let pos = categories.iter().position(|c| c == &row[col]).ok_or_else(|| {
                    Error::Data(format!(
                        "row {}: unknown category '{}' in column '{}'",
                        i + 2,
                        row[col],
                        name
                    ))
                })?;
                for k in 0..categories.len() {
                    out.push(if k == pos { 1.0 } else { 0.0 });
                }
            } else {
                let (lo, hi) = numeric_range[col].expect("numeric range computed");
                let v: f64 = row[col].parse().expect("validated in first pass");
                out.push(if hi > lo { (v - lo) / (hi - lo) } else { 0.0 });
            }
        }
        features.push(out);
    }
    LabeledDataset::new(features, labels)
}

/// Seeded shuffle followed by a `round(train_fraction * n)` split. Sizes are
/// nudged so both sides stay nonempty.
pub fn split_train_val(
    ds: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {}",
            train_fraction
        )));
    }
    if ds.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two samples to split".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    indices.shuffle(&mut rng);
    let n_train = ((train_fraction * ds.len() as f64).round() as usize).clamp(1, ds.len() - 1);
    let train = ds.subset(&indices[..n_train])?;
    let val = ds.subset(&indices[n_train..])?;
    Ok((train, val))
}
