//! Datasets on a discrete grid: CSV ingestion, quantile discretization,
//! train/test splitting and synthetic generators with bounded noise.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::write_atomic;
use crate::rng::rng_from_seed;
use crate::scalar::Real;
use crate::tree::FeatureDomain;

/// Feature matrix with values in the domain grid plus a real response.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<F> {
    x: Vec<u32>,
    y: Vec<F>,
    domain: FeatureDomain,
}

impl<F: Real> Dataset<F> {
    /// `x` is row-major with `domain.num_features()` columns.
    pub fn new(domain: FeatureDomain, x: Vec<u32>, y: Vec<F>) -> Result<Self> {
        let d = domain.num_features();
        if x.len() != y.len() * d {
            return Err(Error::InvalidInput(format!(
                "{} feature values for {} rows of {} features",
                x.len(),
                y.len(),
                d
            )));
        }
        for row in x.chunks_exact(d) {
            domain.check(row)?;
        }
        Ok(Self { x, y, domain })
    }

    pub fn from_rows(domain: FeatureDomain, rows: &[Vec<u32>], y: Vec<F>) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "{} rows but {} responses",
                rows.len(),
                y.len()
            )));
        }
        let x = rows.iter().flatten().copied().collect();
        Self::new(domain, x, y)
    }

    pub fn empty(domain: FeatureDomain) -> Self {
        Self {
            x: Vec::new(),
            y: Vec::new(),
            domain,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.domain.num_features()
    }

    pub fn domain(&self) -> &FeatureDomain {
        &self.domain
    }

    /// Row-major feature matrix.
    pub fn x(&self) -> &[u32] {
        &self.x
    }

    pub fn y(&self) -> &[F] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let d = self.num_features();
        &self.x[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.x.chunks_exact(self.num_features())
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut x = Vec::with_capacity(indices.len() * self.num_features());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Self {
            x,
            y,
            domain: self.domain.clone(),
        }
    }

    /// Same features with a different response vector.
    pub fn with_response(&self, y: Vec<F>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} responses for {} rows",
                y.len(),
                self.len()
            )));
        }
        Ok(Self {
            x: self.x.clone(),
            y,
            domain: self.domain.clone(),
        })
    }
}

impl Dataset<f64> {
    /// Writes `x1,..,xd,y` with integer features.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_csv_bytes()?)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (1..=self.num_features()).map(|v| format!("x{v}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (row, y) in self.rows().zip(&self.y) {
            let mut rec: Vec<String> = row.iter().map(u32::to_string).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Reads a file written by [`Dataset::write_csv`]. Without an explicit
    /// domain, each feature's arity is its largest observed value.
    pub fn read_csv(path: impl AsRef<Path>, domain: Option<FeatureDomain>) -> Result<Self> {
        let path = path.as_ref();
        let table = load_csv(path, "y")?;
        let d = table.num_features();
        let mut x = Vec::with_capacity(table.len() * d);
        for i in 0..table.len() {
            for (v, col) in table.features.iter().enumerate() {
                let value = col[i];
                if value.fract() != 0.0 || value < 1.0 || value > u32::MAX as f64 {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i as u64 + 2,
                        message: format!(
                            "column `{}` holds {value}, expected a positive integer",
                            table.feature_names[v]
                        ),
                    });
                }
                x.push(value as u32);
            }
        }
        let domain = match domain {
            Some(dom) => dom,
            None => {
                let arity = (0..d)
                    .map(|v| {
                        x.iter()
                            .skip(v)
                            .step_by(d.max(1))
                            .copied()
                            .max()
                            .unwrap_or(1)
                    })
                    .collect();
                FeatureDomain::new(arity)?
            }
        };
        if domain.num_features() != d {
            return Err(Error::InvalidInput(format!(
                "file has {d} features, domain {domain} has {}",
                domain.num_features()
            )));
        }
        Dataset::new(domain, x, table.y)
    }
}

/// Numeric table as read from CSV, features stored by column.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub response_name: String,
    pub y: Vec<f64>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// Writes features then the response column; values use shortest
    /// round-trip formatting.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(self.response_name.clone());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.iter().map(|c| c[i].to_string()).collect();
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a headed numeric CSV; `response_column` becomes `y`.
pub fn load_csv(path: impl AsRef<Path>, response_column: &str) -> Result<RawTable> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let response = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| {
            Error::InvalidInput(format!("{shown}: no response column `{response_column}`"))
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != response)
        .map(|(_, h)| h.clone())
        .collect();
    let mut features = vec![Vec::new(); feature_names.len()];
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: shown.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut f = 0;
        for (i, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                path: shown.clone(),
                line,
                message: format!("column `{}`: cannot parse `{cell}` as a number", headers[i]),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: shown.clone(),
                    line,
                    message: format!("column `{}`: non-finite value", headers[i]),
                });
            }
            if i == response {
                y.push(value);
            } else {
                features[f].push(value);
                f += 1;
            }
        }
    }
    Ok(RawTable {
        feature_names,
        features,
        response_name: response_column.to_owned(),
        y,
    })
}

/// Linear-interpolation empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bin indices (1-based) and arity for one feature column.
fn discretize_column(values: &[f64], bins: u32) -> (Vec<u32>, u32) {
    if values.is_empty() {
        return (Vec::new(), 1);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct: Vec<f64> = {
        let mut d = sorted.clone();
        d.dedup();
        d
    };
    let raw_bin: Vec<usize> = if distinct.len() <= bins as usize {
        values
            .iter()
            .map(|v| distinct.partition_point(|d| d < v))
            .collect()
    } else {
        let cuts: Vec<f64> = {
            let mut c: Vec<f64> = (1..bins)
                .map(|k| quantile_sorted(&sorted, k as f64 / bins as f64))
                .collect();
            c.dedup();
            c
        };
        // a value equal to a cut point falls in the lower bin
        values
            .iter()
            .map(|v| cuts.partition_point(|c| c < v))
            .collect()
    };
    let used: BTreeSet<usize> = raw_bin.iter().copied().collect();
    let rank: Vec<usize> = used.iter().copied().collect();
    let out = raw_bin
        .iter()
        .map(|b| rank.binary_search(b).expect("bin present") as u32 + 1)
        .collect();
    (out, used.len() as u32)
}

/// Maps each feature to `1..=bins` by empirical quantile cut points.
///
/// Cut point `k` is the `k/bins` quantile (linear interpolation); a value equal
/// to a cut point goes to the lower bin. Features with at most `bins` distinct
/// values are rank encoded. Occupied bins are relabeled consecutively, so a
/// constant feature has arity 1.
pub fn discretize(table: &RawTable, bins: u32) -> Result<Dataset<f64>> {
    if bins < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 bins, got {bins}"
        )));
    }
    if table.num_features() == 0 {
        return Err(Error::InvalidInput("table has no feature columns".into()));
    }
    let n = table.len();
    let mut columns = Vec::with_capacity(table.num_features());
    let mut arity = Vec::with_capacity(table.num_features());
    for col in &table.features {
        let (b, m) = discretize_column(col, bins);
        columns.push(b);
        arity.push(m);
    }
    let d = columns.len();
    let mut x = vec![0u32; n * d];
    for (v, col) in columns.iter().enumerate() {
        for (i, &b) in col.iter().enumerate() {
            x[i * d + v] = b;
        }
    }
    Dataset::new(FeatureDomain::new(arity)?, x, table.y.clone())
}

/// Seeded train/test split, optionally subsampling the training part.
///
/// The test part has `max(1, floor(n * test_frac))` rows. Both parts keep the
/// original row order.
pub fn split_and_subsample<F: Real>(
    data: &Dataset<F>,
    test_frac: f64,
    n_sub: Option<usize>,
    seed: u64,
) -> Result<(Dataset<F>, Dataset<F>)> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test fraction {test_frac} not in (0, 1)"
        )));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("cannot split {n} rows")));
    }
    let n_test = ((n as f64 * test_frac).floor() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(seed);
    idx.shuffle(&mut rng);
    let (test, train) = idx.split_at_mut(n_test);
    let mut train = train.to_vec();
    if let Some(k) = n_sub {
        if k > train.len() {
            return Err(Error::InvalidInput(format!(
                "subsample of {k} rows requested from {} training rows",
                train.len()
            )));
        }
        train.truncate(k);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(test)))
}

/// Regression function on the full grid plus a sampling distribution and
/// bounded uniform noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub domain: FeatureDomain,
    /// `f0` at every grid point, row-major (last feature fastest).
    pub f0: Vec<f64>,
    /// Grid distribution; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub px: Option<Vec<f64>>,
    /// Noise half-width `K0`: `y = f0(x) + U(-K0, K0)`.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub n: usize,
}

impl SyntheticSpec {
    pub fn new(domain: FeatureDomain, f0: Vec<f64>, noise: f64, n: usize) -> Result<Self> {
        let spec = Self {
            domain,
            f0,
            px: None,
            noise,
            n,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `f0` evaluated by a closure over grid points.
    pub fn from_fn(
        domain: FeatureDomain,
        f0: impl Fn(&[u32]) -> f64,
        noise: f64,
        n: usize,
    ) -> Result<Self> {
        let values = domain.grid_points().map(|x| f0(&x)).collect();
        Self::new(domain, values, noise, n)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let spec: SyntheticSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let size = self
            .domain
            .grid_size()
            .ok_or_else(|| Error::InvalidInput("grid too large".into()))?;
        if self.f0.len() != size {
            return Err(Error::InvalidInput(format!(
                "f0 has {} values, grid {} has {size} points",
                self.f0.len(),
                self.domain
            )));
        }
        if self.f0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("f0 has non-finite values".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise half-width {} must be >= 0",
                self.noise
            )));
        }
        if let Some(px) = &self.px {
            if px.len() != size {
                return Err(Error::InvalidInput(format!(
                    "px has {} values, grid has {size} points",
                    px.len()
                )));
            }
            if px.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidInput("px has negative entries".into()));
            }
            let total: f64 = px.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::NotNormalized(total));
            }
        }
        Ok(())
    }

    /// Grid distribution, uniform when unset.
    pub fn px(&self) -> Vec<f64> {
        match &self.px {
            Some(p) => p.clone(),
            None => {
                let size = self.f0.len();
                vec![1.0 / size as f64; size]
            }
        }
    }

    /// Bound `K = max|f0| + K0` on every generated response.
    pub fn bound(&self) -> f64 {
        self.f0.iter().fold(0.0f64, |m, v| m.max(v.abs())) + self.noise
    }

    /// `Var{f0(x)}` under `px`.
    pub fn variance(&self) -> f64 {
        let px = self.px();
        let mean: f64 = px.iter().zip(&self.f0).map(|(p, f)| p * f).sum();
        px.iter()
            .zip(&self.f0)
            .map(|(p, f)| p * (f - mean).powi(2))
            .sum()
    }
}

/// Draws `spec.n` rows: `x ~ px` i.i.d., `y = f0(x) + U(-K0, K0)`.
pub fn synth_generate(spec: &SyntheticSpec, seed: u64) -> Result<Dataset<f64>> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let size = spec.f0.len();
    let weighted = match &spec.px {
        Some(px) => Some(
            WeightedIndex::new(px)
                .map_err(|e| Error::InvalidInput(format!("grid distribution: {e}")))?,
        ),
        None => None,
    };
    let d = spec.domain.num_features();
    let mut x = Vec::with_capacity(spec.n * d);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let cell = match &weighted {
            Some(w) => w.sample(&mut rng),
            None => rng.random_range(0..size),
        };
        let u: f64 = rng.random();
        x.extend(spec.domain.grid_point(cell));
        y.push(spec.f0[cell] + spec.noise * (2.0 * u - 1.0));
    }
    Dataset::new(spec.domain.clone(), x, y)
}
