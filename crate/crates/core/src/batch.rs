//! Sample batches: the universal currency between modules.

/// Which space a batch of points lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceTag {
    Parameter,
    Observation,
}

/// A finite set of points (n rows, d columns, row-major) with a provenance seed.
///
/// Regenerating a batch with the same seed yields bit-identical points.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    data: Vec<f64>,
    n: usize,
    dim: usize,
    pub seed: u64,
    pub space: SpaceTag,
}

impl SampleBatch {
    pub fn new(data: Vec<f64>, n: usize, dim: usize, seed: u64, space: SpaceTag) -> Self {
        assert!(n >= 1, "batch must contain at least one point");
        assert_eq!(data.len(), n * dim);
        SampleBatch { data, n, dim, seed, space }
    }

    /// 1-D batch from a plain vector.
    pub fn from_scalar(values: Vec<f64>, seed: u64, space: SpaceTag) -> Self {
        let n = values.len();
        Self::new(values, n, 1, seed, space)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Scalar view of a 1-D batch.
    pub fn scalars(&self) -> &[f64] {
        assert_eq!(self.dim, 1);
        &self.data
    }

    /// Column `j` mean.
    pub fn col_mean(&self, j: usize) -> f64 {
        self.rows().map(|r| r[j]).sum::<f64>() / self.n as f64
    }

    /// Column `j` variance (population form).
    pub fn col_var(&self, j: usize) -> f64 {
        let m = self.col_mean(j);
        self.rows().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / self.n as f64
    }

    pub fn map_scalars(&self, f: impl Fn(f64) -> f64) -> SampleBatch {
        assert_eq!(self.dim, 1);
        SampleBatch {
            data: self.data.iter().map(|&x| f(x)).collect(),
            n: self.n,
            dim: 1,
            seed: self.seed,
            space: self.space,
        }
    }
}
