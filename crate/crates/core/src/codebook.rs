//! Learnable `K x d_e` embedding table that turns the discrete agent's latent
//! into a discrete action index and a conditioning codeword.
//!
//! The table is trained only through the continuous agent's Q-improvement
//! term: gradients reach the selected row via the codeword that conditioned
//! the continuous sampler. Selection itself (the argmin) passes no gradient,
//! and there is no commitment or reconstruction loss.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    entries: Array2<f64>,
}

impl Codebook {
    /// Draws entries i.i.d. uniform on `[-1/sqrt(d_e), 1/sqrt(d_e)]`,
    /// redrawing any row that duplicates an earlier one.
    pub fn init<R: Rng + ?Sized>(k: usize, d_e: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || d_e == 0 {
            return Err(Error::InvalidConfig(format!("codebook needs K >= 1 and d_e >= 1, got {k}x{d_e}")));
        }
        let bound = 1.0 / (d_e as f64).sqrt();
        let mut entries = Array2::zeros((k, d_e));
        for r in 0..k {
            loop {
                for v in entries.row_mut(r) {
                    *v = rng.random_range(-bound..=bound);
                }
                let row = entries.row(r);
                if (0..r).all(|o| entries.row(o) != row) {
                    break;
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::InvalidConfig("empty codebook".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("codebook entries must be finite".into()));
        }
        Ok(Self { entries })
    }

    /// Number of codewords `K`.
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.entries.row(k)
    }

    pub fn params(&self) -> &[f64] {
        self.entries.as_slice().expect("standard layout")
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.entries.as_slice_mut().expect("standard layout")
    }

    /// Nearest codeword by squared Euclidean distance; ties go to the lowest index.
    pub fn quantize(&self, e: &[f64]) -> Result<(usize, ArrayView1<'_, f64>)> {
        if e.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "codebook query",
                expected: self.dim(),
                actual: e.len(),
            });
        }
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, row) in self.entries.rows().into_iter().enumerate() {
            let d: f64 = row.iter().zip(e).map(|(c, x)| (c - x) * (c - x)).sum();
            if d < best_dist {
                best_dist = d;
                best = k;
            }
        }
        Ok((best, self.entries.row(best)))
    }

    /// Row-wise [`Codebook::quantize`]: indices and the gathered codewords.
    pub fn quantize_batch(&self, latents: ArrayView2<'_, f64>) -> Result<(Vec<usize>, Array2<f64>)> {
        let mut indices = Vec::with_capacity(latents.nrows());
        for row in latents.rows() {
            let e = row.to_vec();
            indices.push(self.quantize(&e)?.0);
        }
        let codewords = self.gather(&indices);
        Ok((indices, codewords))
    }

    pub fn gather(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.dim()));
        for (mut dst, &k) in out.rows_mut().into_iter().zip(indices) {
            dst.assign(&self.entries.row(k));
        }
        out
    }

    /// Adds per-record codeword gradients onto the rows they were gathered from.
    pub fn scatter_grad(&self, indices: &[usize], grad_codewords: ArrayView2<'_, f64>, grad_params: &mut [f64]) {
        assert_eq!(grad_params.len(), self.entries.len());
        let d = self.dim();
        for (&k, g) in indices.iter().zip(grad_codewords.rows()) {
            for (dst, &v) in grad_params[k * d..(k + 1) * d].iter_mut().zip(g) {
                *dst += v;
            }
        }
    }

    /// Per-row selection counts for a batch of indices.
    pub fn histogram(&self, indices: &[usize]) -> Vec<u64> {
        let mut counts = vec![0; self.len()];
        for &k in indices {
            counts[k] += 1;
        }
        counts
    }
}
