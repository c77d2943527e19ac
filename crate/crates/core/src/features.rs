//! Feature post-processing: per-dimension z-scoring and PCA projection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible per-dimension scale; constant columns are clamped here.
pub const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStandardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl FeatureStandardizer {
    /// Column means and population standard deviations of `train` (rows are
    /// samples).
    pub fn fit(train: &DMatrix<f64>) -> Result<Self> {
        let n = train.nrows();
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, got: n });
        }
        let nf = n as f64;
        let mean = DVector::from_iterator(train.ncols(), train.column_iter().map(|c| c.sum() / nf));
        let scale = DVector::from_iterator(
            train.ncols(),
            train.column_iter().zip(mean.iter()).map(|(c, m)| {
                let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf;
                var.sqrt().max(SCALE_FLOOR)
            }),
        );
        Ok(FeatureStandardizer { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let mut out = x.clone();
        for (d, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[d], self.scale[d]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(z)?;
        let mut out = z.clone();
        for (d, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[d], self.scale[d]);
            col.apply(|v| *v = *v * s + m);
        }
        Ok(out)
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer fitted on {} columns, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjector {
    pub center: DVector<f64>,
    /// `k x D`, orthonormal rows ordered by decreasing variance.
    pub basis: DMatrix<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub retain: f64,
}

impl PcaProjector {
    /// Keeps the fewest leading components whose cumulative explained
    /// variance reaches `retain`. `retain == 1` keeps the complete basis, so
    /// the projection is a rotation.
    pub fn fit(train: &DMatrix<f64>, retain: f64) -> Result<Self> {
        let n = train.nrows();
        if n < 2 {
            return Err(Error::TooFewRows { needed: 2, got: n });
        }
        if !(retain > 0.0 && retain <= 1.0) {
            return Err(Error::InvalidConfig(format!("PCA retain fraction {retain} not in (0, 1]")));
        }
        let d = train.ncols();
        let center = DVector::from_iterator(d, train.column_iter().map(|c| c.mean()));
        let mut centered = train.clone();
        for mut row in centered.row_iter_mut() {
            row -= center.transpose();
        }
        let cov = (centered.transpose() * &centered) / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let variances: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let total: f64 = variances.iter().sum();
        let ratios: Vec<f64> = if total > 0.0 {
            variances.iter().map(|v| v / total).collect()
        } else {
            vec![0.0; d]
        };
        let k = if retain >= 1.0 {
            d
        } else {
            let mut cum = 0.0;
            let mut k = d;
            for (i, r) in ratios.iter().enumerate() {
                cum += r;
                if cum >= retain - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k
        };
        let mut basis = DMatrix::zeros(k, d);
        for (row, &i) in order.iter().take(k).enumerate() {
            basis.row_mut(row).copy_from(&eig.eigenvectors.column(i).transpose());
        }
        Ok(PcaProjector {
            center,
            basis,
            explained_variance_ratio: ratios[..k].to_vec(),
            retain,
        })
    }

    pub fn components(&self) -> usize {
        self.basis.nrows()
    }

    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.center.len() {
            return Err(Error::DimensionMismatch(format!(
                "PCA fitted on {} columns, got {}",
                self.center.len(),
                x.ncols()
            )));
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.center.transpose();
        }
        Ok(centered * self.basis.transpose())
    }

    pub fn reconstruct(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.components() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} components, got {}",
                self.components(),
                z.ncols()
            )));
        }
        let mut out = z * &self.basis;
        for mut row in out.row_iter_mut() {
            row += self.center.transpose();
        }
        Ok(out)
    }
}
