//! Fitted regression heads bundled with their feature preprocessing, as
//! saved by the CLI.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureStandardizer, PcaProjector};
use crate::gp::{GPState, PredictiveDistribution};
use crate::svgp::SVGPState;

/// Feature preprocessing fitted on training rows: optional z-scoring, then
/// optional PCA.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Preprocess {
    pub standardizer: Option<FeatureStandardizer>,
    pub pca: Option<PcaProjector>,
}

impl Preprocess {
    /// `pca_retain = None` skips PCA.
    pub fn fit(train: &DMatrix<f64>, standardize: bool, pca_retain: Option<f64>) -> Result<Self> {
        let standardizer = if standardize { Some(FeatureStandardizer::fit(train)?) } else { None };
        let pca = match pca_retain {
            Some(r) => {
                let z = match &standardizer {
                    Some(s) => s.transform(train)?,
                    None => train.clone(),
                };
                Some(PcaProjector::fit(&z, r)?)
            }
            None => None,
        };
        Ok(Preprocess { standardizer, pca })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut z = match &self.standardizer {
            Some(s) => s.transform(x)?,
            None => x.clone(),
        };
        if let Some(p) = &self.pca {
            z = p.project(&z)?;
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Exact(GPState),
    Svgp(SVGPState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    /// Hex digest of the scattering configuration the features came from.
    pub feature_digest: String,
    pub preprocess: Preprocess,
    pub head: Head,
}

impl SavedModel {
    /// `x` holds raw (unpreprocessed) feature rows.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<PredictiveDistribution> {
        let z = self.preprocess.apply(x)?;
        match &self.head {
            Head::Exact(gp) => gp.predict(&z),
            Head::Svgp(s) => s.predict(&z),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{OptimizerConfig, GPState};
    use crate::kernels::{KernelChoice, KernelFamily};

    #[test]
    fn save_load_predicts_identically() {
        let x = DMatrix::from_fn(12, 3, |i, j| ((i * 5 + j * 3) % 7) as f64 + j as f64 * 10.0);
        let y: Vec<f64> = (0..12).map(|i| (i as f64).sin() * 4.0 + 1.0).collect();
        let pre = Preprocess::fit(&x, true, Some(1.0)).unwrap();
        let z = pre.apply(&x).unwrap();
        let opt = OptimizerConfig { iters: 10, ..Default::default() };
        let gp = GPState::fit(&z, &y, KernelChoice::new(KernelFamily::Rbf, false), &opt).unwrap();
        let m = SavedModel { feature_digest: hex(&[1, 171]), preprocess: pre, head: Head::Exact(gp) };
        assert_eq!(m.feature_digest, "01ab");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let back = SavedModel::load(&p).unwrap();
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }
}
