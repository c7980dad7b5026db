use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcaResult {
    pub projected: FeatureMatrix,
    /// Covariance eigenvalues, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Leading eigenvectors, one per retained component, each of input length.
    pub components: Vec<Vec<f64>>,
}

impl PcaResult {
    pub fn retained(&self) -> usize {
        self.components.len()
    }

    pub fn retained_fraction(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        self.eigenvalues[..self.retained()].iter().sum::<f64>() / total
    }
}

/// Projects centred rows onto the fewest leading covariance eigenvectors
/// whose eigenvalues reach `energy` of the total. Frames with more than
/// `fit_rows` rows fit the basis on a seeded uniform subsample.
pub fn pca_reduce(features: &FeatureMatrix, energy: f64, fit_rows: usize, seed: u64) -> Result<PcaResult> {
    if features.rows() < 2 {
        return Err(Error::InvalidInput("pca needs at least two rows".into()));
    }
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::InvalidInput(format!("pca energy {energy} outside (0, 1]")));
    }
    let owned;
    let features = if features.is_centered() {
        features
    } else {
        owned = features.clone().centered();
        &owned
    };
    let d = features.dims();
    let n = features.rows();

    let rows: Vec<usize> = if n > fit_rows.max(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1_ab1e);
        let mut idx = sample(&mut rng, n, fit_rows.max(2)).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for &r in &rows {
        let x = features.row(r);
        for a in 0..d {
            let xa = x[a];
            for b in a..d {
                cov[(a, b)] += xa * x[b];
            }
        }
    }
    let denom = (rows.len() - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let total: f64 = eigenvalues.iter().sum();
    let mut keep = d;
    let mut acc = 0.0;
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc >= energy * total {
            keep = i + 1;
            break;
        }
    }
    let keep = keep.max(1);

    let components: Vec<Vec<f64>> = order[..keep]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();

    let mut data = Vec::with_capacity(n * keep);
    for r in 0..n {
        let x = features.row(r);
        for comp in &components {
            data.push(x.iter().zip(comp).map(|(a, b)| a * b).sum());
        }
    }
    Ok(PcaResult {
        projected: FeatureMatrix::from_vec(n, keep, data)?.centered_flag(),
        eigenvalues,
        components,
    })
}

impl FeatureMatrix {
    // projections of centred rows are centred
    fn centered_flag(mut self) -> Self {
        self.centered = true;
        self
    }
}
