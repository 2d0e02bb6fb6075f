use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Unit principal directions, one per requested component.
    pub directions: Vec<Vec<f64>>,
    /// Variance captured by each direction (sample covariance, `n - 1`).
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Each input point in component coordinates.
    pub points: Vec<Vec<f64>>,
    pub total_variance: f64,
}

/// Projects mean-centered `states` onto their top `components` principal
/// directions. Directions beyond the data rank carry zero variance.
pub fn pca_project<S: AsRef<[f32]>>(states: &[S], components: usize) -> Result<PcaProjection> {
    let n = states.len();
    if n < 2 {
        return Err(Error::usage("PCA needs at least two vectors"));
    }
    let dim = states[0].as_ref().len();
    if dim == 0 || states.iter().any(|s| s.as_ref().len() != dim) {
        return Err(Error::usage("PCA inputs must share a positive dimension"));
    }
    if components == 0 || components > dim {
        return Err(Error::usage(format!(
            "requested {components} components of {dim}-dimensional data"
        )));
    }

    let mut mean = vec![0.0f64; dim];
    for s in states {
        for (m, &x) in mean.iter_mut().zip(s.as_ref()) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, dim, |i, j| f64::from(states[i].as_ref()[j]) - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let total_variance = cov.trace();

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = top * 1e-12;
    let mut directions = Vec::with_capacity(components);
    let mut explained_variance = Vec::with_capacity(components);
    for &k in order.iter().take(components) {
        let lambda = eig.eigenvalues[k];
        explained_variance.push(if lambda > floor { lambda } else { 0.0 });
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Sign convention: largest-magnitude coordinate positive.
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        directions.push(v);
    }
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|&v| if total_variance > 0.0 { v / total_variance } else { 0.0 })
        .collect();

    let points = (0..n)
        .map(|i| {
            let row = centered.row(i);
            directions
                .iter()
                .map(|d| row.iter().zip(d).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect();

    Ok(PcaProjection {
        mean,
        directions,
        explained_variance,
        explained_variance_ratio,
        points,
        total_variance,
    })
}
