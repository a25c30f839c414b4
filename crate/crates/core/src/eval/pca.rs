use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Projects rows onto their top `dims` principal components. Component
/// signs are fixed so the largest-magnitude loading is positive.
pub fn pca_project(data: &[Vec<f64>], dims: usize) -> Result<Vec<Vec<f64>>> {
    let n = data.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let d = data[0].len();
    if data.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("rows of differing length".into()));
    }
    if dims == 0 || dims > d {
        return Err(Error::Config(format!("cannot project {d}-dimensional rows to {dims} dimensions")));
    }
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let cov = x.transpose() * &x / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(dims);
    for &c in order.iter().take(dims) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
    }
    Ok((0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..d).map(|j| x[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect())
}
