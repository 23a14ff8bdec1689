//! Classical (Torgerson) multidimensional scaling.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

const SYMMETRY_TOLERANCE: f64 = 1e-9;

fn check_square_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} contains non-finite values")));
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::invalid(format!(
                    "{what} is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Embeds a similarity matrix (values `<= 1`) using `1 - s` as dissimilarity.
pub fn classical_mds(similarity: &DMatrix<f64>, dims: usize) -> Result<DMatrix<f64>> {
    check_square_symmetric(similarity, "similarity matrix")?;
    if let Some(v) = similarity.iter().find(|v| **v > 1.0 + SYMMETRY_TOLERANCE) {
        return Err(Error::invalid(format!("similarity {v} exceeds 1")));
    }
    let distances = similarity.map(|s| (1.0 - s).max(0.0));
    classical_mds_from_distances(&distances, dims)
}

/// N×`dims` coordinates whose pairwise distances approximate `distances`.
///
/// Eigenvalues are taken in descending order and negative ones clamped to 0.
/// Each axis is signed so that its largest-magnitude coordinate is positive,
/// and the result is centered at the origin.
pub fn classical_mds_from_distances(distances: &DMatrix<f64>, dims: usize) -> Result<DMatrix<f64>> {
    check_square_symmetric(distances, "distance matrix")?;
    let n = distances.nrows();
    if n == 0 {
        return Err(Error::invalid("MDS needs at least one point"));
    }
    if dims == 0 {
        return Err(Error::invalid("MDS needs at least one output dimension"));
    }
    let sq = distances.map(|d| d * d);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let b = (&b + b.transpose()) * 0.5;

    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));

    let mut coords = DMatrix::zeros(n, dims);
    for (axis, &k) in order.iter().take(dims).enumerate() {
        let scale = eig.eigenvalues[k].max(0.0).sqrt();
        let v = eig.eigenvectors.column(k);
        let pivot = (0..n)
            .max_by(|&a, &c| v[a].abs().total_cmp(&v[c].abs()).then(c.cmp(&a)))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[(i, axis)] = sign * scale * v[i];
        }
    }
    for axis in 0..dims {
        let m = coords.column(axis).sum() / n as f64;
        coords.column_mut(axis).add_scalar_mut(-m);
    }
    Ok(coords)
}
