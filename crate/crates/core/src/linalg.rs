//! Small dense linear algebra used by the alignment code: a one-sided Jacobi
//! SVD for d×d matrices, symmetric eigen-decomposition, and Haar-random
//! orthogonal matrices.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 60;

/// Thin SVD `a = u · diag(s) · vᵀ` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

/// One-sided (Hestenes) Jacobi SVD of a square matrix.
///
/// Columns of `u` belonging to zero singular values are completed to an
/// orthonormal basis, so `u` and `v` are always orthogonal.
pub fn jacobi_svd(a: &Array2<f64>, tol: f64) -> Result<Svd> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::DimensionMismatch(format!(
            "jacobi_svd expects a square matrix, got {rows}x{cols}"
        )));
    }
    let d = rows;
    let mut u = a.clone();
    let mut v = Array2::<f64>::eye(d);

    let mut converged = d < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..d {
            for q in (p + 1)..d {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..d {
                    alpha += u[[k, p]] * u[[k, p]];
                    beta += u[[k, q]] * u[[k, q]];
                    gamma += u[[k, p]] * u[[k, q]];
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..d {
                    let (up, uq) = (u[[k, p]], u[[k, q]]);
                    u[[k, p]] = c * up - s * uq;
                    u[[k, q]] = s * up + c * uq;
                    let (vp, vq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vp - s * vq;
                    v[[k, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdFailure(MAX_SWEEPS));
    }

    let mut sigma: Vec<f64> = (0..d)
        .map(|k| u.column(k).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let scale = sigma.iter().cloned().fold(0.0, f64::max);
    let zero = scale * 1e-14 + f64::MIN_POSITIVE;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let mut u_sorted = Array2::<f64>::zeros((d, d));
    let mut v_sorted = Array2::<f64>::zeros((d, d));
    let mut s_sorted = Array1::<f64>::zeros(d);
    let mut deficient = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        v_sorted.column_mut(dst).assign(&v.column(src));
        if sigma[src] > zero {
            s_sorted[dst] = sigma[src];
            let col = u.column(src).mapv(|x| x / sigma[src]);
            u_sorted.column_mut(dst).assign(&col);
        } else {
            sigma[src] = 0.0;
            deficient.push(dst);
        }
    }
    if !deficient.is_empty() {
        log::debug!(
            "jacobi_svd: rank deficient input, completing {} column(s)",
            deficient.len()
        );
        complete_orthonormal(&mut u_sorted, &deficient);
    }
    Ok(Svd {
        u: u_sorted,
        s: s_sorted,
        v: v_sorted,
    })
}

/// Fill the listed columns of `m` so that all columns are orthonormal.
fn complete_orthonormal(m: &mut Array2<f64>, missing: &[usize]) {
    let d = m.nrows();
    let mut filled: Vec<usize> = (0..d).filter(|c| !missing.contains(c)).collect();
    for &col in missing {
        let mut best: Option<Array1<f64>> = None;
        for e in 0..d {
            let mut cand = Array1::<f64>::zeros(d);
            cand[e] = 1.0;
            for _ in 0..2 {
                for &f in &filled {
                    let proj = cand.dot(&m.column(f));
                    cand.scaled_add(-proj, &m.column(f));
                }
            }
            let norm = cand.dot(&cand).sqrt();
            if norm > 0.5 {
                best = Some(cand / norm);
                break;
            }
            if best.as_ref().map_or(norm > 1e-8, |b| norm > b.dot(b).sqrt()) {
                best = Some(cand / norm);
            }
        }
        let vec = best.expect("standard basis spans the space");
        m.column_mut(col).assign(&vec);
        filled.push(col);
    }
}

/// Symmetric eigen-decomposition, eigenvalues ascending, eigenvectors as
/// columns.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[[r, dst]] = eig.eigenvectors[(r, src)];
        }
    }
    (values, vectors)
}

pub fn determinant(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| a[[i, j]]).determinant()
}

/// Haar-distributed orthogonal matrix: Gram-Schmidt QR of a Gaussian matrix
/// with the sign of each column fixed by the diagonal of R.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let g = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
        let mut q = Array2::<f64>::zeros((d, d));
        let mut ok = true;
        for j in 0..d {
            let mut col = g.column(j).to_owned();
            for _ in 0..2 {
                for k in 0..j {
                    let proj = col.dot(&q.column(k));
                    col.scaled_add(-proj, &q.column(k));
                }
            }
            let norm = col.dot(&col).sqrt();
            if norm < 1e-10 {
                ok = false;
                break;
            }
            // R_jj = <g_j, q_j> > 0 by construction of Gram-Schmidt
            q.column_mut(j).assign(&(col / norm));
        }
        if ok {
            return q;
        }
    }
}

/// Random rotation (det = +1).
pub fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array2<f64> {
    let mut q = random_orthogonal(d, rng);
    if determinant(&q) < 0.0 {
        q.column_mut(0).mapv_inplace(|x| -x);
    }
    q
}

/// 2-D rotation matrix acting on row vectors (`x · R` rotates `x` by `angle`).
pub fn rotation_2d(angle: f64) -> Array2<f64> {
    let (s, c) = angle.sin_cos();
    ndarray::array![[c, s], [-s, c]]
}

/// max |aᵀa − I| entry.
pub fn orthogonality_defect(a: &Array2<f64>) -> f64 {
    let gram = a.t().dot(a);
    let n = gram.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[[i, j]] - target).abs());
        }
    }
    worst
}
