//! Small dense symmetric linear algebra on row-major `n × n` `f64` matrices.

use crate::error::{invalid, Result};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the row-major matrix whose columns are the
/// matching unit eigenvectors.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(invalid!("eigen: {} values for a {n}x{n} matrix", a.len()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(invalid!("eigen: matrix has non-finite entries"));
    }
    let mut m = a.to_vec();
    let mut v = identity(n);
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(((0..n).map(|i| m[i * n + i]).collect(), v))
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

pub fn symmetrize(a: &mut [f64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Eigenvalues down to `-tol · max(1, |λ|max)` are clamped to zero; more
/// negative ones are an error.
pub fn psd_sqrt(a: &[f64], n: usize, tol: f64) -> Result<Vec<f64>> {
    let (vals, vecs) = symmetric_eigen(a, n)?;
    let roots = clamped_roots(&vals, tol)?;
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        if roots[k] == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = vecs[i * n + k] * roots[k];
            for j in 0..n {
                out[i * n + j] += vik * vecs[j * n + k];
            }
        }
    }
    symmetrize(&mut out, n);
    Ok(out)
}

pub(crate) fn clamped_roots(vals: &[f64], tol: f64) -> Result<Vec<f64>> {
    let big = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    vals.iter()
        .map(|&l| {
            if l >= 0.0 {
                Ok(l.sqrt())
            } else if l > -tol * big {
                Ok(0.0)
            } else {
                Err(invalid!("matrix is not positive semidefinite (eigenvalue {l})"))
            }
        })
        .collect()
}
