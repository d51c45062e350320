//! Dense and Krylov linear algebra used by the experiments.
//!
//! Dense eigendecomposition / LU come from nalgebra and serve as oracles;
//! the matrix-free paths are a full-orthogonalization GMRES for shifted
//! Hermitian systems (H − z with Im z ≠ 0) and a Lanczos propagator for
//! e^{−itH}.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// ⟨u, v⟩ with conjugation on the first slot.
pub fn vec_dot(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), m.ncols());
    for (new, &old) in order.iter().enumerate() {
        vectors.set_column(new, &eig.eigenvectors.column(old));
    }
    (values, vectors)
}

/// exp(i·scale·G) for Hermitian G, via eigendecomposition. Unitary up to
/// rounding; exactly the identity at scale 0.
pub fn exp_i_hermitian(g: &DMatrix<Complex64>, scale: f64) -> DMatrix<Complex64> {
    if scale == 0.0 {
        return DMatrix::identity(g.nrows(), g.ncols());
    }
    let (values, vectors) = hermitian_eigen(g);
    let phases = DVector::from_iterator(
        values.len(),
        values.iter().map(|&e| Complex64::from_polar(1.0, scale * e)),
    );
    let scaled = {
        let mut m = vectors.clone();
        for (j, phase) in phases.iter().enumerate() {
            m.column_mut(j).scale_mut(1.0);
            for r in 0..m.nrows() {
                m[(r, j)] *= phase;
            }
        }
        m
    };
    scaled * vectors.adjoint()
}

/// Largest |eigenvalue| of a Hermitian matrix.
pub fn spectral_norm_hermitian(m: &DMatrix<Complex64>) -> f64 {
    let (values, _) = hermitian_eigen(m);
    values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().fold(0.0f64, |acc, &v| acc.max(v))
}

pub fn frobenius_norm(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Dense solve (m − z I) x = b by LU with partial pivoting.
pub fn lu_solve_shifted(
    m: &DMatrix<Complex64>,
    z: Complex64,
    b: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    if b.len() != n {
        return Err(Error::DimMismatch {
            what: "lu rhs",
            expected: n,
            got: b.len(),
        });
    }
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= z;
    }
    let rhs = DVector::from_column_slice(b);
    shifted
        .lu()
        .solve(&rhs)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Unconverged("LU solve failed (singular shift?)".into()))
}

/// Kronecker product a ⊗ b.
pub fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ma, na) = a.shape();
    let (mb, nb) = b.shape();
    let mut out = DMatrix::zeros(ma * mb, na * nb);
    for ia in 0..ma {
        for ja in 0..na {
            let av = a[(ia, ja)];
            if av == Complex64::ZERO {
                continue;
            }
            for ib in 0..mb {
                for jb in 0..nb {
                    out[(ia * mb + ib, ja * nb + jb)] = av * b[(ib, jb)];
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    /// Relative residual ‖b − A x‖ / ‖b‖ of the returned solution.
    pub residual: f64,
    pub converged: bool,
}

/// Full-orthogonalization GMRES with optional restart.
///
/// `apply` computes A·v; the returned residual is recomputed from the final
/// iterate, so an unconverged solve is reported honestly rather than from
/// the least-squares estimate.
pub fn gmres<F>(
    apply: F,
    b: &[Complex64],
    tol: f64,
    max_iter: usize,
    restart: Option<usize>,
) -> GmresOutcome
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let b_norm = vec_norm(b);
    if b_norm == 0.0 {
        return GmresOutcome {
            x: vec![Complex64::ZERO; n],
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let m_cap = restart.unwrap_or(max_iter).min(n).max(1);
    let mut x = vec![Complex64::ZERO; n];
    let mut total_iter = 0usize;

    'outer: loop {
        // r = b − A x
        let ax = apply(&x);
        let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let r_norm = vec_norm(&r);
        if r_norm / b_norm <= tol {
            break;
        }
        if total_iter >= max_iter {
            break;
        }

        let m = m_cap.min(max_iter - total_iter);
        let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
        for ri in r.iter_mut() {
            *ri /= r_norm;
        }
        basis.push(r);

        // Hessenberg columns h[j][0..=j+1], rotated in place by Givens.
        let mut h: Vec<Vec<Complex64>> = Vec::with_capacity(m);
        let mut cs: Vec<Complex64> = Vec::with_capacity(m);
        let mut sn: Vec<Complex64> = Vec::with_capacity(m);
        let mut g = vec![Complex64::ZERO; m + 1];
        g[0] = Complex64::new(r_norm, 0.0);

        let mut k_used = 0usize;
        for k in 0..m {
            total_iter += 1;
            let mut w = apply(&basis[k]);
            let mut hk = vec![Complex64::ZERO; k + 2];
            for (j, vj) in basis.iter().enumerate() {
                let hij = vec_dot(vj, &w);
                hk[j] = hij;
                axpy(-hij, vj, &mut w);
            }
            let w_norm = vec_norm(&w);
            hk[k + 1] = Complex64::new(w_norm, 0.0);

            // previous Givens rotations: [c s; -conj(s) c] with c real
            for j in 0..k {
                let t = cs[j] * hk[j] + sn[j] * hk[j + 1];
                hk[j + 1] = -sn[j].conj() * hk[j] + cs[j] * hk[j + 1];
                hk[j] = t;
            }
            // new rotation zeroing hk[k+1]
            let (c, s) = givens(hk[k], hk[k + 1]);
            hk[k] = c * hk[k] + s * hk[k + 1];
            hk[k + 1] = Complex64::ZERO;
            let tg = c * g[k] + s * g[k + 1];
            g[k + 1] = -s.conj() * g[k] + c * g[k + 1];
            g[k] = tg;
            cs.push(c);
            sn.push(s);
            h.push(hk);
            k_used = k + 1;

            let est = g[k + 1].norm() / b_norm;
            let breakdown = w_norm < 1e-14 * b_norm;
            if !breakdown && k + 1 < m && est > tol && total_iter < max_iter {
                for wi in w.iter_mut() {
                    *wi /= w_norm;
                }
                basis.push(w);
                continue;
            }
            break;
        }

        // back substitution: solve the k_used × k_used triangular system
        let mut y = vec![Complex64::ZERO; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[j][i] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut x);
        }

        if total_iter >= max_iter {
            break 'outer;
        }
    }

    let ax = apply(&x);
    let resid: f64 = b
        .iter()
        .zip(&ax)
        .map(|(bi, ai)| (bi - ai).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / b_norm;
    GmresOutcome {
        x,
        iterations: total_iter,
        residual: resid,
        converged: resid <= tol,
    }
}

/// Complex Givens pair with c real: [c s; -conj(s) c]·(a, b)ᵀ = (r, 0)ᵀ.
fn givens(a: Complex64, b: Complex64) -> (Complex64, Complex64) {
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return (Complex64::ONE, Complex64::ZERO);
    }
    if an == 0.0 {
        return (Complex64::ZERO, Complex64::ONE);
    }
    let r = (an * an + bn * bn).sqrt();
    let c = Complex64::new(an / r, 0.0);
    let s = (a / an) * (b.conj() / r);
    (c, s)
}

/// e^{−i t H} v for Hermitian `apply`, by Lanczos stepping.
///
/// The step is accepted when the standard a-posteriori estimate from the
/// last subspace coefficient is below `tol`, otherwise halved.
pub fn evolve_krylov<F>(
    apply: F,
    v: &[Complex64],
    t: f64,
    tol: f64,
    subspace: usize,
) -> Result<Vec<Complex64>>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = v.len();
    let m = subspace.min(n).max(2);
    let mut state = v.to_vec();
    let mut remaining = t;
    let mut dt = t;
    let mut guard = 0usize;
    while remaining.abs() > 1e-15 * t.abs().max(1.0) {
        guard += 1;
        if guard > 10_000 {
            return Err(Error::Unconverged(
                "Lanczos propagator: step control stalled".into(),
            ));
        }
        if dt.abs() > remaining.abs() {
            dt = remaining;
        }
        match lanczos_step(&apply, &state, dt, tol, m) {
            Some(next) => {
                state = next;
                remaining -= dt;
            }
            None => {
                dt *= 0.5;
                if dt.abs() < 1e-12 * t.abs().max(1.0) {
                    return Err(Error::Unconverged(
                        "Lanczos propagator: step size underflow".into(),
                    ));
                }
            }
        }
    }
    Ok(state)
}

fn lanczos_step<F>(
    apply: &F,
    v: &[Complex64],
    dt: f64,
    tol: f64,
    m: usize,
) -> Option<Vec<Complex64>>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = v.len();
    let beta0 = vec_norm(v);
    if beta0 == 0.0 {
        return Some(v.to_vec());
    }
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
    basis.push(v.iter().map(|c| c / beta0).collect());
    let mut alphas: Vec<f64> = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::with_capacity(m);
    let mut happy = false;
    for j in 0..m {
        let mut w = apply(&basis[j]);
        let alpha = vec_dot(&basis[j], &w).re;
        axpy(Complex64::new(-alpha, 0.0), &basis[j], &mut w);
        if j > 0 {
            axpy(Complex64::new(-betas[j - 1], 0.0), &basis[j - 1], &mut w);
        }
        // full reorthogonalization keeps the small subspace clean
        for b in &basis {
            let c = vec_dot(b, &w);
            axpy(-c, b, &mut w);
        }
        alphas.push(alpha);
        let beta = vec_norm(&w);
        if beta < 1e-14 {
            happy = true;
            break;
        }
        betas.push(beta);
        if j + 1 < m {
            basis.push(w.iter().map(|c| c / beta).collect());
        }
    }
    let k = alphas.len();
    let mut tri = DMatrix::<Complex64>::zeros(k, k);
    for i in 0..k {
        tri[(i, i)] = Complex64::new(alphas[i], 0.0);
        if i + 1 < k {
            tri[(i, i + 1)] = Complex64::new(betas[i], 0.0);
            tri[(i + 1, i)] = Complex64::new(betas[i], 0.0);
        }
    }
    let u = exp_i_hermitian(&tri, -dt);
    let coeffs: Vec<Complex64> = (0..k).map(|i| u[(i, 0)] * beta0).collect();
    // error estimate: weight that would flow into the next Lanczos vector
    if !happy && k == m {
        let leak = (betas.get(k - 1).copied().unwrap_or(0.0) * coeffs[k - 1].norm()
            * dt.abs())
        .abs();
        if leak > tol * beta0.max(1e-300) {
            return None;
        }
    }
    let mut out = vec![Complex64::ZERO; n];
    for (j, c) in coeffs.iter().enumerate() {
        axpy(*c, &basis[j], &mut out);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let raw = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        (&raw + raw.adjoint()) * Complex64::new(0.5, 0.0)
    }

    fn random_vec(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn hermitian_eigen_reconstructs() {
        let m = random_hermitian(12, 5);
        let (values, vectors) = hermitian_eigen(&m);
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            12,
            values.iter().map(|&v| Complex64::new(v, 0.0)),
        ));
        let rebuilt = &vectors * d * vectors.adjoint();
        assert!(frobenius_norm(&(&rebuilt - &m)) < 1e-12);
    }

    #[test]
    fn exp_of_hermitian_is_unitary() {
        let g = random_hermitian(10, 9);
        let u = exp_i_hermitian(&g, 0.37);
        let defect = &u.adjoint() * &u - DMatrix::identity(10, 10);
        assert!(frobenius_norm(&defect) < 1e-13);
    }

    #[test]
    fn gmres_zero_operator() {
        // (0 − i)x = b  ⇒ x = i b
        let b = random_vec(7, 1);
        let z = Complex64::i();
        let out = gmres(
            |v| v.iter().map(|c| -z * c).collect(),
            &b,
            1e-12,
            100,
            None,
        );
        assert!(out.converged);
        for (x, bi) in out.x.iter().zip(&b) {
            assert!((x - Complex64::i() * bi).norm() < 1e-12);
        }
    }

    #[test]
    fn gmres_diagonal_operator() {
        let diag: Vec<f64> = (0..9).map(|i| 1.0 + i as f64).collect();
        let b = random_vec(9, 2);
        let z = Complex64::new(0.0, 1.0);
        let out = gmres(
            |v| {
                v.iter()
                    .zip(&diag)
                    .map(|(c, &d)| c * (d - z))
                    .collect()
            },
            &b,
            1e-12,
            100,
            None,
        );
        assert!(out.converged);
        for ((x, bi), &d) in out.x.iter().zip(&b).zip(&diag) {
            assert!((x - bi / (Complex64::new(d, 0.0) - z)).norm() < 1e-11);
        }
    }

    #[test]
    fn gmres_matches_dense_lu() {
        let n = 50;
        let h = random_hermitian(n, 3);
        let b = random_vec(n, 4);
        let z = Complex64::i();
        let direct = lu_solve_shifted(&h, z, &b).unwrap();
        let out = gmres(
            |v| {
                let hv = &h * DVector::from_column_slice(v);
                hv.iter().zip(v).map(|(a, c)| a - z * c).collect()
            },
            &b,
            1e-12,
            400,
            None,
        );
        assert!(out.converged, "residual {}", out.residual);
        let diff: f64 = direct
            .iter()
            .zip(&out.x)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-9, "gmres vs lu diff {diff}");
    }

    #[test]
    fn gmres_reports_nonconvergence() {
        let n = 40;
        let h = random_hermitian(n, 8);
        let b = random_vec(n, 9);
        let z = Complex64::i();
        let out = gmres(
            |v| {
                let hv = &h * DVector::from_column_slice(v);
                hv.iter().zip(v).map(|(a, c)| a - z * c).collect()
            },
            &b,
            1e-12,
            1,
            None,
        );
        assert!(!out.converged);
        assert!(out.residual > 1e-12);
    }

    #[test]
    fn krylov_evolution_matches_dense() {
        let n = 30;
        let h = random_hermitian(n, 12);
        let v = random_vec(n, 13);
        let apply = |u: &[Complex64]| -> Vec<Complex64> {
            (&h * DVector::from_column_slice(u)).iter().copied().collect()
        };
        let fast = evolve_krylov(apply, &v, 0.9, 1e-12, 20).unwrap();
        // dense reference
        let (values, vectors) = hermitian_eigen(&h);
        let coeffs = vectors.adjoint() * DVector::from_column_slice(&v);
        let evolved = DVector::from_iterator(
            n,
            coeffs
                .iter()
                .zip(&values)
                .map(|(c, &e)| c * Complex64::from_polar(1.0, -0.9 * e)),
        );
        let reference = vectors * evolved;
        let diff: f64 = fast
            .iter()
            .zip(reference.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-9, "krylov vs dense diff {diff}");
        // unitarity
        assert!((vec_norm(&fast) - vec_norm(&v)).abs() < 1e-10);
    }

    #[test]
    fn kron_block_structure() {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::ZERO,
                Complex64::new(3.0, 0.0),
            ],
        );
        let b = DMatrix::identity(3, 3);
        let k = kron(&a, &b);
        assert_eq!(k.nrows(), 6);
        assert_eq!(k[(0, 3)], Complex64::new(2.0, 0.0));
        assert_eq!(k[(4, 4)], Complex64::new(3.0, 0.0));
        assert_eq!(k[(3, 0)], Complex64::ZERO);
    }
}
