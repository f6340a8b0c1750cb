//! Restarted GMRES with right Jacobi preconditioning, and Jacobi-PCG for the
//! symmetric Laplace solves.

use serde::{Deserialize, Serialize};

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    #[default]
    Jacobi,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmresConfig {
    pub preconditioner: Preconditioner,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig {
            preconditioner: Preconditioner::Jacobi,
            rel_tol: 1e-10,
            max_iter: 2000,
            restart: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    /// Total inner iterations over all restart cycles.
    pub iterations: usize,
    /// Final true relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn inverse_diagonal(a: &SparseMatrix, kind: Preconditioner) -> Result<Vec<f64>> {
    match kind {
        Preconditioner::None => Ok(vec![1.0; a.dim()]),
        Preconditioner::Jacobi => a
            .diag()
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                if d == 0.0 || !d.is_finite() {
                    Err(Error::invalid(format!("Jacobi preconditioner: diagonal entry {i} is {d}")))
                } else {
                    Ok(1.0 / d)
                }
            })
            .collect(),
    }
}

/// GMRES solver holding its Krylov workspace so repeated solves on systems
/// of one size do not reallocate.
#[derive(Debug, Clone)]
pub struct Gmres {
    config: GmresConfig,
    basis: Vec<Vec<f64>>,
    hessenberg: Vec<Vec<f64>>,
    cs: Vec<f64>,
    sn: Vec<f64>,
    g: Vec<f64>,
    r: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
}

impl Gmres {
    pub fn new(config: GmresConfig) -> Result<Self> {
        if config.restart == 0 || config.max_iter == 0 {
            return Err(Error::invalid("GMRES restart and max_iter must be positive"));
        }
        if !(config.rel_tol > 0.0 && config.rel_tol < 1.0) {
            return Err(Error::invalid(format!("GMRES rel_tol {} outside (0, 1)", config.rel_tol)));
        }
        let m = config.restart;
        Ok(Gmres {
            config,
            basis: Vec::new(),
            hessenberg: vec![vec![0.0; m]; m + 1],
            cs: vec![0.0; m],
            sn: vec![0.0; m],
            g: vec![0.0; m + 1],
            r: Vec::new(),
            w: Vec::new(),
            z: Vec::new(),
        })
    }

    pub fn config(&self) -> &GmresConfig {
        &self.config
    }

    fn ensure(&mut self, n: usize) {
        if self.r.len() != n {
            self.basis = vec![vec![0.0; n]; self.config.restart + 1];
            self.r = vec![0.0; n];
            self.w = vec![0.0; n];
            self.z = vec![0.0; n];
        }
    }

    /// Solves `A x = b` starting from the contents of `x`.
    pub fn solve(&mut self, a: &SparseMatrix, b: &[f64], x: &mut [f64]) -> Result<SolveReport> {
        let n = a.dim();
        if b.len() != n || x.len() != n {
            return Err(Error::invalid(format!(
                "GMRES dimensions: matrix {n}, rhs {}, guess {}",
                b.len(),
                x.len()
            )));
        }
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("GMRES right-hand side is not finite"));
        }
        let bnorm = norm(b);
        if bnorm == 0.0 {
            x.fill(0.0);
            return Ok(SolveReport {
                iterations: 0,
                residual: 0.0,
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            x.fill(0.0);
        }
        let minv = inverse_diagonal(a, self.config.preconditioner)?;
        self.ensure(n);
        let m = self.config.restart;
        let tol = self.config.rel_tol;
        let mut iterations = 0;
        let mut best = (f64::INFINITY, x.to_vec());

        loop {
            a.mul_vec_into(x, &mut self.r);
            for (ri, bi) in self.r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            let beta = norm(&self.r);
            let rel = beta / bnorm;
            if rel < best.0 {
                best = (rel, x.to_vec());
            }
            if rel <= tol {
                return Ok(SolveReport {
                    iterations,
                    residual: rel,
                });
            }
            if iterations >= self.config.max_iter || !rel.is_finite() {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: best.0,
                    best: best.1,
                });
            }

            for (v, r) in self.basis[0].iter_mut().zip(&self.r) {
                *v = r / beta;
            }
            self.g.fill(0.0);
            self.g[0] = beta;
            let mut k = 0;
            while k < m && iterations < self.config.max_iter {
                for ((zi, vi), mi) in self.z.iter_mut().zip(&self.basis[k]).zip(&minv) {
                    *zi = vi * mi;
                }
                a.mul_vec_into(&self.z, &mut self.w);
                // Modified Gram-Schmidt.
                for j in 0..=k {
                    let h = dot(&self.w, &self.basis[j]);
                    self.hessenberg[j][k] = h;
                    for (wi, vi) in self.w.iter_mut().zip(&self.basis[j]) {
                        *wi -= h * vi;
                    }
                }
                let hn = norm(&self.w);
                self.hessenberg[k + 1][k] = hn;
                if hn > 0.0 {
                    for (v, wi) in self.basis[k + 1].iter_mut().zip(&self.w) {
                        *v = wi / hn;
                    }
                }
                for j in 0..k {
                    let (h0, h1) = (self.hessenberg[j][k], self.hessenberg[j + 1][k]);
                    self.hessenberg[j][k] = self.cs[j] * h0 + self.sn[j] * h1;
                    self.hessenberg[j + 1][k] = -self.sn[j] * h0 + self.cs[j] * h1;
                }
                let (h0, h1) = (self.hessenberg[k][k], self.hessenberg[k + 1][k]);
                let rho = h0.hypot(h1);
                let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (h0 / rho, h1 / rho) };
                self.cs[k] = c;
                self.sn[k] = s;
                self.hessenberg[k][k] = rho;
                self.hessenberg[k + 1][k] = 0.0;
                self.g[k + 1] = -s * self.g[k];
                self.g[k] *= c;
                iterations += 1;
                k += 1;
                if (self.g[k].abs() / bnorm) <= tol * 0.5 || hn == 0.0 {
                    break;
                }
            }

            // Back substitution for y, then x += M⁻¹ V y.
            let mut y = vec![0.0; k];
            for i in (0..k).rev() {
                let mut s = self.g[i];
                for j in (i + 1)..k {
                    s -= self.hessenberg[i][j] * y[j];
                }
                y[i] = if self.hessenberg[i][i] != 0.0 { s / self.hessenberg[i][i] } else { 0.0 };
            }
            self.z.fill(0.0);
            for (j, yj) in y.iter().enumerate() {
                for (zi, vi) in self.z.iter_mut().zip(&self.basis[j]) {
                    *zi += yj * vi;
                }
            }
            for ((xi, zi), mi) in x.iter_mut().zip(&self.z).zip(&minv) {
                *xi += zi * mi;
            }
        }
    }
}

/// One-shot GMRES from a zero initial guess.
pub fn gmres_solve(a: &SparseMatrix, b: &[f64], config: &GmresConfig) -> Result<(Vec<f64>, SolveReport)> {
    let mut x = vec![0.0; a.dim()];
    let report = Gmres::new(*config)?.solve(a, b, &mut x)?;
    Ok((x, report))
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite
/// systems, starting from `x`.
pub fn cg_solve(a: &SparseMatrix, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> Result<SolveReport> {
    let n = a.dim();
    if b.len() != n || x.len() != n {
        return Err(Error::invalid("CG dimension mismatch"));
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(SolveReport {
            iterations: 0,
            residual: 0.0,
        });
    }
    let minv = inverse_diagonal(a, Preconditioner::Jacobi)?;
    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 0..=max_iter {
        let rel = norm(&r) / bnorm;
        if rel <= rel_tol {
            return Ok(SolveReport {
                iterations: it,
                residual: rel,
            });
        }
        if it == max_iter || !rel.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                residual: rel,
                best: x.to_vec(),
            });
        }
        a.mul_vec_into(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    unreachable!("loop returns at it == max_iter")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in (c + 1)..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = ((r + 1)..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    fn random_spd(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| b[k][i] * b[k][j]).sum::<f64>();
            }
            a[i][i] += n as f64 * 0.1;
        }
        a
    }

    #[test]
    fn identity_in_one_iteration() {
        let a = SparseMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 7.0];
        let (x, rep) = gmres_solve(&a, &b, &GmresConfig::default()).unwrap();
        assert!(rep.iterations <= 1);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() <= 1e-15 * bi.abs());
        }
    }

    #[test]
    fn diagonal_solve() {
        let a = SparseMatrix::diagonal(&[2.0, 4.0]);
        for pc in [Preconditioner::Jacobi, Preconditioner::None] {
            let cfg = GmresConfig {
                preconditioner: pc,
                ..Default::default()
            };
            let (x, _) = gmres_solve(&a, &[2.0, 8.0], &cfg).unwrap();
            assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn random_spd_matches_dense_elimination() {
        let n = 50;
        let dense = random_spd(n, 7);
        let a = SparseMatrix::from_dense(&dense).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (x, rep) = gmres_solve(&a, &b, &GmresConfig::default()).unwrap();
        assert!(rep.residual <= 1e-10);
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(ax, bi)| bi - ax).collect();
        assert!(norm(&r) / norm(&b) <= 1e-10);
        let oracle = dense_solve(dense, b);
        let err: Vec<f64> = x.iter().zip(&oracle).map(|(p, q)| p - q).collect();
        assert!(norm(&err) / norm(&oracle) <= 1e-10 * 1e3, "{}", norm(&err) / norm(&oracle));
    }

    #[test]
    fn restarts_still_converge() {
        let n = 40;
        let a = SparseMatrix::from_dense(&random_spd(n, 3)).unwrap();
        let b = vec![1.0; n];
        let cfg = GmresConfig {
            restart: 5,
            max_iter: 5000,
            ..Default::default()
        };
        let (x, _) = gmres_solve(&a, &b, &cfg).unwrap();
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(ax, bi)| bi - ax).collect();
        assert!(norm(&r) / norm(&b) <= 1e-10);
    }

    #[test]
    fn nonconvergence_carries_best_iterate() {
        let n = 30;
        let a = SparseMatrix::from_dense(&random_spd(n, 11)).unwrap();
        let b = vec![1.0; n];
        let cfg = GmresConfig {
            restart: 2,
            max_iter: 3,
            ..Default::default()
        };
        match gmres_solve(&a, &b, &cfg) {
            Err(Error::NonConvergence { iterations, residual, best }) => {
                assert_eq!(iterations, 3);
                assert!(residual < 1.0);
                assert_eq!(best.len(), n);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = SparseMatrix::diagonal(&[3.0, 1.0]);
        let (x, rep) = gmres_solve(&a, &[0.0, 0.0], &GmresConfig::default()).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn cg_matches_dense() {
        let n = 30;
        let dense = random_spd(n, 5);
        let a = SparseMatrix::from_dense(&dense).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        cg_solve(&a, &b, &mut x, 1e-12, 500).unwrap();
        let oracle = dense_solve(dense, b);
        for (p, q) in x.iter().zip(&oracle) {
            assert!((p - q).abs() < 1e-8);
        }
    }
}
