//! Direct solver for "bordered tridiagonal" systems: rows 0..n-2 are
//! tridiagonal, the last row is dense. This is the shape produced by a
//! three-point stencil plus one nonlocal boundary-closure equation.
//!
//! Factorization is a Thomas forward sweep on the tridiagonal block followed
//! by elimination of the dense row against the factored rows; no pivoting.
//! The tridiagonal block of every system built here is strictly diagonally
//! dominant, and the final border pivot is checked explicitly.

use crate::error::{Error, Result};

/// Assembled system prior to factorization.
#[derive(Debug, Clone)]
pub struct BorderedTridiag {
    /// Number of unknowns.
    pub n: usize,
    /// Subdiagonal entries of rows 0..n-2 (`sub[0]` unused).
    pub sub: Vec<f64>,
    /// Diagonal entries of rows 0..n-2.
    pub diag: Vec<f64>,
    /// Superdiagonal entries of rows 0..n-2 (`sup[i]` couples row i to column i+1).
    pub sup: Vec<f64>,
    /// Dense final row, length n.
    pub border: Vec<f64>,
}

/// Factored form; `solve` may be called repeatedly.
#[derive(Debug, Clone)]
pub struct BorderedTridiagFactor {
    n: usize,
    /// Thomas multipliers for rows 1..n-2.
    mult: Vec<f64>,
    /// Pivots of the eliminated tridiagonal rows.
    piv: Vec<f64>,
    sup: Vec<f64>,
    /// Multipliers eliminating the border row against rows 0..n-2.
    border_mult: Vec<f64>,
    /// Final pivot of the border row.
    border_piv: f64,
}

impl BorderedTridiag {
    /// Zero-initialized system of `n` unknowns.
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 3, "bordered solver needs n >= 3");
        BorderedTridiag {
            n,
            sub: vec![0.0; n - 1],
            diag: vec![0.0; n - 1],
            sup: vec![0.0; n - 1],
            border: vec![0.0; n],
        }
    }

    /// Infinity norm of the full matrix (used by condition estimates).
    pub fn norm_inf(&self) -> f64 {
        let mut best: f64 = self.border.iter().map(|v| v.abs()).sum();
        for i in 0..self.n - 1 {
            let row = self.sub[i].abs() + self.diag[i].abs() + self.sup[i].abs();
            best = best.max(row);
        }
        best
    }

    pub fn factor(self) -> Result<BorderedTridiagFactor> {
        let n = self.n;
        let mut piv = self.diag.clone();
        let mut mult = vec![0.0; n - 1];
        for i in 1..n - 1 {
            if piv[i - 1] == 0.0 {
                return Err(Error::SingularClosure("zero pivot in tridiagonal sweep"));
            }
            mult[i] = self.sub[i] / piv[i - 1];
            piv[i] -= mult[i] * self.sup[i - 1];
        }
        // eliminate the border row left to right
        let mut border = self.border.clone();
        let mut border_mult = vec![0.0; n - 1];
        for j in 0..n - 1 {
            if piv[j] == 0.0 {
                return Err(Error::SingularClosure("zero pivot under border row"));
            }
            let f = border[j] / piv[j];
            border_mult[j] = f;
            border[j + 1] -= f * self.sup[j];
        }
        let border_piv = border[n - 1];
        if border_piv.abs() < 1e-300 {
            return Err(Error::SingularClosure("border pivot vanished"));
        }
        Ok(BorderedTridiagFactor {
            n,
            mult,
            piv,
            sup: self.sup,
            border_mult,
            border_piv,
        })
    }
}

impl BorderedTridiagFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve in place; `rhs` must have length n.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.n;
        assert_eq!(rhs.len(), n);
        for i in 1..n - 1 {
            rhs[i] -= self.mult[i] * rhs[i - 1];
        }
        let mut b = rhs[n - 1];
        for j in 0..n - 1 {
            b -= self.border_mult[j] * rhs[j];
        }
        rhs[n - 1] = b / self.border_piv;
        let zn = rhs[n - 1];
        rhs[n - 2] = (rhs[n - 2] - self.sup[n - 2] * zn) / self.piv[n - 2];
        for i in (0..n - 2).rev() {
            rhs[i] = (rhs[i] - self.sup[i] * rhs[i + 1]) / self.piv[i];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = rhs.to_vec();
        self.solve_in_place(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_system(n: usize, rng: &mut StdRng) -> (BorderedTridiag, Vec<f64>) {
        let mut sys = BorderedTridiag::zeros(n);
        for i in 0..n - 1 {
            sys.sub[i] = rng.gen_range(-1.0..1.0);
            sys.sup[i] = rng.gen_range(-1.0..1.0);
            // dominance keeps the unpivoted sweep stable
            sys.diag[i] = 3.0 + rng.gen_range(0.0..1.0);
        }
        sys.sub[0] = 0.0;
        for j in 0..n {
            sys.border[j] = rng.gen_range(-1.0..1.0);
        }
        sys.border[n - 1] += 4.0;
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (sys, rhs)
    }

    fn dense(sys: &BorderedTridiag) -> DMatrix<f64> {
        let n = sys.n;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            m[(i, i)] = sys.diag[i];
            if i > 0 {
                m[(i, i - 1)] = sys.sub[i];
            }
            m[(i, i + 1)] = sys.sup[i];
        }
        for j in 0..n {
            m[(n - 1, j)] = sys.border[j];
        }
        m
    }

    #[test]
    fn matches_dense_lu() {
        let mut rng = StdRng::seed_from_u64(42);
        for n in [3usize, 4, 7, 33, 101] {
            let (sys, rhs) = random_system(n, &mut rng);
            let m = dense(&sys);
            let x_dense = m
                .lu()
                .solve(&DVector::from_column_slice(&rhs))
                .expect("dense solvable");
            let x = sys.factor().unwrap().solve(&rhs);
            for i in 0..n {
                assert!(
                    (x[i] - x_dense[i]).abs() < 1e-10,
                    "n={n} i={i}: {} vs {}",
                    x[i],
                    x_dense[i]
                );
            }
        }
    }

    #[test]
    fn reusable_factorization() {
        let mut rng = StdRng::seed_from_u64(7);
        let (sys, rhs) = random_system(20, &mut rng);
        let m = dense(&sys);
        let f = sys.factor().unwrap();
        for shift in 0..3 {
            let r: Vec<f64> = rhs.iter().map(|v| v + shift as f64).collect();
            let x = f.solve(&r);
            let x_dense = m.clone().lu().solve(&DVector::from_column_slice(&r)).unwrap();
            for i in 0..20 {
                assert!((x[i] - x_dense[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_border_detected() {
        let mut sys = BorderedTridiag::zeros(4);
        for i in 0..3 {
            sys.diag[i] = 2.0;
            sys.sup[i] = -1.0;
            if i > 0 {
                sys.sub[i] = -1.0;
            }
        }
        // border row equal to row 1 -> singular
        sys.border = vec![-1.0, 2.0, -1.0, 0.0];
        assert!(matches!(
            sys.factor(),
            Err(Error::SingularClosure(_))
        ));
    }
}
