//! Krylov and fast-Poisson building blocks for the saddle-point solvers.

use crate::grid::{div_u_unchecked, grad_p_unchecked, Grid, ScalarCellField, VelocityField};
use crate::scalar::Real;

/// Minimal vector-space interface used by [`pcg`]. All grid unknowns carry
/// the same quadrature weight, so the unweighted dot product gives the same
/// Krylov iterates as the weighted one.
pub trait KrylovVector<T: Real>: Clone {
    fn dot(&self, other: &Self) -> T;
    fn axpy(&mut self, a: T, x: &Self);
    fn scale(&mut self, a: T);
}

impl<T: Real> KrylovVector<T> for VelocityField<T> {
    fn dot(&self, other: &Self) -> T {
        self.raw_dot(other)
    }
    fn axpy(&mut self, a: T, x: &Self) {
        VelocityField::axpy(self, a, x)
    }
    fn scale(&mut self, a: T) {
        VelocityField::scale(self, a)
    }
}

impl<T: Real> KrylovVector<T> for ScalarCellField<T> {
    fn dot(&self, other: &Self) -> T {
        self.values()
            .iter()
            .zip(other.values())
            .map(|(&a, &b)| a * b)
            .sum()
    }
    fn axpy(&mut self, a: T, x: &Self) {
        ScalarCellField::axpy(self, a, x)
    }
    fn scale(&mut self, a: T) {
        ScalarCellField::scale(self, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome<T> {
    pub iters: usize,
    /// `||b - A x|| / ||b||` as tracked by the recurrence.
    pub rel_residual: T,
    pub converged: bool,
}

/// Preconditioned conjugate gradients for an SPD operator, starting from the
/// value already in `x`. Stops when the recursive residual drops below
/// `tol * ||b||` (or `abs_floor`, whichever is larger).
pub fn pcg<T: Real, V: KrylovVector<T>>(
    mut apply: impl FnMut(&V) -> V,
    precond: impl Fn(&V) -> V,
    b: &V,
    x: &mut V,
    tol: T,
    abs_floor: T,
    max_iters: usize,
) -> CgOutcome<T> {
    let b_norm = b.dot(b).sqrt();
    let target = (tol * b_norm).max(abs_floor);
    let mut r = b.clone();
    r.axpy(-T::one(), &apply(x));
    let mut r_norm = r.dot(&r).sqrt();
    let rel = |rn: T| if b_norm > T::zero() { rn / b_norm } else { rn };
    if r_norm <= target {
        return CgOutcome {
            iters: 0,
            rel_residual: rel(r_norm),
            converged: true,
        };
    }
    let mut z = precond(&r);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=max_iters {
        let ad = apply(&d);
        let dad = d.dot(&ad);
        if dad <= T::zero() || !dad.is_finite() {
            return CgOutcome {
                iters: it,
                rel_residual: rel(r_norm),
                converged: false,
            };
        }
        let alpha = rz / dad;
        x.axpy(alpha, &d);
        r.axpy(-alpha, &ad);
        r_norm = r.dot(&r).sqrt();
        if r_norm <= target {
            return CgOutcome {
                iters: it,
                rel_residual: rel(r_norm),
                converged: true,
            };
        }
        z = precond(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        d.scale(beta);
        d.axpy(T::one(), &z);
    }
    CgOutcome {
        iters: max_iters,
        rel_residual: rel(r_norm),
        converged: false,
    }
}

/// Exact solver for the cell-centered pressure Poisson problem
/// `-div grad_p phi = r` with zero-flux walls, by orthonormal cosine
/// transforms along both axes.
#[derive(Debug, Clone)]
pub struct NeumannPoisson<T> {
    nx: usize,
    ny: usize,
    cx: Vec<T>,
    cy: Vec<T>,
    inv_eig: Vec<T>,
}

fn cosine_basis<T: Real>(n: usize) -> Vec<T> {
    let nf = T::from_count(n);
    let mut c = vec![T::zero(); n * n];
    for k in 0..n {
        let s = if k == 0 {
            nf.recip().sqrt()
        } else {
            (T::two() / nf).sqrt()
        };
        for i in 0..n {
            let arg = T::PI() * T::from_count(k) * (T::from_count(i) + T::half()) / nf;
            c[k * n + i] = s * arg.cos();
        }
    }
    c
}

impl<T: Real> NeumannPoisson<T> {
    pub fn new(grid: &Grid<T>) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let four = T::lit(4.0);
        let lam = |k: usize, n: usize, h: T| {
            let s = (T::PI() * T::from_count(k) / (T::two() * T::from_count(n))).sin();
            four * s * s / (h * h)
        };
        let mut inv_eig = vec![T::zero(); nx * ny];
        for l in 0..ny {
            for k in 0..nx {
                if k + l > 0 {
                    inv_eig[l * nx + k] = (lam(k, nx, grid.hx()) + lam(l, ny, grid.hy())).recip();
                }
            }
        }
        NeumannPoisson {
            nx,
            ny,
            cx: cosine_basis(nx),
            cy: cosine_basis(ny),
            inv_eig,
        }
    }

    /// Returns the mean-zero `phi` with `-div grad_p phi = r - mean(r)`.
    pub fn solve(&self, r: &ScalarCellField<T>) -> ScalarCellField<T> {
        let (nx, ny) = (self.nx, self.ny);
        let v = r.values();
        // a = Cy * V * Cx^T in index form a[l][k] = sum_{j,i} cy[l][j] v[j][i] cx[k][i]
        let mut tmp = vec![T::zero(); nx * ny];
        for j in 0..ny {
            for k in 0..nx {
                let mut s = T::zero();
                for i in 0..nx {
                    s += v[j * nx + i] * self.cx[k * nx + i];
                }
                tmp[j * nx + k] = s;
            }
        }
        let mut hat = vec![T::zero(); nx * ny];
        for l in 0..ny {
            for k in 0..nx {
                let mut s = T::zero();
                for j in 0..ny {
                    s += self.cy[l * ny + j] * tmp[j * nx + k];
                }
                hat[l * nx + k] = s * self.inv_eig[l * nx + k];
            }
        }
        for j in 0..ny {
            for k in 0..nx {
                let mut s = T::zero();
                for l in 0..ny {
                    s += self.cy[l * ny + j] * hat[l * nx + k];
                }
                tmp[j * nx + k] = s;
            }
        }
        let mut out = vec![T::zero(); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let mut s = T::zero();
                for k in 0..nx {
                    s += tmp[j * nx + k] * self.cx[k * nx + i];
                }
                out[j * nx + i] = s;
            }
        }
        let mut phi = r.clone();
        phi.values_mut().copy_from_slice(&out);
        phi
    }

    /// Discrete Leray projection: removes the gradient part of `v` so that
    /// the result is discretely divergence-free.
    pub fn project(&self, v: &VelocityField<T>, grid: &Grid<T>) -> VelocityField<T> {
        let phi = self.solve(&div_u_unchecked(v, grid));
        v.add(&grad_p_unchecked(&phi, grid))
    }
}
