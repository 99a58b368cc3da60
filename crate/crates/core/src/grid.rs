//! Rectangular staggered (MAC) grid on `(0, lx) x (0, ly)`.
//!
//! Pressure, yield stress and tensor quantities live at cell centers. The
//! first velocity component lives on vertical faces, the second on horizontal
//! faces, so the normal component on the boundary is stored explicitly and is
//! always zero for admissible (slip-normal) fields. The vanishing tangential
//! traction `(grad u n)_tau = 0` is imposed through mirror ghost values when a
//! tangential derivative is taken next to a wall.
//!
//! All storage is row-major in `y` then `x`: index `j * width + i`.

use crate::error::{BinghamError, EvalError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid<T> {
    lx: T,
    ly: T,
    nx: usize,
    ny: usize,
    hx: T,
    hy: T,
}

impl<T: Real> Grid<T> {
    pub const MIN_CELLS: usize = 4;

    pub fn new(lx: T, ly: T, nx: usize, ny: usize) -> Result<Self> {
        if nx < Self::MIN_CELLS || ny < Self::MIN_CELLS {
            return Err(BinghamError::invariant(
                "Grid",
                format!("nx >= 4 and ny >= 4 required, got nx = {nx}, ny = {ny}"),
            ));
        }
        if !(lx > T::zero() && ly > T::zero()) || !lx.is_finite() || !ly.is_finite() {
            return Err(BinghamError::invariant(
                "Grid",
                format!("lx > 0 and ly > 0 required, got lx = {lx}, ly = {ly}"),
            ));
        }
        let hx = lx / T::from_count(nx);
        let hy = ly / T::from_count(ny);
        // Side lengths are stored as h * n so that the product identity is exact.
        Ok(Grid {
            lx: hx * T::from_count(nx),
            ly: hy * T::from_count(ny),
            nx,
            ny,
            hx,
            hy,
        })
    }

    pub fn square(l: T, n: usize) -> Result<Self> {
        Self::new(l, l, n, n)
    }

    pub fn lx(&self) -> T {
        self.lx
    }
    pub fn ly(&self) -> T {
        self.ly
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn hx(&self) -> T {
        self.hx
    }
    pub fn hy(&self) -> T {
        self.hy
    }
    pub fn cell_area(&self) -> T {
        self.hx * self.hy
    }
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (T, T) {
        (
            (T::from_count(i) + T::half()) * self.hx,
            (T::from_count(j) + T::half()) * self.hy,
        )
    }

    /// Position of the `u1` unknown on vertical face `(i, j)`, `i in 0..=nx`.
    pub fn u1_face(&self, i: usize, j: usize) -> (T, T) {
        (
            T::from_count(i) * self.hx,
            (T::from_count(j) + T::half()) * self.hy,
        )
    }

    /// Position of the `u2` unknown on horizontal face `(i, j)`, `j in 0..=ny`.
    pub fn u2_face(&self, i: usize, j: usize) -> (T, T) {
        (
            (T::from_count(i) + T::half()) * self.hx,
            T::from_count(j) * self.hy,
        )
    }

    fn dims(&self) -> String {
        format!("{}x{}", self.nx, self.ny)
    }

    pub(crate) fn check(&self, nx: usize, ny: usize) -> Result<()> {
        if nx == self.nx && ny == self.ny {
            Ok(())
        } else {
            Err(BinghamError::DimensionMismatch {
                expected: self.dims(),
                found: format!("{nx}x{ny}"),
            })
        }
    }
}

/// Cell-centered scalar (pressure, yield stress, a forcing component).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCellField<T> {
    nx: usize,
    ny: usize,
    values: Vec<T>,
}

impl<T: Real> ScalarCellField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: &Grid<T>, value: T) -> Self {
        ScalarCellField {
            nx: grid.nx,
            ny: grid.ny,
            values: vec![value; grid.n_cells()],
        }
    }

    pub fn from_fn(grid: &Grid<T>, f: impl Fn(T, T) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell_center(i, j);
                values.push(f(x, y));
            }
        }
        ScalarCellField {
            nx: grid.nx,
            ny: grid.ny,
            values,
        }
    }

    pub fn try_from_fn(
        grid: &Grid<T>,
        f: impl Fn(T, T) -> std::result::Result<T, EvalError>,
    ) -> std::result::Result<Self, EvalError> {
        let mut values = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell_center(i, j);
                values.push(f(x, y)?);
            }
        }
        Ok(ScalarCellField {
            nx: grid.nx,
            ny: grid.ny,
            values,
        })
    }

    pub fn from_values(grid: &Grid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(BinghamError::DimensionMismatch {
                expected: format!("{} cell values", grid.n_cells()),
                found: format!("{}", values.len()),
            });
        }
        Ok(ScalarCellField {
            nx: grid.nx,
            ny: grid.ny,
            values,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[j * self.nx + i]
    }
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.values[j * self.nx + i] = v;
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Discrete mean `sum(v) / n` (all cells carry equal weight).
    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::from_count(self.values.len())
    }

    pub fn subtract_mean(&mut self) {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn scale(&mut self, a: T) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: T, x: &Self) {
        for (s, &v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ScalarCellField {
            nx: self.nx,
            ny: self.ny,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Face-centered velocity: `u1` on the `(nx+1) x ny` vertical faces and `u2`
/// on the `nx x (ny+1)` horizontal faces.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField<T> {
    nx: usize,
    ny: usize,
    u1: Vec<T>,
    u2: Vec<T>,
}

impl<T: Real> VelocityField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        VelocityField {
            nx: grid.nx,
            ny: grid.ny,
            u1: vec![T::zero(); (grid.nx + 1) * grid.ny],
            u2: vec![T::zero(); grid.nx * (grid.ny + 1)],
        }
    }

    /// Samples the two components at their faces. Boundary-normal entries are
    /// set to zero whatever the functions return there.
    pub fn from_fn(grid: &Grid<T>, f1: impl Fn(T, T) -> T, f2: impl Fn(T, T) -> T) -> Self {
        Self::try_from_fn(grid, |x, y| Ok(f1(x, y)), |x, y| Ok(f2(x, y)))
            .expect("infallible sampling")
    }

    pub fn try_from_fn(
        grid: &Grid<T>,
        f1: impl Fn(T, T) -> std::result::Result<T, EvalError>,
        f2: impl Fn(T, T) -> std::result::Result<T, EvalError>,
    ) -> std::result::Result<Self, EvalError> {
        let mut out = Self::zeros(grid);
        let (nx, ny) = (grid.nx, grid.ny);
        for j in 0..ny {
            for i in 1..nx {
                let (x, y) = grid.u1_face(i, j);
                out.u1[j * (nx + 1) + i] = f1(x, y)?;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let (x, y) = grid.u2_face(i, j);
                out.u2[j * nx + i] = f2(x, y)?;
            }
        }
        Ok(out)
    }

    /// Velocity `(d psi/dy, -d psi/dx)` of a corner stream function. `psi` has
    /// `(nx+1) x (ny+1)` entries; its boundary values are ignored (taken as
    /// zero), which makes the result slip-normal and discretely solenoidal.
    pub fn from_stream_function(grid: &Grid<T>, psi: &[T]) -> Result<Self> {
        let (nx, ny) = (grid.nx, grid.ny);
        if psi.len() != (nx + 1) * (ny + 1) {
            return Err(BinghamError::DimensionMismatch {
                expected: format!("{} corner values", (nx + 1) * (ny + 1)),
                found: format!("{}", psi.len()),
            });
        }
        let at = |i: usize, j: usize| {
            if i == 0 || j == 0 || i == nx || j == ny {
                T::zero()
            } else {
                psi[j * (nx + 1) + i]
            }
        };
        let mut out = Self::zeros(grid);
        for j in 0..ny {
            for i in 1..nx {
                out.u1[j * (nx + 1) + i] = (at(i, j + 1) - at(i, j)) / grid.hy;
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                out.u2[j * nx + i] = -(at(i + 1, j) - at(i, j)) / grid.hx;
            }
        }
        Ok(out)
    }

    pub fn from_components(grid: &Grid<T>, u1: Vec<T>, u2: Vec<T>) -> Result<Self> {
        if u1.len() != (grid.nx + 1) * grid.ny || u2.len() != grid.nx * (grid.ny + 1) {
            return Err(BinghamError::DimensionMismatch {
                expected: format!(
                    "{} + {} face values",
                    (grid.nx + 1) * grid.ny,
                    grid.nx * (grid.ny + 1)
                ),
                found: format!("{} + {}", u1.len(), u2.len()),
            });
        }
        Ok(VelocityField {
            nx: grid.nx,
            ny: grid.ny,
            u1,
            u2,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    #[inline]
    pub fn u1(&self, i: usize, j: usize) -> T {
        self.u1[j * (self.nx + 1) + i]
    }
    #[inline]
    pub fn u2(&self, i: usize, j: usize) -> T {
        self.u2[j * self.nx + i]
    }
    #[inline]
    pub fn set_u1(&mut self, i: usize, j: usize, v: T) {
        self.u1[j * (self.nx + 1) + i] = v;
    }
    #[inline]
    pub fn set_u2(&mut self, i: usize, j: usize, v: T) {
        self.u2[j * self.nx + i] = v;
    }
    pub fn u1_values(&self) -> &[T] {
        &self.u1
    }
    pub fn u2_values(&self) -> &[T] {
        &self.u2
    }

    /// True when every boundary-normal entry is exactly zero.
    pub fn is_slip_normal(&self) -> bool {
        let (nx, ny) = (self.nx, self.ny);
        (0..ny).all(|j| self.u1(0, j) == T::zero() && self.u1(nx, j) == T::zero())
            && (0..nx).all(|i| self.u2(i, 0) == T::zero() && self.u2(i, ny) == T::zero())
    }

    /// Zeroes the boundary-normal entries.
    pub fn enforce_slip_normal(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            self.set_u1(0, j, T::zero());
            self.set_u1(nx, j, T::zero());
        }
        for i in 0..nx {
            self.set_u2(i, 0, T::zero());
            self.set_u2(i, ny, T::zero());
        }
    }

    pub fn scale(&mut self, a: T) {
        self.u1
            .iter_mut()
            .chain(self.u2.iter_mut())
            .for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: T) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: T, x: &Self) {
        for (s, &v) in self.u1.iter_mut().zip(&x.u1) {
            *s += a * v;
        }
        for (s, &v) in self.u2.iter_mut().zip(&x.u2) {
            *s += a * v;
        }
    }

    /// `a * x + b * y`
    pub fn lincomb(a: T, x: &Self, b: T, y: &Self) -> Self {
        let mut out = x.scaled(a);
        out.axpy(b, y);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::lincomb(T::one(), self, -T::one(), other)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::lincomb(T::one(), self, T::one(), other)
    }

    /// Elementwise product, used for diagonal preconditioning.
    pub(crate) fn hadamard(&self, other: &Self) -> Self {
        VelocityField {
            nx: self.nx,
            ny: self.ny,
            u1: self
                .u1
                .iter()
                .zip(&other.u1)
                .map(|(&a, &b)| a * b)
                .collect(),
            u2: self
                .u2
                .iter()
                .zip(&other.u2)
                .map(|(&a, &b)| a * b)
                .collect(),
        }
    }

    pub(crate) fn raw_dot(&self, other: &Self) -> T {
        let a: T = self.u1.iter().zip(&other.u1).map(|(&a, &b)| a * b).sum();
        let b: T = self.u2.iter().zip(&other.u2).map(|(&a, &b)| a * b).sum();
        a + b
    }

    pub fn all_finite(&self) -> bool {
        self.u1.iter().chain(&self.u2).all(|v| v.is_finite())
    }
}

/// Per-cell 2x2 matrices: `t[a][b]` holds component `(a+1, b+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCellField<T> {
    nx: usize,
    ny: usize,
    pub(crate) t11: Vec<T>,
    pub(crate) t12: Vec<T>,
    pub(crate) t21: Vec<T>,
    pub(crate) t22: Vec<T>,
}

impl<T: Real> TensorCellField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        let n = grid.n_cells();
        TensorCellField {
            nx: grid.nx,
            ny: grid.ny,
            t11: vec![T::zero(); n],
            t12: vec![T::zero(); n],
            t21: vec![T::zero(); n],
            t22: vec![T::zero(); n],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn n_cells(&self) -> usize {
        self.t11.len()
    }

    pub fn at(&self, i: usize, j: usize) -> [[T; 2]; 2] {
        self.at_index(j * self.nx + i)
    }

    pub fn at_index(&self, c: usize) -> [[T; 2]; 2] {
        [[self.t11[c], self.t12[c]], [self.t21[c], self.t22[c]]]
    }

    pub fn set_index(&mut self, c: usize, m: [[T; 2]; 2]) {
        self.t11[c] = m[0][0];
        self.t12[c] = m[0][1];
        self.t21[c] = m[1][0];
        self.t22[c] = m[1][1];
    }

    /// Squared Frobenius norm `|T_c|^2` of cell `c`.
    #[inline]
    pub fn norm_sq_at(&self, c: usize) -> T {
        self.t11[c] * self.t11[c]
            + self.t12[c] * self.t12[c]
            + self.t21[c] * self.t21[c]
            + self.t22[c] * self.t22[c]
    }

    /// Cellwise Frobenius norm as a scalar field.
    pub fn frobenius(&self) -> ScalarCellField<T> {
        ScalarCellField {
            nx: self.nx,
            ny: self.ny,
            values: (0..self.n_cells())
                .map(|c| self.norm_sq_at(c).sqrt())
                .collect(),
        }
    }

    pub fn trace(&self) -> ScalarCellField<T> {
        ScalarCellField {
            nx: self.nx,
            ny: self.ny,
            values: self
                .t11
                .iter()
                .zip(&self.t22)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn component(&self, a: usize, b: usize) -> ScalarCellField<T> {
        let v = match (a, b) {
            (0, 0) => &self.t11,
            (0, 1) => &self.t12,
            (1, 0) => &self.t21,
            (1, 1) => &self.t22,
            _ => panic!("tensor component ({a}, {b}) out of range"),
        };
        ScalarCellField {
            nx: self.nx,
            ny: self.ny,
            values: v.clone(),
        }
    }

    /// Multiplies every cell matrix by the matching cell scalar.
    pub fn scale_by(&mut self, s: &ScalarCellField<T>) {
        for c in 0..self.n_cells() {
            let w = s.values[c];
            self.t11[c] *= w;
            self.t12[c] *= w;
            self.t21[c] *= w;
            self.t22[c] *= w;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.t11
            .iter()
            .chain(&self.t12)
            .chain(&self.t21)
            .chain(&self.t22)
            .all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Discrete operators
// ---------------------------------------------------------------------------

#[inline]
fn up(k: usize, n: usize) -> usize {
    (k + 1).min(n - 1)
}

#[inline]
fn down(k: usize) -> usize {
    k.saturating_sub(1)
}

/// Velocity averaged to cell centers.
pub fn center_average<T: Real>(
    u: &VelocityField<T>,
    grid: &Grid<T>,
) -> Result<[ScalarCellField<T>; 2]> {
    grid.check(u.nx, u.ny)?;
    Ok(center_average_unchecked(u, grid))
}

pub(crate) fn center_average_unchecked<T: Real>(
    u: &VelocityField<T>,
    grid: &Grid<T>,
) -> [ScalarCellField<T>; 2] {
    let (nx, ny) = (grid.nx, grid.ny);
    let h = T::half();
    let mut c1 = Vec::with_capacity(nx * ny);
    let mut c2 = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            c1.push(h * (u.u1(i, j) + u.u1(i + 1, j)));
            c2.push(h * (u.u2(i, j) + u.u2(i, j + 1)));
        }
    }
    [
        ScalarCellField { nx, ny, values: c1 },
        ScalarCellField { nx, ny, values: c2 },
    ]
}

/// Transpose of [`center_average`]; boundary-normal entries are zeroed.
pub(crate) fn center_average_transpose<T: Real>(
    c: &[ScalarCellField<T>; 2],
    grid: &Grid<T>,
) -> VelocityField<T> {
    let (nx, ny) = (grid.nx, grid.ny);
    let h = T::half();
    let mut out = VelocityField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx {
            let a = h * c[0].values[j * nx + i];
            out.u1[j * (nx + 1) + i] += a;
            out.u1[j * (nx + 1) + i + 1] += a;
            let b = h * c[1].values[j * nx + i];
            out.u2[j * nx + i] += b;
            out.u2[(j + 1) * nx + i] += b;
        }
    }
    out.enforce_slip_normal();
    out
}

/// Cell-centered velocity gradient `(grad U)_{ab} = d u_a / d x_b`.
///
/// Normal derivatives of a component are exact face differences. Tangential
/// derivatives difference the center-averaged component over two cells; next
/// to a wall the ghost cell mirrors the interior one, so `d_n u_tau = 0`
/// there.
pub fn grad_tensor<T: Real>(u: &VelocityField<T>, grid: &Grid<T>) -> Result<TensorCellField<T>> {
    grid.check(u.nx, u.ny)?;
    let mut out = TensorCellField::zeros(grid);
    grad_tensor_into(u, grid, &mut out);
    Ok(out)
}

pub(crate) fn grad_tensor_into<T: Real>(
    u: &VelocityField<T>,
    grid: &Grid<T>,
    out: &mut TensorCellField<T>,
) {
    let (nx, ny) = (grid.nx, grid.ny);
    let [c1, c2] = center_average_unchecked(u, grid);
    let (inv_hx, inv_hy) = (grid.hx.recip(), grid.hy.recip());
    let (inv_2hx, inv_2hy) = (T::half() * inv_hx, T::half() * inv_hy);
    for j in 0..ny {
        let (jp, jm) = (up(j, ny), down(j));
        for i in 0..nx {
            let (ip, im) = (up(i, nx), down(i));
            let c = j * nx + i;
            out.t11[c] = (u.u1(i + 1, j) - u.u1(i, j)) * inv_hx;
            out.t22[c] = (u.u2(i, j + 1) - u.u2(i, j)) * inv_hy;
            out.t12[c] = (c1.values[jp * nx + i] - c1.values[jm * nx + i]) * inv_2hy;
            out.t21[c] = (c2.values[j * nx + ip] - c2.values[j * nx + im]) * inv_2hx;
        }
    }
}

/// Algebraic transpose of [`grad_tensor`]: for every slip-normal `V`,
/// `sum_c T_c : (grad V)_c = sum_faces out . V`. Boundary-normal entries of
/// the result are zero.
pub(crate) fn grad_tensor_transpose<T: Real>(
    t: &TensorCellField<T>,
    grid: &Grid<T>,
) -> VelocityField<T> {
    let (nx, ny) = (grid.nx, grid.ny);
    let (inv_hx, inv_hy) = (grid.hx.recip(), grid.hy.recip());
    let (inv_2hx, inv_2hy) = (T::half() * inv_hx, T::half() * inv_hy);
    let mut out = VelocityField::zeros(grid);
    let mut d1 = vec![T::zero(); nx * ny];
    let mut d2 = vec![T::zero(); nx * ny];
    for j in 0..ny {
        let (jp, jm) = (up(j, ny), down(j));
        for i in 0..nx {
            let (ip, im) = (up(i, nx), down(i));
            let c = j * nx + i;
            let a = t.t11[c] * inv_hx;
            out.u1[j * (nx + 1) + i + 1] += a;
            out.u1[j * (nx + 1) + i] -= a;
            let b = t.t22[c] * inv_hy;
            out.u2[(j + 1) * nx + i] += b;
            out.u2[j * nx + i] -= b;
            let s = t.t12[c] * inv_2hy;
            d1[jp * nx + i] += s;
            d1[jm * nx + i] -= s;
            let r = t.t21[c] * inv_2hx;
            d2[j * nx + ip] += r;
            d2[j * nx + im] -= r;
        }
    }
    let h = T::half();
    for j in 0..ny {
        for i in 0..nx {
            let a = h * d1[j * nx + i];
            out.u1[j * (nx + 1) + i] += a;
            out.u1[j * (nx + 1) + i + 1] += a;
            let b = h * d2[j * nx + i];
            out.u2[j * nx + i] += b;
            out.u2[(j + 1) * nx + i] += b;
        }
    }
    out.enforce_slip_normal();
    out
}

/// Diagonal of the face operator `V -> grad^T (w grad V)` for a nonnegative
/// cell weight `w`. Boundary-normal entries are set to one so the result can
/// be inverted directly.
pub(crate) fn weighted_operator_diagonal<T: Real>(
    w: &ScalarCellField<T>,
    grid: &Grid<T>,
) -> VelocityField<T> {
    let (nx, ny) = (grid.nx, grid.ny);
    let ix2 = (grid.hx * grid.hx).recip();
    let iy2 = (grid.hy * grid.hy).recip();
    // Each averaged entry enters a tangential difference with weight 1/2 * 1/(2h).
    let tx2 = ix2 / T::lit(16.0);
    let ty2 = iy2 / T::lit(16.0);
    let mut out = VelocityField::zeros(grid);
    for j in 0..ny {
        let (jp, jm) = (up(j, ny), down(j));
        for i in 0..nx {
            let (ip, im) = (up(i, nx), down(i));
            let a = w.values[j * nx + i];
            out.u1[j * (nx + 1) + i] += a * ix2;
            out.u1[j * (nx + 1) + i + 1] += a * ix2;
            out.u2[j * nx + i] += a * iy2;
            out.u2[(j + 1) * nx + i] += a * iy2;
            for jj in [jp, jm] {
                out.u1[jj * (nx + 1) + i] += a * ty2;
                out.u1[jj * (nx + 1) + i + 1] += a * ty2;
            }
            for ii in [ip, im] {
                out.u2[j * nx + ii] += a * tx2;
                out.u2[(j + 1) * nx + ii] += a * tx2;
            }
        }
    }
    for j in 0..ny {
        out.set_u1(0, j, T::one());
        out.set_u1(nx, j, T::one());
    }
    for i in 0..nx {
        out.set_u2(i, 0, T::one());
        out.set_u2(i, ny, T::one());
    }
    out
}

/// Discrete divergence per cell.
pub fn div_u<T: Real>(u: &VelocityField<T>, grid: &Grid<T>) -> Result<ScalarCellField<T>> {
    grid.check(u.nx, u.ny)?;
    Ok(div_u_unchecked(u, grid))
}

pub(crate) fn div_u_unchecked<T: Real>(u: &VelocityField<T>, grid: &Grid<T>) -> ScalarCellField<T> {
    let (nx, ny) = (grid.nx, grid.ny);
    let (inv_hx, inv_hy) = (grid.hx.recip(), grid.hy.recip());
    let mut values = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            values.push(
                (u.u1(i + 1, j) - u.u1(i, j)) * inv_hx + (u.u2(i, j + 1) - u.u2(i, j)) * inv_hy,
            );
        }
    }
    ScalarCellField { nx, ny, values }
}

/// Face gradient of a cell scalar; the negative adjoint of [`div_u`] on
/// slip-normal fields. Boundary-normal faces carry zero.
pub fn grad_p<T: Real>(p: &ScalarCellField<T>, grid: &Grid<T>) -> Result<VelocityField<T>> {
    grid.check(p.nx, p.ny)?;
    Ok(grad_p_unchecked(p, grid))
}

pub(crate) fn grad_p_unchecked<T: Real>(
    p: &ScalarCellField<T>,
    grid: &Grid<T>,
) -> VelocityField<T> {
    let (nx, ny) = (grid.nx, grid.ny);
    let (inv_hx, inv_hy) = (grid.hx.recip(), grid.hy.recip());
    let mut out = VelocityField::zeros(grid);
    for j in 0..ny {
        for i in 1..nx {
            out.u1[j * (nx + 1) + i] = (p.get(i, j) - p.get(i - 1, j)) * inv_hx;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            out.u2[j * nx + i] = (p.get(i, j) - p.get(i, j - 1)) * inv_hy;
        }
    }
    out
}

/// Cell-centered partial derivatives of a cell scalar: centered differences
/// inside, one-sided differences in the first and last cell of each line.
pub fn cell_gradient<T: Real>(
    s: &ScalarCellField<T>,
    grid: &Grid<T>,
) -> Result<[ScalarCellField<T>; 2]> {
    grid.check(s.nx, s.ny)?;
    Ok(cell_gradient_unchecked(&s.values, grid))
}

fn cell_gradient_unchecked<T: Real>(v: &[T], grid: &Grid<T>) -> [ScalarCellField<T>; 2] {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut dx = Vec::with_capacity(nx * ny);
    let mut dy = Vec::with_capacity(nx * ny);
    let d = |a: T, b: T, span: usize, h: T| (a - b) / (T::from_count(span) * h);
    for j in 0..ny {
        for i in 0..nx {
            let (ip, im) = (up(i, nx), down(i));
            let (jp, jm) = (up(j, ny), down(j));
            dx.push(d(v[j * nx + ip], v[j * nx + im], ip - im, grid.hx));
            dy.push(d(v[jp * nx + i], v[jm * nx + i], jp - jm, grid.hy));
        }
    }
    [
        ScalarCellField { nx, ny, values: dx },
        ScalarCellField { nx, ny, values: dy },
    ]
}

// ---------------------------------------------------------------------------
// Inner products and norms (cell midpoint rule, weight hx*hy per unknown)
// ---------------------------------------------------------------------------

pub fn inner_cell<T: Real>(a: &ScalarCellField<T>, b: &ScalarCellField<T>, grid: &Grid<T>) -> T {
    let s: T = a.values.iter().zip(&b.values).map(|(&x, &y)| x * y).sum();
    s * grid.cell_area()
}

pub fn inner_velocity<T: Real>(a: &VelocityField<T>, b: &VelocityField<T>, grid: &Grid<T>) -> T {
    a.raw_dot(b) * grid.cell_area()
}

pub fn inner_tensor<T: Real>(a: &TensorCellField<T>, b: &TensorCellField<T>, grid: &Grid<T>) -> T {
    let s: T = (0..a.n_cells())
        .map(|c| {
            a.t11[c] * b.t11[c] + a.t12[c] * b.t12[c] + a.t21[c] * b.t21[c] + a.t22[c] * b.t22[c]
        })
        .sum();
    s * grid.cell_area()
}

/// L2 and max norms shared by every field type.
pub trait FieldNorms<T: Real> {
    fn l2_norm(&self, grid: &Grid<T>) -> T;
    fn linf_norm(&self) -> T;
}

impl<T: Real> FieldNorms<T> for ScalarCellField<T> {
    fn l2_norm(&self, grid: &Grid<T>) -> T {
        inner_cell(self, self, grid).sqrt()
    }
    fn linf_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T: Real> FieldNorms<T> for VelocityField<T> {
    fn l2_norm(&self, grid: &Grid<T>) -> T {
        inner_velocity(self, self, grid).sqrt()
    }
    fn linf_norm(&self) -> T {
        self.u1
            .iter()
            .chain(&self.u2)
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T: Real> FieldNorms<T> for TensorCellField<T> {
    fn l2_norm(&self, grid: &Grid<T>) -> T {
        inner_tensor(self, self, grid).sqrt()
    }
    fn linf_norm(&self) -> T {
        self.t11
            .iter()
            .chain(&self.t12)
            .chain(&self.t21)
            .chain(&self.t22)
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// `(g, |grad U|)_h`; `g` must be nonnegative.
pub fn l1_weighted<T: Real>(
    g: &ScalarCellField<T>,
    u: &VelocityField<T>,
    grid: &Grid<T>,
) -> Result<T> {
    grid.check(g.nx, g.ny)?;
    if g.values.iter().any(|&w| w < T::zero()) {
        return Err(BinghamError::NegativeWeight);
    }
    let gu = grad_tensor(u, grid)?;
    let s: T = (0..gu.n_cells())
        .map(|c| g.values[c] * gu.norm_sq_at(c).sqrt())
        .sum();
    Ok(s * grid.cell_area())
}

/// Discrete `|U|_{H^1}` seminorm `||grad U||_h`.
pub fn h1_semi<T: Real>(u: &VelocityField<T>, grid: &Grid<T>) -> Result<T> {
    Ok(grad_tensor(u, grid)?.l2_norm(grid))
}

/// Full discrete `H^1` norm `sqrt(||U||^2 + ||grad U||^2)`.
pub fn v_norm<T: Real>(u: &VelocityField<T>, grid: &Grid<T>) -> Result<T> {
    let l2 = u.l2_norm(grid);
    let h1 = h1_semi(u, grid)?;
    Ok((l2 * l2 + h1 * h1).sqrt())
}

/// Discrete `H^2` seminorm: every gradient component is differenced again,
/// with one-sided stencils in the cells touching the boundary.
pub fn h2_semi<T: Real>(u: &VelocityField<T>, grid: &Grid<T>) -> Result<T> {
    let g = grad_tensor(u, grid)?;
    let mut total = T::zero();
    for comp in [&g.t11, &g.t12, &g.t21, &g.t22] {
        let [dx, dy] = cell_gradient_unchecked(comp, grid);
        total += inner_cell(&dx, &dx, grid) + inner_cell(&dy, &dy, grid);
    }
    Ok(total.sqrt())
}

/// Discrete `H^1` norm of a cell scalar, used for yield-stress data.
pub fn h1_norm_cell<T: Real>(s: &ScalarCellField<T>, grid: &Grid<T>) -> Result<T> {
    let [dx, dy] = cell_gradient(s, grid)?;
    let n = inner_cell(s, s, grid) + inner_cell(&dx, &dx, grid) + inner_cell(&dy, &dy, grid);
    Ok(n.sqrt())
}
