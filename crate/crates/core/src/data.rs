//! Space-time problem data (forcing, yield stress, initial velocity) and its
//! sampling onto the staggered grid.

use std::fmt;
use std::sync::Arc;

use crate::error::{EvalError, Result};
use crate::grid::{Grid, ScalarCellField, VelocityField};
use crate::scalar::Real;

/// A scalar function of `(x, y, t)` that may fail to evaluate.
pub trait SpaceTimeFn<T>: Send + Sync {
    fn eval(&self, x: T, y: T, t: T) -> Result<T, EvalError>;

    /// `true` when the value never depends on `t`; lets samplers skip time
    /// quadrature.
    fn is_time_independent(&self) -> bool {
        false
    }
}

/// Spatially and temporally constant data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant<T>(pub T);

impl<T: Real> SpaceTimeFn<T> for Constant<T> {
    fn eval(&self, _: T, _: T, _: T) -> Result<T, EvalError> {
        Ok(self.0)
    }
    fn is_time_independent(&self) -> bool {
        true
    }
}

/// Wraps an infallible closure.
pub struct Closure<F> {
    f: F,
    time_independent: bool,
}

impl<F> Closure<F> {
    pub fn new(f: F) -> Self {
        Closure {
            f,
            time_independent: false,
        }
    }

    pub fn steady(f: F) -> Self {
        Closure {
            f,
            time_independent: true,
        }
    }
}

impl<T: Real, F: Fn(T, T, T) -> T + Send + Sync> SpaceTimeFn<T> for Closure<F> {
    fn eval(&self, x: T, y: T, t: T) -> Result<T, EvalError> {
        Ok((self.f)(x, y, t))
    }
    fn is_time_independent(&self) -> bool {
        self.time_independent
    }
}

/// Smooth compactly supported bump on `(a, b) x (a, b)` with peak value 1 at
/// the center; it vanishes with all derivatives on the square's edges.
pub fn bump<T: Real>(a: T, b: T, x: T, y: T) -> T {
    let one_d = |s: T| {
        let c = T::half() * (a + b);
        let r = T::half() * (b - a);
        if r <= T::zero() {
            return T::zero();
        }
        let z = (s - c) / r;
        let q = T::one() - z * z;
        if q <= T::zero() {
            T::zero()
        } else {
            (T::one() - q.recip()).exp()
        }
    };
    one_d(x) * one_d(y)
}

/// Cell-centered scalar data: either a frozen field or a function of
/// `(x, y, t)`.
#[derive(Clone)]
pub enum ScalarData<T> {
    Field(ScalarCellField<T>),
    Function(Arc<dyn SpaceTimeFn<T>>),
}

/// Face-sampled vector data.
#[derive(Clone)]
pub enum VectorData<T> {
    Field(VelocityField<T>),
    Function([Arc<dyn SpaceTimeFn<T>>; 2]),
}

impl<T> fmt::Debug for ScalarData<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarData::Field(_) => f.write_str("ScalarData::Field"),
            ScalarData::Function(_) => f.write_str("ScalarData::Function"),
        }
    }
}

impl<T> fmt::Debug for VectorData<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorData::Field(_) => f.write_str("VectorData::Field"),
            VectorData::Function(_) => f.write_str("VectorData::Function"),
        }
    }
}

// Gauss-Legendre 4-point rule on [-1, 1].
const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_8,
];

fn check_step<T: Real>(k: usize, h: T) -> Result<()> {
    if k == 0 {
        return Err(crate::BinghamError::invariant(
            "time step",
            "step index k must be >= 1",
        ));
    }
    if !(h > T::zero()) {
        return Err(crate::BinghamError::invariant(
            "time step",
            "h_N must be positive",
        ));
    }
    Ok(())
}

/// `(1/h) int_{(k-1)h}^{kh} f(x, y, s) ds` by the 4-point Gauss rule.
fn average_point<T: Real>(
    f: &dyn SpaceTimeFn<T>,
    x: T,
    y: T,
    k: usize,
    h: T,
) -> Result<T, EvalError> {
    if f.is_time_independent() {
        return f.eval(x, y, T::zero());
    }
    let mid = (T::from_count(k) - T::half()) * h;
    let mut s = T::zero();
    for (node, w) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
        s += T::lit(w) * f.eval(x, y, mid + T::half() * h * T::lit(*node))?;
    }
    Ok(T::half() * s)
}

impl<T: Real> ScalarData<T> {
    pub fn zero() -> Self {
        ScalarData::Function(Arc::new(Constant(T::zero())))
    }

    pub fn is_time_independent(&self) -> bool {
        match self {
            ScalarData::Field(_) => true,
            ScalarData::Function(f) => f.is_time_independent(),
        }
    }

    /// Point sample at time `t`.
    pub fn sample(&self, grid: &Grid<T>, t: T) -> Result<ScalarCellField<T>> {
        match self {
            ScalarData::Field(v) => {
                grid.check(v.nx(), v.ny())?;
                Ok(v.clone())
            }
            ScalarData::Function(f) => {
                Ok(ScalarCellField::try_from_fn(grid, |x, y| f.eval(x, y, t))?)
            }
        }
    }

    /// Time average over the `k`-th step `((k-1)h, kh)`.
    pub fn time_average(&self, grid: &Grid<T>, k: usize, h: T) -> Result<ScalarCellField<T>> {
        check_step(k, h)?;
        match self {
            ScalarData::Field(_) => self.sample(grid, T::zero()),
            ScalarData::Function(f) => Ok(ScalarCellField::try_from_fn(grid, |x, y| {
                average_point(f.as_ref(), x, y, k, h)
            })?),
        }
    }
}

impl<T: Real> VectorData<T> {
    pub fn zero() -> Self {
        let z: Arc<dyn SpaceTimeFn<T>> = Arc::new(Constant(T::zero()));
        VectorData::Function([z.clone(), z])
    }

    pub fn is_time_independent(&self) -> bool {
        match self {
            VectorData::Field(_) => true,
            VectorData::Function([a, b]) => a.is_time_independent() && b.is_time_independent(),
        }
    }

    /// Face samples at time `t`; boundary-normal entries are zero.
    pub fn sample(&self, grid: &Grid<T>, t: T) -> Result<VelocityField<T>> {
        match self {
            VectorData::Field(v) => {
                grid.check(v.nx(), v.ny())?;
                Ok(v.clone())
            }
            VectorData::Function([a, b]) => Ok(VelocityField::try_from_fn(
                grid,
                |x, y| a.eval(x, y, t),
                |x, y| b.eval(x, y, t),
            )?),
        }
    }

    pub fn time_average(&self, grid: &Grid<T>, k: usize, h: T) -> Result<VelocityField<T>> {
        check_step(k, h)?;
        match self {
            VectorData::Field(_) => self.sample(grid, T::zero()),
            VectorData::Function([a, b]) => Ok(VelocityField::try_from_fn(
                grid,
                |x, y| average_point(a.as_ref(), x, y, k, h),
                |x, y| average_point(b.as_ref(), x, y, k, h),
            )?),
        }
    }
}

/// Time average of scalar data over step `k` (see [`ScalarData::time_average`]).
pub fn time_average_data<T: Real>(
    data: &ScalarData<T>,
    grid: &Grid<T>,
    k: usize,
    h: T,
) -> Result<ScalarCellField<T>> {
    data.time_average(grid, k, h)
}
