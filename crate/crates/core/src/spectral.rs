//! Periodic tensor-product grids, Fourier transforms and diagonal operators.
//!
//! Layout: fields are stored as flat row-major arrays (axis 0 slowest). The
//! spectral representation uses the full complex layout with one coefficient
//! per grid point, mode index `m_j` in `{-N_j/2, ..., N_j/2 - 1}` stored in the
//! usual FFT order. Wavenumbers are `k_j = 2*pi*m_j / L_j`.
//!
//! Normalization: the forward transform is unnormalized (the zero coefficient
//! equals the sum of the values) and the inverse divides by the point count.
//! With `N` points and cell volume `dV`, Parseval reads
//! `sum_x f g dV = (dV / N) * Re sum_k F conj(G)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

struct GridInner {
    n: Vec<usize>,
    lengths: Vec<f64>,
    k2: Vec<f64>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

/// Periodic grid on `[0, L_0) x ... x [0, L_{d-1})`. Cheap to clone.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.inner.n)
            .field("lengths", &self.inner.lengths)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n == other.inner.n && self.inner.lengths == other.inner.lengths)
    }
}

fn signed_mode(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl Grid {
    pub fn new(n: &[usize], lengths: &[f64]) -> Result<Self> {
        if n.is_empty() || n.len() > 3 {
            return Err(Error::Contract(format!(
                "grid dimension must be 1, 2 or 3 (got {})",
                n.len()
            )));
        }
        if n.len() != lengths.len() {
            return Err(Error::Contract(format!(
                "{} point counts but {} edge lengths",
                n.len(),
                lengths.len()
            )));
        }
        for (axis, &nj) in n.iter().enumerate() {
            if nj < 4 || nj % 2 != 0 {
                return Err(Error::Contract(format!(
                    "axis {axis}: point count {nj} must be even and >= 4"
                )));
            }
        }
        for (axis, &lj) in lengths.iter().enumerate() {
            if !(lj.is_finite() && lj > 0.0) {
                return Err(Error::Contract(format!(
                    "axis {axis}: edge length {lj} must be positive"
                )));
            }
        }

        let total: usize = n.iter().product();
        let mut k2 = vec![0.0; total];
        for (flat, slot) in k2.iter_mut().enumerate() {
            let mut rem = flat;
            let mut acc = 0.0;
            for axis in (0..n.len()).rev() {
                let i = rem % n[axis];
                rem /= n[axis];
                let k = 2.0 * PI * signed_mode(i, n[axis]) as f64 / lengths[axis];
                acc += k * k;
            }
            *slot = acc;
        }

        let mut planner = FftPlanner::new();
        let forward = n.iter().map(|&nj| planner.plan_fft_forward(nj)).collect();
        let inverse = n.iter().map(|&nj| planner.plan_fft_inverse(nj)).collect();

        Ok(Grid {
            inner: Arc::new(GridInner {
                n: n.to_vec(),
                lengths: lengths.to_vec(),
                k2,
                forward,
                inverse,
            }),
        })
    }

    /// Square grid with the same point count and edge length on every axis.
    pub fn uniform(dim: usize, n: usize, length: f64) -> Result<Self> {
        Grid::new(&vec![n; dim], &vec![length; dim])
    }

    pub fn dim(&self) -> usize {
        self.inner.n.len()
    }

    pub fn n(&self) -> &[usize] {
        &self.inner.n
    }

    pub fn lengths(&self) -> &[f64] {
        &self.inner.lengths
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.inner.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.inner
            .n
            .iter()
            .zip(&self.inner.lengths)
            .map(|(&n, &l)| l / n as f64)
            .product()
    }

    /// Measure of the domain, `|Omega|`.
    pub fn volume(&self) -> f64 {
        self.inner.lengths.iter().product()
    }

    /// Squared wavenumber `|k|^2` for every coefficient, in storage order.
    pub fn k2(&self) -> &[f64] {
        &self.inner.k2
    }

    /// Signed integer mode indices of the coefficient stored at `flat`.
    pub fn mode_index(&self, flat: usize) -> Vec<i64> {
        let n = &self.inner.n;
        let mut out = vec![0; n.len()];
        let mut rem = flat;
        for axis in (0..n.len()).rev() {
            out[axis] = signed_mode(rem % n[axis], n[axis]);
            rem /= n[axis];
        }
        out
    }

    /// Physical coordinates of grid point `flat`; unused axes are zero.
    pub fn point(&self, flat: usize) -> [f64; 3] {
        let n = &self.inner.n;
        let mut out = [0.0; 3];
        let mut rem = flat;
        for axis in (0..n.len()).rev() {
            let i = rem % n[axis];
            rem /= n[axis];
            out[axis] = i as f64 * self.inner.lengths[axis] / n[axis] as f64;
        }
        out
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "grid mismatch: {self:?} vs {other:?}"
            )))
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = &self.inner.n;
        let plans = if inverse {
            &self.inner.inverse
        } else {
            &self.inner.forward
        };
        let total = data.len();
        for axis in 0..n.len() {
            let len = n[axis];
            let stride: usize = n[axis + 1..].iter().product();
            let plan = &plans[axis];
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            // Gather the strided lines of one outer block, transform, scatter.
            let block = len * stride;
            let mut lines = vec![Complex64::default(); block];
            for start in (0..total).step_by(block) {
                let chunk = &mut data[start..start + block];
                for j in 0..len {
                    for i in 0..stride {
                        lines[i * len + j] = chunk[j * stride + i];
                    }
                }
                plan.process_with_scratch(&mut lines, &mut scratch);
                for j in 0..len {
                    for i in 0..stride {
                        chunk[j * stride + i] = lines[i * len + j];
                    }
                }
            }
        }
        if inverse {
            let scale = 1.0 / total as f64;
            data.iter_mut().for_each(|c| *c *= scale);
        }
    }
}

/// Real-valued field sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Contract(format!(
                "field has {} values but grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(RealField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        RealField {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every grid point (coordinates padded with zeros to 3D).
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        RealField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        RealField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &RealField, f: impl Fn(f64, f64) -> f64) -> RealField {
        debug_assert_eq!(self.grid, other.grid);
        RealField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &RealField, b: f64) -> RealField {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn scaled(&self, a: f64) -> RealField {
        self.map(|v| a * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sum of values times cell volume.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }
}

/// Complex Fourier coefficients of a field, full complex layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: &Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Contract(format!(
                "{} coefficients but grid has {} modes",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(SpectralField {
            grid: grid.clone(),
            coeffs,
        })
    }

    pub fn zeros(grid: &Grid) -> Self {
        SpectralField {
            grid: grid.clone(),
            coeffs: vec![Complex64::default(); grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Pointwise multiplication by `s(|k|^2)`.
    pub fn mul_symbol(&self, s: &FourierSymbol) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.grid.k2())
            .map(|(&c, &k2)| c * s.eval(k2))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Pointwise multiplication by an arbitrary real function of `|k|^2`.
    pub fn mul_fn(&self, s: impl Fn(f64) -> f64) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.grid.k2())
            .map(|(&c, &k2)| c * s(k2))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// `a * self + b * other`.
    pub fn lin_comb(&self, a: f64, other: &SpectralField, b: f64) -> SpectralField {
        debug_assert_eq!(self.grid, other.grid);
        SpectralField {
            grid: self.grid.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&x, &y)| x * a + y * b)
                .collect(),
        }
    }

    /// L2 inner product of the underlying physical fields (Parseval).
    pub fn inner(&self, other: &SpectralField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        s * self.grid.cell_volume() / self.grid.len() as f64
    }

    /// Squared L2 norm of `s(-Delta) f` without forming it.
    pub fn weighted_norm_sq(&self, s: impl Fn(f64) -> f64) -> f64 {
        let acc: f64 = self
            .coeffs
            .iter()
            .zip(self.grid.k2())
            .map(|(c, &k2)| {
                let w = s(k2);
                c.norm_sqr() * w * w
            })
            .sum();
        acc * self.grid.cell_volume() / self.grid.len() as f64
    }

    /// Squared H^{-1} norm, ignoring the zero mode.
    pub fn hm1_norm_sq(&self) -> f64 {
        let acc: f64 = self
            .coeffs
            .iter()
            .zip(self.grid.k2())
            .skip(1)
            .map(|(c, &k2)| c.norm_sqr() / k2)
            .sum();
        acc * self.grid.cell_volume() / self.grid.len() as f64
    }

    /// H^{-1} inner product, ignoring the zero mode.
    pub fn hm1_inner(&self, other: &SpectralField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let acc: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .zip(self.grid.k2())
            .skip(1)
            .map(|((a, b), &k2)| (a.re * b.re + a.im * b.im) / k2)
            .sum();
        acc * self.grid.cell_volume() / self.grid.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re / self.grid.len() as f64
    }
}

/// Real function of `|k|^2` representing a diagonal (Fourier-multiplier) operator.
#[derive(Clone)]
pub struct FourierSymbol {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for FourierSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FourierSymbol")
    }
}

impl FourierSymbol {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        FourierSymbol { eval: Arc::new(f) }
    }

    pub fn identity() -> Self {
        Self::new(|_| 1.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
    }

    /// Symbol of the Laplacian, `-|k|^2`.
    pub fn laplacian() -> Self {
        Self::new(|k2| -k2)
    }

    /// Symbol of `(Delta + 1)^2`, `(1 - |k|^2)^2`.
    pub fn shifted_bilaplacian() -> Self {
        Self::new(|k2| (1.0 - k2) * (1.0 - k2))
    }

    #[inline]
    pub fn eval(&self, k2: f64) -> f64 {
        (self.eval)(k2)
    }

    /// Checks that the symbol is strictly positive on every mode of `grid`,
    /// optionally skipping the zero mode.
    pub fn check_positive(&self, grid: &Grid, skip_zero_mode: bool) -> Result<()> {
        for (flat, &k2) in grid.k2().iter().enumerate() {
            if skip_zero_mode && flat == 0 {
                continue;
            }
            let v = self.eval(k2);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::SingularSymbol {
                    mode: grid.mode_index(flat),
                    value: v,
                });
            }
        }
        Ok(())
    }
}

/// How [`solve_symbol`] treats the zero mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroMode {
    /// The symbol must be positive on every mode.
    Include,
    /// The zero mode is excluded; the right side must be mean-zero and the
    /// solution is returned with zero mean.
    MeanZero,
}

pub fn to_spectral(f: &RealField) -> SpectralField {
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    f.grid.transform(&mut data, false);
    SpectralField {
        grid: f.grid.clone(),
        coeffs: data,
    }
}

pub fn to_physical(s: &SpectralField) -> RealField {
    let mut data = s.coeffs.clone();
    s.grid.transform(&mut data, true);
    RealField {
        grid: s.grid.clone(),
        values: data.into_iter().map(|c| c.re).collect(),
    }
}

pub fn apply_symbol(f: &RealField, s: &FourierSymbol) -> RealField {
    to_physical(&to_spectral(f).mul_symbol(s))
}

pub fn laplacian(f: &RealField) -> RealField {
    apply_symbol(f, &FourierSymbol::laplacian())
}

/// Default tolerance for the mean-zero precondition.
pub fn mean_tolerance(f: &RealField) -> f64 {
    1e-10 * f.max_abs().max(1.0)
}

fn check_mean_zero(f: &RealField) -> Result<()> {
    let m = mean(f);
    let tol = mean_tolerance(f);
    if m.abs() > tol {
        return Err(Error::MeanViolation { mean: m, tol });
    }
    Ok(())
}

/// Solves `Delta u = f` for mean-zero `u`.
pub fn inv_laplacian(f: &RealField) -> Result<RealField> {
    check_mean_zero(f)?;
    let mut hat = to_spectral(f);
    inv_laplacian_hat(&mut hat);
    Ok(to_physical(&hat))
}

/// In-place `Delta^{-1}` on coefficients, zero mode set to zero.
pub(crate) fn inv_laplacian_hat(hat: &mut SpectralField) {
    let grid = hat.grid.clone();
    hat.coeffs[0] = Complex64::default();
    for (c, &k2) in hat.coeffs.iter_mut().zip(grid.k2()).skip(1) {
        *c /= -k2;
    }
}

pub fn l2_inner(f: &RealField, g: &RealField) -> Result<f64> {
    f.grid.check_same(&g.grid)?;
    let s: f64 = f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum();
    Ok(s * f.grid.cell_volume())
}

pub fn l2_norm(f: &RealField) -> f64 {
    let s: f64 = f.values.iter().map(|a| a * a).sum();
    (s * f.grid.cell_volume()).sqrt()
}

pub fn mean(f: &RealField) -> f64 {
    f.values.iter().sum::<f64>() / f.values.len() as f64
}

/// `||f||_{-1} = ||grad Delta^{-1} f||` for mean-zero `f`.
pub fn hm1_norm(f: &RealField) -> Result<f64> {
    check_mean_zero(f)?;
    Ok(to_spectral(f).hm1_norm_sq().sqrt())
}

/// `(f, g)_{-1} = (-Delta^{-1} f, g)` for mean-zero fields.
pub fn hm1_inner(f: &RealField, g: &RealField) -> Result<f64> {
    f.grid.check_same(&g.grid)?;
    check_mean_zero(f)?;
    check_mean_zero(g)?;
    let a = to_spectral(f);
    let b = to_spectral(g);
    Ok(a.mul_fn(|k2| if k2 > 0.0 { 1.0 / k2 } else { 0.0 })
        .inner(&b))
}

/// Solves `s(-Delta) u = rhs` mode by mode.
pub fn solve_symbol(rhs: &RealField, s: &FourierSymbol, zero_mode: ZeroMode) -> Result<RealField> {
    let skip_zero = zero_mode == ZeroMode::MeanZero;
    s.check_positive(&rhs.grid, skip_zero)?;
    if skip_zero {
        check_mean_zero(rhs)?;
    }
    let hat = to_spectral(rhs);
    Ok(to_physical(&solve_symbol_hat(&hat, s, zero_mode)))
}

pub(crate) fn solve_symbol_hat(
    rhs: &SpectralField,
    s: &FourierSymbol,
    zero_mode: ZeroMode,
) -> SpectralField {
    let mut out = rhs.mul_fn(|k2| 1.0 / s.eval(k2));
    if zero_mode == ZeroMode::MeanZero {
        out.coeffs[0] = Complex64::default();
    }
    out
}
