//! Pixel-domain and frequency-domain grids.
//!
//! Both grids are row-major. A [`FreqField`] remembers the tiling of the
//! transform that produced it: a global DCT uses a single tile covering the
//! whole image, a patch-wise DCT uses `k×k` tiles whose coefficients are laid
//! out in place of the patch pixels.

use crate::error::{invalid, Error, Result};

/// Partition of an image into independently transformed tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tiling {
    /// One tile spanning the full image.
    Global,
    /// Square `k×k` tiles; `k` must divide both image dimensions.
    Patch(usize),
}

impl Tiling {
    /// Tile height and width for an `h×w` image.
    pub fn block_dims(self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self {
            Tiling::Global => Ok((h, w)),
            Tiling::Patch(k) => {
                if k == 0 {
                    return Err(invalid("patch", "patch size must be positive"));
                }
                if !h.is_multiple_of(k) || !w.is_multiple_of(k) {
                    return Err(invalid(
                        "patch",
                        format!("patch size {k} does not divide {h}x{w}"),
                    ));
                }
                Ok((k, k))
            }
        }
    }
}

impl std::fmt::Display for Tiling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tiling::Global => write!(f, "global"),
            Tiling::Patch(k) => write!(f, "{k}"),
        }
    }
}

impl std::str::FromStr for Tiling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("global") {
            return Ok(Tiling::Global);
        }
        let k: usize = s.parse().map_err(|_| {
            invalid(
                "patch",
                format!("expected `global` or an integer, got `{s}`"),
            )
        })?;
        if k == 0 {
            return Err(invalid("patch", "patch size must be positive"));
        }
        Ok(Tiling::Patch(k))
    }
}

/// Real-valued `height×width` grid in pixel space.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(height, width, values.len())?;
        check_finite(&values)?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "field dimensions must be positive");
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        let mut f = Self::zeros(height, width);
        f.values.fill(value);
        f
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(height, width);
        for i in 0..height {
            for j in 0..width {
                out.values[i * width + j] = f(i, j);
            }
        }
        out
    }

    /// Internal constructor for buffers produced by this crate's own arithmetic.
    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
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

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &ImageField) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> ImageField {
        ImageField::from_raw(
            self.height,
            self.width,
            self.values.iter().map(|v| a * v).collect(),
        )
    }

    /// `self + a·other`.
    pub fn add_scaled(&self, other: &ImageField, a: f64) -> Result<ImageField> {
        self.ensure_same_shape(other)?;
        Ok(ImageField::from_raw(
            self.height,
            self.width,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        ))
    }

    pub fn sum_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &ImageField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// DCT coefficients paired with an [`ImageField`] of the same shape.
///
/// Coefficient `(i, j)` lives at index `i·W + j`. For patch tilings the
/// coefficient of local frequency `(a, b)` in patch `(p, q)` sits at
/// `(p·bh + a, q·bw + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqField {
    height: usize,
    width: usize,
    block: (usize, usize),
    coeffs: Vec<f64>,
}

impl FreqField {
    /// Globally transformed coefficients.
    pub fn new(height: usize, width: usize, coeffs: Vec<f64>) -> Result<Self> {
        Self::with_tiling(height, width, Tiling::Global, coeffs)
    }

    pub fn with_tiling(
        height: usize,
        width: usize,
        tiling: Tiling,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        check_shape(height, width, coeffs.len())?;
        check_finite(&coeffs)?;
        let block = tiling.block_dims(height, width)?;
        Ok(Self {
            height,
            width,
            block,
            coeffs,
        })
    }

    pub fn zeros(height: usize, width: usize, tiling: Tiling) -> Result<Self> {
        Self::with_tiling(height, width, tiling, vec![0.0; height * width])
    }

    pub(crate) fn from_raw(
        height: usize,
        width: usize,
        block: (usize, usize),
        coeffs: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(coeffs.len(), height * width);
        Self {
            height,
            width,
            block,
            coeffs,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Tile dimensions of the transform basis.
    pub fn block(&self) -> (usize, usize) {
        self.block
    }

    pub fn tiling(&self) -> Tiling {
        if self.block == (self.height, self.width) {
            Tiling::Global
        } else {
            Tiling::Patch(self.block.0)
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coeffs[i * self.width + j]
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Local frequency index of coefficient `(i, j)` within its tile.
    pub fn local_index(&self, i: usize, j: usize) -> (usize, usize) {
        (i % self.block.0, j % self.block.1)
    }

    /// Frequency pair of coefficient `(i, j)`, each axis mapped onto `[0, π)`.
    pub fn frequency(&self, i: usize, j: usize) -> (f64, f64) {
        let (a, b) = self.local_index(i, j);
        (
            std::f64::consts::PI * a as f64 / self.block.0 as f64,
            std::f64::consts::PI * b as f64 / self.block.1 as f64,
        )
    }

    /// Whether coefficient `(i, j)` is the DC term of its tile.
    pub fn is_dc(&self, i: usize, j: usize) -> bool {
        self.local_index(i, j) == (0, 0)
    }

    pub fn same_basis(&self, other: &FreqField) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        if self.block != other.block {
            return Err(invalid(
                "tiling",
                format!("basis tiles differ: {:?} vs {:?}", self.block, other.block),
            ));
        }
        Ok(())
    }

    pub fn sum_sq(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum()
    }
}

fn check_shape(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidData(format!(
            "field dimensions must be positive, got {height}x{width}"
        )));
    }
    if len != height * width {
        return Err(Error::InvalidData(format!(
            "expected {} values for a {height}x{width} field, got {len}",
            height * width
        )));
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!(
            "non-finite value {} at index {pos}",
            values[pos]
        )));
    }
    Ok(())
}
