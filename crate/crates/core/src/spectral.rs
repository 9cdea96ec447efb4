//! Orthonormal 2D DCT and frequency-domain diagnostics.
//!
//! The transform is the separable type-II DCT with orthonormal scaling, so
//! `idct2(dct2(x)) == x` and energy is preserved. Power spectra are reduced to
//! 1D curves by radial binning: each coefficient `(i, j)` gets the frequency
//! `√(f_i² + f_j²)` with `f_i = π·i/H`, `f_j = π·j/W`, and every bin reports
//! the mean power of the coefficients that fall inside it.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{invalid, Error, Result};
use crate::field::{FreqField, ImageField, Tiling};

/// Ratio reported for coefficients whose noise component is exactly zero.
pub const SNR_CAP: f64 = 1e12;

type Kernel = Arc<[f64]>;

fn kernel_cache() -> &'static RwLock<HashMap<usize, Kernel>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Kernel>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Row-major `n×n` orthonormal DCT-II matrix, `C[k][m] = a_k cos(π(m + ½)k/n)`.
pub fn dct_matrix(n: usize) -> Kernel {
    if let Some(k) = kernel_cache().read().expect("dct cache poisoned").get(&n) {
        return k.clone();
    }
    let mut m = vec![0.0; n * n];
    let nf = n as f64;
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        for x in 0..n {
            m[k * n + x] = scale * (PI * (x as f64 + 0.5) * k as f64 / nf).cos();
        }
    }
    let kernel: Kernel = m.into();
    kernel_cache()
        .write()
        .expect("dct cache poisoned")
        .entry(n)
        .or_insert(kernel)
        .clone()
}

/// Apply the `seg×seg` kernel (or its transpose) to every length-`seg` run of every row.
fn transform_rows(data: &[f64], h: usize, w: usize, seg: usize, inverse: bool) -> Vec<f64> {
    let c = dct_matrix(seg);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let row = &data[r * w..(r + 1) * w];
        let dst = &mut out[r * w..(r + 1) * w];
        for s in (0..w).step_by(seg) {
            let src = &row[s..s + seg];
            for k in 0..seg {
                let mut acc = 0.0;
                if inverse {
                    for (m, v) in src.iter().enumerate() {
                        acc += c[m * seg + k] * v;
                    }
                } else {
                    let ck = &c[k * seg..(k + 1) * seg];
                    for (a, v) in ck.iter().zip(src) {
                        acc += a * v;
                    }
                }
                dst[s + k] = acc;
            }
        }
    }
    out
}

fn transpose(data: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[j * h + i] = data[i * w + j];
        }
    }
    out
}

fn separable(data: &[f64], h: usize, w: usize, block: (usize, usize), inverse: bool) -> Vec<f64> {
    let rows = transform_rows(data, h, w, block.1, inverse);
    let t = transpose(&rows, h, w);
    let cols = transform_rows(&t, w, h, block.0, inverse);
    transpose(&cols, w, h)
}

/// Orthonormal type-II 2D DCT over the whole image.
pub fn dct2(img: &ImageField) -> Result<FreqField> {
    dct2_tiled(img, Tiling::Global)
}

/// Inverse of [`dct2`] (and of [`dct2_tiled`] for whatever tiling the input carries).
pub fn idct2(freq: &FreqField) -> Result<ImageField> {
    if freq.coeffs().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite DCT coefficient".into()));
    }
    let (h, w) = freq.shape();
    Ok(ImageField::from_raw(
        h,
        w,
        separable(freq.coeffs(), h, w, freq.block(), true),
    ))
}

/// DCT applied independently to each tile of `tiling`.
pub fn dct2_tiled(img: &ImageField, tiling: Tiling) -> Result<FreqField> {
    if !img.is_finite() {
        return Err(Error::InvalidData("non-finite pixel value".into()));
    }
    let (h, w) = img.shape();
    let block = tiling.block_dims(h, w)?;
    Ok(FreqField::from_raw(
        h,
        w,
        block,
        separable(img.values(), h, w, block, false),
    ))
}

/// One radial bin of a [`SpectrumCurve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumBin {
    pub center: f64,
    pub value: f64,
    /// Number of coefficients averaged into `value`; zero for empty bins.
    pub count: usize,
}

/// Radially binned 1D curve over `[0, π·√2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCurve {
    pub bins: Vec<SpectrumBin>,
    /// Coefficients whose ratio was replaced by [`SNR_CAP`]; always zero for PSD curves.
    pub capped: usize,
}

impl SpectrumCurve {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.center).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.value).collect()
    }

    /// Writes `freq,power` rows, one per bin. Empty bins report power 0.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "freq,power")?;
        for b in &self.bins {
            writeln!(out, "{:.12},{:.12e}", b.center, b.value)?;
        }
        Ok(())
    }

    /// Bin-wise mean over several curves with identical binning.
    pub fn average(curves: &[SpectrumCurve]) -> Result<SpectrumCurve> {
        let first = curves
            .first()
            .ok_or_else(|| invalid("curves", "cannot average an empty set"))?;
        let n = first.bins.len();
        let mut sums = vec![0.0; n];
        for c in curves {
            if c.bins.len() != n {
                return Err(invalid("curves", "bin counts differ"));
            }
            for (s, b) in sums.iter_mut().zip(&c.bins) {
                *s += b.value;
            }
        }
        let m = curves.len() as f64;
        Ok(SpectrumCurve {
            bins: first
                .bins
                .iter()
                .zip(sums)
                .map(|(b, s)| SpectrumBin {
                    center: b.center,
                    value: s / m,
                    count: b.count,
                })
                .collect(),
            capped: curves.iter().map(|c| c.capped).sum(),
        })
    }
}

/// Bin index of every coefficient of an `h×w` field with the given tile size.
pub fn radial_bin_index(h: usize, w: usize, block: (usize, usize), n_bins: usize) -> Vec<usize> {
    let width = PI * 2f64.sqrt() / n_bins as f64;
    let mut idx = Vec::with_capacity(h * w);
    for i in 0..h {
        let fi = PI * (i % block.0) as f64 / block.0 as f64;
        for j in 0..w {
            let fj = PI * (j % block.1) as f64 / block.1 as f64;
            let f = (fi * fi + fj * fj).sqrt();
            idx.push(((f / width) as usize).min(n_bins - 1));
        }
    }
    idx
}

fn bin_means(
    per_coeff: impl Iterator<Item = f64>,
    index: &[usize],
    n_bins: usize,
) -> Vec<SpectrumBin> {
    let width = PI * 2f64.sqrt() / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (v, &b) in per_coeff.zip(index) {
        sums[b] += v;
        counts[b] += 1;
    }
    (0..n_bins)
        .map(|b| SpectrumBin {
            center: (b as f64 + 0.5) * width,
            value: if counts[b] > 0 {
                sums[b] / counts[b] as f64
            } else {
                0.0
            },
            count: counts[b],
        })
        .collect()
}

/// Radially binned power spectral density (squared coefficients).
pub fn psd_curve(freq: &FreqField, n_bins: usize) -> Result<SpectrumCurve> {
    if n_bins == 0 {
        return Err(invalid("n_bins", "need at least one bin"));
    }
    let (h, w) = freq.shape();
    let index = radial_bin_index(h, w, freq.block(), n_bins);
    Ok(SpectrumCurve {
        bins: bin_means(freq.coeffs().iter().map(|c| c * c), &index, n_bins),
        capped: 0,
    })
}

/// Radially binned mean of `|signal / noise|` per coefficient.
pub fn snr_curve(signal: &FreqField, noise: &FreqField, n_bins: usize) -> Result<SpectrumCurve> {
    if n_bins == 0 {
        return Err(invalid("n_bins", "need at least one bin"));
    }
    signal.same_basis(noise)?;
    let (h, w) = signal.shape();
    let index = radial_bin_index(h, w, signal.block(), n_bins);
    let mut capped = 0;
    let ratios: Vec<f64> = signal
        .coeffs()
        .iter()
        .zip(noise.coeffs())
        .map(|(s, n)| {
            if *n == 0.0 {
                capped += 1;
                SNR_CAP
            } else {
                (s / n).abs()
            }
        })
        .collect();
    Ok(SpectrumCurve {
        bins: bin_means(ratios.into_iter(), &index, n_bins),
        capped,
    })
}

/// Nearest-neighbour upsampling: each pixel becomes a constant `factor×factor` block.
pub fn upsample_nearest(img: &ImageField, factor: usize) -> Result<ImageField> {
    if factor < 1 {
        return Err(invalid("factor", "upsampling factor must be at least 1"));
    }
    let (h, w) = img.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = img.get(i / factor, j / factor);
        }
    }
    Ok(ImageField::from_raw(oh, ow, out))
}

/// Block-mean downsampling, the left inverse of [`upsample_nearest`].
pub fn downsample_mean(img: &ImageField, factor: usize) -> Result<ImageField> {
    if factor < 1 {
        return Err(invalid("factor", "downsampling factor must be at least 1"));
    }
    let (h, w) = img.shape();
    if h % factor != 0 || w % factor != 0 {
        return Err(invalid(
            "factor",
            format!("factor {factor} does not divide {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0; oh * ow];
    for bi in 0..oh {
        for bj in 0..ow {
            // Mean as anchor plus mean deviation, so constant blocks come back bit-exact.
            let anchor = img.get(bi * factor, bj * factor);
            let mut dev = 0.0;
            for i in bi * factor..(bi + 1) * factor {
                for j in bj * factor..(bj + 1) * factor {
                    dev += img.get(i, j) - anchor;
                }
            }
            out[bi * ow + bj] = anchor + dev / norm;
        }
    }
    Ok(ImageField::from_raw(oh, ow, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(h: usize, w: usize, seed: u64) -> ImageField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageField::from_fn(h, w, |_, _| rng_value(&mut rng))
    }

    fn rng_value(rng: &mut ChaCha8Rng) -> f64 {
        rng.random_range(-1.0..1.0)
    }

    // Direct double-sum definition, independent of the separable kernel path.
    fn naive_dct2(img: &ImageField) -> Vec<f64> {
        let (h, w) = img.shape();
        let a = |k: usize, n: usize| {
            if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            }
        };
        let mut out = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let mut s = 0.0;
                for x in 0..h {
                    for y in 0..w {
                        s += img.get(x, y)
                            * (PI * (x as f64 + 0.5) * u as f64 / h as f64).cos()
                            * (PI * (y as f64 + 0.5) * v as f64 / w as f64).cos();
                    }
                }
                out[u * w + v] = a(u, h) * a(v, w) * s;
            }
        }
        out
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 0.37;
        let f = dct2(&ImageField::constant(4, 4, c)).unwrap();
        assert!((f.get(0, 0) - 4.0 * c).abs() < 1e-12);
        for (k, v) in f.coeffs().iter().enumerate().skip(1) {
            assert!(v.abs() < 1e-12, "coefficient {k} = {v}");
        }
    }

    #[test]
    fn single_pixel_is_identity() {
        let f = dct2(&ImageField::new(1, 1, vec![-0.8]).unwrap()).unwrap();
        assert_eq!(f.coeffs(), &[-0.8]);
    }

    #[test]
    fn dc_only_inverts_to_constant() {
        let mut coeffs = vec![0.0; 16];
        coeffs[0] = 4.0 * 0.25;
        let img = idct2(&FreqField::new(4, 4, coeffs).unwrap()).unwrap();
        assert!(img.values().iter().all(|v| (v - 0.25).abs() < 1e-12));
        let zero = idct2(&FreqField::new(4, 4, vec![0.0; 16]).unwrap()).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_direct_summation() {
        let img = random_field(5, 7, 3);
        let fast = dct2(&img).unwrap();
        let naive = naive_dct2(&img);
        for (a, b) in fast.coeffs().iter().zip(&naive) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_on_random_8x8() {
        let img = random_field(8, 8, 11);
        let direct: f64 = img.values().iter().map(|v| v * v).sum();
        let f = dct2(&img).unwrap();
        assert!((f.sum_sq() - direct).abs() / direct < 1e-10);
    }

    #[test]
    fn round_trip_16x16() {
        let img = random_field(16, 16, 5);
        let back = idct2(&dct2(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-10);
    }

    #[test]
    fn tiled_transform_equals_per_patch_transform() {
        let img = random_field(8, 12, 9);
        let tiled = dct2_tiled(&img, Tiling::Patch(4)).unwrap();
        for p in 0..2 {
            for q in 0..3 {
                let patch = ImageField::from_fn(4, 4, |i, j| img.get(4 * p + i, 4 * q + j));
                let local = dct2(&patch).unwrap();
                for a in 0..4 {
                    for b in 0..4 {
                        assert!((tiled.get(4 * p + a, 4 * q + b) - local.get(a, b)).abs() < 1e-12);
                    }
                }
            }
        }
        let back = idct2(&tiled).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut img = ImageField::zeros(2, 2);
        img.values_mut()[1] = f64::NAN;
        assert!(matches!(dct2(&img), Err(Error::InvalidData(_))));
    }

    #[test]
    fn dc_power_lands_in_first_bin() {
        let mut coeffs = vec![0.0; 64];
        coeffs[0] = 3.0;
        let curve = psd_curve(&FreqField::new(8, 8, coeffs).unwrap(), 10).unwrap();
        assert!((curve.bins[0].value * curve.bins[0].count as f64 - 9.0).abs() < 1e-12);
        assert!(curve.bins[1..].iter().all(|b| b.value == 0.0));
        let total: usize = curve.bins.iter().map(|b| b.count).sum();
        assert_eq!(total, 64);
        assert!(curve.centers().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn snr_of_identical_fields_is_one() {
        let f = dct2(&random_field(8, 8, 2)).unwrap();
        let curve = snr_curve(&f, &f, 6).unwrap();
        for b in curve.bins.iter().filter(|b| b.count > 0) {
            assert!((b.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn snr_caps_zero_noise() {
        let s = FreqField::new(1, 2, vec![1.0, 2.0]).unwrap();
        let n = FreqField::new(1, 2, vec![0.0, 1.0]).unwrap();
        let curve = snr_curve(&s, &n, 1).unwrap();
        assert_eq!(curve.capped, 1);
        assert!((curve.bins[0].value - (SNR_CAP + 2.0) / 2.0).abs() < 1.0);
        let other = FreqField::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(snr_curve(&s, &other, 1).is_err());
    }

    #[test]
    fn upsample_blocks() {
        let img = ImageField::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = upsample_nearest(&img, 2).unwrap();
        assert_eq!(
            up.values(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        assert_eq!(upsample_nearest(&img, 1).unwrap(), img);
        assert!(upsample_nearest(&img, 0).is_err());
        assert_eq!(downsample_mean(&up, 2).unwrap(), img);
    }

    #[test]
    fn csv_layout() {
        let curve = psd_curve(&FreqField::new(1, 1, vec![2.0]).unwrap(), 2).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "freq,power");
        assert_eq!(lines.len(), 3);
        assert!(text.ends_with('\n'));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_trip_and_parseval(h in 1usize..=64, w in 1usize..=64, seed in any::<u64>()) {
            let img = random_field(h, w, seed);
            let f = dct2(&img).unwrap();
            let energy = img.sum_sq();
            prop_assert!((f.sum_sq() - energy).abs() <= 1e-10 * energy.max(1e-300));
            let back = idct2(&f).unwrap();
            let scale = img.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            prop_assert!(back.max_abs_diff(&img) <= 1e-10 * scale);
        }

        #[test]
        fn linearity(h in 1usize..=24, w in 1usize..=24, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let x = random_field(h, w, seed);
            let y = random_field(h, w, seed.wrapping_add(1));
            let combo = x.scaled(a).add_scaled(&y, b).unwrap();
            let lhs = dct2(&combo).unwrap();
            let fx = dct2(&x).unwrap();
            let fy = dct2(&y).unwrap();
            for k in 0..h * w {
                let rhs = a * fx.coeffs()[k] + b * fy.coeffs()[k];
                prop_assert!((lhs.coeffs()[k] - rhs).abs() < 1e-10);
            }
        }

        #[test]
        fn upsampled_blocks_have_zero_variance(h in 1usize..6, w in 1usize..6, f in 1usize..5, seed in any::<u64>()) {
            let img = random_field(h, w, seed);
            let up = upsample_nearest(&img, f).unwrap();
            for bi in 0..h {
                for bj in 0..w {
                    let v0 = up.get(bi * f, bj * f);
                    for di in 0..f {
                        for dj in 0..f {
                            prop_assert_eq!(up.get(bi * f + di, bj * f + dj), v0);
                        }
                    }
                }
            }
            prop_assert_eq!(downsample_mean(&up, f).unwrap().max_abs_diff(&img), 0.0);
        }
    }
}
