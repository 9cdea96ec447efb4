//! Corpus-level proxy quality metrics.
//!
//! These moment and spectrum comparisons stand in for perceptual scores,
//! which need a pretrained feature network and are out of reach here.

use crate::error::{invalid, Result};
use crate::field::{ImageField, Tiling};
use crate::spectral::{dct2, dct2_tiled, psd_curve};

/// Comparison of a generated corpus against a reference corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    /// Mean over populated radial bins of `|ln PSD_gen − ln PSD_ref|`.
    pub spectral_distance: f64,
    /// Root mean square over pixels of the difference of per-pixel means.
    pub mean_error: f64,
    /// Mean over pixels of `|var_gen − var_ref|`, relative to the mean reference variance.
    pub var_error: f64,
    /// Generated images per class label, when labels were supplied.
    pub class_counts: Vec<usize>,
}

/// Per-pixel mean and (unbiased) variance of a corpus.
pub fn pixel_moments(corpus: &[ImageField]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = corpus
        .first()
        .ok_or_else(|| invalid("corpus", "empty corpus"))?;
    let n = first.len();
    let mut mean = vec![0.0; n];
    for img in corpus {
        first.ensure_same_shape(img)?;
        mean.iter_mut().zip(img.values()).for_each(|(m, v)| *m += v);
    }
    let m = corpus.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; n];
    for img in corpus {
        var.iter_mut()
            .zip(img.values().iter().zip(&mean))
            .for_each(|(s, (v, mu))| *s += (v - mu) * (v - mu));
    }
    let denom = (m - 1.0).max(1.0);
    var.iter_mut().for_each(|v| *v /= denom);
    Ok((mean, var))
}

/// Per-coefficient mean and variance of a corpus in a (tiled) DCT basis.
pub fn coefficient_moments(corpus: &[ImageField], tiling: Tiling) -> Result<(Vec<f64>, Vec<f64>)> {
    let coeffs = corpus
        .iter()
        .map(|img| {
            let (h, w) = img.shape();
            let u = dct2_tiled(img, tiling)?;
            ImageField::new(h, w, u.into_coeffs())
        })
        .collect::<Result<Vec<_>>>()?;
    pixel_moments(&coeffs)
}

/// Mean radially binned power spectrum of a corpus (global DCT).
pub fn corpus_psd(corpus: &[ImageField], n_bins: usize) -> Result<Vec<(f64, usize)>> {
    let first = corpus
        .first()
        .ok_or_else(|| invalid("corpus", "empty corpus"))?;
    let mut acc = vec![(0.0, 0usize); n_bins];
    for img in corpus {
        first.ensure_same_shape(img)?;
        let curve = psd_curve(&dct2(img)?, n_bins)?;
        for (a, b) in acc.iter_mut().zip(&curve.bins) {
            a.0 += b.value;
            a.1 = b.count;
        }
    }
    let m = corpus.len() as f64;
    Ok(acc.into_iter().map(|(v, c)| (v / m, c)).collect())
}

/// Default bin count: half the smaller image side.
pub fn default_bins(h: usize, w: usize) -> usize {
    (h.min(w) / 2).max(1)
}

impl QualityReport {
    /// Compares `generated` with `reference`; `labels` (one per generated
    /// image) are tallied into `class_counts` over `classes` classes.
    pub fn compare(
        generated: &[ImageField],
        reference: &[ImageField],
        n_bins: usize,
        labels: Option<(&[Option<usize>], usize)>,
    ) -> Result<Self> {
        let (g0, r0) = (
            generated
                .first()
                .ok_or_else(|| invalid("generated", "empty corpus"))?,
            reference
                .first()
                .ok_or_else(|| invalid("reference", "empty corpus"))?,
        );
        g0.ensure_same_shape(r0)?;
        let pg = corpus_psd(generated, n_bins)?;
        let pr = corpus_psd(reference, n_bins)?;
        let mut gaps = Vec::new();
        for ((g, count), (r, _)) in pg.iter().zip(&pr) {
            if *count == 0 {
                continue;
            }
            let floor = f64::MIN_POSITIVE;
            gaps.push((g.max(floor).ln() - r.max(floor).ln()).abs());
        }
        let spectral_distance = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;

        let (mg, vg) = pixel_moments(generated)?;
        let (mr, vr) = pixel_moments(reference)?;
        let n = mg.len() as f64;
        let mean_error = (mg
            .iter()
            .zip(&mr)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
            .sqrt();
        let abs_gap = vg.iter().zip(&vr).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        let scale = vr.iter().sum::<f64>() / n;
        let var_error = if scale > 0.0 {
            abs_gap / scale
        } else {
            abs_gap
        };

        let class_counts = match labels {
            None => Vec::new(),
            Some((labels, classes)) => {
                let mut counts = vec![0; classes];
                for l in labels.iter().flatten() {
                    if *l >= classes {
                        return Err(invalid("label", format!("class {l} out of range")));
                    }
                    counts[*l] += 1;
                }
                counts
            }
        };
        Ok(Self {
            spectral_distance,
            mean_error,
            var_error,
            class_counts,
        })
    }
}
