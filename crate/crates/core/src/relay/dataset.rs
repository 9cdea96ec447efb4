//! Synthetic and file-backed training corpora.

use rand::Rng;

use crate::denoiser::GaussianToyPrior;
use crate::error::{invalid, Result};
use crate::field::ImageField;

/// Cell sizes of [`ToyDataset::Checkerboard`]; the index is the class label.
pub const CHECKER_CELLS: [usize; 3] = [1, 2, 4];

/// Source of training and reference images.
#[derive(Debug, Clone)]
pub enum ToyDataset {
    /// Exact draws from a Gaussian prior.
    GaussianField(GaussianToyPrior),
    /// `size×size` checkerboards. Each draw picks a cell size from
    /// [`CHECKER_CELLS`] (its class), a random phase in both axes, a random
    /// sign and a contrast uniform in `[min_contrast, 1]`.
    Checkerboard { size: usize, min_contrast: f64 },
    /// Uniform draws (with replacement) from a fixed list of images.
    Corpus(Vec<ImageField>),
}

impl ToyDataset {
    pub fn checkerboard(size: usize) -> Self {
        ToyDataset::Checkerboard {
            size,
            min_contrast: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ToyDataset::GaussianField(_) => Ok(()),
            ToyDataset::Checkerboard { size, min_contrast } => {
                if *size == 0 {
                    return Err(invalid("size", "checkerboard size must be positive"));
                }
                if !(0.0..=1.0).contains(min_contrast) {
                    return Err(invalid("min_contrast", "must lie in [0, 1]"));
                }
                Ok(())
            }
            ToyDataset::Corpus(images) => {
                let first = images
                    .first()
                    .ok_or_else(|| invalid("corpus", "no images"))?;
                for img in images {
                    first.ensure_same_shape(img)?;
                }
                Ok(())
            }
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            ToyDataset::GaussianField(p) => p.shape(),
            ToyDataset::Checkerboard { size, .. } => (*size, *size),
            ToyDataset::Corpus(images) => images.first().map(|i| i.shape()).unwrap_or((0, 0)),
        }
    }

    /// Number of class labels the dataset emits (0 for unlabelled data).
    pub fn classes(&self) -> usize {
        match self {
            ToyDataset::Checkerboard { .. } => CHECKER_CELLS.len(),
            _ => 0,
        }
    }

    /// One image and its class label, if any.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(ImageField, Option<usize>)> {
        match self {
            ToyDataset::GaussianField(p) => Ok((p.sample(rng)?, None)),
            ToyDataset::Checkerboard { .. } => {
                let class = rng.random_range(0..CHECKER_CELLS.len());
                Ok((self.checkerboard_of_class(class, rng)?, Some(class)))
            }
            ToyDataset::Corpus(images) => {
                if images.is_empty() {
                    return Err(invalid("corpus", "no images"));
                }
                Ok((images[rng.random_range(0..images.len())].clone(), None))
            }
        }
    }

    /// A checkerboard with the cell size of `class`.
    pub fn checkerboard_of_class<R: Rng + ?Sized>(
        &self,
        class: usize,
        rng: &mut R,
    ) -> Result<ImageField> {
        let ToyDataset::Checkerboard { size, min_contrast } = *self else {
            return Err(invalid("dataset", "not a checkerboard dataset"));
        };
        let cell = *CHECKER_CELLS
            .get(class)
            .ok_or_else(|| invalid("label", format!("class {class} out of range")))?;
        let (py, px) = (rng.random_range(0..2 * cell), rng.random_range(0..2 * cell));
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let contrast = min_contrast + (1.0 - min_contrast) * rng.random::<f64>();
        Ok(ImageField::from_fn(size, size, |i, j| {
            let parity = ((i + py) / cell + (j + px) / cell) % 2;
            sign * contrast * if parity == 0 { 1.0 } else { -1.0 }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Tiling;
    use crate::rng::RandomSource;
    use crate::spectral::dct2;

    #[test]
    fn checkerboards_have_their_cell_size() {
        let ds = ToyDataset::checkerboard(8);
        let mut rng = RandomSource::new(1).stream(0);
        for _ in 0..50 {
            let (img, label) = ds.sample(&mut rng).unwrap();
            let cell = CHECKER_CELLS[label.unwrap()];
            let a = img.get(0, 0).abs();
            assert!((0.5..=1.0).contains(&a));
            assert!(img.values().iter().all(|v| (v.abs() - a).abs() < 1e-15));
            // Moving a full cell flips the sign; any row holds both signs.
            let flips = (0..7)
                .filter(|&j| img.get(0, j) != img.get(0, j + 1))
                .count();
            assert!(flips >= 8 / cell - 1 && flips <= 8 / cell);
        }
    }

    #[test]
    fn gaussian_field_matches_configured_variance() {
        let prior = GaussianToyPrior::power_law(4, 4, Tiling::Global, 0.3, 1.0, 0.5).unwrap();
        let ds = ToyDataset::GaussianField(prior.clone());
        let mut rng = RandomSource::new(2).stream(0);
        let n = 20_000;
        let mut acc = [0.0; 16];
        for _ in 0..n {
            let u = dct2(&ds.sample(&mut rng).unwrap().0).unwrap();
            acc.iter_mut()
                .zip(u.coeffs())
                .for_each(|(a, c)| *a += c * c);
        }
        for (a, c) in acc.iter().zip(prior.var()) {
            // Sample variance has relative SE √(2/n) ≈ 1%.
            assert!((a / n as f64 / c - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn corpus_validation() {
        assert!(ToyDataset::Corpus(vec![]).validate().is_err());
        let bad = ToyDataset::Corpus(vec![ImageField::zeros(2, 2), ImageField::zeros(3, 2)]);
        assert!(bad.validate().is_err());
        let ok = ToyDataset::Corpus(vec![ImageField::constant(2, 2, 0.5)]);
        assert_eq!(
            ok.sample(&mut RandomSource::new(0).stream(0)).unwrap().0,
            ImageField::constant(2, 2, 0.5)
        );
    }
}
