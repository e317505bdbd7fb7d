use crate::raster::Raster;

use super::{dirichlet_loss, unique_argmax, DirichletParams, EvidentialError};

/// Per-pixel Dirichlet parameters with a shared class count, stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletRaster {
    width: usize,
    height: usize,
    classes: usize,
    alpha: Vec<f64>,
}

impl DirichletRaster {
    /// Raster with every pixel set to `α = 1` (no evidence).
    pub fn vacuous(width: usize, height: usize, classes: usize) -> Self {
        assert!(classes > 0);
        Self {
            width,
            height,
            classes,
            alpha: vec![1.0; width * height * classes],
        }
    }

    pub fn from_alpha(
        width: usize,
        height: usize,
        classes: usize,
        alpha: Vec<f64>,
    ) -> Result<Self, EvidentialError> {
        if classes == 0 {
            return Err(EvidentialError::NoClasses);
        }
        assert_eq!(
            alpha.len(),
            width * height * classes,
            "alpha length mismatch"
        );
        if let Some(&bad) = alpha.iter().find(|a| !(**a >= 1.0) || !a.is_finite()) {
            return Err(EvidentialError::InvalidAlpha(bad));
        }
        Ok(Self {
            width,
            height,
            classes,
            alpha,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn raw_alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.classes;
        &self.alpha[i..i + self.classes]
    }

    /// Sets one pixel; values below 1 are clamped to 1.
    pub fn set_pixel(&mut self, x: usize, y: usize, alpha: &[f64]) {
        assert_eq!(alpha.len(), self.classes);
        let i = (y * self.width + x) * self.classes;
        for (dst, &a) in self.alpha[i..i + self.classes].iter_mut().zip(alpha) {
            *dst = a.max(1.0);
        }
    }

    pub fn params(&self, x: usize, y: usize) -> DirichletParams {
        DirichletParams {
            alpha: self.pixel(x, y).to_vec(),
        }
    }

    pub fn uncertainty(&self) -> Raster<f64> {
        Raster::from_fn(self.width, self.height, |x, y| {
            super::uncertainty(self.pixel(x, y))
        })
    }

    /// Most probable class per pixel; `None` where the maximum is shared.
    pub fn argmax(&self) -> Raster<Option<usize>> {
        Raster::from_fn(self.width, self.height, |x, y| {
            unique_argmax(self.pixel(x, y))
        })
    }

    /// Expected probability of class `class` per pixel.
    pub fn class_probability(&self, class: usize) -> Raster<f64> {
        Raster::from_fn(self.width, self.height, |x, y| {
            let a = self.pixel(x, y);
            a[class] / a.iter().sum::<f64>()
        })
    }

    /// Largest expected class probability per pixel.
    pub fn confidence(&self) -> Raster<f64> {
        Raster::from_fn(self.width, self.height, |x, y| {
            let a = self.pixel(x, y);
            a.iter().cloned().fold(f64::MIN, f64::max) / a.iter().sum::<f64>()
        })
    }
}

/// Semantic loss summed over a labelled raster: `Σ L(ζ) + λ_s Σ L^KL`.
pub fn semantic_loss(
    raster: &DirichletRaster,
    labels: &Raster<usize>,
    lambda_s: f64,
) -> Result<f64, EvidentialError> {
    assert!(
        raster.width == labels.width() && raster.height == labels.height(),
        "label raster shape mismatch"
    );
    let mut total = 0.0;
    for (x, y, &label) in labels.iter_pixels() {
        total += dirichlet_loss(&raster.params(x, y), label, lambda_s)?;
    }
    Ok(total)
}
