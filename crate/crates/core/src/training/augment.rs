//! Year-wise augmentation: one parameter set is sampled per year per
//! iteration and applied identically to every image of that year, across
//! all regions in the batch. Images that share an augmentation still carry
//! different region labels, which pushes the model to ignore the
//! augmentation and bind same-region images across years instead.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Rgb8Image;

/// Sampling ranges for one augmentation draw. A zero range pins the
/// parameter to zero (identity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    /// Max |brightness| delta.
    pub brightness: f32,
    /// Max |contrast| delta.
    pub contrast: f32,
    /// Max |saturation| delta.
    pub saturation: f32,
    /// Max |hue| delta in turns.
    pub hue: f32,
    /// Rotation sampled from [-rotation_deg, rotation_deg).
    pub rotation_deg: f32,
    /// Max corner displacement as a fraction of the image side.
    pub perspective: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
            hue: 0.05,
            rotation_deg: 180.0,
            perspective: 0.10,
        }
    }
}

impl AugmentRanges {
    pub fn none() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            rotation_deg: 0.0,
            perspective: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.brightness == 0.0
            && self.contrast == 0.0
            && self.saturation == 0.0
            && self.hue == 0.0
            && self.rotation_deg == 0.0
            && self.perspective == 0.0
    }
}

/// One concrete augmentation: color jitter deltas, rotation angle, and the
/// four corner displacements (fractions of the side) for the perspective
/// warp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub rotation_deg: f32,
    pub corner_shift: [[f64; 2]; 4],
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            rotation_deg: 0.0,
            corner_shift: [[0.0; 2]; 4],
        }
    }

    pub fn sample(ranges: &AugmentRanges, rng: &mut impl Rng) -> Self {
        fn sym<R: Rng + ?Sized>(rng: &mut R, m: f32) -> f32 {
            if m == 0.0 {
                0.0
            } else {
                rng.gen_range(-m..m)
            }
        }
        let brightness = sym(rng, ranges.brightness);
        let contrast = sym(rng, ranges.contrast);
        let saturation = sym(rng, ranges.saturation);
        let hue = sym(rng, ranges.hue);
        let rotation_deg = sym(rng, ranges.rotation_deg);
        let mut corner_shift = [[0.0f64; 2]; 4];
        if ranges.perspective != 0.0 {
            for corner in corner_shift.iter_mut() {
                corner[0] = rng.gen_range(-ranges.perspective..ranges.perspective);
                corner[1] = rng.gen_range(-ranges.perspective..ranges.perspective);
            }
        }
        Self {
            brightness,
            contrast,
            saturation,
            hue,
            rotation_deg,
            corner_shift,
        }
    }

    /// Apply to one image: color jitter, then rotation, then perspective.
    pub fn apply(&self, img: &Rgb8Image) -> Rgb8Image {
        let jittered = img.color_jitter(self.brightness, self.contrast, self.saturation, self.hue);
        let rotated = jittered.rotate_bilinear(self.rotation_deg);
        if self.corner_shift == [[0.0; 2]; 4] {
            return rotated;
        }
        let w = rotated.width();
        let h = rotated.height();
        let side = (w.max(h) - 1) as f64;
        let base = [
            [0.0, 0.0],
            [(w - 1) as f64, 0.0],
            [(w - 1) as f64, (h - 1) as f64],
            [0.0, (h - 1) as f64],
        ];
        let mut corners = base;
        for (c, s) in corners.iter_mut().zip(&self.corner_shift) {
            c[0] += s[0] * side;
            c[1] += s[1] * side;
        }
        rotated.warp_perspective(corners, w, h)
    }
}

/// The per-year parameter sets for one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub per_year: BTreeMap<u16, AugmentParams>,
}

impl AugmentationPlan {
    /// Sample exactly one parameter set per configured year, in year order.
    pub fn sample(years: &[u16], ranges: &AugmentRanges, rng: &mut impl Rng) -> Result<Self> {
        if years.is_empty() {
            return Err(Error::invalid("no years configured"));
        }
        let mut per_year = BTreeMap::new();
        let mut ordered = years.to_vec();
        ordered.sort_unstable();
        for y in ordered {
            if per_year.contains_key(&y) {
                return Err(Error::invalid(format!("duplicate year {}", y)));
            }
            per_year.insert(y, AugmentParams::sample(ranges, rng));
        }
        Ok(Self { per_year })
    }

    pub fn params(&self, year: u16) -> Option<&AugmentParams> {
        self.per_year.get(&year)
    }
}

/// Apply year-wise augmentation to a batch of (year, image) pairs. Every
/// image of a given year receives the same parameters. Unknown year tags
/// are an error.
pub fn yearwise_augment(
    images: &[(u16, Rgb8Image)],
    years: &[u16],
    ranges: &AugmentRanges,
    rng: &mut impl Rng,
) -> Result<(Vec<Rgb8Image>, AugmentationPlan)> {
    let plan = AugmentationPlan::sample(years, ranges, rng)?;
    let mut out = Vec::with_capacity(images.len());
    for (year, img) in images {
        let params = plan.params(*year).ok_or_else(|| {
            Error::invalid(format!("image year {} is not in the configured year set", year))
        })?;
        out.push(params.apply(img));
    }
    Ok((out, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(seed: u64) -> Rgb8Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..16 * 16 * 3).map(|_| rng.gen()).collect();
        Rgb8Image::new(16, 16, data).unwrap()
    }

    #[test]
    fn same_year_images_get_identical_parameters() {
        let years = [2018u16, 2019, 2020, 2021];
        let batch = vec![
            (2020u16, img(1)),
            (2018, img(2)),
            (2020, img(3)),
            (2021, img(4)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, plan) = yearwise_augment(&batch, &years, &AugmentRanges::default(), &mut rng).unwrap();
        assert_eq!(plan.per_year.len(), 4);
        // applying the 2020 params twice to the same input is identical
        let p = plan.params(2020).unwrap();
        assert_eq!(p.apply(&batch[0].1), p.apply(&batch[0].1));
    }

    #[test]
    fn zero_ranges_are_identity() {
        let years = [2018u16, 2019];
        let batch = vec![(2018u16, img(1)), (2019, img(2))];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (out, plan) = yearwise_augment(&batch, &years, &AugmentRanges::none(), &mut rng).unwrap();
        assert_eq!(out[0], batch[0].1);
        assert_eq!(out[1], batch[1].1);
        for p in plan.per_year.values() {
            assert_eq!(*p, AugmentParams::identity());
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_plan() {
        let years = [2018u16, 2019, 2020, 2021];
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let a = AugmentationPlan::sample(&years, &AugmentRanges::default(), &mut r1).unwrap();
        let b = AugmentationPlan::sample(&years, &AugmentRanges::default(), &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_year_tag_is_rejected() {
        let years = [2018u16, 2019];
        let batch = vec![(2022u16, img(1))];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(yearwise_augment(&batch, &years, &AugmentRanges::default(), &mut rng).is_err());
    }

    #[test]
    fn augmented_image_differs_from_input() {
        let source = img(8);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = AugmentParams::sample(&AugmentRanges::default(), &mut rng);
        assert_ne!(p.apply(&source), source);
    }
}
