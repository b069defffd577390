use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use super::uniform;
use crate::encoder::PatchBatch;
use crate::rng::{normal, StreamKey};
use crate::{Error, Result, Tensor};

/// Class-conditional gratings: each class has its own orientation, spatial
/// frequency, phase and colour mix; examples add i.i.d. pixel noise.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        ImageSpec {
            num_classes: 10,
            per_class: 50,
            height: 16,
            width: 16,
            noise: 0.1,
            seed: 42,
        }
    }
}

/// Channel-major `3 × H × W` pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub label: usize,
}

#[derive(Debug)]
struct Grating {
    orientation: f64,
    frequency: f64,
    phase: f64,
    colour: [f64; 3],
}

/// Lazily generated images; only the class templates are precomputed, so a
/// source of any size costs O(classes) memory.
#[derive(Debug)]
pub struct ImageSource {
    spec: ImageSpec,
    classes: Vec<Grating>,
}

impl ImageSource {
    pub fn new(spec: ImageSpec) -> Result<Self> {
        if spec.num_classes == 0 || spec.height == 0 || spec.width == 0 {
            return Err(Error::Spec("image spec needs classes and a non-empty size".into()));
        }
        if !(spec.noise >= 0.0) {
            return Err(Error::Spec("image noise must be non-negative".into()));
        }
        let key = StreamKey::root(spec.seed).child("image-classes");
        let classes = (0..spec.num_classes)
            .map(|k| {
                let mut rng = key.at(k as u64).rng();
                Grating {
                    orientation: PI * k as f64 / spec.num_classes as f64,
                    frequency: 1.0 + (k % 3) as f64 + rng.gen::<f64>(),
                    phase: uniform(&mut rng, 0.0, 2.0 * PI),
                    colour: [rng.gen(), rng.gen(), rng.gen()],
                }
            })
            .collect();
        Ok(ImageSource { spec, classes })
    }

    pub fn spec(&self) -> &ImageSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.num_classes * self.spec.per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Example `i`; its class is `i / per_class`.
    pub fn get(&self, i: usize) -> Result<LabeledImage> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!("image {i} of {}", self.len())));
        }
        let (h, w) = (self.spec.height, self.spec.width);
        let label = i / self.spec.per_class;
        let g = &self.classes[label];
        let mut rng = StreamKey::root(self.spec.seed).child("image-noise").at(i as u64).rng();
        let (s, c) = (libm::sin(g.orientation), libm::cos(g.orientation));
        let mut pixels = Vec::with_capacity(3 * h * w);
        for ch in 0..3 {
            let amp = 0.15 + 0.3 * g.colour[ch];
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 / w as f64) * c + (y as f64 / h as f64) * s;
                    let base = 0.5 + amp * libm::cos(2.0 * PI * g.frequency * u + g.phase);
                    let v = base + self.spec.noise * normal(&mut rng);
                    pixels.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Ok(LabeledImage {
            height: h,
            width: w,
            pixels,
            label,
        })
    }
}

pub fn gen_images(spec: &ImageSpec) -> Result<Vec<LabeledImage>> {
    let source = ImageSource::new(spec.clone())?;
    (0..source.len()).map(|i| source.get(i)).collect()
}

impl PatchBatch {
    pub fn from_images(images: &[&LabeledImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for im in images {
            if (im.height, im.width) != (h, w) || im.pixels.len() != 3 * h * w {
                return Err(Error::InvalidShape("images in a batch differ in size".into()));
            }
            data.extend_from_slice(&im.pixels);
        }
        Ok(PatchBatch {
            pixels: Tensor::new(alloc::vec![images.len(), 3, h, w], data)?,
        })
    }
}

/// Random-resized crop, horizontal flip and brightness/contrast jitter.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentConfig {
    /// Crop area as a fraction of the image.
    pub crop_area: (f64, f64),
    pub aspect_ratio: (f64, f64),
    pub flip_prob: f64,
    /// Relative jitter: factors are drawn from `[1 - x, 1 + x]`.
    pub brightness: f64,
    pub contrast: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_area: (0.5, 1.0),
            aspect_ratio: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
            brightness: 0.2,
            contrast: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Leaves every image bit-identical.
    pub fn identity() -> Self {
        AugmentConfig {
            crop_area: (1.0, 1.0),
            aspect_ratio: (1.0, 1.0),
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a0, a1) = self.crop_area;
        let (r0, r1) = self.aspect_ratio;
        let ok = 0.0 < a0
            && a0 <= a1
            && a1 <= 1.0
            && 0.0 < r0
            && r0 <= r1
            && (0.0..=1.0).contains(&self.flip_prob)
            && (0.0..1.0).contains(&self.brightness)
            && (0.0..1.0).contains(&self.contrast);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation {self:?}")))
        }
    }
}

fn bilinear(plane: &[f64], w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (libm::floor(y) as usize, libm::floor(x) as usize);
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    if fy == 0.0 && fx == 0.0 {
        return plane[y0 * w + x0];
    }
    let h = plane.len() / w;
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// One augmented view; a pure function of `(image, config, seed)`.
pub fn augment_image(image: &LabeledImage, config: &AugmentConfig, seed: u64) -> Result<LabeledImage> {
    config.validate()?;
    let (h, w) = (image.height, image.width);
    let mut rng = StreamKey::root(seed).child("augment").rng();
    let area = uniform(&mut rng, config.crop_area.0, config.crop_area.1);
    let ratio = libm::exp(uniform(
        &mut rng,
        libm::log(config.aspect_ratio.0),
        libm::log(config.aspect_ratio.1),
    ));
    let cw = (libm::round(libm::sqrt(area * ratio) * w as f64) as usize).clamp(1, w);
    let ch = (libm::round(libm::sqrt(area / ratio) * h as f64) as usize).clamp(1, h);
    let x0 = rng.gen_range(0..=w - cw);
    let y0 = rng.gen_range(0..=h - ch);
    let flip = rng.gen::<f64>() < config.flip_prob;
    let bright = uniform(&mut rng, 1.0 - config.brightness, 1.0 + config.brightness);
    let contrast = uniform(&mut rng, 1.0 - config.contrast, 1.0 + config.contrast);

    let src = |i: usize, out: usize, start: usize, len: usize| {
        let s = start as f64 + (i as f64 + 0.5) * len as f64 / out as f64 - 0.5;
        s.clamp(start as f64, (start + len - 1) as f64)
    };
    let mut pixels = Vec::with_capacity(image.pixels.len());
    for plane in image.pixels.chunks(h * w) {
        for y in 0..h {
            let sy = src(y, h, y0, ch);
            for x in 0..w {
                let xx = if flip { w - 1 - x } else { x };
                pixels.push(bilinear(plane, w, sy, src(xx, w, x0, cw)));
            }
        }
    }
    if bright != 1.0 {
        pixels.iter_mut().for_each(|p| *p = (*p * bright).clamp(0.0, 1.0));
    }
    if contrast != 1.0 {
        let mean = pixels.iter().sum::<f64>() / pixels.len() as f64;
        pixels
            .iter_mut()
            .for_each(|p| *p = ((*p - mean) * contrast + mean).clamp(0.0, 1.0));
    }
    Ok(LabeledImage {
        height: h,
        width: w,
        pixels,
        label: image.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[test]
    fn deterministic_and_labelled() {
        let spec = ImageSpec::default();
        let a = gen_images(&spec).unwrap();
        assert_eq!(a, gen_images(&spec).unwrap());
        assert_eq!(a.len(), 500);
        assert_eq!(a[250].label, 5);
        assert!(a.iter().all(|im| im.pixels.iter().all(|p| (0.0..=1.0).contains(p))));
    }

    #[test]
    fn zero_noise_images_are_class_templates() {
        let spec = ImageSpec {
            noise: 0.0,
            ..ImageSpec::default()
        };
        let a = gen_images(&spec).unwrap();
        assert_eq!(a[0].pixels, a[49].pixels);
        assert_ne!(a[0].pixels, a[50].pixels);
    }

    #[test]
    fn classes_separate_in_pixel_space() {
        let spec = ImageSpec {
            per_class: 6,
            ..ImageSpec::default()
        };
        let images = gen_images(&spec).unwrap();
        let k = spec.num_classes;
        let mut within = alloc::vec![0.0; k];
        let mut cross = alloc::vec![alloc::vec![0.0; k]; k];
        let mut counts = alloc::vec![alloc::vec![0usize; k]; k];
        for a in &images {
            for b in &images {
                if core::ptr::eq(a, b) {
                    continue;
                }
                let d = dist2(&a.pixels, &b.pixels);
                cross[a.label][b.label] += d;
                counts[a.label][b.label] += 1;
            }
        }
        for c in 0..k {
            within[c] = cross[c][c] / counts[c][c] as f64;
        }
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    let m = cross[a][b] / counts[a][b] as f64;
                    assert!(within[a] < m && within[b] < m, "classes {a},{b}");
                }
            }
        }
    }

    #[test]
    fn full_scale_source_is_lazy() {
        let source = ImageSource::new(ImageSpec {
            num_classes: 60,
            per_class: 500,
            height: 224,
            width: 224,
            ..ImageSpec::default()
        })
        .unwrap();
        assert_eq!(source.len(), 30_000);
        let im = source.get(29_999).unwrap();
        assert_eq!((im.pixels.len(), im.label), (3 * 224 * 224, 59));
        assert!(source.get(30_000).is_err());
    }

    #[test]
    fn identity_augmentation_is_exact() {
        let im = &gen_images(&ImageSpec::default()).unwrap()[3];
        for seed in 0..5 {
            assert_eq!(&augment_image(im, &AugmentConfig::identity(), seed).unwrap(), im);
        }
    }

    #[test]
    fn augmentation_is_seeded() {
        let im = &gen_images(&ImageSpec::default()).unwrap()[3];
        let cfg = AugmentConfig::default();
        let a = augment_image(im, &cfg, 1).unwrap();
        assert_eq!(a, augment_image(im, &cfg, 1).unwrap());
        assert_ne!(a.pixels, augment_image(im, &cfg, 2).unwrap().pixels);
        assert_eq!(a.label, im.label);
        assert!(a.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn augmented_views_stay_closer_than_other_images() {
        let images = gen_images(&ImageSpec::default()).unwrap();
        let cfg = AugmentConfig::default();
        let (mut same, mut cross) = (0.0, 0.0);
        let n = 100;
        for i in 0..n {
            let a = &images[(i * 37) % images.len()];
            let b = &images[(i * 37 + 211) % images.len()];
            let va = augment_image(a, &cfg, 2 * i as u64).unwrap();
            let vb = augment_image(a, &cfg, 2 * i as u64 + 1).unwrap();
            let vc = augment_image(b, &cfg, 2 * i as u64 + 1).unwrap();
            same += dist2(&va.pixels, &vb.pixels);
            cross += dist2(&va.pixels, &vc.pixels);
        }
        assert!(same < cross, "{same} vs {cross}");
    }

    #[test]
    fn flip_only_mirrors_columns() {
        let im = &gen_images(&ImageSpec::default()).unwrap()[0];
        let cfg = AugmentConfig {
            flip_prob: 1.0,
            ..AugmentConfig::identity()
        };
        let f = augment_image(im, &cfg, 0).unwrap();
        let w = im.width;
        for (i, p) in f.pixels.iter().enumerate() {
            let (row, x) = (i / w, i % w);
            assert_eq!(*p, im.pixels[row * w + (w - 1 - x)]);
        }
    }

    #[test]
    fn batch_stacking() {
        let images = gen_images(&ImageSpec::default()).unwrap();
        let batch = PatchBatch::from_images(&[&images[0], &images[1]]).unwrap();
        assert_eq!(batch.pixels.shape(), &[2, 3, 16, 16]);
        assert!(PatchBatch::from_images(&[]).is_err());
    }
}
