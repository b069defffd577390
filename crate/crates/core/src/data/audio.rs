use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use super::uniform;
use crate::encoder::SpectrogramBatch;
use crate::rng::{normal, StreamKey};
use crate::{Error, Result, Tensor};

/// Class-conditional harmonic stacks: a fundamental bin, decaying overtones
/// and a slow amplitude modulation, all chosen per class.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AudioSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub bins: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for AudioSpec {
    fn default() -> Self {
        AudioSpec {
            num_classes: 10,
            per_class: 30,
            frames: 32,
            bins: 8,
            noise: 0.05,
            seed: 42,
        }
    }
}

/// Row-major `T × F` mel-like magnitudes (non-negative).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledClip {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
    pub label: usize,
}

#[derive(Debug)]
struct Stack {
    fundamental: f64,
    decay: f64,
    rate: f64,
    phase: f64,
}

#[derive(Debug)]
pub struct AudioSource {
    spec: AudioSpec,
    classes: Vec<Stack>,
}

impl AudioSource {
    pub fn new(spec: AudioSpec) -> Result<Self> {
        if spec.num_classes == 0 || spec.frames == 0 || spec.bins == 0 {
            return Err(Error::Spec("audio spec needs classes and a non-empty grid".into()));
        }
        if !(spec.noise >= 0.0) {
            return Err(Error::Spec("audio noise must be non-negative".into()));
        }
        let key = StreamKey::root(spec.seed).child("audio-classes");
        let k = spec.num_classes as f64;
        let classes = (0..spec.num_classes)
            .map(|c| {
                let mut rng = key.at(c as u64).rng();
                Stack {
                    // Spread fundamentals over the lower half of the band.
                    fundamental: 0.5 + (c as f64 + 0.5) / k * spec.bins as f64 / 2.0,
                    decay: uniform(&mut rng, 0.4, 0.8),
                    rate: 1.0 + (c % 4) as f64 + rng.gen::<f64>(),
                    phase: uniform(&mut rng, 0.0, 2.0 * PI),
                }
            })
            .collect();
        Ok(AudioSource { spec, classes })
    }

    pub fn len(&self) -> usize {
        self.spec.num_classes * self.spec.per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<LabeledClip> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!("clip {i} of {}", self.len())));
        }
        let (t, f) = (self.spec.frames, self.spec.bins);
        let label = i / self.spec.per_class;
        let s = &self.classes[label];
        let mut rng = StreamKey::root(self.spec.seed).child("audio-noise").at(i as u64).rng();
        let width = libm::fmax(0.5, f as f64 / 32.0);
        let mut values = Vec::with_capacity(t * f);
        for ti in 0..t {
            let env = 0.6 + 0.4 * libm::cos(2.0 * PI * s.rate * ti as f64 / t as f64 + s.phase);
            for fi in 0..f {
                let mut v = 0.0;
                let mut amp = 1.0;
                let mut centre = s.fundamental;
                while centre < f as f64 + 3.0 * width {
                    let d = (fi as f64 - centre) / width;
                    v += amp * libm::exp(-0.5 * d * d);
                    amp *= s.decay;
                    centre += s.fundamental;
                }
                values.push(libm::fmax(0.0, env * v + self.spec.noise * normal(&mut rng)));
            }
        }
        Ok(LabeledClip {
            frames: t,
            bins: f,
            values,
            label,
        })
    }
}

pub fn gen_audio(spec: &AudioSpec) -> Result<Vec<LabeledClip>> {
    let source = AudioSource::new(spec.clone())?;
    (0..source.len()).map(|i| source.get(i)).collect()
}

impl SpectrogramBatch {
    pub fn from_clips(clips: &[&LabeledClip]) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty clip batch".into()))?;
        let (t, f) = (first.frames, first.bins);
        let mut data = Vec::with_capacity(clips.len() * t * f);
        for c in clips {
            if (c.frames, c.bins) != (t, f) || c.values.len() != t * f {
                return Err(Error::InvalidShape("clips in a batch differ in size".into()));
            }
            data.extend_from_slice(&c.values);
        }
        Ok(SpectrogramBatch {
            frames: Tensor::new(alloc::vec![clips.len(), t, f], data)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_non_negative() {
        let spec = AudioSpec::default();
        let a = gen_audio(&spec).unwrap();
        assert_eq!(a, gen_audio(&spec).unwrap());
        assert!(a.iter().all(|c| c.values.iter().all(|v| *v >= 0.0)));
        assert_eq!(a[299].label, 9);
    }

    #[test]
    fn classes_separate() {
        let spec = AudioSpec {
            per_class: 5,
            ..AudioSpec::default()
        };
        let clips = gen_audio(&spec).unwrap();
        let d = |a: &LabeledClip, b: &LabeledClip| -> f64 {
            a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let k = spec.num_classes;
        let mean = |ca: usize, cb: usize| {
            let (mut s, mut n) = (0.0, 0);
            for a in clips.iter().filter(|c| c.label == ca) {
                for b in clips.iter().filter(|c| c.label == cb) {
                    if !core::ptr::eq(a, b) {
                        s += d(a, b);
                        n += 1;
                    }
                }
            }
            s / n as f64
        };
        for a in 0..k {
            for b in a + 1..k {
                let m = mean(a, b);
                assert!(mean(a, a) < m && mean(b, b) < m, "classes {a},{b}");
            }
        }
    }

    #[test]
    fn full_scale_clip() {
        let source = AudioSource::new(AudioSpec {
            frames: 1024,
            bins: 128,
            ..AudioSpec::default()
        })
        .unwrap();
        let c = source.get(0).unwrap();
        assert_eq!(c.values.len(), 1024 * 128);
        let batch = SpectrogramBatch::from_clips(&[&c]).unwrap();
        assert_eq!(batch.frames.shape(), &[1, 1024, 128]);
    }
}
