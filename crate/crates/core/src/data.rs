//! Benign image sources: the CIFAR-10 binary format and a deterministic
//! synthetic generator used for desk-scale runs.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Real, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A labeled image set; every image shares `shape = [C, H, W]`, pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct LabeledImages {
    pub shape: Vec<usize>,
    pub images: Vec<Tensor<Real>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Copy the selected examples into one `[N, C, H, W]` batch tensor.
    pub fn batch(&self, idx: &[usize]) -> Tensor<Real> {
        let per: usize = self.shape.iter().product();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(self.images[i].data());
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.shape);
        Tensor::new(shape, data)
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledImages {
        LabeledImages {
            shape: self.shape.clone(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub image_size: usize,
    pub template_seed: u64,
    pub noise_sigma: f64,
    pub samples_per_class: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            image_size: 16,
            template_seed: 17,
            noise_sigma: 0.1,
            samples_per_class: 100,
        }
    }
}

/// Per-class smooth templates; the k-th template mixes a few random low
/// frequencies so classes are well separated but not trivially so.
pub fn class_templates(spec: &SyntheticSpec) -> Vec<Tensor<Real>> {
    let s = spec.image_size;
    (0..spec.classes)
        .map(|k| {
            let mut rng = stream_rng(spec.template_seed, k as u64);
            let mut coefs = [[0.0f64; 6]; 3];
            for row in coefs.iter_mut() {
                for c in row.iter_mut() {
                    *c = rng.gen_range(-1.0..1.0);
                }
            }
            let mut data = Vec::with_capacity(3 * s * s);
            for ch in 0..3 {
                let c = &coefs[ch];
                for y in 0..s {
                    for x in 0..s {
                        let (u, v) = (x as f64 / s as f64, y as f64 / s as f64);
                        // Low contrast keeps class templates close enough in
                        // pixel space that small-budget attacks can cross
                        // decision boundaries, as natural-image classes do.
                        let t = 0.5
                            + 0.08
                                * (c[0] * (std::f64::consts::TAU * (u + c[1])).sin()
                                    + c[2] * (std::f64::consts::TAU * (v + c[3])).sin()
                                    + c[4] * (std::f64::consts::TAU * (u + v + c[5])).sin());
                        data.push(t.clamp(0.0, 1.0) as Real);
                    }
                }
            }
            Tensor::new(vec![3, s, s], data)
        })
        .collect()
}

/// `sample = clamp(template_k + Gaussian noise)`, deterministic from seeds.
pub fn synth_dataset(spec: &SyntheticSpec) -> Result<LabeledImages> {
    if spec.classes < 2 {
        return Err(Error::config("synthetic dataset needs at least 2 classes"));
    }
    if spec.noise_sigma < 0.0 {
        return Err(Error::config("noise sigma must be nonnegative"));
    }
    let templates = class_templates(spec);
    let mut images = Vec::with_capacity(spec.classes * spec.samples_per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    for k in 0..spec.classes {
        for i in 0..spec.samples_per_class {
            let mut rng = stream_rng(
                spec.template_seed ^ 0xa5a5_5a5a,
                (k * spec.samples_per_class + i) as u64,
            );
            let img = templates[k].map(|v| {
                let noise: f64 = rng.sample(StandardNormal);
                ((v as f64) + spec.noise_sigma * noise).clamp(0.0, 1.0) as Real
            });
            images.push(img);
            labels.push(k);
        }
    }
    Ok(LabeledImages {
        shape: vec![3, spec.image_size, spec.image_size],
        images,
        labels,
        class_count: spec.classes,
    })
}

/// Nearest-template classifier accuracy, the separability oracle for
/// synthetic data.
pub fn nearest_template_accuracy(spec: &SyntheticSpec, data: &LabeledImages) -> f64 {
    let templates = class_templates(spec);
    let mut correct = 0usize;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let best = templates
            .iter()
            .enumerate()
            .map(|(k, t)| (k, img.sub(t).norm_l2()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}

const CIFAR_RECORD: usize = 1 + 3072;

fn parse_cifar_file(path: &Path, out: &mut LabeledImages) -> Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format {
            offset: (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64,
            detail: format!(
                "{} is not a multiple of the {CIFAR_RECORD}-byte record size",
                bytes.len()
            ),
        });
    }
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::Format {
                offset: 0,
                detail: format!("label byte {label} out of range 0..=9"),
            });
        }
        let data: Vec<Real> = rec[1..].iter().map(|&b| b as Real / 255.0).collect();
        out.images.push(Tensor::new(vec![3, 32, 32], data));
        out.labels.push(label);
    }
    Ok(())
}

/// Parse the CIFAR-10 binary distribution: `data_batch_{1..5}.bin` plus
/// `test_batch.bin` under `dir`. Returns (train, test).
pub fn ingest_cifar10(dir: &Path) -> Result<(LabeledImages, LabeledImages)> {
    let empty = || LabeledImages {
        shape: vec![3, 32, 32],
        images: vec![],
        labels: vec![],
        class_count: 10,
    };
    let mut train = empty();
    for i in 1..=5 {
        parse_cifar_file(&dir.join(format!("data_batch_{i}.bin")), &mut train)?;
    }
    let mut test = empty();
    parse_cifar_file(&dir.join("test_batch.bin"), &mut test)?;
    if train.len() != 50000 || test.len() != 10000 {
        return Err(Error::Format {
            offset: 0,
            detail: format!(
                "expected 50000 train / 10000 test records, found {} / {}",
                train.len(),
                test.len()
            ),
        });
    }
    Ok((train, test))
}
