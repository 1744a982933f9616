//! Model-parsing dataset construction: split benign images, attack them
//! across the victim zoo, and serialize labeled (z, y) examples in either
//! the adversarial-example or perturbation input format.

use crate::attack::{attack_batch, AttackRecord, AttackSpec};
use crate::data::LabeledImages;
use crate::diffnet::ActKind;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Real, Tensor};
use crate::victim::{ArchFamily, ModelAttributes, Zoo};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

/// Disjoint class-stratified train/test split of benign images.
#[derive(Debug, Clone)]
pub struct ImageSplit {
    pub train: LabeledImages,
    pub test: LabeledImages,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

pub fn split_images(dataset: &LabeledImages, ratio: f64, seed: u64) -> Result<ImageSplit> {
    if dataset.images.is_empty() {
        return Err(Error::config("cannot split an empty dataset"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio {ratio} outside (0,1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = stream_rng(seed, 0);
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for idxs in by_class.iter_mut() {
        idxs.shuffle(&mut rng);
        let k = (idxs.len() as f64 * ratio).round() as usize;
        train_indices.extend_from_slice(&idxs[..k]);
        test_indices.extend_from_slice(&idxs[k..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(ImageSplit {
        train: dataset.subset(&train_indices),
        test: dataset.subset(&test_indices),
        train_indices,
        test_indices,
        ratio,
        seed,
    })
}

/// The attribute vocabulary the parser predicts over. With a single
/// architecture family, AT is fixed and the heads are (KS, AF, WS); with
/// several, AT becomes a fourth (leading) head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub families: Vec<ArchFamily>,
    pub kernel_sizes: Vec<usize>,
    pub activations: Vec<ActKind>,
    pub sparsities: Vec<f64>,
}

impl AttributeSchema {
    pub fn from_grid(grid: &[ModelAttributes]) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::config("empty attribute grid"));
        }
        let mut families = Vec::new();
        let mut kernel_sizes = Vec::new();
        let mut activations = Vec::new();
        let mut sparsities = Vec::new();
        for a in grid {
            if !families.contains(&a.at) {
                families.push(a.at);
            }
            if !kernel_sizes.contains(&a.ks) {
                kernel_sizes.push(a.ks);
            }
            if !activations.contains(&a.af) {
                activations.push(a.af);
            }
            if !sparsities.iter().any(|&s: &f64| s == a.ws) {
                sparsities.push(a.ws);
            }
        }
        Ok(AttributeSchema {
            families,
            kernel_sizes,
            activations,
            sparsities,
        })
    }

    pub fn merged_at(&self) -> bool {
        self.families.len() > 1
    }

    pub fn head_names(&self) -> Vec<&'static str> {
        if self.merged_at() {
            vec!["at", "ks", "af", "ws"]
        } else {
            vec!["ks", "af", "ws"]
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = Vec::new();
        if self.merged_at() {
            counts.push(self.families.len());
        }
        counts.push(self.kernel_sizes.len());
        counts.push(self.activations.len());
        counts.push(self.sparsities.len());
        counts
    }

    pub fn encode(&self, a: &ModelAttributes) -> Result<Vec<usize>> {
        let pos = |err: &str, found: Option<usize>| {
            found.ok_or_else(|| Error::config(format!("attribute outside schema: {err}")))
        };
        let mut y = Vec::new();
        if self.merged_at() {
            y.push(pos(
                a.at.name(),
                self.families.iter().position(|&f| f == a.at),
            )?);
        } else if self.families[0] != a.at {
            return Err(Error::config(format!(
                "architecture {} not in single-family schema",
                a.at.name()
            )));
        }
        y.push(pos(
            &a.ks.to_string(),
            self.kernel_sizes.iter().position(|&k| k == a.ks),
        )?);
        y.push(pos(
            a.af.name(),
            self.activations.iter().position(|&f| f == a.af),
        )?);
        y.push(pos(
            &a.ws.to_string(),
            self.sparsities.iter().position(|&s| s == a.ws),
        )?);
        Ok(y)
    }

    pub fn decode(&self, y: &[usize]) -> Result<ModelAttributes> {
        if y.len() != self.class_counts().len() {
            return Err(Error::config(format!(
                "label tuple length {} does not match schema ({} heads)",
                y.len(),
                self.class_counts().len()
            )));
        }
        let mut it = y.iter();
        let at = if self.merged_at() {
            self.families[*it.next().unwrap()]
        } else {
            self.families[0]
        };
        Ok(ModelAttributes {
            at,
            ks: self.kernel_sizes[*it.next().unwrap()],
            af: self.activations[*it.next().unwrap()],
            ws: self.sparsities[*it.next().unwrap()],
            robust: false,
        })
    }

    /// Index of the attribute combination in row-major head order.
    pub fn combo_index(&self, y: &[usize]) -> usize {
        let counts = self.class_counts();
        let mut idx = 0;
        for (i, &yi) in y.iter().enumerate() {
            idx = idx * counts[i] + yi;
        }
        idx
    }

    pub fn combo_count(&self) -> usize {
        self.class_counts().iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    AdvExample,
    Perturbation,
}

impl InputFormat {
    pub fn name(&self) -> &'static str {
        match self {
            InputFormat::AdvExample => "adv-example",
            InputFormat::Perturbation => "perturbation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adv-example" => Ok(InputFormat::AdvExample),
            "perturbation" => Ok(InputFormat::Perturbation),
            other => Err(Error::config(format!("unknown input format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParsingExample {
    pub z: Tensor<Real>,
    pub y: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VictimGenStats {
    pub attributes: ModelAttributes,
    pub attempts: usize,
    pub successes: usize,
    pub retained: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: InputFormat,
    pub attack_hash: String,
    pub zoo_hash: String,
    pub split_seed: u64,
    pub retain_failures: bool,
    pub balanced: bool,
    pub per_victim: Vec<VictimGenStats>,
    pub example_count: usize,
}

#[derive(Debug, Clone)]
pub struct ParsingDataset {
    pub examples: Vec<ParsingExample>,
    pub schema: AttributeSchema,
    pub format: InputFormat,
    pub manifest: DatasetManifest,
}

/// Hash of a zoo manifest for provenance tracking.
pub fn zoo_hash(zoo: &Zoo) -> String {
    let json = serde_json::to_vec(&zoo.manifest).unwrap_or_default();
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    /// Keep only records whose attack succeeded (default on).
    pub successes_only: bool,
    /// Truncate every attribute combination to the minimum retained count.
    pub balance: bool,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            successes_only: true,
            balance: true,
        }
    }
}

/// Attack every (victim, image) pair and collect labeled records plus
/// per-victim bookkeeping.
pub fn generate_records(
    zoo: &Zoo,
    images: &LabeledImages,
    spec: &AttackSpec,
    options: &GenerationOptions,
) -> Result<(Vec<AttackRecord>, Vec<VictimGenStats>)> {
    if zoo.victims.is_empty() {
        return Err(Error::config("zoo has no trained victims"));
    }
    let mut all = Vec::new();
    let mut stats = Vec::new();
    for (vi, victim) in zoo.victims.iter().enumerate() {
        // distinct attack randomness per victim, deterministic overall
        let mut vspec = spec.clone();
        vspec.seed = crate::rng::stream_key(spec.seed, vi as u64);
        let records = attack_batch(
            &victim.network,
            &images.images,
            &images.labels,
            victim.attributes,
            &vspec,
        );
        match records {
            Ok(records) => {
                let attempts = records.len();
                let successes = records.iter().filter(|r| r.success).count();
                let retained: Vec<AttackRecord> = if options.successes_only {
                    records.into_iter().filter(|r| r.success).collect()
                } else {
                    records
                };
                stats.push(VictimGenStats {
                    attributes: victim.attributes,
                    attempts,
                    successes,
                    retained: retained.len(),
                    error: None,
                });
                all.extend(retained);
            }
            Err(e) => stats.push(VictimGenStats {
                attributes: victim.attributes,
                attempts: images.images.len(),
                successes: 0,
                retained: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok((all, stats))
}

/// Map records to (z, y) examples under the chosen input format, optionally
/// balancing per attribute combination.
pub fn assemble(
    records: &[AttackRecord],
    schema: &AttributeSchema,
    format: InputFormat,
    manifest: DatasetManifest,
    balance: bool,
) -> Result<ParsingDataset> {
    let mut per_combo: Vec<Vec<ParsingExample>> = vec![Vec::new(); schema.combo_count()];
    for r in records {
        let y = schema.encode(&r.attributes)?;
        let z = match format {
            InputFormat::AdvExample => r.x_adv.clone(),
            InputFormat::Perturbation => r.delta.clone(),
        };
        if !z.all_finite() {
            return Err(Error::numeric("assemble", "non-finite example tensor"));
        }
        let combo = schema.combo_index(&y);
        per_combo[combo].push(ParsingExample { z, y });
    }
    let cap = if balance {
        per_combo
            .iter()
            .map(|v| v.len())
            .filter(|&n| n > 0)
            .min()
            .unwrap_or(0)
    } else {
        usize::MAX
    };
    let mut examples = Vec::new();
    for bucket in per_combo {
        examples.extend(bucket.into_iter().take(cap));
    }
    let mut manifest = manifest;
    manifest.format = format;
    manifest.balanced = balance;
    manifest.example_count = examples.len();
    Ok(ParsingDataset {
        examples,
        schema: schema.clone(),
        format,
        manifest,
    })
}

#[derive(Serialize, Deserialize)]
struct FileMeta {
    manifest: DatasetManifest,
    schema: AttributeSchema,
    shape: Vec<usize>,
    count: usize,
    heads: usize,
}

const MAGIC: &[u8; 4] = b"MPNZ";
const VERSION: u32 = 1;

/// Serialize: MPNZ header + JSON metadata, one packed [n, ...] f32 tensor of
/// inputs, then the n x H label tuples as little-endian u16.
pub fn save_dataset(ds: &ParsingDataset, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let shape = ds
        .examples
        .first()
        .map(|e| e.z.shape().to_vec())
        .unwrap_or_default();
    let heads = ds.schema.class_counts().len();
    let meta = FileMeta {
        manifest: ds.manifest.clone(),
        schema: ds.schema.clone(),
        shape: shape.clone(),
        count: ds.examples.len(),
        heads,
    };
    let json = serde_json::to_vec(&meta)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for e in &ds.examples {
        if e.z.shape() != shape.as_slice() {
            return Err(Error::config("inconsistent example shapes"));
        }
        for &v in e.z.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for e in &ds.examples {
        if e.y.len() != heads {
            return Err(Error::config("inconsistent label tuple length"));
        }
        for &yi in &e.y {
            w.write_all(&(yi as u16).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<ParsingDataset> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut offset = 0u64;
    let mut take = |n: usize, what: &str| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|_| Error::Format {
            offset,
            detail: format!("truncated while reading {what}"),
        })?;
        offset += n as u64;
        Ok(buf)
    };
    let magic = take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "bad dataset magic".into(),
        });
    }
    let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported dataset version {version}"),
        });
    }
    let json_len = u64::from_le_bytes(take(8, "metadata length")?.try_into().unwrap()) as usize;
    let json = take(json_len, "metadata")?;
    let meta: FileMeta = serde_json::from_slice(&json).map_err(|e| Error::Format {
        offset: 16,
        detail: format!("dataset metadata JSON: {e}"),
    })?;
    let elems: usize = meta.shape.iter().product::<usize>().max(if meta.count == 0 { 0 } else { 1 });
    let mut examples = Vec::with_capacity(meta.count);
    for _ in 0..meta.count {
        let payload = take(elems * 4, "example tensor")?;
        let data: Vec<Real> = payload
            .chunks_exact(4)
            .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
            .collect();
        examples.push(ParsingExample {
            z: Tensor::new(meta.shape.clone(), data),
            y: Vec::new(),
        });
    }
    for e in examples.iter_mut() {
        let payload = take(meta.heads * 2, "label tuple")?;
        e.y = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
    }
    Ok(ParsingDataset {
        examples,
        format: meta.manifest.format,
        schema: meta.schema,
        manifest: meta.manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SyntheticSpec};
    use crate::victim::attribute_grid;

    fn small_images() -> LabeledImages {
        synth_dataset(&SyntheticSpec {
            classes: 5,
            image_size: 4,
            template_seed: 3,
            noise_sigma: 0.05,
            samples_per_class: 20,
        })
        .unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = small_images();
        let split = split_images(&ds, 0.8, 9).unwrap();
        assert_eq!(split.train.images.len(), 80);
        assert_eq!(split.test.images.len(), 20);
        for i in &split.train_indices {
            assert!(!split.test_indices.contains(i));
        }
        // stratification: per-class train fraction within +-1 image of 0.8
        for class in 0..5 {
            let n = split
                .train
                .labels
                .iter()
                .filter(|&&y| y == class)
                .count() as f64;
            assert!((n - 16.0).abs() <= 1.0);
        }
        let again = split_images(&ds, 0.8, 9).unwrap();
        assert_eq!(split.train_indices, again.train_indices);
    }

    #[test]
    fn bad_ratio_rejected() {
        let ds = small_images();
        assert!(split_images(&ds, 0.0, 1).is_err());
        assert!(split_images(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn schema_round_trips_all_combos() {
        let grid = attribute_grid(&[ArchFamily::Resnet9]);
        let schema = AttributeSchema::from_grid(&grid).unwrap();
        assert_eq!(schema.class_counts(), vec![3, 3, 3]);
        assert_eq!(schema.combo_count(), 27);
        for a in &grid {
            let y = schema.encode(a).unwrap();
            let back = schema.decode(&y).unwrap();
            assert_eq!(&back, a);
        }
        let merged = AttributeSchema::from_grid(&attribute_grid(&[
            ArchFamily::Resnet9,
            ArchFamily::Vgg11,
        ]))
        .unwrap();
        assert!(merged.merged_at());
        assert_eq!(merged.class_counts(), vec![2, 3, 3, 3]);
    }

    #[test]
    fn dataset_file_round_trip() {
        let grid = attribute_grid(&[ArchFamily::Resnet9]);
        let schema = AttributeSchema::from_grid(&grid).unwrap();
        let manifest = DatasetManifest {
            format: InputFormat::Perturbation,
            attack_hash: "abc".into(),
            zoo_hash: "def".into(),
            split_seed: 7,
            retain_failures: false,
            balanced: false,
            per_victim: Vec::new(),
            example_count: 0,
        };
        let mut rng = stream_rng(5, 0);
        use rand::Rng;
        let examples: Vec<ParsingExample> = (0..6)
            .map(|i| ParsingExample {
                z: Tensor::new(
                    vec![3, 2, 2],
                    (0..12).map(|_| rng.gen_range(-0.1..0.1)).collect(),
                ),
                y: vec![i % 3, (i + 1) % 3, (i + 2) % 3],
            })
            .collect();
        let ds = ParsingDataset {
            examples,
            schema,
            format: InputFormat::Perturbation,
            manifest,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.mpnz");
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.examples.len(), ds.examples.len());
        for (a, b) in ds.examples.iter().zip(loaded.examples.iter()) {
            assert_eq!(a.z.data(), b.z.data());
            assert_eq!(a.y, b.y);
        }
        // truncation detected
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn balancing_truncates_to_minimum() {
        let grid = attribute_grid(&[ArchFamily::Resnet9]);
        let schema = AttributeSchema::from_grid(&grid).unwrap();
        let mk = |a: &ModelAttributes, n: usize| -> Vec<AttackRecord> {
            (0..n)
                .map(|_| AttackRecord {
                    x: Tensor::zeros(vec![1, 2, 2]),
                    x_adv: Tensor::zeros(vec![1, 2, 2]),
                    delta: Tensor::zeros(vec![1, 2, 2]),
                    label: 0,
                    attributes: *a,
                    success: true,
                    queries: 0,
                    steps: 1,
                })
                .collect()
        };
        let mut records = mk(&grid[0], 5);
        records.extend(mk(&grid[1], 2));
        let manifest = DatasetManifest {
            format: InputFormat::Perturbation,
            attack_hash: String::new(),
            zoo_hash: String::new(),
            split_seed: 0,
            retain_failures: false,
            balanced: true,
            per_victim: Vec::new(),
            example_count: 0,
        };
        let ds = assemble(&records, &schema, InputFormat::Perturbation, manifest.clone(), true)
            .unwrap();
        assert_eq!(ds.examples.len(), 4); // 2 per occupied combination
        let un = assemble(&records, &schema, InputFormat::Perturbation, manifest, false).unwrap();
        assert_eq!(un.examples.len(), 7);
    }
}
