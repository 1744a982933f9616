//! End-to-end experiment orchestration shared by the CLI subcommands.
//! Every step writes versioned artifacts under the output directory and
//! returns a machine-readable JSON summary embedding the config hash and
//! seed.

use crate::attack::AttackSpec;
use crate::checkpoint::{load_from_path, network_tensors, restore_network, save_to_path, NamedTensor};
use crate::config::ExperimentConfig;
use crate::data::{ingest_cifar10, LabeledImages};
use crate::diffnet::{instantiate, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::eval::{evaluate_mpn, generalization_matrix, parsing_confusion, transfer_asr_matrix};
use crate::parser::{
    build_mpn, build_pen, pretrain_pen, train_joint, train_mpn, Backbone, DenoisePair,
    JointTrainConfig, MpnModel, MpnRecipe,
};
use crate::redset::{
    assemble, generate_records, split_images, zoo_hash, AttributeSchema, DatasetManifest,
    GenerationOptions, ImageSplit, InputFormat, ParsingDataset, VictimGenStats,
};
use crate::rng::stream_key;
use crate::tensor::{Real, Tensor};
use crate::victim::{
    attribute_grid, zoo_build, ModelAttributes, TrainedVictim, Zoo, ZooEntry,
};
use crate::attack::AttackRecord;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct VictimMeta {
    attributes: ModelAttributes,
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    clean_acc: f64,
    robust_acc: Option<f64>,
    seed: u64,
    config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct ZooManifestFile {
    entries: Vec<ZooEntry>,
    config_hash: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct RecordsMeta {
    attack: AttackSpec,
    stats: Vec<VictimGenStats>,
    labels: Vec<usize>,
    attributes: Vec<ModelAttributes>,
    shape: Vec<usize>,
    count: usize,
    config_hash: String,
    zoo_hash: String,
}

#[derive(Serialize, Deserialize)]
struct MpnMeta {
    backbone: Backbone,
    schema: AttributeSchema,
    input_shape: Vec<usize>,
    trunk_specs: Vec<LayerSpec>,
    head_specs: Vec<Vec<LayerSpec>>,
    format: InputFormat,
    config_hash: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct PenMeta {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    config_hash: String,
    seed: u64,
}

fn missing(subcommand: &str, path: &Path) -> Error {
    Error::MissingPrerequisite {
        subcommand: subcommand.to_string(),
        detail: format!("expected artifact {}", path.display()),
    }
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: PathBuf) -> Result<Self> {
        let config_hash = cfg.hash()?;
        std::fs::create_dir_all(&out)?;
        // canonical echo for provenance
        std::fs::write(out.join("config.json"), cfg.canonical_json()?)?;
        Ok(Pipeline {
            cfg,
            out,
            config_hash,
        })
    }

    pub fn data(&self) -> Result<LabeledImages> {
        match self.cfg.dataset.source.as_str() {
            "synthetic" => crate::data::synth_dataset(&self.cfg.dataset.synthetic_spec()),
            "cifar10" => {
                let path = self.cfg.dataset.path.as_ref().unwrap();
                let (train, _test) = ingest_cifar10(Path::new(path))?;
                Ok(train)
            }
            other => Err(Error::config(format!("unknown dataset source {other}"))),
        }
    }

    pub fn split(&self) -> Result<ImageSplit> {
        let data = self.data()?;
        split_images(&data, self.cfg.split.ratio, self.cfg.split.seed)
    }

    pub fn attack_specs(&self) -> Result<Vec<AttackSpec>> {
        self.cfg
            .attacks
            .iter()
            .map(|a| a.to_spec(self.cfg.seed))
            .collect()
    }

    pub fn schema(&self) -> Result<AttributeSchema> {
        let families = self.cfg.victims.families()?;
        AttributeSchema::from_grid(&attribute_grid(&families))
    }

    // ---- train-victims ----

    pub fn train_victims(&self) -> Result<Value> {
        let split = self.split()?;
        let families = self.cfg.victims.families()?;
        let grid = attribute_grid(&families);
        let recipe = self.cfg.victims.recipe(stream_key(self.cfg.seed, 100));
        let adv = if self.cfg.victims.adversarial {
            Some(self.attack_specs()?.into_iter().next().ok_or_else(|| {
                Error::config("adversarial zoo needs a configured attack")
            })?)
        } else {
            None
        };
        let zoo = zoo_build(&grid, &split.train, &split.test, &recipe, adv.as_ref())?;
        let dir = self.out.join("zoo");
        std::fs::create_dir_all(&dir)?;
        for v in &zoo.victims {
            let meta = VictimMeta {
                attributes: v.attributes,
                specs: v.network.specs(),
                input_shape: v.network.input_shape.clone(),
                clean_acc: v.clean_acc,
                robust_acc: v.robust_acc,
                seed: recipe.seed,
                config_hash: self.config_hash.clone(),
            };
            save_to_path(
                &dir.join(format!("victim_{}.mpnz", v.attributes.id())),
                &meta,
                &network_tensors(&v.network, ""),
            )?;
        }
        let manifest = ZooManifestFile {
            entries: zoo.manifest.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        let trained = zoo.victims.len();
        let failed = zoo.manifest.iter().filter(|e| e.error.is_some()).count();
        let mean_clean =
            zoo.victims.iter().map(|v| v.clean_acc).sum::<f64>() / trained.max(1) as f64;
        Ok(json!({
            "subcommand": "train-victims",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "victims": trained,
            "failed": failed,
            "mean_clean_acc": mean_clean,
        }))
    }

    pub fn load_zoo(&self) -> Result<Zoo> {
        let dir = self.out.join("zoo");
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(missing("train-victims", &manifest_path));
        }
        let manifest: ZooManifestFile =
            serde_json::from_slice(&std::fs::read(&manifest_path)?)?;
        let mut victims = Vec::new();
        let mut entries = Vec::new();
        for entry in manifest.entries {
            if entry.error.is_some() {
                entries.push(entry);
                continue;
            }
            let path = dir.join(format!("victim_{}.mpnz", entry.attributes.id()));
            match load_victim(&path) {
                Ok(v) => {
                    victims.push(v);
                    entries.push(entry);
                }
                Err(e) => {
                    let mut entry = entry;
                    entry.error = Some(format!("checkpoint unreadable: {e}"));
                    entries.push(entry);
                }
            }
        }
        Ok(Zoo {
            victims,
            manifest: entries,
        })
    }

    // ---- attack ----

    fn records_path(&self, spec: &AttackSpec, side: &str) -> PathBuf {
        self.out
            .join("records")
            .join(format!("{}_{side}.mpnz", spec.hash()))
    }

    pub fn attack(&self) -> Result<Value> {
        let zoo = self.load_zoo()?;
        let split = self.split()?;
        let zh = zoo_hash(&zoo);
        std::fs::create_dir_all(self.out.join("records"))?;
        let options = GenerationOptions::default();
        let mut summaries = Vec::new();
        for spec in self.attack_specs()? {
            for (side, images) in [("train", &split.train), ("test", &split.test)] {
                let mut side_spec = spec.clone();
                // disjoint attack randomness across the two sides
                side_spec.seed = stream_key(spec.seed, if side == "train" { 1 } else { 2 });
                let (records, stats) = generate_records(&zoo, images, &side_spec, &options)?;
                save_records(
                    &self.records_path(&spec, side),
                    &spec,
                    &records,
                    &stats,
                    &self.config_hash,
                    &zh,
                )?;
                let attempts: usize = stats.iter().map(|s| s.attempts).sum();
                let successes: usize = stats.iter().map(|s| s.successes).sum();
                summaries.push(json!({
                    "attack": spec.method.name(),
                    "hash": spec.hash(),
                    "side": side,
                    "attempts": attempts,
                    "successes": successes,
                    "retained": records.len(),
                }));
            }
        }
        Ok(json!({
            "subcommand": "attack",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "zoo_hash": zh,
            "runs": summaries,
        }))
    }

    pub fn load_records(
        &self,
        spec: &AttackSpec,
        side: &str,
    ) -> Result<(Vec<AttackRecord>, RecordsInfo)> {
        let path = self.records_path(spec, side);
        if !path.exists() {
            return Err(missing("attack", &path));
        }
        load_records(&path)
    }

    // ---- build-dataset ----

    fn dataset_path(&self, spec: &AttackSpec, format: InputFormat, side: &str) -> PathBuf {
        self.out
            .join("datasets")
            .join(format!("{}_{}_{side}.mpnz", spec.hash(), format.name()))
    }

    pub fn build_dataset(&self) -> Result<Value> {
        let schema = self.schema()?;
        std::fs::create_dir_all(self.out.join("datasets"))?;
        let mut summaries = Vec::new();
        for spec in self.attack_specs()? {
            for side in ["train", "test"] {
                let (records, info) = self.load_records(&spec, side)?;
                for format in [InputFormat::Perturbation, InputFormat::AdvExample] {
                    let manifest = DatasetManifest {
                        format,
                        attack_hash: spec.hash(),
                        zoo_hash: info.zoo_hash.clone(),
                        split_seed: self.cfg.split.seed,
                        retain_failures: false,
                        balanced: true,
                        per_victim: info.stats.clone(),
                        example_count: 0,
                    };
                    let ds = assemble(&records, &schema, format, manifest, true)?;
                    crate::redset::save_dataset(&ds, &self.dataset_path(&spec, format, side))?;
                    summaries.push(json!({
                        "attack": spec.method.name(),
                        "hash": spec.hash(),
                        "side": side,
                        "format": format.name(),
                        "examples": ds.examples.len(),
                    }));
                }
            }
        }
        Ok(json!({
            "subcommand": "build-dataset",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "datasets": summaries,
        }))
    }

    pub fn load_dataset(
        &self,
        spec: &AttackSpec,
        format: InputFormat,
        side: &str,
    ) -> Result<ParsingDataset> {
        let path = self.dataset_path(spec, format, side);
        if !path.exists() {
            return Err(missing("build-dataset", &path));
        }
        crate::redset::load_dataset(&path)
    }

    // ---- train-mpn ----

    fn mpn_path(&self, spec: &AttackSpec, format: InputFormat) -> PathBuf {
        self.out
            .join("mpn")
            .join(format!("{}_{}.mpnz", spec.hash(), format.name()))
    }

    fn mpn_recipe(&self) -> MpnRecipe {
        MpnRecipe {
            epochs: self.cfg.mpn.epochs,
            batch_size: self.cfg.mpn.batch_size,
            lr: self.cfg.mpn.lr,
            weight_decay: self.cfg.mpn.weight_decay,
            momentum: 0.9,
            seed: stream_key(self.cfg.seed, 200),
        }
    }

    pub fn train_mpn(&self) -> Result<Value> {
        let format = self.cfg.mpn.format()?;
        let backbone = self.cfg.mpn.backbone()?;
        let schema = self.schema()?;
        std::fs::create_dir_all(self.out.join("mpn"))?;
        let mut summaries = Vec::new();
        for spec in self.attack_specs()? {
            let ds = self.load_dataset(&spec, format, "train")?;
            let shape = ds
                .examples
                .first()
                .ok_or_else(|| Error::config("training dataset is empty"))?
                .z
                .shape()
                .to_vec();
            let mut mpn = build_mpn(backbone, &schema, &shape, stream_key(self.cfg.seed, 201))?;
            let curve = train_mpn(&mut mpn, &ds, &self.mpn_recipe())?;
            save_mpn(
                &self.mpn_path(&spec, format),
                &mpn,
                format,
                &self.config_hash,
                self.cfg.seed,
            )?;
            summaries.push(json!({
                "attack": spec.method.name(),
                "hash": spec.hash(),
                "format": format.name(),
                "final_loss": curve.last().copied(),
                "epochs": curve.len(),
            }));
        }
        Ok(json!({
            "subcommand": "train-mpn",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "models": summaries,
        }))
    }

    pub fn load_mpn(&self, spec: &AttackSpec, format: InputFormat) -> Result<MpnModel> {
        let path = self.mpn_path(spec, format);
        if !path.exists() {
            return Err(missing("train-mpn", &path));
        }
        load_mpn(&path)
    }

    // ---- train-pen ----

    fn pen_path(&self, spec: &AttackSpec) -> PathBuf {
        self.out.join("pen").join(format!("{}.mpnz", spec.hash()))
    }

    fn primary_attack(&self) -> Result<AttackSpec> {
        self.attack_specs()?
            .into_iter()
            .next()
            .ok_or_else(|| Error::config("no attacks configured"))
    }

    pub fn train_pen(&self) -> Result<Value> {
        let spec = self.primary_attack()?;
        let (records, _) = self.load_records(&spec, "train")?;
        if records.is_empty() {
            return Err(Error::config("no training records for PEN"));
        }
        let shape = records[0].x.shape().to_vec();
        let mut pen = build_pen(
            &shape,
            self.cfg.pen.depth,
            self.cfg.pen.channels,
            stream_key(self.cfg.seed, 300),
        )?;
        let pairs: Vec<DenoisePair> = records
            .iter()
            .map(|r| DenoisePair {
                x_adv: r.x_adv.clone(),
                delta: r.delta.clone(),
            })
            .collect();
        let curve = pretrain_pen(
            &mut pen,
            &pairs,
            self.cfg.pen.pretrain_epochs,
            self.cfg.pen.pretrain_lr,
            self.cfg.pen.batch_size,
            stream_key(self.cfg.seed, 301),
        )?;
        std::fs::create_dir_all(self.out.join("pen"))?;
        save_pen(
            &self.pen_path(&spec),
            &pen,
            &self.config_hash,
            self.cfg.seed,
        )?;
        Ok(json!({
            "subcommand": "train-pen",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "attack": spec.method.name(),
            "final_mae": curve.last().copied(),
            "epochs": curve.len(),
        }))
    }

    pub fn load_pen(&self, spec: &AttackSpec) -> Result<Network<Real>> {
        let path = self.pen_path(spec);
        if !path.exists() {
            return Err(missing("train-pen", &path));
        }
        load_pen(&path)
    }

    // ---- train-joint ----

    fn joint_mpn_path(&self, spec: &AttackSpec) -> PathBuf {
        self.out
            .join("mpn")
            .join(format!("{}_joint.mpnz", spec.hash()))
    }

    fn joint_pen_path(&self, spec: &AttackSpec) -> PathBuf {
        self.out
            .join("pen")
            .join(format!("{}_joint.mpnz", spec.hash()))
    }

    pub fn train_joint(&self) -> Result<Value> {
        let spec = self.primary_attack()?;
        let format = self.cfg.mpn.format()?;
        let mut mpn = self.load_mpn(&spec, format)?;
        let mut pen = self.load_pen(&spec)?;
        let (records, _) = self.load_records(&spec, "train")?;
        let schema = self.schema()?;
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for r in &records {
            pairs.push(DenoisePair {
                x_adv: r.x_adv.clone(),
                delta: r.delta.clone(),
            });
            labels.push(schema.encode(&r.attributes)?);
        }
        let cfg = JointTrainConfig {
            beta: self.cfg.joint.beta,
            epochs: self.cfg.joint.epochs,
            batch_size: self.cfg.joint.batch_size,
            mpn_lr: self.cfg.joint.mpn_lr,
            pen_lr: self.cfg.joint.pen_lr,
            momentum: 0.9,
            seed: stream_key(self.cfg.seed, 400),
        };
        let curve = train_joint(&mut mpn, &mut pen, &pairs, &labels, &cfg)?;
        save_mpn(
            &self.joint_mpn_path(&spec),
            &mpn,
            format,
            &self.config_hash,
            self.cfg.seed,
        )?;
        save_pen(
            &self.joint_pen_path(&spec),
            &pen,
            &self.config_hash,
            self.cfg.seed,
        )?;
        Ok(json!({
            "subcommand": "train-joint",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "attack": spec.method.name(),
            "beta": self.cfg.joint.beta,
            "first_loss": curve.first().copied(),
            "final_loss": curve.last().copied(),
        }))
    }

    // ---- evaluate ----

    pub fn evaluate(&self) -> Result<Value> {
        let format = self.cfg.mpn.format()?;
        std::fs::create_dir_all(self.out.join("eval"))?;
        let mut reports = Vec::new();
        for spec in self.attack_specs()? {
            let mpn = self.load_mpn(&spec, format)?;
            let ds = self.load_dataset(&spec, format, "test")?;
            let report = evaluate_mpn(&mpn, None, &ds)?;
            let confusion = parsing_confusion(&mpn, None, &ds)?;
            std::fs::write(
                self.out
                    .join("eval")
                    .join(format!("{}_{}_confusion.csv", spec.hash(), format.name())),
                confusion.to_csv(),
            )?;
            let mut entry = json!({
                "attack": spec.method.name(),
                "hash": spec.hash(),
                "format": format.name(),
                "weighted": report.weighted,
                "combined": report.combined,
                "per_attribute": report.attribute.ta,
                "chance": report.chance,
            });
            // joint artifacts are optional; report delta-PEN accuracy when
            // they exist
            let jm = self.joint_mpn_path(&spec);
            let jp = self.joint_pen_path(&spec);
            if jm.exists() && jp.exists() {
                let joint_mpn = load_mpn(&jm)?;
                let pen = load_pen(&jp)?;
                let adv = self.load_dataset(&spec, InputFormat::AdvExample, "test")?;
                let pen_report = evaluate_mpn(&joint_mpn, Some(&pen), &adv)?;
                entry["pen_weighted"] = json!(pen_report.weighted);
                entry["pen_combined"] = json!(pen_report.combined);
            }
            reports.push(entry);
        }
        let summary = json!({
            "subcommand": "evaluate",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "reports": reports,
        });
        std::fs::write(
            self.out.join("eval").join("summary.json"),
            serde_json::to_vec_pretty(&summary)?,
        )?;
        Ok(summary)
    }

    // ---- matrix ----

    pub fn matrix(&self) -> Result<Value> {
        let format = self.cfg.mpn.format()?;
        let backbone = self.cfg.mpn.backbone()?;
        let schema = self.schema()?;
        let specs = self.attack_specs()?;
        let labels: Vec<String> = specs.iter().map(|s| s.method.name().to_string()).collect();
        let recipe = self.mpn_recipe();
        let m = generalization_matrix(
            &labels,
            &labels,
            "weighted",
            |r| {
                let ds = self.load_dataset(&specs[r], format, "train")?;
                let shape = ds
                    .examples
                    .first()
                    .ok_or_else(|| Error::config("empty train dataset"))?
                    .z
                    .shape()
                    .to_vec();
                let mut mpn =
                    build_mpn(backbone, &schema, &shape, stream_key(self.cfg.seed, 201))?;
                train_mpn(&mut mpn, &ds, &recipe)?;
                Ok(mpn)
            },
            |mpn, c| {
                let ds = self.load_dataset(&specs[c], format, "test")?;
                Ok(evaluate_mpn(mpn, None, &ds)?.weighted)
            },
        )?;
        std::fs::create_dir_all(self.out.join("matrix"))?;
        m.save(&self.out.join("matrix").join("generalization"))?;
        Ok(json!({
            "subcommand": "matrix",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "rows": m.row_labels,
            "entries": m.entries,
        }))
    }

    // ---- transfer ----

    pub fn transfer(&self) -> Result<Value> {
        let zoo = self.load_zoo()?;
        let split = self.split()?;
        let spec = self.primary_attack()?;
        let m = transfer_asr_matrix(&zoo, &spec, &split.test)?;
        std::fs::create_dir_all(self.out.join("transfer"))?;
        m.save(&self.out.join("transfer").join("asr"))?;
        let diag: Vec<f64> = (0..m.row_labels.len())
            .filter_map(|i| m.get(i, i))
            .collect();
        Ok(json!({
            "subcommand": "transfer",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "attack": spec.method.name(),
            "victims": m.row_labels.len(),
            "mean_whitebox_asr": diag.iter().sum::<f64>() / diag.len().max(1) as f64,
        }))
    }

    // ---- parse ----

    pub fn parse_input(&self, input: &Path) -> Result<Value> {
        let spec = self.primary_attack()?;
        let format = self.cfg.mpn.format()?;
        let mpn = self.load_mpn(&spec, format)?;
        let ds = crate::redset::load_dataset(input)?;
        if ds.schema != mpn.schema {
            return Err(Error::config("input schema does not match the trained model"));
        }
        let mut outputs = Vec::new();
        for chunk in ds.examples.chunks(256) {
            let refs: Vec<&crate::redset::ParsingExample> = chunk.iter().collect();
            let (batch, _) = crate::parser::stack_examples(&refs)?;
            let pred = crate::parser::predict(&mpn, None, &batch)?;
            for (i, tuple) in pred.argmax.iter().enumerate() {
                let probs: Vec<Vec<Real>> = pred
                    .probs
                    .iter()
                    .map(|p| {
                        let k = p.shape()[1];
                        p.data()[i * k..(i + 1) * k].to_vec()
                    })
                    .collect();
                outputs.push(json!({
                    "argmax": tuple,
                    "attributes": mpn.schema.decode(tuple).map(|a| a.id()).ok(),
                    "probabilities": probs,
                }));
            }
        }
        Ok(json!({
            "subcommand": "parse",
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
            "input_format": format.name(),
            "predictions": outputs,
        }))
    }
}

// ---- artifact codecs ----

pub struct RecordsInfo {
    pub attack: AttackSpec,
    pub stats: Vec<VictimGenStats>,
    pub zoo_hash: String,
}

/// Records are persisted as stacked `x` and `delta` tensors so that the
/// defining relation `x_adv = x + delta` holds bit-exactly after reload.
pub fn save_records(
    path: &Path,
    spec: &AttackSpec,
    records: &[AttackRecord],
    stats: &[VictimGenStats],
    config_hash: &str,
    zoo_hash: &str,
) -> Result<()> {
    let shape = records
        .first()
        .map(|r| r.x.shape().to_vec())
        .unwrap_or_default();
    let mut xs = Vec::new();
    let mut deltas = Vec::new();
    let mut labels = Vec::new();
    let mut attrs = Vec::new();
    for r in records {
        xs.extend_from_slice(r.x.data());
        deltas.extend_from_slice(r.delta.data());
        labels.push(r.label);
        attrs.push(r.attributes);
    }
    let meta = RecordsMeta {
        attack: spec.clone(),
        stats: stats.to_vec(),
        labels,
        attributes: attrs,
        shape: shape.clone(),
        count: records.len(),
        config_hash: config_hash.to_string(),
        zoo_hash: zoo_hash.to_string(),
    };
    let mut batch_shape = vec![records.len()];
    batch_shape.extend_from_slice(&shape);
    let tensors = vec![
        NamedTensor {
            name: "x".into(),
            tensor: Tensor::new(batch_shape.clone(), xs),
        },
        NamedTensor {
            name: "delta".into(),
            tensor: Tensor::new(batch_shape, deltas),
        },
    ];
    save_to_path(path, &meta, &tensors)
}

pub fn load_records(path: &Path) -> Result<(Vec<AttackRecord>, RecordsInfo)> {
    let (meta, tensors): (RecordsMeta, Vec<NamedTensor>) = load_from_path(path)?;
    let get = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::config(format!("records file missing tensor `{name}`")))
    };
    let xs = get("x")?;
    let deltas = get("delta")?;
    let per = meta.shape.iter().product::<usize>();
    let mut records = Vec::with_capacity(meta.count);
    for i in 0..meta.count {
        let x = Tensor::new(meta.shape.clone(), xs.tensor.data()[i * per..(i + 1) * per].to_vec());
        let delta = Tensor::new(
            meta.shape.clone(),
            deltas.tensor.data()[i * per..(i + 1) * per].to_vec(),
        );
        records.push(AttackRecord {
            x_adv: x.add(&delta),
            x,
            delta,
            label: meta.labels[i],
            attributes: meta.attributes[i],
            success: true,
            queries: 0,
            steps: 0,
        });
    }
    Ok((
        records,
        RecordsInfo {
            attack: meta.attack,
            stats: meta.stats,
            zoo_hash: meta.zoo_hash,
        },
    ))
}

pub fn load_victim(path: &Path) -> Result<TrainedVictim> {
    let (meta, tensors): (VictimMeta, Vec<NamedTensor>) = load_from_path(path)?;
    let mut net = instantiate(&meta.specs, &meta.input_shape, meta.seed)?;
    restore_network(&mut net, &tensors, "")?;
    net.set_train(false);
    Ok(TrainedVictim {
        attributes: meta.attributes,
        network: net,
        clean_acc: meta.clean_acc,
        robust_acc: meta.robust_acc,
    })
}

pub fn save_mpn(
    path: &Path,
    mpn: &MpnModel,
    format: InputFormat,
    config_hash: &str,
    seed: u64,
) -> Result<()> {
    let meta = MpnMeta {
        backbone: mpn.backbone,
        schema: mpn.schema.clone(),
        input_shape: mpn.input_shape.clone(),
        trunk_specs: mpn.trunk.specs(),
        head_specs: mpn.heads.iter().map(|h| h.specs()).collect(),
        format,
        config_hash: config_hash.to_string(),
        seed,
    };
    let mut tensors = network_tensors(&mpn.trunk, "trunk.");
    for (h, head) in mpn.heads.iter().enumerate() {
        tensors.extend(network_tensors(head, &format!("head{h}.")));
    }
    save_to_path(path, &meta, &tensors)
}

pub fn load_mpn(path: &Path) -> Result<MpnModel> {
    let (meta, tensors): (MpnMeta, Vec<NamedTensor>) = load_from_path(path)?;
    let mut trunk = instantiate(&meta.trunk_specs, &meta.input_shape, 0)?;
    restore_network(&mut trunk, &tensors, "trunk.")?;
    trunk.set_train(false);
    let mut heads = Vec::new();
    for (h, specs) in meta.head_specs.iter().enumerate() {
        let mut head = instantiate(specs, &[crate::parser::TRUNK_DIM, 1, 1], 0)?;
        restore_network(&mut head, &tensors, &format!("head{h}."))?;
        heads.push(head);
    }
    Ok(MpnModel {
        backbone: meta.backbone,
        trunk,
        heads,
        schema: meta.schema,
        input_shape: meta.input_shape,
    })
}

pub fn save_pen(path: &Path, pen: &Network<Real>, config_hash: &str, seed: u64) -> Result<()> {
    let meta = PenMeta {
        specs: pen.specs(),
        input_shape: pen.input_shape.clone(),
        config_hash: config_hash.to_string(),
        seed,
    };
    save_to_path(path, &meta, &network_tensors(pen, ""))
}

pub fn load_pen(path: &Path) -> Result<Network<Real>> {
    let (meta, tensors): (PenMeta, Vec<NamedTensor>) = load_from_path(path)?;
    let mut net = instantiate(&meta.specs, &meta.input_shape, 0)?;
    restore_network(&mut net, &tensors, "")?;
    net.set_train(false);
    Ok(net)
}
