//! Python bindings for the redlab testbed.
//!
//! Exposes the main building blocks (synthetic data, victim training, lp
//! attacks) plus the full experiment pipeline driven by a TOML config.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use redlab_core::attack::{single_attack, AttackMethod, AttackSpec};
use redlab_core::config::ExperimentConfig;
use redlab_core::data::{synth_dataset, LabeledImages, SyntheticSpec};
use redlab_core::diffnet::ActKind;
use redlab_core::pipeline::Pipeline as CorePipeline;
use redlab_core::victim::{
    argmax, zoo_build, ArchFamily, ModelAttributes, TrainRecipe, TrainedVictim,
};
use redlab_core::{Error, Tensor};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(msg) => PyValueError::new_err(msg),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Convert a JSON value into the matching Python object.
fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty_bound(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            dict.into_py(py)
        }
    })
}

/// A labeled image collection in [0, 1] pixel range.
#[pyclass]
struct Dataset {
    inner: LabeledImages,
}

#[pymethods]
impl Dataset {
    /// Generate the synthetic per-class-template dataset.
    #[staticmethod]
    #[pyo3(signature = (classes=10, image_size=16, samples_per_class=100, noise_sigma=0.1, template_seed=17))]
    fn synthetic(
        classes: usize,
        image_size: usize,
        samples_per_class: usize,
        noise_sigma: f64,
        template_seed: u64,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            classes,
            image_size,
            template_seed,
            noise_sigma,
            samples_per_class,
        };
        let inner = synth_dataset(&spec).map_err(to_py_err)?;
        Ok(Dataset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Image shape as (channels, height, width).
    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape.clone()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.class_count
    }

    /// Flat pixel values of image `i` (row-major over the shape).
    fn image(&self, i: usize) -> PyResult<Vec<f32>> {
        self.inner
            .images
            .get(i)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("index {i} out of range")))
    }

    fn label(&self, i: usize) -> PyResult<usize> {
        self.inner
            .labels
            .get(i)
            .copied()
            .ok_or_else(|| PyValueError::new_err(format!("index {i} out of range")))
    }

    /// New dataset restricted to the given indices.
    fn subset(&self, indices: Vec<usize>) -> PyResult<Dataset> {
        for &i in &indices {
            if i >= self.inner.len() {
                return Err(PyValueError::new_err(format!("index {i} out of range")));
            }
        }
        Ok(Dataset {
            inner: self.inner.subset(&indices),
        })
    }
}

/// A trained classifier with controlled architecture attributes.
#[pyclass]
struct Victim {
    inner: TrainedVictim,
}

#[pymethods]
impl Victim {
    /// Train a victim on `data`, evaluating clean accuracy on `val`
    /// (defaults to the training data when omitted).
    #[staticmethod]
    #[pyo3(signature = (data, family, kernel_size=3, activation="relu", sparsity=0.0,
                        epochs=10, width=0.25, lr=0.1, batch_size=32, seed=0, val=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        data: &Dataset,
        family: &str,
        kernel_size: usize,
        activation: &str,
        sparsity: f64,
        epochs: usize,
        width: f64,
        lr: f64,
        batch_size: usize,
        seed: u64,
        val: Option<&Dataset>,
    ) -> PyResult<Self> {
        let attrs = ModelAttributes {
            at: ArchFamily::parse(family).map_err(to_py_err)?,
            ks: kernel_size,
            af: ActKind::parse(activation).map_err(to_py_err)?,
            ws: sparsity,
            robust: false,
        };
        attrs.validate().map_err(to_py_err)?;
        let recipe = TrainRecipe {
            epochs,
            lr,
            width,
            batch_size,
            seed,
            ..TrainRecipe::default()
        };
        let val_images = val.map(|d| &d.inner).unwrap_or(&data.inner);
        let zoo = zoo_build(&[attrs], &data.inner, val_images, &recipe, None)
            .map_err(to_py_err)?;
        match zoo.victims.into_iter().next() {
            Some(inner) => Ok(Victim { inner }),
            None => {
                let msg = zoo.manifest[0]
                    .error
                    .clone()
                    .unwrap_or_else(|| "victim training failed".into());
                Err(PyRuntimeError::new_err(msg))
            }
        }
    }

    /// Attribute quadruple as a dict.
    #[getter]
    fn attributes(&self, py: Python<'_>) -> PyResult<PyObject> {
        let a = &self.inner.attributes;
        let dict = PyDict::new_bound(py);
        dict.set_item("family", a.at.name())?;
        dict.set_item("kernel_size", a.ks)?;
        dict.set_item("activation", a.af.name())?;
        dict.set_item("sparsity", a.ws)?;
        dict.set_item("id", a.id())?;
        Ok(dict.into_py(py))
    }

    #[getter]
    fn clean_accuracy(&self) -> f64 {
        self.inner.clean_acc
    }

    /// Logits for a single flat image.
    fn logits(&self, image: Vec<f32>, shape: Vec<usize>) -> PyResult<Vec<f32>> {
        let mut batch_shape = vec![1];
        batch_shape.extend_from_slice(&shape);
        let x = Tensor::new(batch_shape, image);
        let out = self.inner.network.predict(&x).map_err(to_py_err)?;
        Ok(out.data().to_vec())
    }

    /// Predicted class for a single flat image.
    fn predict(&self, image: Vec<f32>, shape: Vec<usize>) -> PyResult<usize> {
        Ok(argmax(&self.logits(image, shape)?))
    }
}

/// Run one lp attack against a victim on one dataset example.
///
/// Returns a dict with the adversarial image, perturbation norms, and the
/// success / query bookkeeping.
#[pyfunction]
#[pyo3(signature = (victim, data, index, method, eps, seed=0, steps=None))]
fn attack(
    py: Python<'_>,
    victim: &Victim,
    data: &Dataset,
    index: usize,
    method: &str,
    eps: f64,
    seed: u64,
    steps: Option<usize>,
) -> PyResult<PyObject> {
    if index >= data.inner.len() {
        return Err(PyValueError::new_err(format!("index {index} out of range")));
    }
    let m = AttackMethod::parse(method).map_err(to_py_err)?;
    let mut spec = AttackSpec::defaults(m, eps, seed);
    if let Some(s) = steps {
        spec.steps = s;
    }
    spec.validate().map_err(to_py_err)?;
    let x = &data.inner.images[index];
    let y = data.inner.labels[index];
    let out =
        single_attack(&victim.inner.network, x, y, &spec, index as u64).map_err(to_py_err)?;
    let delta: Vec<f32> = out
        .x_adv
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, c)| a - c)
        .collect();
    let linf = delta.iter().fold(0f32, |m, d| m.max(d.abs()));
    let l2 = delta.iter().map(|d| d * d).sum::<f32>().sqrt();
    let dict = PyDict::new_bound(py);
    dict.set_item("success", out.success)?;
    dict.set_item("queries", out.queries)?;
    dict.set_item("steps", out.steps)?;
    dict.set_item("linf", linf)?;
    dict.set_item("l2", l2)?;
    dict.set_item("x_adv", out.x_adv.data().to_vec())?;
    dict.set_item("delta", delta)?;
    dict.set_item("label", y)?;
    Ok(dict.into_py(py))
}

/// The full experiment pipeline, driven by a TOML config file.
///
/// Each stage method mirrors the CLI subcommand of the same name and
/// returns the same JSON summary as a dict.
#[pyclass]
struct Pipeline {
    inner: CorePipeline,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (config_path, out_dir, seed=None))]
    fn new(config_path: PathBuf, out_dir: PathBuf, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = ExperimentConfig::from_path(&config_path).map_err(to_py_err)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let inner = CorePipeline::new(cfg, out_dir).map_err(to_py_err)?;
        Ok(Pipeline { inner })
    }

    fn train_victims(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.train_victims().map_err(to_py_err)?)
    }

    fn attack(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.attack().map_err(to_py_err)?)
    }

    fn build_dataset(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.build_dataset().map_err(to_py_err)?)
    }

    fn train_mpn(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.train_mpn().map_err(to_py_err)?)
    }

    fn train_pen(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.train_pen().map_err(to_py_err)?)
    }

    fn train_joint(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.train_joint().map_err(to_py_err)?)
    }

    fn evaluate(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.evaluate().map_err(to_py_err)?)
    }

    fn matrix(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.matrix().map_err(to_py_err)?)
    }

    fn transfer(&self, py: Python<'_>) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.transfer().map_err(to_py_err)?)
    }

    fn parse(&self, py: Python<'_>, input: PathBuf) -> PyResult<PyObject> {
        json_to_py(py, &self.inner.parse_input(&input).map_err(to_py_err)?)
    }
}

/// Names of all implemented attack methods.
#[pyfunction]
fn attack_methods() -> Vec<&'static str> {
    AttackMethod::ALL.iter().map(|m| m.name()).collect()
}

#[pymodule]
fn redlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Victim>()?;
    m.add_class::<Pipeline>()?;
    m.add_function(wrap_pyfunction!(attack, m)?)?;
    m.add_function(wrap_pyfunction!(attack_methods, m)?)?;
    Ok(())
}
