use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use oinf_core::engine::{run_suite, BenchOptions, LocalDeployment, QueryOutcome, Schedule, Suite};
use oinf_core::nn::{network_by_name, ring_logits, Model};
use oinf_core::sharing::{share_tensor, RingTensor};
use oinf_core::{RingParams, RingValue, Seed};

create_exception!(oinf, OinfError, PyException);

fn err(e: oinf_core::Error) -> PyErr {
    OinfError::new_err(e.to_string())
}

fn ring(t: u32, f: u32) -> PyResult<RingParams> {
    RingParams::new(t, f).map_err(err)
}

/// Fixed-point encodes reals into ring elements.
#[pyfunction]
#[pyo3(signature = (values, t=64, f=13))]
fn encode(values: Vec<f64>, t: u32, f: u32) -> PyResult<Vec<u64>> {
    let r = ring(t, f)?;
    values.iter().map(|&v| r.encode_fixed(v).map(|x| x.0).map_err(err)).collect()
}

#[pyfunction]
#[pyo3(signature = (values, t=64, f=13))]
fn decode(values: Vec<u64>, t: u32, f: u32) -> PyResult<Vec<f64>> {
    let r = ring(t, f)?;
    Ok(values.into_iter().map(|v| r.decode_fixed(r.reduce(v))).collect())
}

/// Splits ring elements into two additive shares.
#[pyfunction]
#[pyo3(signature = (values, seed, t=64, f=13))]
fn share(values: Vec<u64>, seed: u64, t: u32, f: u32) -> PyResult<(Vec<u64>, Vec<u64>)> {
    let r = ring(t, f)?;
    let data: Vec<RingValue> = values.into_iter().map(|v| r.reduce(v)).collect();
    let plain = RingTensor::new(vec![data.len()], data).map_err(err)?;
    let (a, b) = share_tensor(&r, &plain, &mut Seed::from_u64(seed).rng());
    Ok((a.data.iter().map(|v| v.0).collect(), b.data.iter().map(|v| v.0).collect()))
}

#[pyfunction]
#[pyo3(signature = (a, b, t=64, f=13))]
fn reconstruct(a: Vec<u64>, b: Vec<u64>, t: u32, f: u32) -> PyResult<Vec<u64>> {
    let r = ring(t, f)?;
    if a.len() != b.len() {
        return Err(OinfError::new_err("share lengths differ"));
    }
    Ok(a.iter().zip(&b).map(|(&x, &y)| r.add(r.reduce(x), r.reduce(y)).0).collect())
}

/// Descriptor of a built-in network as JSON.
#[pyfunction]
#[pyo3(signature = (name, t=64, f=13))]
fn network(name: &str, t: u32, f: u32) -> PyResult<String> {
    let d = network_by_name(name, ring(t, f)?).map_err(err)?;
    serde_json::to_string(&d).map_err(|e| OinfError::new_err(e.to_string()))
}

#[pyfunction]
fn triplet_demand(name: &str) -> PyResult<usize> {
    network_by_name(name, RingParams::default())
        .and_then(|d| d.triplet_demand())
        .map_err(err)
}

/// Runs a benchmark suite and returns its key/value report.
#[pyfunction(name = "bench")]
#[pyo3(signature = (suite, runs=5))]
fn run_bench(py: Python<'_>, suite: &str, runs: usize) -> PyResult<BTreeMap<String, String>> {
    let suite: Suite = suite.parse().map_err(err)?;
    let opts = BenchOptions {
        runs: runs.max(1),
        max_runs: runs.max(1) * 3,
        ..Default::default()
    };
    let r = py.detach(|| run_suite(suite, &opts)).map_err(err)?;
    Ok(r.entries.into_iter().collect())
}

#[pyclass(frozen, get_all)]
struct Prediction {
    query: u64,
    label: usize,
    logits: Vec<f64>,
    server_ms: f64,
}

#[pymethods]
impl Prediction {
    fn __repr__(&self) -> String {
        format!("Prediction(query={}, label={}, logits={:?})", self.query, self.label, self.logits)
    }
}

impl From<QueryOutcome> for Prediction {
    fn from(q: QueryOutcome) -> Self {
        Prediction {
            query: q.query,
            label: q.class,
            logits: q.logits,
            server_ms: q.server_time.as_secs_f64() * 1e3,
        }
    }
}

/// Both servers in-process with dealer triplets, for experiments.
#[pyclass(frozen)]
struct Deployment {
    model: Model,
    inner: LocalDeployment,
}

#[pymethods]
impl Deployment {
    /// `network` names a built-in network with random weights; `model`
    /// is an OIMD file and takes precedence.
    #[new]
    #[pyo3(signature = (network="network1", seed=0, latency_ms=0.0, model=None))]
    fn new(network: &str, seed: u64, latency_ms: f64, model: Option<PathBuf>) -> PyResult<Self> {
        let s = Seed::from_u64(seed);
        let model = match model {
            Some(p) => Model::load(&p).map_err(err)?,
            None => {
                let d = network_by_name(network, RingParams::default()).map_err(err)?;
                Model::random(d, 1.0, &mut s.rng_for("py-model", 0))
            }
        };
        let latency = Duration::from_secs_f64(latency_ms.max(0.0) / 1e3);
        let inner = LocalDeployment::with_dealer(&model, latency, s.derive("py-deployment", 0)).map_err(err)?;
        Ok(Deployment { model, inner })
    }

    fn query(&self, py: Python<'_>, image: Vec<f64>) -> PyResult<Prediction> {
        py.detach(|| self.inner.query(&image, false)).map(Into::into).map_err(err)
    }

    #[pyo3(signature = (images, asynchronous=true))]
    fn run(&self, py: Python<'_>, images: Vec<Vec<f64>>, asynchronous: bool) -> PyResult<(Vec<Prediction>, f64)> {
        let s = if asynchronous { Schedule::Async } else { Schedule::Sync };
        let b = py.detach(|| self.inner.run(&images, s, false)).map_err(err)?;
        Ok((b.queries.into_iter().map(Into::into).collect(), b.elapsed.as_secs_f64()))
    }

    /// Plaintext fixed-point logits for the same model.
    fn reference(&self, image: Vec<f64>) -> PyResult<Vec<f64>> {
        ring_logits(&self.model, &image).map_err(err)
    }

    fn triplets_per_query(&self) -> PyResult<usize> {
        self.model.desc.triplet_demand().map_err(err)
    }
}

#[pymodule]
fn oinf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OinfError", m.py().get_type::<OinfError>())?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(share, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(network, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_demand, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_class::<Prediction>()?;
    m.add_class::<Deployment>()?;
    Ok(())
}
