//! Python bindings for `anchorlink`.
//!
//! Structured results (stats, partitions, manifests) cross the boundary as
//! plain dicts and lists built from their JSON form.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use anchorlink::classify::{classify_link_with, partition_neighbors_with};
use anchorlink::corpus::{write_canonical, Corpus as CoreCorpus};
use anchorlink::graph::LinkGraph as CoreGraph;
use anchorlink::ingest::{clean_corpus, resolve_anchors};
use anchorlink::mask::TokenSpan;
use anchorlink::pipeline::{read_input, InputFormat};
use anchorlink::sampler::SamplerConfig;
use anchorlink::store::{store_write, Store};
use anchorlink::{DocId, Error, MaskConfig, OutOfSegmentPolicy, Span, Stage};

/// `(index, action, original, replacement)`.
type PlanRow = (usize, String, String, Option<String>);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NotFound(_) => PyKeyError::new_err(e.to_string()),
        Error::Config { .. }
        | Error::Infeasible(_)
        | Error::Precondition(_)
        | Error::InvalidDocument { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Converts any serializable value to Python objects via `json.loads`.
fn to_object<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn policy(strict: bool) -> OutOfSegmentPolicy {
    if strict {
        OutOfSegmentPolicy::Strict
    } else {
        OutOfSegmentPolicy::Literal
    }
}

/// A cleaned, resolved document collection.
#[pyclass(module = "anchorlink", frozen)]
struct Corpus {
    inner: CoreCorpus,
}

#[pymethods]
impl Corpus {
    /// Reads canonical JSONL or WikiExtractor output, resolves anchors and
    /// drops documents under 100 words. Returns `(corpus, stats)`.
    #[staticmethod]
    #[pyo3(signature = (path, format=None))]
    fn ingest<'py>(
        py: Python<'py>,
        path: PathBuf,
        format: Option<&str>,
    ) -> PyResult<(Corpus, Bound<'py, PyAny>)> {
        let format = match format {
            Some(f) => f.parse().map_err(to_py)?,
            None if path.extension().is_some_and(|e| e == "jsonl") => InputFormat::Jsonl,
            None => InputFormat::WikiExtractor,
        };
        let (inner, stats) = py
            .detach(|| -> anchorlink::Result<_> {
                let (docs, _) = read_input(&path, format)?;
                let (docs, _) = resolve_anchors(docs);
                let (docs, stats) = clean_corpus(docs);
                Ok((CoreCorpus::new(docs)?, stats))
            })
            .map_err(to_py)?;
        Ok((Corpus { inner }, to_object(py, &stats)?))
    }

    /// Loads every document from a store directory.
    #[staticmethod]
    fn from_store(py: Python<'_>, dir: PathBuf) -> PyResult<Corpus> {
        let inner = py.detach(|| Store::open(&dir)?.load_all()).map_err(to_py)?;
        Ok(Corpus { inner })
    }

    /// Generates a synthetic corpus. `spec` keys match the `synth.*`
    /// configuration keys without the prefix. Returns `(corpus, ground_truth)`.
    #[staticmethod]
    #[pyo3(signature = (spec=None))]
    fn synthetic<'py>(
        py: Python<'py>,
        spec: Option<BTreeMap<String, String>>,
    ) -> PyResult<(Corpus, Bound<'py, PyAny>)> {
        let mut settings: BTreeMap<String, String> = spec
            .unwrap_or_default()
            .into_iter()
            .map(|(k, v)| (format!("synth.{k}"), v))
            .collect();
        settings.insert("out".into(), ".".into());
        let cfg = anchorlink::pipeline::PipelineConfig::from_settings(settings).map_err(to_py)?;
        let synth = anchorlink::generate(&cfg.synth).map_err(to_py)?;
        let truth = to_object(py, &synth.ground_truth)?;
        let (docs, _) = resolve_anchors(synth.docs);
        let (docs, _) = clean_corpus(docs);
        Ok((
            Corpus {
                inner: CoreCorpus::new(docs).map_err(to_py)?,
            },
            truth,
        ))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn doc_ids(&self) -> Vec<u64> {
        self.inner.docs().iter().map(|d| d.id.0).collect()
    }

    /// The document in canonical form (a dict).
    fn document<'py>(&self, py: Python<'py>, id: u64) -> PyResult<Bound<'py, PyAny>> {
        let doc = self
            .inner
            .get(DocId(id))
            .ok_or_else(|| to_py(Error::NotFound(DocId(id))))?;
        let line = anchorlink::corpus::to_canonical_line(doc);
        py.import("json")?.call_method1("loads", (line,))
    }

    /// Text of segment `segment` (1-based) of document `id`.
    fn segment_text(&self, id: u64, segment: u32) -> PyResult<String> {
        self.inner
            .get(DocId(id))
            .and_then(|d| d.segment(segment))
            .map(|s| s.text.clone())
            .ok_or_else(|| PyKeyError::new_err(format!("no segment {segment} in doc {id}")))
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn write_store(&self, py: Python<'_>, dir: PathBuf) -> PyResult<()> {
        py.detach(|| store_write(self.inner.docs(), &dir))
            .map_err(to_py)
    }

    fn write_jsonl(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        write_canonical(std::io::BufWriter::new(file), self.inner.docs())
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Corpus(docs={})", self.inner.len())
    }
}

/// Forward links and backlink segments of a corpus.
#[pyclass(module = "anchorlink", frozen)]
struct LinkGraph {
    inner: CoreGraph,
}

#[pymethods]
impl LinkGraph {
    #[new]
    fn new(py: Python<'_>, corpus: &Corpus) -> PyResult<Self> {
        let inner = py
            .detach(|| anchorlink::build_graph(&corpus.inner))
            .map_err(to_py)?;
        Ok(LinkGraph { inner })
    }

    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    /// `(dst, segment_index)` for every anchor of `doc`.
    fn forward(&self, doc: u64) -> Vec<(u64, u32)> {
        self.inner
            .forward(DocId(doc))
            .iter()
            .map(|o| (o.dst.0, o.segment_index))
            .collect()
    }

    /// Smallest segment of `d_i` linking back to `d`, if any.
    fn backlink_segment(&self, d: u64, d_i: u64) -> Option<u32> {
        self.inner.backlink_segment(DocId(d), DocId(d_i))
    }

    /// Relation label ("D1".."D4") of `d_i` for query segment `(d, s)`;
    /// `None` when the strict policy excludes it.
    #[pyo3(signature = (d, s, d_i, strict=false))]
    fn classify(&self, d: u64, s: u32, d_i: u64, strict: bool) -> PyResult<Option<&'static str>> {
        classify_link_with(&self.inner, DocId(d), s, DocId(d_i), policy(strict))
            .map(|r| r.map(|r| r.label()))
            .map_err(to_py)
    }

    /// `{"D1": [...], ..., "D4": [...], "excluded": [...]}` for `(d, s)`.
    #[pyo3(signature = (d, s, strict=false))]
    fn partition(&self, d: u64, s: u32, strict: bool) -> PyResult<BTreeMap<String, Vec<u64>>> {
        let p =
            partition_neighbors_with(&self.inner, DocId(d), s, policy(strict)).map_err(to_py)?;
        let mut out: BTreeMap<String, Vec<u64>> = p
            .groups
            .iter()
            .map(|(r, ids)| (r.label().to_string(), ids.iter().map(|i| i.0).collect()))
            .collect();
        out.insert("excluded".into(), p.excluded.iter().map(|i| i.0).collect());
        Ok(out)
    }

    #[pyo3(signature = (strict=false))]
    fn classify_stats<'py>(&self, py: Python<'py>, strict: bool) -> PyResult<Bound<'py, PyAny>> {
        let stats =
            anchorlink::classify::classify_stats(&self.inner, policy(strict)).map_err(to_py)?;
        to_object(py, &stats)
    }
}

/// Writes shards for one stage and returns the stage manifest as a dict.
#[pyfunction]
#[pyo3(signature = (corpus, graph, stage, out_dir, k_neg=24, seed=0, allow_replacement=true,
                    max_queries_per_doc=3, examples_per_shard=10_000, strict=false))]
#[allow(clippy::too_many_arguments)]
fn sample<'py>(
    py: Python<'py>,
    corpus: &Corpus,
    graph: &LinkGraph,
    stage: &str,
    out_dir: PathBuf,
    k_neg: usize,
    seed: u64,
    allow_replacement: bool,
    max_queries_per_doc: usize,
    examples_per_shard: usize,
    strict: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let stage: Stage = stage.parse().map_err(to_py)?;
    let cfg = SamplerConfig {
        k_neg,
        allow_replacement,
        max_queries_per_doc,
        seed,
        examples_per_shard,
        policy: policy(strict),
    };
    let manifest = py
        .detach(|| anchorlink::generate_shards(&corpus.inner, &graph.inner, stage, &cfg, &out_dir))
        .map_err(to_py)?;
    to_object(py, &manifest)
}

/// Lowercased word/punctuation tokens as `(text, is_anchor)` pairs.
/// `anchors` are character spans `(start, end)`.
#[pyfunction]
#[pyo3(signature = (text, anchors=Vec::new()))]
fn tokenize(text: &str, anchors: Vec<(usize, usize)>) -> Vec<(String, bool)> {
    let spans: Vec<Span> = anchors.into_iter().map(|(s, e)| Span::new(s, e)).collect();
    anchorlink::mask::tokenize(text, &spans)
        .into_iter()
        .map(|t| (t.text, t.is_anchor))
        .collect()
}

/// Mask plan for `[CLS] query [SEP] doc [SEP]` built from `(text, is_anchor)`
/// tokens. Returns `(tokens, plan)` where each plan entry is
/// `(index, action, original, replacement)`.
#[pyfunction]
#[pyo3(signature = (query, doc, vocab, example_id, seed=0, anchor_ratio=0.5, base_ratio=0.15))]
#[allow(clippy::too_many_arguments)]
fn plan_mask(
    query: Vec<(String, bool)>,
    doc: Vec<(String, bool)>,
    vocab: Vec<String>,
    example_id: u64,
    seed: u64,
    anchor_ratio: f64,
    base_ratio: f64,
) -> PyResult<(Vec<String>, Vec<PlanRow>)> {
    let side = |tokens: Vec<(String, bool)>| -> Vec<TokenSpan> {
        tokens
            .into_iter()
            .map(|(text, is_anchor)| TokenSpan {
                text,
                start: 0,
                end: 0,
                is_anchor,
                is_special: false,
            })
            .collect()
    };
    let tokens = anchorlink::mask::pair_tokens(side(query), side(doc));
    let vocab =
        anchorlink::Vocab::build(vocab.iter().map(String::as_str), usize::MAX).map_err(to_py)?;
    let cfg = MaskConfig {
        seed,
        anchor_ratio,
        base_ratio,
        ..Default::default()
    };
    let plan = anchorlink::plan_mask(&tokens, &cfg, &vocab, example_id).map_err(to_py)?;
    let rows = plan
        .decisions
        .into_iter()
        .map(|d| {
            let action = serde_json::to_value(d.action)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            (d.index, action, d.original, d.replacement)
        })
        .collect();
    Ok((tokens.into_iter().map(|t| t.text).collect(), rows))
}

/// Runs a CLI command (`ingest`, `build-graph`, `classify-stats`, `sample`,
/// `mask`, `synth`, `all`) with configuration `settings` and returns the run
/// manifest. Raises if any step failed.
#[pyfunction]
fn run_pipeline<'py>(
    py: Python<'py>,
    command: &str,
    settings: BTreeMap<String, String>,
) -> PyResult<Bound<'py, PyAny>> {
    use anchorlink::pipeline::{run, Command, PipelineConfig};
    let command = match command {
        "ingest" => Command::Ingest,
        "build-graph" => Command::BuildGraph,
        "classify-stats" => Command::ClassifyStats,
        "sample" => Command::Sample,
        "mask" => Command::Mask,
        "synth" => Command::Synth,
        "all" => Command::All,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    };
    let cfg = PipelineConfig::from_settings(settings).map_err(to_py)?;
    let outcome = py.detach(|| run(command, &cfg)).map_err(to_py)?;
    if let Some(e) = outcome.error {
        return Err(to_py(e));
    }
    to_object(py, &outcome.manifest)
}

#[pymodule]
#[pyo3(name = "anchorlink")]
fn anchorlink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<LinkGraph>()?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(plan_mask, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
