//! Python bindings for the note template, the retrieval metric, the
//! spectral front end and the dataset generator.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use neurotext::dataset::{generate_dataset, DatasetConfig, VoteDistribution, NUM_CLASSES};

fn py_err(e: neurotext::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn votes(counts: Vec<u32>) -> PyResult<VoteDistribution> {
    let arr: [u32; NUM_CLASSES] = counts
        .try_into()
        .map_err(|_| PyValueError::new_err(format!("expected {NUM_CLASSES} vote counts")))?;
    VoteDistribution::new(arr).map_err(py_err)
}

/// Renders the expert-opinion note for six per-class vote counts.
#[pyfunction]
fn render_note(counts: Vec<u32>) -> PyResult<String> {
    Ok(neurotext::text::render_note(&votes(counts)?))
}

/// Percentages stated by a note, or None if it does not parse.
#[pyfunction]
fn parse_note(text: &str) -> Option<Vec<u32>> {
    neurotext::text::parse_note(text).map(|p| p.to_vec())
}

/// Percentages a rendered note states for these counts.
#[pyfunction]
fn note_percentages(counts: Vec<u32>) -> PyResult<Vec<u32>> {
    Ok(neurotext::text::note_percentages(&votes(counts)?).to_vec())
}

/// EEG-to-text Recall@K over paired rows; returns `[(k, recall), ...]`.
#[pyfunction]
#[pyo3(signature = (eeg, text, ks = vec![1, 5, 10]))]
fn recall_at_k(eeg: Vec<Vec<f64>>, text: Vec<Vec<f64>>, ks: Vec<usize>) -> PyResult<Vec<(usize, f64)>> {
    Ok(neurotext::eval::recall_at_k(&eeg, &text, &ks).map_err(py_err)?.recall)
}

/// Hann-windowed magnitude spectrum of one frame.
#[pyfunction]
fn frame_magnitudes(frame: Vec<f64>) -> PyResult<Vec<f64>> {
    if frame.is_empty() {
        return Err(PyValueError::new_err("empty frame"));
    }
    Ok(neurotext::signal::frame_magnitudes(&frame))
}

/// Writes a synthetic dataset and returns the number of segments.
#[pyfunction]
#[pyo3(signature = (out, patients = 60, segments_per_patient = 12, seed = 0))]
fn gen_data(out: PathBuf, patients: usize, segments_per_patient: usize, seed: u64) -> PyResult<usize> {
    let cfg = DatasetConfig { patients, segments_per_patient, seed, ..DatasetConfig::default() };
    Ok(generate_dataset(&out, &cfg).map_err(py_err)?.len())
}

#[pymodule]
fn neurotext_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(render_note, m)?)?;
    m.add_function(wrap_pyfunction!(parse_note, m)?)?;
    m.add_function(wrap_pyfunction!(note_percentages, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(frame_magnitudes, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    Ok(())
}
