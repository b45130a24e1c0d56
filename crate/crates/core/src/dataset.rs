//! Synthetic class-conditioned recordings, simulated expert votes, the
//! segment manifest, subject-exclusive splits and batching.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::rng::{seed_all, StreamRng};
use crate::signal::{RawRecording, DEFAULT_SAMPLE_RATE, ELECTRODES, LEFT_HEMISPHERE};

pub const NUM_CLASSES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Seizure = 0,
    Lpd = 1,
    Gpd = 2,
    Lrda = 3,
    Grda = 4,
    Other = 5,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::Seizure,
        ClassLabel::Lpd,
        ClassLabel::Gpd,
        ClassLabel::Lrda,
        ClassLabel::Grda,
        ClassLabel::Other,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    /// Manifest spelling.
    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Seizure => "Seizure",
            ClassLabel::Lpd => "LPD",
            ClassLabel::Gpd => "GPD",
            ClassLabel::Lrda => "LRDA",
            ClassLabel::Grda => "GRDA",
            ClassLabel::Other => "Other",
        }
    }

    /// Wording used in clinical notes.
    pub fn pattern_phrase(self) -> &'static str {
        match self {
            ClassLabel::Seizure => "seizure activity",
            ClassLabel::Lpd => "lateralized periodic discharges",
            ClassLabel::Gpd => "generalized periodic discharges",
            ClassLabel::Lrda => "lateralized rhythmic delta activity",
            ClassLabel::Grda => "generalized rhythmic delta activity",
            ClassLabel::Other => "other patterns",
        }
    }

    /// Classes annotators plausibly confuse with this one.
    pub fn confusable(self) -> [ClassLabel; 2] {
        use ClassLabel::*;
        match self {
            Seizure => [Lpd, Other],
            Lpd => [Gpd, Other],
            Gpd => [Lpd, Other],
            Lrda => [Grda, Other],
            Grda => [Lrda, Other],
            Other => [Grda, Lrda],
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown class `{s}`")))
    }
}

/// Per-class annotator vote counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VoteDistribution {
    pub counts: [u32; NUM_CLASSES],
}

impl VoteDistribution {
    pub fn new(counts: [u32; NUM_CLASSES]) -> Result<Self> {
        if counts.iter().sum::<u32>() == 0 {
            return Err(Error::Contract("vote distribution with zero annotators".into()));
        }
        Ok(VoteDistribution { counts })
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Argmax of the counts, ties to the lowest class id.
    pub fn consensus(&self) -> ClassLabel {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.counts[i] > self.counts[best] {
                best = i;
            }
        }
        ClassLabel::ALL[best]
    }
}

/// Integer counts closest to `fractions · annotators`; any rounding residual
/// goes to the largest fraction.
pub fn votes_from_fractions(fractions: [f64; NUM_CLASSES], annotators: u32) -> Result<VoteDistribution> {
    if annotators == 0 {
        return Err(Error::Contract("annotators must be >= 1".into()));
    }
    let mut counts = [0u32; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        counts[i] = (fractions[i].max(0.0) * annotators as f64 + 0.5).floor() as u32;
    }
    let largest = (0..NUM_CLASSES).fold(0, |b, i| if fractions[i] > fractions[b] { i } else { b });
    let sum: i64 = counts.iter().map(|&c| c as i64).sum();
    let fixed = counts[largest] as i64 + annotators as i64 - sum;
    if fixed < 0 {
        return Err(Error::Contract("fractions exceed the annotator count".into()));
    }
    counts[largest] = fixed as u32;
    VoteDistribution::new(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgreementMode {
    Full,
    Mixed,
}

/// Simulated annotator votes whose argmax is `label`.
///
/// Mixed mode gives the dominant class at least `ceil(0.4·n)` votes and
/// strictly more than any other class; the rest is split between the two
/// confusable classes.
pub fn simulate_votes(label: ClassLabel, annotators: u32, mode: AgreementMode, rng: &mut impl Rng) -> Result<VoteDistribution> {
    if annotators == 0 {
        return Err(Error::Contract("annotators must be >= 1".into()));
    }
    let n = annotators;
    let mut counts = [0u32; NUM_CLASSES];
    match mode {
        AgreementMode::Full => counts[label.id()] = n,
        AgreementMode::Mixed => {
            let min_dominant = (0.4 * n as f64).ceil().max(((n + 2) as f64 / 3.0).ceil()).max(1.0) as u32;
            let share: f64 = rng.random_range(0.45..0.85);
            let d = ((share * n as f64).round() as u32).clamp(min_dominant, n);
            let rem = n - d;
            let mut sib = if rem > 0 { rng.random_range(0..=rem) } else { 0 };
            let mut oth = rem - sib;
            while sib >= d {
                sib -= 1;
                oth += 1;
            }
            while oth >= d {
                oth -= 1;
                sib += 1;
            }
            let [s, o] = label.confusable();
            counts[label.id()] = d;
            counts[s.id()] = sib;
            counts[o.id()] = oth;
        }
    }
    VoteDistribution::new(counts)
}

// ---------------------------------------------------------------------------
// Synthetic recordings

/// Front-to-back amplitude gradient so that generalized patterns survive
/// bipolar subtraction.
fn electrode_gain(label: &str) -> f64 {
    match label {
        "Fp1" | "Fp2" => 1.0,
        "F3" | "F4" | "F7" | "F8" | "Fz" => 0.7,
        "C3" | "C4" | "T3" | "T4" | "Cz" => 0.45,
        "P3" | "P4" | "T5" | "T6" | "Pz" => 0.25,
        "O1" | "O2" => 0.1,
        _ => 0.0,
    }
}

/// Propagation delay in seconds along the front-to-back axis.
fn electrode_lag(label: &str) -> f64 {
    let step = match label {
        "Fp1" | "Fp2" => 0.0,
        "F3" | "F4" | "F7" | "F8" | "Fz" => 1.0,
        "C3" | "C4" | "T3" | "T4" | "Cz" => 2.0,
        "P3" | "P4" | "T5" | "T6" | "Pz" => 3.0,
        _ => 4.0,
    };
    0.015 * step
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub sample_rate_hz: f64,
    pub duration_seconds: f64,
    /// RMS of the per-electrode pink background, µV.
    pub background_uv: f64,
    /// Peak amplitude of the class signature, µV.
    pub signature_uv: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            duration_seconds: 14.0,
            background_uv: 10.0,
            signature_uv: 50.0,
        }
    }
}

/// Per-patient perturbation within ±20%.
struct PatientTraits {
    amp: f64,
    freq: f64,
}

impl PatientTraits {
    fn draw(seed: u64) -> Self {
        let mut rng = seed_all(seed).stream("patient");
        PatientTraits {
            amp: rng.random_range(0.8..=1.2),
            freq: rng.random_range(0.8..=1.2),
        }
    }
}

/// Pink (1/f) noise via Kellet's filter on white Gaussian noise, scaled to
/// unit RMS.
fn pink_noise(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = rng.sample(StandardNormal);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        out.push(b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362);
        b[6] = w * 0.115926;
    }
    let mean = out.iter().sum::<f64>() / n.max(1) as f64;
    let rms = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1) as f64).sqrt();
    out.iter().map(|v| (v - mean) / rms.max(1e-12)).collect()
}

/// Unit triangular spike of `width` seconds centred on every multiple of
/// `period` (shifted by `phase`), evaluated at time `t`.
fn spike_train(t: f64, period: f64, phase: f64, width: f64) -> f64 {
    let x = (t - phase).rem_euclid(period);
    let d = x.min(period - x);
    let half = width / 2.0;
    if d < half {
        1.0 - d / half
    } else {
        0.0
    }
}

/// 19-electrode recording of a class signature over pink background.
///
/// * GRDA: 1.5–3 Hz sinusoid on all electrodes; LRDA: same, left only.
/// * GPD: 1 Hz train of 100 ms triangular spikes on all electrodes; LPD: left only.
/// * Seizure: chirp sweeping 3 → 12 Hz with growing amplitude.
/// * Other: background only.
///
/// Samples are rounded to `f32` so that a W2W1 round trip is lossless.
pub fn synthesize_recording(label: ClassLabel, patient_seed: u64, segment_seed: u64, cfg: &SynthConfig) -> RawRecording {
    let traits = PatientTraits::draw(patient_seed);
    let mut rng = seed_all(segment_seed).stream("segment");
    let fs = cfg.sample_rate_hz;
    let n = (cfg.duration_seconds * fs).round() as usize;
    let amp = cfg.signature_uv * traits.amp * rng.random_range(0.9..=1.1);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let delta_freq = rng.random_range(1.5..=3.0) * traits.freq;
    let spike_period = 1.0 / traits.freq;
    let spike_phase: f64 = rng.random_range(0.0..spike_period);
    let chirp_lo = 3.0 * traits.freq;
    let chirp_hi = 12.0 * traits.freq;

    let lateral = matches!(label, ClassLabel::Lpd | ClassLabel::Lrda);
    let mut samples = Vec::with_capacity(ELECTRODES.len());
    for &e in ELECTRODES.iter() {
        let bg = pink_noise(n, &mut rng);
        let gain = if lateral && !LEFT_HEMISPHERE.contains(&e) {
            0.0
        } else {
            electrode_gain(e)
        };
        let lag = electrode_lag(e);
        let row: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs - lag;
                let sig = match label {
                    ClassLabel::Grda | ClassLabel::Lrda => (std::f64::consts::TAU * delta_freq * t + phase).sin(),
                    ClassLabel::Gpd | ClassLabel::Lpd => 3.0 * spike_train(t, spike_period, spike_phase, 0.1),
                    ClassLabel::Seizure => {
                        let dur = cfg.duration_seconds;
                        let k = (chirp_hi - chirp_lo) / dur;
                        let growth = 0.4 + 0.8 * (t / dur).clamp(0.0, 1.0);
                        growth * (std::f64::consts::TAU * (chirp_lo * t + 0.5 * k * t * t) + phase).sin()
                    }
                    ClassLabel::Other => 0.0,
                };
                let v = cfg.background_uv * bg[i] + amp * gain * sig;
                v as f32 as f64
            })
            .collect();
        samples.push(row);
    }
    RawRecording::new(ELECTRODES.iter().map(|s| s.to_string()).collect(), samples, fs)
        .expect("synthesized recording is well formed")
}

// ---------------------------------------------------------------------------
// Manifest

pub const MANIFEST_HEADER: &str = "eeg_id,eeg_sub_id,eeg_label_offset_seconds,patient_id,expert_consensus,seizure_vote,lpd_vote,gpd_vote,lrda_vote,grda_vote,other_vote,file_path";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub eeg_id: String,
    pub eeg_sub_id: String,
    pub eeg_label_offset_seconds: f64,
    pub patient_id: String,
    pub expert_consensus: ClassLabel,
    pub votes: VoteDistribution,
    pub file_path: String,
}

impl ManifestRow {
    fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("eeg_id", &self.eeg_id),
            ("eeg_sub_id", &self.eeg_sub_id),
            ("patient_id", &self.patient_id),
            ("file_path", &self.file_path),
        ] {
            if v.is_empty() || v.contains([',', '"', '\n', '\r']) {
                return Err(format!("{name} `{v}` is empty or contains a delimiter"));
            }
        }
        if !(self.eeg_label_offset_seconds >= 0.0) || !self.eeg_label_offset_seconds.is_finite() {
            return Err(format!("offset {} must be finite and >= 0", self.eeg_label_offset_seconds));
        }
        if self.votes.total() == 0 {
            return Err("no votes".into());
        }
        if self.votes.consensus() != self.expert_consensus {
            return Err(format!(
                "expert_consensus {} disagrees with vote argmax {}",
                self.expert_consensus,
                self.votes.consensus()
            ));
        }
        Ok(())
    }
}

fn check_unique_ids(rows: &[ManifestRow]) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, r) in rows.iter().enumerate() {
        if !seen.insert((r.eeg_id.as_str(), r.eeg_sub_id.as_str())) {
            return Err(Error::Manifest {
                row: i + 1,
                reason: format!("duplicate (eeg_id, eeg_sub_id) = ({}, {})", r.eeg_id, r.eeg_sub_id),
            });
        }
    }
    Ok(())
}

pub fn manifest_to_string(rows: &[ManifestRow]) -> Result<String> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        r.validate().map_err(|reason| Error::Manifest { row: i + 1, reason })?;
        let c = &r.votes.counts;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.eeg_id,
            r.eeg_sub_id,
            r.eeg_label_offset_seconds,
            r.patient_id,
            r.expert_consensus,
            c[0],
            c[1],
            c[2],
            c[3],
            c[4],
            c[5],
            r.file_path
        ));
    }
    check_unique_ids(rows)?;
    Ok(out)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    write_atomic(path, manifest_to_string(rows)?.as_bytes())
}

/// Parses manifest text; row numbers in errors are 1-based data rows.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim_end() != MANIFEST_HEADER {
        return Err(Error::Manifest {
            row: 0,
            reason: format!("header mismatch: `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Manifest { row, reason };
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 12 {
            return Err(bad(format!("expected 12 fields, found {}", f.len())));
        }
        let offset: f64 = f[2].parse().map_err(|_| bad(format!("bad offset `{}`", f[2])))?;
        let consensus: ClassLabel = f[4].parse().map_err(|_| bad(format!("bad consensus `{}`", f[4])))?;
        let mut counts = [0u32; NUM_CLASSES];
        for k in 0..NUM_CLASSES {
            counts[k] = f[5 + k].parse().map_err(|_| bad(format!("bad vote count `{}`", f[5 + k])))?;
        }
        let r = ManifestRow {
            eeg_id: f[0].to_string(),
            eeg_sub_id: f[1].to_string(),
            eeg_label_offset_seconds: offset,
            patient_id: f[3].to_string(),
            expert_consensus: consensus,
            votes: VoteDistribution { counts },
            file_path: f[11].to_string(),
        };
        r.validate().map_err(bad)?;
        rows.push(r);
    }
    check_unique_ids(&rows)?;
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    parse_manifest(&read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Splits and batches

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SplitSpec {
    pub fn split_of(&self, patient: &str) -> Option<Split> {
        if self.train.iter().any(|p| p == patient) {
            Some(Split::Train)
        } else if self.val.iter().any(|p| p == patient) {
            Some(Split::Val)
        } else if self.test.iter().any(|p| p == patient) {
            Some(Split::Test)
        } else {
            None
        }
    }

    /// Row indices per split, in manifest order.
    pub fn assign(&self, rows: &[ManifestRow]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
        for (i, r) in rows.iter().enumerate() {
            match self.split_of(&r.patient_id) {
                Some(Split::Train) => tr.push(i),
                Some(Split::Val) => va.push(i),
                Some(Split::Test) => te.push(i),
                None => {}
            }
        }
        (tr, va, te)
    }
}

/// Shuffles the distinct patients by `seed` and cuts at the cumulative
/// fractions of the patient count.
pub fn subject_exclusive_split(rows: &[ManifestRow], fractions: (f64, f64, f64), seed: u64) -> Result<SplitSpec> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let patients: BTreeSet<&str> = rows.iter().map(|r| r.patient_id.as_str()).collect();
    if patients.len() < 3 {
        return Err(Error::Contract(format!(
            "subject-exclusive split needs at least 3 patients, found {}",
            patients.len()
        )));
    }
    let mut order: Vec<String> = patients.into_iter().map(String::from).collect();
    order.shuffle(&mut seed_all(seed).stream("split"));
    let n = order.len() as f64;
    let cut1 = ((a * n) + 0.5).floor() as usize;
    let cut2 = (((a + b) * n) + 0.5).floor().min(n) as usize;
    Ok(SplitSpec {
        train: order[..cut1].to_vec(),
        val: order[cut1..cut2].to_vec(),
        test: order[cut2..].to_vec(),
        fractions,
        seed,
    })
}

/// Deterministic permutation keyed by `(seed, epoch)`, chunked; the final
/// short batch is kept.
pub fn make_batches(num_rows: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut idx: Vec<usize> = (0..num_rows).collect();
    idx.shuffle(&mut seed_all(seed).stream(&format!("batches/{epoch}")));
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

// ---------------------------------------------------------------------------
// Generation

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub patients: usize,
    pub segments_per_patient: usize,
    pub annotators: u32,
    pub window_seconds: f64,
    pub seed: u64,
    pub synth: SynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            patients: 60,
            segments_per_patient: 12,
            annotators: 18,
            window_seconds: 10.0,
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

/// A generated segment before it is written to disk.
#[derive(Clone, Debug)]
pub struct GeneratedSegment {
    pub row: ManifestRow,
    pub recording: RawRecording,
}

/// Segment `j` of a patient has class `j mod 6`; the first half of each
/// patient's segments carry full agreement, the rest mixed votes.
pub fn generate_segments(cfg: &DatasetConfig) -> Result<Vec<GeneratedSegment>> {
    if cfg.synth.duration_seconds < cfg.window_seconds {
        return Err(Error::Config("recording shorter than the window".into()));
    }
    let tree = seed_all(cfg.seed);
    let mut out = Vec::with_capacity(cfg.patients * cfg.segments_per_patient);
    for p in 0..cfg.patients {
        let patient_seed = tree.derive(&format!("patient/{p}"));
        for j in 0..cfg.segments_per_patient {
            let label = ClassLabel::ALL[j % NUM_CLASSES];
            let mode = if j < cfg.segments_per_patient / 2 {
                AgreementMode::Full
            } else {
                AgreementMode::Mixed
            };
            let mut vote_rng = tree.stream(&format!("votes/{p}/{j}"));
            let votes = simulate_votes(label, cfg.annotators, mode, &mut vote_rng)?;
            let segment_seed = tree.derive(&format!("segment/{p}/{j}"));
            let recording = synthesize_recording(label, patient_seed, segment_seed, &cfg.synth);
            let slack = (cfg.synth.duration_seconds - cfg.window_seconds) / 2.0;
            let jitter: f64 = tree.stream(&format!("offset/{p}/{j}")).random_range(-1.0..=1.0);
            let offset = cfg.synth.duration_seconds / 2.0 + (jitter * slack * 1000.0).round() / 1000.0;
            let eeg_id = format!("{}", 1_000_000 + p * cfg.segments_per_patient + j);
            out.push(GeneratedSegment {
                row: ManifestRow {
                    file_path: format!("eegs/{eeg_id}.w2w"),
                    eeg_id,
                    eeg_sub_id: "0".into(),
                    eeg_label_offset_seconds: offset,
                    patient_id: format!("{}", 10_000 + p),
                    expert_consensus: votes.consensus(),
                    votes,
                },
                recording,
            });
        }
    }
    Ok(out)
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Writes `manifest.csv` and one W2W1 file per segment under `dir`.
pub fn generate_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<Vec<ManifestRow>> {
    let segments = generate_segments(cfg)?;
    for s in &segments {
        s.recording.write_w2w1(&dir.join(&s.row.file_path))?;
    }
    let rows: Vec<ManifestRow> = segments.into_iter().map(|s| s.row).collect();
    write_manifest(&dir.join(MANIFEST_FILE), &rows)?;
    Ok(rows)
}

/// Manifest rows plus their recordings.
#[derive(Clone, Debug)]
pub struct DatasetFiles {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl DatasetFiles {
    pub fn open(root: &Path) -> Result<Self> {
        let rows = read_manifest(&root.join(MANIFEST_FILE))?;
        Ok(DatasetFiles {
            root: root.to_path_buf(),
            rows,
        })
    }

    pub fn recording(&self, i: usize) -> Result<RawRecording> {
        RawRecording::read_w2w1(&self.root.join(&self.rows[i].file_path))
    }

    pub fn exists(root: &Path) -> bool {
        fs::metadata(root.join(MANIFEST_FILE)).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn row(i: usize, patient: &str, counts: [u32; 6]) -> ManifestRow {
        let votes = VoteDistribution { counts };
        ManifestRow {
            eeg_id: format!("{i}"),
            eeg_sub_id: "0".into(),
            eeg_label_offset_seconds: 1.25 * i as f64,
            patient_id: patient.into(),
            expert_consensus: votes.consensus(),
            votes,
            file_path: format!("eegs/{i}.w2w"),
        }
    }

    #[test]
    fn class_ids_round_trip() {
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(c.id(), i);
            assert_eq!(ClassLabel::from_id(i), Some(*c));
            assert_eq!(c.name().parse::<ClassLabel>().unwrap(), *c);
        }
    }

    #[test]
    fn consensus_ties_go_to_lowest_id() {
        let v = VoteDistribution::new([0, 3, 3, 0, 0, 0]).unwrap();
        assert_eq!(v.consensus(), ClassLabel::Lpd);
    }

    #[test]
    fn full_agreement_votes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v = simulate_votes(ClassLabel::Lpd, 18, AgreementMode::Full, &mut rng).unwrap();
        assert_eq!(v.counts, [0, 18, 0, 0, 0, 0]);
    }

    #[test]
    fn fractions_to_counts() {
        let v = votes_from_fractions([0.0, 0.0, 0.0, 0.08, 0.54, 0.38], 26).unwrap();
        assert_eq!(v.counts, [0, 0, 0, 2, 14, 10]);
    }

    #[test]
    fn mixed_votes_keep_the_label_dominant() {
        for n in 1..=30u32 {
            for seed in 0..40u64 {
                for label in ClassLabel::ALL {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let v = simulate_votes(label, n, AgreementMode::Mixed, &mut rng).unwrap();
                    assert_eq!(v.total(), n);
                    assert_eq!(v.consensus(), label);
                    let d = v.counts[label.id()];
                    assert!(d as f64 >= (0.4 * n as f64).ceil());
                    for (i, &c) in v.counts.iter().enumerate() {
                        if i != label.id() {
                            assert!(c < d, "{label:?} n={n} {:?}", v.counts);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn manifest_header_only_for_no_rows() {
        assert_eq!(manifest_to_string(&[]).unwrap(), format!("{MANIFEST_HEADER}\n"));
    }

    #[test]
    fn manifest_rejects_inconsistent_consensus() {
        let mut text = manifest_to_string(&[row(1, "p1", [5, 0, 0, 0, 0, 0]), row(2, "p1", [0, 5, 0, 0, 0, 0])]).unwrap();
        text = text.replace(",LPD,", ",GPD,");
        match parse_manifest(&text) {
            Err(Error::Manifest { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected row error, got {other:?}"),
        }
        assert!(matches!(parse_manifest("a,b\n"), Err(Error::Manifest { row: 0, .. })));
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let text = format!("{MANIFEST_HEADER}\n1,0,0,p,Seizure,1,0,0,0,0,0,a\n1,0,0,p,Seizure,1,0,0,0,0,0,b\n");
        assert!(matches!(parse_manifest(&text), Err(Error::Manifest { row: 2, .. })));
    }

    #[test]
    fn split_ten_patients() {
        let rows: Vec<_> = (0..10).map(|i| row(i, &format!("p{i}"), [1, 0, 0, 0, 0, 0])).collect();
        let s = subject_exclusive_split(&rows, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, subject_exclusive_split(&rows, (0.8, 0.1, 0.1), 3).unwrap());
        assert!(subject_exclusive_split(&rows[..2], (0.8, 0.1, 0.1), 3).is_err());
        assert!(subject_exclusive_split(&rows, (0.8, 0.3, 0.1), 3).is_err());
    }

    #[test]
    fn batches_cover_every_index() {
        let b = make_batches(10, 4, 9, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, make_batches(10, 4, 9, 0).unwrap());
        assert_ne!(b, make_batches(10, 4, 9, 1).unwrap());
        assert!(make_batches(10, 0, 9, 0).is_err());
    }

    #[test]
    fn synthesis_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = synthesize_recording(ClassLabel::Seizure, 4, 5, &cfg);
        let b = synthesize_recording(ClassLabel::Seizure, 4, 5, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 19);
        assert_eq!(a.num_samples(), 2800);
        let c = synthesize_recording(ClassLabel::Seizure, 4, 6, &cfg);
        assert_ne!(a, c);
    }
}
