//! Raw EEG → bipolar montage → centred window → STFT magnitude → augmentation.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// The 19 scalp electrodes of the 10–20 system, in storage order.
pub const ELECTRODES: [&str; 19] = [
    "Fp1", "F3", "C3", "P3", "F7", "T3", "T5", "O1", "Fz", "Cz", "Pz", "Fp2", "F4", "C4", "P4",
    "F8", "T4", "T6", "O2",
];

pub const LEFT_HEMISPHERE: [&str; 8] = ["Fp1", "F3", "C3", "P3", "F7", "T3", "T5", "O1"];
pub const RIGHT_HEMISPHERE: [&str; 8] = ["Fp2", "F4", "C4", "P4", "F8", "T4", "T6", "O2"];

/// Longitudinal bipolar ("double banana") chains.
pub const DOUBLE_BANANA: [(&str, &str); 18] = [
    ("Fp1", "F7"),
    ("F7", "T3"),
    ("T3", "T5"),
    ("T5", "O1"),
    ("Fp1", "F3"),
    ("F3", "C3"),
    ("C3", "P3"),
    ("P3", "O1"),
    ("Fz", "Cz"),
    ("Cz", "Pz"),
    ("Fp2", "F4"),
    ("F4", "C4"),
    ("C4", "P4"),
    ("P4", "O2"),
    ("Fp2", "F8"),
    ("F8", "T4"),
    ("T4", "T6"),
    ("T6", "O2"),
];

pub const DEFAULT_SAMPLE_RATE: f64 = 200.0;

/// Multichannel recording in microvolts.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub electrode_labels: Vec<String>,
    /// One row per electrode.
    pub samples: Vec<Vec<f64>>,
    pub sample_rate_hz: f64,
}

impl RawRecording {
    pub fn new(electrode_labels: Vec<String>, samples: Vec<Vec<f64>>, sample_rate_hz: f64) -> Result<Self> {
        if electrode_labels.len() != samples.len() {
            return Err(Error::shape(
                "recording",
                format!("{} labels for {} channels", electrode_labels.len(), samples.len()),
            ));
        }
        for (i, l) in electrode_labels.iter().enumerate() {
            if electrode_labels[..i].contains(l) {
                return Err(Error::Contract(format!("duplicate electrode label {l}")));
            }
        }
        let len = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|r| r.len() != len) {
            return Err(Error::shape("recording", "ragged channels"));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        Ok(RawRecording {
            electrode_labels,
            samples,
            sample_rate_hz,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn channel(&self, label: &str) -> Option<&[f64]> {
        self.electrode_labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.samples[i].as_slice())
    }

    /// Writes the W2W1 binary format: magic `W2W1`, `u32` channel count,
    /// `u32` sample count, `f32` sample rate, then channel-major `f32`
    /// samples, all little-endian. Channels are stored in [`ELECTRODES`]
    /// order (plus `EKG` as a 20th channel when present).
    pub fn write_w2w1(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_w2w1_bytes())
    }

    pub fn to_w2w1_bytes(&self) -> Vec<u8> {
        let n = self.num_samples();
        let mut out = Vec::with_capacity(16 + self.samples.len() * n * 4);
        out.extend_from_slice(b"W2W1");
        out.extend_from_slice(&(self.samples.len() as u32).to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.sample_rate_hz as f32).to_le_bytes());
        for row in &self.samples {
            for &v in row {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn read_w2w1(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_w2w1_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn from_w2w1_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[..4] != b"W2W1" {
            return Err("missing W2W1 header".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let channels = u32_at(4);
        let n = u32_at(8);
        let rate = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
        if bytes.len() != 16 + channels * n * 4 {
            return Err(format!(
                "expected {} bytes for {channels}x{n} samples, found {}",
                16 + channels * n * 4,
                bytes.len()
            ));
        }
        let labels: Vec<String> = match channels {
            19 => ELECTRODES.iter().map(|s| s.to_string()).collect(),
            20 => ELECTRODES.iter().map(|s| s.to_string()).chain(["EKG".to_string()]).collect(),
            c => (0..c).map(|i| format!("ch{i}")).collect(),
        };
        let mut samples = Vec::with_capacity(channels);
        for c in 0..channels {
            let base = 16 + c * n * 4;
            samples.push(
                (0..n)
                    .map(|i| {
                        let o = base + i * 4;
                        f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64
                    })
                    .collect(),
            );
        }
        RawRecording::new(labels, samples, rate).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MontageSpec {
    pub pairs: Vec<(String, String)>,
}

impl Default for MontageSpec {
    fn default() -> Self {
        MontageSpec {
            pairs: DOUBLE_BANANA
                .iter()
                .map(|(a, c)| (a.to_string(), c.to_string()))
                .collect(),
        }
    }
}

impl MontageSpec {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Row `k` is `anode_k − cathode_k`.
pub fn build_bipolar_montage(rec: &RawRecording, spec: &MontageSpec) -> Result<Vec<Vec<f64>>> {
    spec.pairs
        .iter()
        .map(|(anode, cathode)| {
            let a = rec
                .channel(anode)
                .ok_or_else(|| Error::MissingElectrode(anode.clone()))?;
            let c = rec
                .channel(cathode)
                .ok_or_else(|| Error::MissingElectrode(cathode.clone()))?;
            Ok(a.iter().zip(c).map(|(x, y)| x - y).collect())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSpec {
    pub offset_seconds: f64,
    pub duration_seconds: f64,
    pub start_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BipolarSegment {
    pub channels: Vec<Vec<f64>>,
    pub window: WindowSpec,
}

impl BipolarSegment {
    pub fn num_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Crops `round(T_w·f_s)` samples centred on `offset_seconds`, clamping the
/// start into the recording.
pub fn extract_window(
    bip: &[Vec<f64>],
    offset_seconds: f64,
    duration_seconds: f64,
    sample_rate_hz: f64,
) -> Result<BipolarSegment> {
    let total = bip.first().map_or(0, Vec::len);
    let len = round_half_up(duration_seconds * sample_rate_hz);
    if len <= 0 || len as usize > total {
        return Err(Error::Contract(format!(
            "window of {len} samples does not fit a recording of {total}"
        )));
    }
    let len = len as usize;
    let centre = round_half_up(offset_seconds * sample_rate_hz);
    let start = centre - (duration_seconds * sample_rate_hz / 2.0).floor() as i64;
    let start = start.clamp(0, (total - len) as i64) as usize;
    Ok(BipolarSegment {
        channels: bip.iter().map(|r| r[start..start + len].to_vec()).collect(),
        window: WindowSpec {
            offset_seconds,
            duration_seconds,
            start_index: start,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    /// Apply `ln(1 + |S|)` to magnitudes.
    pub log1p: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_len: 64,
            hop: 32,
            log1p: false,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "stft needs window_len >= 2 and 0 < hop <= window_len, got {} / {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames(&self, samples: usize) -> usize {
        if samples < self.window_len {
            0
        } else {
            (samples - self.window_len) / self.hop + 1
        }
    }
}

/// Symmetric Hann window `0.5·(1 − cos(2πn/(N−1)))`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n as f64 - 1.0)).cos()))
        .collect()
}

/// `C × F × T_f` magnitudes, stored channel-major then frequency then time.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub channels: usize,
    pub freqs: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl Spectrogram {
    pub fn zeros(channels: usize, freqs: usize, frames: usize) -> Self {
        Spectrogram {
            channels,
            freqs,
            frames,
            values: vec![0.0; channels * freqs * frames],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, f: usize, t: usize) -> usize {
        (c * self.freqs + f) * self.frames + t
    }

    #[inline]
    pub fn get(&self, c: usize, f: usize, t: usize) -> f64 {
        self.values[self.index(c, f, t)]
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// Hann-windowed magnitude spectrum of one frame, bins `0..=N/2`.
pub fn frame_magnitudes(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let w = hann(n);
    let mut buf: Vec<Complex<f64>> = frame.iter().zip(&w).map(|(&x, &wi)| Complex::new(x * wi, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm()).collect()
}

pub fn stft_magnitude(seg: &BipolarSegment, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let n = cfg.window_len;
    let samples = seg.num_samples();
    if samples < n {
        return Err(Error::Contract(format!(
            "segment of {samples} samples is shorter than the STFT window {n}"
        )));
    }
    let frames = cfg.frames(samples);
    let freqs = cfg.freq_bins();
    let window = hann(n);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut out = Spectrogram::zeros(seg.channels.len(), freqs, frames);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (c, row) in seg.channels.iter().enumerate() {
        for t in 0..frames {
            let start = t * cfg.hop;
            for i in 0..n {
                buf[i] = Complex::new(row[start + i] * window[i], 0.0);
            }
            fft.process(&mut buf);
            for f in 0..freqs {
                let m = buf[f].norm();
                let idx = out.index(c, f, t);
                out.values[idx] = if cfg.log1p { m.ln_1p() } else { m };
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub time_mask_frac: f64,
    pub freq_mask_frac: f64,
    pub noise_std_rel: f64,
    pub amp_scale_range: (f64, f64),
    pub max_shift_frac: f64,
    pub p_shift: f64,
    pub p_amp: f64,
    pub p_noise: f64,
    pub p_freq_mask: f64,
    pub p_time_mask: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            time_mask_frac: 0.2,
            freq_mask_frac: 0.2,
            noise_std_rel: 0.05,
            amp_scale_range: (0.8, 1.2),
            max_shift_frac: 0.1,
            p_shift: 0.5,
            p_amp: 0.5,
            p_noise: 0.5,
            p_freq_mask: 0.5,
            p_time_mask: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation disabled.
    pub fn identity() -> Self {
        AugmentConfig {
            p_shift: 0.0,
            p_amp: 0.0,
            p_noise: 0.0,
            p_freq_mask: 0.0,
            p_time_mask: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("time_mask_frac", self.time_mask_frac)?;
        unit("freq_mask_frac", self.freq_mask_frac)?;
        for (n, p) in [
            ("p_shift", self.p_shift),
            ("p_amp", self.p_amp),
            ("p_noise", self.p_noise),
            ("p_freq_mask", self.p_freq_mask),
            ("p_time_mask", self.p_time_mask),
        ] {
            unit(n, p)?;
        }
        if !(0.0..1.0).contains(&self.max_shift_frac) {
            return Err(Error::Config(format!(
                "max_shift_frac must be in [0, 1), got {}",
                self.max_shift_frac
            )));
        }
        if !(self.noise_std_rel >= 0.0) {
            return Err(Error::Config("noise_std_rel must be >= 0".into()));
        }
        let (lo, hi) = self.amp_scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "amp_scale_range needs 0 < low <= high, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Applies shift, amplitude scale, noise, frequency mask and time mask, in
/// that order, each with its own probability.
pub fn augment(spec: &Spectrogram, cfg: &AugmentConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = spec.clone();
    let (nc, nf, nt) = (spec.channels, spec.freqs, spec.frames);

    if rng.random::<f64>() < cfg.p_shift {
        let max = (cfg.max_shift_frac * nt as f64).floor() as i64;
        let shift = if max > 0 { rng.random_range(-max..=max) } else { 0 };
        if shift != 0 {
            let k = shift.rem_euclid(nt as i64) as usize;
            for c in 0..nc {
                for f in 0..nf {
                    let row = out.index(c, f, 0);
                    out.values[row..row + nt].rotate_right(k);
                }
            }
        }
    }
    if rng.random::<f64>() < cfg.p_amp {
        let (lo, hi) = cfg.amp_scale_range;
        let factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        out.values.iter_mut().for_each(|v| *v *= factor);
    }
    if rng.random::<f64>() < cfg.p_noise {
        let std = cfg.noise_std_rel * out.mean();
        for v in out.values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            // Magnitudes stay non-negative.
            *v = (*v + std * z).max(0.0);
        }
    }
    if rng.random::<f64>() < cfg.p_freq_mask {
        if let Some((start, width)) = mask_span(&mut rng, nf, cfg.freq_mask_frac) {
            for c in 0..nc {
                for f in start..start + width {
                    let row = out.index(c, f, 0);
                    out.values[row..row + nt].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
    }
    if rng.random::<f64>() < cfg.p_time_mask {
        if let Some((start, width)) = mask_span(&mut rng, nt, cfg.time_mask_frac) {
            for c in 0..nc {
                for f in 0..nf {
                    for t in start..start + width {
                        let i = out.index(c, f, t);
                        out.values[i] = 0.0;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Contiguous span of width `1..=floor(frac·len)`.
fn mask_span(rng: &mut impl Rng, len: usize, frac: f64) -> Option<(usize, usize)> {
    let max = (frac * len as f64).floor() as usize;
    if max == 0 || len == 0 {
        return None;
    }
    let width = rng.random_range(1..=max.min(len));
    let start = rng.random_range(0..=len - width);
    Some((start, width))
}

/// Full signal path for one segment.
pub fn segment_spectrogram(
    rec: &RawRecording,
    montage: &MontageSpec,
    offset_seconds: f64,
    window_seconds: f64,
    stft: &StftConfig,
) -> Result<Spectrogram> {
    let bip = build_bipolar_montage(rec, montage)?;
    let seg = extract_window(&bip, offset_seconds, window_seconds, rec.sample_rate_hz)?;
    stft_magnitude(&seg, stft)
}
