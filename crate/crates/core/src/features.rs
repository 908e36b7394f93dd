//! Waveform to 3-channel log-mel / delta / delta-delta features.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::binio;
use crate::error::{Result, SedError};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub target_sr: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    /// Regression half-width N in frames.
    pub delta_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            target_sr: 22050,
            n_fft: 2048,
            hop: 684,
            n_mels: 128,
            fmin: 0.0,
            fmax: 11025.0,
            log_floor: 1e-10,
            delta_window: 2,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SedError::Config(m));
        if self.target_sr == 0 {
            return bad("target_sr must be positive".into());
        }
        if self.n_fft == 0 || self.hop == 0 || self.hop > self.n_fft {
            return bad(format!("need 0 < hop ({}) <= n_fft ({})", self.hop, self.n_fft));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be >= 1".into());
        }
        let nyquist = self.target_sr as f64 / 2.0;
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= {nyquist}",
                self.fmin, self.fmax
            ));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return bad("log_floor must be positive".into());
        }
        if self.delta_window == 0 {
            return bad("delta_window must be >= 1".into());
        }
        Ok(())
    }

    /// Frame count for a signal of `len` samples (shorter signals are padded to one frame).
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len.saturating_sub(self.n_fft) / self.hop
    }
}

/// Three stacked channels: log-mel, delta, delta-delta, each `T x n_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub clip_id: String,
    pub clip_duration: f64,
    pub values: Array3<f32>,
}

impl FeatureTensor {
    pub fn n_frames(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_bands(&self) -> usize {
        self.values.dim().2
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let p = PI * (x + 1.0);
    0.42 - 0.5 * p.cos() + 0.08 * (2.0 * p).cos()
}

const SINC_ZEROS: f64 = 32.0;
const ROLLOFF: f64 = 0.94;
const MAX_PHASES: u64 = 4096;

/// Band-limited resampling with a Blackman-windowed sinc kernel. For rational
/// ratios with a small numerator the kernel is tabulated per polyphase branch.
pub fn resample(signal: &[f64], sr_in: u32, sr_out: u32) -> Result<Vec<f64>> {
    if sr_in == 0 || sr_out == 0 {
        return Err(SedError::Config("sample rates must be positive".into()));
    }
    if let Some(i) = signal.iter().position(|v| !v.is_finite()) {
        return Err(SedError::NonFinite(format!("sample {i} of input signal")));
    }
    if signal.is_empty() || sr_in == sr_out {
        return Ok(signal.to_vec());
    }
    let g = gcd(sr_in as u64, sr_out as u64);
    let up = sr_out as u64 / g;
    let down = sr_in as u64 / g;
    let out_len = ((signal.len() as u128 * sr_out as u128 + sr_in as u128 / 2) / sr_in as u128) as usize;

    // cutoff relative to the input Nyquist
    let cutoff = ROLLOFF * (sr_out as f64 / sr_in as f64).min(1.0);
    let half_width = (SINC_ZEROS / cutoff).ceil() as i64;
    let kernel = |tau: f64| cutoff * sinc(cutoff * tau) * blackman(tau / half_width as f64);
    let taps = 2 * half_width as usize;

    let table: Option<Vec<Vec<f64>>> = (up <= MAX_PHASES).then(|| {
        (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                (0..taps)
                    .map(|j| kernel(frac + (half_width - 1) as f64 - j as f64))
                    .collect()
            })
            .collect()
    });

    let n_in = signal.len() as i64;
    let mut out = Vec::with_capacity(out_len);
    let mut scratch = vec![0.0; taps];
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = (pos % up) as usize;
        let weights: &[f64] = match &table {
            Some(t) => &t[phase],
            None => {
                let frac = phase as f64 / up as f64;
                for (j, w) in scratch.iter_mut().enumerate() {
                    *w = kernel(frac + (half_width - 1) as f64 - j as f64);
                }
                &scratch
            }
        };
        let first = base - half_width + 1;
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate() {
            let k = first + j as i64;
            if (0..n_in).contains(&k) {
                acc += w * signal[k as usize];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale, `n_mels x (n_fft/2 + 1)`, each scaled
/// to unit area in Hz.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Array2<f64> {
    let n_bins = cfg.n_fft / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.target_sr as f64 / cfg.n_fft as f64;
    Array2::from_shape_fn((cfg.n_mels, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let rise = (f - lo) / (center - lo);
        let fall = (hi - f) / (hi - center);
        let tri = rise.min(fall).max(0.0);
        tri * 2.0 / (hi - lo)
    })
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log mel energies, `T x n_mels`, with `T = 1 + floor((len - n_fft) / hop)`.
/// Frames are not centred; signals shorter than `n_fft` are zero padded.
pub fn logmel(signal: &[f64], cfg: &FeatureConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let padded;
    let signal = if signal.len() < cfg.n_fft {
        padded = {
            let mut p = signal.to_vec();
            p.resize(cfg.n_fft, 0.0);
            p
        };
        &padded[..]
    } else {
        signal
    };
    let n_frames = cfg.n_frames(signal.len());
    let n_bins = cfg.n_fft / 2 + 1;
    let window = hann(cfg.n_fft);
    let bank = mel_filterbank(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);

    let mut power = Array2::<f64>::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for t in 0..n_frames {
        let frame = &signal[t * cfg.hop..t * cfg.hop + cfg.n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.row_mut(t).iter_mut().zip(&buf[..n_bins]) {
            *p = b.norm_sqr();
        }
    }
    let mut mel = power.dot(&bank.t());
    mel.mapv_inplace(|e| (e + cfg.log_floor).ln());
    Ok(mel)
}

/// Regression delta along time with edge frames replicated.
pub fn delta(m: ArrayView2<f64>, half_width: usize) -> Array2<f64> {
    let (t_len, f_len) = m.dim();
    let norm = 2.0 * (1..=half_width).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Array2::zeros((t_len, f_len));
    if t_len == 0 {
        return out;
    }
    let last = t_len as i64 - 1;
    let clamp = |i: i64| i.clamp(0, last) as usize;
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        for n in 1..=half_width {
            let ahead = m.row(clamp(t as i64 + n as i64));
            let behind = m.row(clamp(t as i64 - n as i64));
            let w = n as f64;
            for ((o, a), b) in row.iter_mut().zip(ahead).zip(behind) {
                *o += w * (a - b);
            }
        }
        row.mapv_inplace(|v| v / norm);
    }
    out
}

/// Stacks `[logmel, delta, delta-delta]` for a waveform already at `cfg.target_sr`.
pub fn featurize_waveform(clip_id: &str, signal: &[f64], cfg: &FeatureConfig) -> Result<FeatureTensor> {
    let mel = logmel(signal, cfg)?;
    let d1 = delta(mel.view(), cfg.delta_window);
    let d2 = delta(d1.view(), cfg.delta_window);
    let (t, f) = mel.dim();
    let mut values = Array3::<f32>::zeros((3, t, f));
    for (ch, m) in [mel, d1, d2].iter().enumerate() {
        values.slice_mut(s![ch, .., ..]).zip_mut_with(m, |o, &v| *o = v as f32);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SedError::NonFinite(format!("features of {clip_id}")));
    }
    Ok(FeatureTensor {
        clip_id: clip_id.to_string(),
        clip_duration: signal.len() as f64 / cfg.target_sr as f64,
        values,
    })
}

/// Mono waveform decoded from a PCM WAV file, channels averaged.
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let audio_err = |msg: String| SedError::Audio {
        path: path.display().to_string(),
        msg,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(e.to_string()))?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| audio_err(e.to_string()))?;
    let ch = spec.channels.max(1) as usize;
    let samples = interleaved
        .chunks(ch)
        .map(|frame| frame.iter().sum::<f64>() / ch as f64)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes 16-bit mono PCM.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| SedError::Audio {
        path: path.display().to_string(),
        msg: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        w.write_sample(v).map_err(io_err)?;
    }
    w.finalize().map_err(io_err)
}

/// Decodes, downmixes, resamples and featurizes one audio file.
pub fn featurize_clip(path: &Path, clip_id: &str, cfg: &FeatureConfig) -> Result<FeatureTensor> {
    let wav = read_wav(path)?;
    let signal = resample(&wav.samples, wav.sample_rate, cfg.target_sr)?;
    featurize_waveform(clip_id, &signal, cfg)
}

const FEATURE_MAGIC: &[u8; 4] = b"SEDF";
const FEATURE_VERSION: u32 = 1;

pub fn write_features(x: &FeatureTensor, sink: &mut impl Write) -> Result<()> {
    let (c, t, f) = x.values.dim();
    sink.write_all(FEATURE_MAGIC)?;
    binio::write_u32(sink, FEATURE_VERSION)?;
    binio::write_str(sink, &x.clip_id)?;
    binio::write_f64(sink, x.clip_duration)?;
    for d in [c, t, f] {
        let d = u32::try_from(d).map_err(|_| SedError::Format(format!("dimension {d} exceeds u32")))?;
        binio::write_u32(sink, d)?;
    }
    binio::write_f32s(sink, x.values.iter().copied())
}

pub fn read_features(source: &mut impl Read) -> Result<FeatureTensor> {
    binio::expect_magic(source, FEATURE_MAGIC, FEATURE_VERSION)?;
    let clip_id = binio::read_str(source)?;
    let clip_duration = binio::read_f64(source)?;
    let dims = [
        binio::read_u32(source)?,
        binio::read_u32(source)?,
        binio::read_u32(source)?,
    ];
    let n = binio::checked_elements(&dims)?;
    let data = binio::read_f32s(source, n)?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(SedError::NonFinite(format!("features of {clip_id}")));
    }
    let values = Array3::from_shape_vec((dims[0] as usize, dims[1] as usize, dims[2] as usize), data)
        .map_err(|e| SedError::Format(e.to_string()))?;
    Ok(FeatureTensor {
        clip_id,
        clip_duration,
        values,
    })
}
