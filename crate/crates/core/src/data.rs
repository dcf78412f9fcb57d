//! Synthetic noisy-speech corpus, WAV I/O and corpus manifests.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const TRAIN_SNRS: [f64; 4] = [0.0, 5.0, 10.0, 15.0];
pub const TEST_SNRS: [f64; 4] = [2.5, 7.5, 12.5, 17.5];
pub const CLEAN_PEAK: f64 = 0.5;
/// Noisy mixtures whose peak would exceed this are scaled down together
/// with their clean reference so the PCM file does not clip.
pub const MIX_PEAK_LIMIT: f64 = 0.99;
pub const MIN_CLEAN_LEN: usize = 400;

const CLEAN_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const LENGTH_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Raised-cosine ramp from 0 to 1 over `n` samples, evaluated at `k`.
fn ramp(k: usize, n: usize) -> f64 {
    if k >= n {
        1.0
    } else {
        0.5 - 0.5 * (PI * k as f64 / n as f64).cos()
    }
}

/// Harmonic tone complex standing in for voiced speech: a fixed
/// fundamental, decaying harmonics, a slow envelope and silent gaps.
/// The result peaks at exactly [`CLEAN_PEAK`].
pub fn synth_clean(seed: u64, length: usize) -> Result<Vec<f64>> {
    if length < MIN_CLEAN_LEN {
        return Err(Error::Length(format!("clean length {length} below {MIN_CLEAN_LEN}")));
    }
    let mut rng = stream(seed, CLEAN_STREAM);
    let f0 = synth_f0(&mut rng);
    let harmonics = rng.gen_range(3..=8usize);
    let decay: f64 = rng.gen_range(0.5..0.8);
    let mut partials = Vec::new();
    for k in 1..=harmonics {
        let f = k as f64 * f0;
        if f >= 0.45 * SAMPLE_RATE as f64 {
            break;
        }
        partials.push((f, decay.powi(k as i32 - 1), rng.gen_range(0.0..2.0 * PI)));
    }
    let env_rate = rng.gen_range(2.0..6.0);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let sr = SAMPLE_RATE as f64;
    let mut out: Vec<f64> = (0..length)
        .map(|n| {
            let t = n as f64 / sr;
            let env = 0.6 + 0.4 * (2.0 * PI * env_rate * t + env_phase).sin();
            env * partials
                .iter()
                .map(|&(f, a, p)| a * (2.0 * PI * f * t + p).sin())
                .sum::<f64>()
        })
        .collect();

    // silent gaps with short fades, never covering more than half the signal
    let gaps = rng.gen_range(1..=3usize);
    let fade = 160.min(length / 8);
    for _ in 0..gaps {
        let gap = rng.gen_range(length / 16..=length / 6);
        let start = rng.gen_range(0..length - gap);
        for (k, v) in out[start..start + gap].iter_mut().enumerate() {
            let edge = k.min(gap - 1 - k);
            *v *= 1.0 - ramp(edge, fade);
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::Degenerate("synthesized clean signal is silent".into()));
    }
    let g = CLEAN_PEAK / peak;
    out.iter_mut().for_each(|v| *v *= g);
    Ok(out)
}

fn synth_f0(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(100.0..300.0)
}

/// Fundamental frequency [`synth_clean`] uses for `seed`.
pub fn synth_fundamental(seed: u64) -> f64 {
    synth_f0(&mut stream(seed, CLEAN_STREAM))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    White,
    Pink,
    BandLimited,
    Brown,
    ModulatedWhite,
    Impulsive,
}

impl NoiseKind {
    pub const TRAIN: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::BandLimited];
    pub const TEST: [NoiseKind; 3] = [NoiseKind::Brown, NoiseKind::ModulatedWhite, NoiseKind::Impulsive];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::BandLimited => "bandlimited",
            NoiseKind::Brown => "brown",
            NoiseKind::ModulatedWhite => "modulated_white",
            NoiseKind::Impulsive => "impulsive",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Direct-form biquad band-pass (constant peak gain) centred on `fc`.
fn band_pass(x: &[f64], fc: f64, q: f64) -> Vec<f64> {
    let w = 2.0 * PI * fc / SAMPLE_RATE as f64;
    let alpha = w.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Seeded noise of the given kind; never identically zero.
pub fn synth_noise(kind: NoiseKind, seed: u64, length: usize) -> Vec<f64> {
    let mut rng = stream(seed, NOISE_STREAM);
    let white = gaussian(&mut rng, length);
    match kind {
        NoiseKind::White => white,
        NoiseKind::Pink => {
            // Paul Kellet's refined pink filter
            let mut b = [0.0f64; 7];
            white
                .iter()
                .map(|&w| {
                    b[0] = 0.99886 * b[0] + w * 0.0555179;
                    b[1] = 0.99332 * b[1] + w * 0.0750759;
                    b[2] = 0.96900 * b[2] + w * 0.1538520;
                    b[3] = 0.86650 * b[3] + w * 0.3104856;
                    b[4] = 0.55000 * b[4] + w * 0.5329522;
                    b[5] = -0.7616 * b[5] - w * 0.0168980;
                    let y = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
                    b[6] = w * 0.115926;
                    y
                })
                .collect()
        }
        NoiseKind::BandLimited => {
            let fc = rng.gen_range(500.0..4000.0);
            let q = rng.gen_range(1.0..3.0);
            band_pass(&white, fc, q)
        }
        NoiseKind::Brown => {
            let mut acc = 0.0;
            let walk: Vec<f64> = white
                .iter()
                .map(|&w| {
                    acc = 0.995 * acc + w;
                    acc
                })
                .collect();
            let mean = walk.iter().sum::<f64>() / length.max(1) as f64;
            walk.into_iter().map(|v| v - mean).collect()
        }
        NoiseKind::ModulatedWhite => {
            let rate = rng.gen_range(1.0..8.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            white
                .iter()
                .enumerate()
                .map(|(n, &w)| {
                    let t = n as f64 / SAMPLE_RATE as f64;
                    w * (0.55 + 0.45 * (2.0 * PI * rate * t + phase).sin())
                })
                .collect()
        }
        NoiseKind::Impulsive => {
            // decaying clicks at random instants over a faint white floor
            let mut out: Vec<f64> = white.iter().map(|w| 0.05 * w).collect();
            let clicks = (length / 800).max(1);
            for _ in 0..clicks {
                let at = rng.gen_range(0..length);
                let amp = rng.gen_range(2.0..6.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let tau = rng.gen_range(20.0..120.0);
                let ring = rng.gen_range(500.0..3000.0) * 2.0 * PI / SAMPLE_RATE as f64;
                for (k, v) in out[at..].iter_mut().take(600).enumerate() {
                    *v += amp * (-(k as f64) / tau).exp() * (ring * k as f64).cos();
                }
            }
            out
        }
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// SNR in dB of `clean` against `noisy - clean` over the whole utterance.
pub fn measured_snr(clean: &[f64], noisy: &[f64]) -> f64 {
    let residual: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n - c).collect();
    10.0 * (power(clean) / power(&residual)).log10()
}

/// `clean + g * noise` with `g` chosen so the utterance-level SNR equals
/// `snr_db`.
pub fn mix_at_snr(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    if clean.len() != noise.len() {
        return Err(Error::dims("mix_at_snr", &[clean.len()], &[noise.len()]));
    }
    let pc = power(clean);
    if pc == 0.0 {
        return Err(Error::Degenerate("clean signal is all zero".into()));
    }
    let pn = power(noise);
    if pn == 0.0 {
        return Err(Error::Degenerate("noise signal is all zero".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("SNR must be finite, got {snr_db}")));
    }
    let g = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(clean.iter().zip(noise).map(|(c, n)| c + g * n).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub train_snrs: Vec<f64>,
    pub test_snrs: Vec<f64>,
    /// Inclusive utterance length range in samples.
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(n_train: usize, n_test: usize, seed: u64) -> Self {
        CorpusSpec {
            n_train,
            n_test,
            train_snrs: TRAIN_SNRS.to_vec(),
            test_snrs: TEST_SNRS.to_vec(),
            min_len: 8000,
            max_len: 16000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_snrs.is_empty() || self.test_snrs.is_empty() {
            return Err(Error::Config("SNR sets must be non-empty".into()));
        }
        if self.train_snrs.iter().any(|s| self.test_snrs.contains(s)) {
            return Err(Error::Config("train and test SNR sets must be disjoint".into()));
        }
        if self.train_snrs.iter().chain(&self.test_snrs).any(|s| !s.is_finite()) {
            return Err(Error::Config("SNRs must be finite".into()));
        }
        if self.min_len < MIN_CLEAN_LEN || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub snr_db: f64,
    pub noise: NoiseKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// One utterance; `index` runs over train then test so every utterance has
/// its own seed `spec.seed ^ index`.
pub fn generate_utterance(spec: &CorpusSpec, index: usize) -> Result<Utterance> {
    let (split, local, snrs, kinds) = if index < spec.n_train {
        ("train", index, &spec.train_snrs, &NoiseKind::TRAIN)
    } else {
        ("test", index - spec.n_train, &spec.test_snrs, &NoiseKind::TEST)
    };
    let seed = spec.seed ^ index as u64;
    let len = stream(seed, LENGTH_STREAM).gen_range(spec.min_len..=spec.max_len);
    let snr_db = snrs[local % snrs.len()];
    let noise_kind = kinds[(local / snrs.len()) % kinds.len()];
    let mut clean = synth_clean(seed, len)?;
    let noise = synth_noise(noise_kind, seed, len);
    let mut noisy = mix_at_snr(&clean, &noise, snr_db)?;
    let peak = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > MIX_PEAK_LIMIT {
        let g = MIX_PEAK_LIMIT / peak;
        clean.iter_mut().chain(noisy.iter_mut()).for_each(|v| *v *= g);
    }
    Ok(Utterance {
        id: format!("{split}_{local:05}"),
        clean,
        noisy,
        snr_db,
        noise: noise_kind,
    })
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let train = (0..spec.n_train)
        .map(|i| generate_utterance(spec, i))
        .collect::<Result<_>>()?;
    let test = (0..spec.n_test)
        .map(|j| generate_utterance(spec, spec.n_train + j))
        .collect::<Result<_>>()?;
    Ok(Corpus { train, test })
}

fn parse_err(path: &Path, detail: impl fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => parse_err(path, other),
    }
}

/// Reads a 16-bit PCM mono WAV file at [`SAMPLE_RATE`], scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| parse_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(parse_err(
            path,
            format!("expected mono, found {} channels", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(parse_err(
            path,
            format!(
                "expected 16-bit PCM, found {:?} {}-bit",
                spec.sample_format, spec.bits_per_sample
            ),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(parse_err(
            path,
            format!(
                "expected {SAMPLE_RATE} Hz, found {} Hz (no resampling)",
                spec.sample_rate
            ),
        ));
    }
    let expected = reader.len() as usize;
    let samples: Vec<f64> = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, format!("bad sample data: {e}")))?;
    if samples.len() != expected {
        return Err(parse_err(
            path,
            format!("data chunk holds {} of {expected} samples", samples.len()),
        ));
    }
    Ok(samples)
}

/// PCM sample for `v`: scaled by 32768, rounded half away from zero and
/// clipped to the 16-bit range.
pub fn to_pcm16(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &v in samples {
        w.write_sample(to_pcm16(v)).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

/// One manifest line; paths are resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub clean: PathBuf,
    pub noisy: PathBuf,
    pub snr_db: f64,
}

pub fn train_manifest_path(dir: &Path) -> PathBuf {
    dir.join("train_manifest.tsv")
}

pub fn test_manifest_path(dir: &Path) -> PathBuf {
    dir.join("test_manifest.tsv")
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        for field in [&e.id, &e.clean.display().to_string(), &e.noisy.display().to_string()] {
            if field.contains(['\t', '\n']) {
                return Err(Error::Config(format!(
                    "manifest field {field:?} contains a tab or newline"
                )));
            }
        }
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.id,
            e.clean.display(),
            e.noisy.display(),
            e.snr_db
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a manifest; relative paths become relative to its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, clean, noisy, snr] = fields[..] else {
            return Err(parse_err(
                path,
                format!(
                    "line {}: expected 4 tab-separated fields, found {}",
                    n + 1,
                    fields.len()
                ),
            ));
        };
        let snr_db: f64 = snr
            .trim()
            .parse()
            .map_err(|_| parse_err(path, format!("line {}: bad SNR {snr:?}", n + 1)))?;
        out.push(ManifestEntry {
            id: id.to_string(),
            clean: base.join(clean),
            noisy: base.join(noisy),
            snr_db,
        });
    }
    Ok(out)
}

/// Writes both splits as WAV files under `dir` along with their manifests.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    for (split, utts, manifest) in [
        ("train", &corpus.train, train_manifest_path(dir)),
        ("test", &corpus.test, test_manifest_path(dir)),
    ] {
        for sub in ["clean", "noisy"] {
            let d = dir.join(split).join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let mut entries = Vec::with_capacity(utts.len());
        for u in utts {
            let clean = PathBuf::from(split).join("clean").join(format!("{}.wav", u.id));
            let noisy = PathBuf::from(split).join("noisy").join(format!("{}.wav", u.id));
            write_wav(&dir.join(&clean), &u.clean)?;
            write_wav(&dir.join(&noisy), &u.noisy)?;
            entries.push(ManifestEntry {
                id: u.id.clone(),
                clean,
                noisy,
                snr_db: u.snr_db,
            });
        }
        write_manifest(&manifest, &entries)?;
    }
    Ok(())
}

/// Clean/noisy pair loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedUtterance {
    pub id: String,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub snr_db: f64,
}

pub fn load_manifest(path: &Path) -> Result<Vec<LoadedUtterance>> {
    read_manifest(path)?
        .into_iter()
        .map(|e| {
            let clean = read_wav(&e.clean)?;
            let noisy = read_wav(&e.noisy)?;
            if clean.len() != noisy.len() {
                return Err(Error::dims(
                    format!("utterance {}", e.id),
                    &[clean.len()],
                    &[noisy.len()],
                ));
            }
            Ok(LoadedUtterance {
                id: e.id,
                clean,
                noisy,
                snr_db: e.snr_db,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{reconstruct_utterance, slice_utterance};
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(n_train: usize, n_test: usize) -> CorpusSpec {
        CorpusSpec::new(n_train, n_test, 42)
    }

    #[test]
    fn clean_is_deterministic_and_normalized() {
        let a = synth_clean(7, 12000).unwrap();
        assert_eq!(a, synth_clean(7, 12000).unwrap());
        assert_ne!(a, synth_clean(8, 12000).unwrap());
        let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-9);
        assert!(matches!(synth_clean(1, 399), Err(Error::Length(_))));
        assert!(synth_clean(1, 400).is_ok());
    }

    /// Magnitude of the DFT of `x` at integer bin `k`, evaluated directly.
    fn dft_mag(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let a = -2.0 * PI * k as f64 * t as f64 / n;
            re += v * a.cos();
            im += v * a.sin();
        }
        re.hypot(im)
    }

    #[test]
    fn spectral_peaks_sit_on_harmonics() {
        for seed in [3u64, 11, 29] {
            let x = synth_clean(seed, 8000).unwrap();
            let f0 = synth_fundamental(seed);
            let bin_hz = SAMPLE_RATE as f64 / x.len() as f64;
            // strongest bin in the band up to 1.5 f0 is the fundamental
            let hi = (1.5 * f0 / bin_hz) as usize;
            let lo = (0.5 * f0 / bin_hz) as usize;
            let peak = (lo..hi)
                .max_by(|&a, &b| dft_mag(&x, a).total_cmp(&dft_mag(&x, b)))
                .unwrap();
            assert!(
                (peak as f64 - f0 / bin_hz).abs() <= 1.0,
                "seed {seed}: bin {peak} vs f0 {f0}"
            );
            // the second harmonic is a local maximum within one bin
            let h2 = 2.0 * f0 / bin_hz;
            let around = (h2 as usize - 3)..(h2 as usize + 4);
            let best = around
                .max_by(|&a, &b| dft_mag(&x, a).total_cmp(&dft_mag(&x, b)))
                .unwrap();
            assert!((best as f64 - h2).abs() <= 1.0, "seed {seed}");
        }
    }

    #[test]
    fn mixing_hits_the_target_snr() {
        let c = synth_clean(1, 8000).unwrap();
        let n = synth_noise(NoiseKind::Pink, 2, 8000);
        let zero = mix_at_snr(&c, &n, 0.0).unwrap();
        let res: Vec<f64> = zero.iter().zip(&c).map(|(a, b)| a - b).collect();
        assert!((power(&res) / power(&c) - 1.0).abs() < 1e-9);
        let quiet = mix_at_snr(&c, &n, 100.0).unwrap();
        let err: f64 = quiet.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-4);
        assert!((measured_snr(&c, &mix_at_snr(&c, &n, 7.5).unwrap()) - 7.5).abs() < 0.01);
    }

    #[test]
    fn mixing_errors() {
        assert!(matches!(
            mix_at_snr(&[0.0; 4], &[1.0; 4], 0.0),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            mix_at_snr(&[1.0; 4], &[0.0; 4], 0.0),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            mix_at_snr(&[1.0; 4], &[1.0; 3], 0.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn every_noise_kind_is_nonzero_and_seeded() {
        for kind in NoiseKind::TRAIN.into_iter().chain(NoiseKind::TEST) {
            let a = synth_noise(kind, 5, 4000);
            assert!(power(&a) > 0.0 && a.iter().all(|v| v.is_finite()), "{kind}");
            assert_eq!(a, synth_noise(kind, 5, 4000));
            assert_ne!(a, synth_noise(kind, 6, 4000));
        }
    }

    #[test]
    fn corpus_structure() {
        let c = generate_corpus(&spec(8, 6)).unwrap();
        assert_eq!((c.train.len(), c.test.len()), (8, 6));
        let train_kinds: Vec<_> = c.train.iter().map(|u| u.noise).collect();
        assert!(c.test.iter().all(|u| !train_kinds.contains(&u.noise)));
        assert!(NoiseKind::TRAIN.iter().all(|k| !NoiseKind::TEST.contains(k)));
        for u in c.train.iter().chain(&c.test) {
            assert_eq!(u.clean.len(), u.noisy.len());
            assert!((8000..=16000).contains(&u.clean.len()));
            assert!((measured_snr(&u.clean, &u.noisy) - u.snr_db).abs() < 0.01, "{}", u.id);
            assert!(u.noisy.iter().all(|v| v.abs() <= MIX_PEAK_LIMIT + 1e-12));
        }
        assert!(c.train.iter().all(|u| TRAIN_SNRS.contains(&u.snr_db)));
        assert!(c.test.iter().all(|u| TEST_SNRS.contains(&u.snr_db)));
        assert_eq!(c, generate_corpus(&spec(8, 6)).unwrap());
    }

    #[test]
    fn utterances_do_not_depend_on_corpus_size() {
        let small = generate_corpus(&spec(5, 0)).unwrap();
        let large = generate_corpus(&spec(9, 0)).unwrap();
        assert_eq!(small.train[..], large.train[..5]);
    }

    #[test]
    fn snr_counts_are_balanced() {
        for n in [7usize, 13, 40] {
            let c = generate_corpus(&CorpusSpec {
                min_len: 400,
                max_len: 800,
                ..spec(n, n)
            })
            .unwrap();
            for (utts, snrs) in [(&c.train, TRAIN_SNRS), (&c.test, TEST_SNRS)] {
                let counts: Vec<usize> = snrs
                    .iter()
                    .map(|s| utts.iter().filter(|u| u.snr_db == *s).count())
                    .collect();
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                assert!(hi - lo <= 1, "{counts:?}");
            }
        }
    }

    #[test]
    fn spec_validation() {
        let ok = spec(1, 1);
        assert!(CorpusSpec {
            test_snrs: vec![0.0],
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(CorpusSpec {
            min_len: 100,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(CorpusSpec {
            min_len: 9000,
            max_len: 8000,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(CorpusSpec {
            train_snrs: vec![],
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn hand_built_wav_bytes() {
        let samples: [i16; 4] = [0, 16384, -32768, 32767];
        let mut b = Vec::new();
        b.extend(b"RIFF");
        b.extend(36u32.wrapping_add(8).to_le_bytes());
        b.extend(b"WAVEfmt ");
        b.extend(16u32.to_le_bytes());
        b.extend(1u16.to_le_bytes());
        b.extend(1u16.to_le_bytes());
        b.extend(16000u32.to_le_bytes());
        b.extend(32000u32.to_le_bytes());
        b.extend(2u16.to_le_bytes());
        b.extend(16u16.to_le_bytes());
        b.extend(b"data");
        b.extend(8u32.to_le_bytes());
        for s in samples {
            b.extend(s.to_le_bytes());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.wav");
        std::fs::write(&p, &b).unwrap();
        assert_eq!(read_wav(&p).unwrap(), vec![0.0, 0.5, -1.0, 32767.0 / 32768.0]);
        let q = dir.path().join("w.wav");
        write_wav(&q, &[0.0, 0.5, -1.0, 32767.0 / 32768.0]).unwrap();
        assert_eq!(std::fs::read(&q).unwrap(), b);
        // truncated data chunk
        std::fs::write(&p, &b[..b.len() - 3]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Parse { .. })));
        std::fs::write(&p, &b[..20]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn unsupported_formats_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for (channels, rate, bits) in [(2u16, 16000u32, 16u16), (1, 8000, 16), (1, 16000, 8)] {
            let p = dir.path().join("x.wav");
            let spec = hound::WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: bits,
                sample_format: hound::SampleFormat::Int,
            };
            let mut w = hound::WavWriter::create(&p, spec).unwrap();
            for _ in 0..channels * 2 {
                if bits == 8 {
                    w.write_sample(1i8).unwrap();
                } else {
                    w.write_sample(1i16).unwrap();
                }
            }
            w.finalize().unwrap();
            assert!(
                matches!(read_wav(&p), Err(Error::Parse { .. })),
                "{channels} {rate} {bits}"
            );
        }
        assert!(matches!(
            read_wav(&dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn pcm_rounding_and_clipping() {
        assert_eq!(to_pcm16(0.5 / 32768.0), 1);
        assert_eq!(to_pcm16(-0.5 / 32768.0), -1);
        assert_eq!(to_pcm16(1.0), 32767);
        assert_eq!(to_pcm16(-1.5), -32768);
        assert_eq!(to_pcm16(0.49 / 32768.0), 0);
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(&CorpusSpec {
            min_len: 400,
            max_len: 900,
            ..spec(3, 2)
        })
        .unwrap();
        write_corpus(dir.path(), &c).unwrap();
        let text = std::fs::read_to_string(test_manifest_path(dir.path())).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "test_00000\ttest/clean/test_00000.wav\ttest/noisy/test_00000.wav\t2.5"
        );
        let loaded = load_manifest(&train_manifest_path(dir.path())).unwrap();
        assert_eq!(loaded.len(), 3);
        for (l, u) in loaded.iter().zip(&c.train) {
            assert_eq!(l.id, u.id);
            assert!(l
                .clean
                .iter()
                .zip(&u.clean)
                .all(|(a, b)| (a - b).abs() <= 0.5 / 32768.0 + 1e-15));
        }
        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "a\tb\tc\n").unwrap();
        assert!(matches!(read_manifest(&bad), Err(Error::Parse { .. })));
        std::fs::write(&bad, "a\tb\tc\tx\n").unwrap();
        assert!(matches!(read_manifest(&bad), Err(Error::Parse { .. })));
    }

    #[test]
    fn corpus_slicing_is_lossless() {
        let c = generate_corpus(&spec(4, 2)).unwrap();
        for u in c.train.iter().chain(&c.test) {
            let s = slice_utterance(&u.noisy);
            assert_eq!(reconstruct_utterance(&s.slices, s.original_len).unwrap(), u.noisy);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn wav_round_trip_is_within_quantization(seed in any::<u64>(), n in 1usize..300) {
            let mut rng = stream(seed, 9);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.wav");
            write_wav(&p, &x).unwrap();
            let y = read_wav(&p).unwrap();
            prop_assert_eq!(y.len(), n);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }

        #[test]
        fn mixing_matches_requested_snr(seed in 0u64..500, snr in -5.0f64..30.0) {
            let c = synth_clean(seed, 1000).unwrap();
            let n = synth_noise(NoiseKind::White, seed + 1, 1000);
            prop_assert!((measured_snr(&c, &mix_at_snr(&c, &n, snr).unwrap()) - snr).abs() < 1e-6);
        }
    }
}
