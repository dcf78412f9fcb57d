//! Waveform quality metrics and the metric report format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::signal::{stft, StftConfig};

/// Bound applied to SI-SDR, reached by perfect reconstructions.
pub const SI_SDR_CAP: f64 = 100.0;
pub const SEG_FRAME: usize = 400;
pub const SEG_HOP: usize = 200;
pub const SEG_FLOOR: f64 = -10.0;
pub const SEG_CEIL: f64 = 35.0;
const SEG_GATE: f64 = 1e-8;
const LSD_EPS: f64 = 1e-8;

fn check_lengths(context: &str, est: &[f64], reference: &[f64]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::dims(context, &[est.len()], &[reference.len()]));
    }
    if est.is_empty() {
        return Err(Error::Degenerate(format!("{context}: empty signals")));
    }
    Ok(())
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Scale-invariant signal-to-distortion ratio in dB, both signals
/// mean-removed, clamped to `±100`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths("si_sdr", est, reference)?;
    let (e, r) = (centered(est), centered(reference));
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate(
            "si_sdr: reference has no energy after mean removal".into(),
        ));
    }
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let (mut target, mut noise) = (0.0, 0.0);
    for (a, b) in e.iter().zip(&r) {
        let s = alpha * b;
        target += s * s;
        noise += (a - s) * (a - s);
    }
    let db = 10.0 * (target / noise).log10();
    Ok(if db.is_nan() {
        -SI_SDR_CAP
    } else {
        db.clamp(-SI_SDR_CAP, SI_SDR_CAP)
    })
}

/// Segmental SNR with 400-sample frames and 200-sample hop.
pub fn seg_snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    seg_snr_with(est, reference, SEG_FRAME, SEG_HOP)
}

/// Mean per-frame SNR, each clamped to `[-10, 35]` dB, over frames whose
/// reference energy exceeds `1e-8`. A signal shorter than one frame is
/// treated as a single frame.
pub fn seg_snr_with(est: &[f64], reference: &[f64], frame: usize, hop: usize) -> Result<f64> {
    check_lengths("seg_snr", est, reference)?;
    if frame == 0 || hop == 0 {
        return Err(Error::Config("seg_snr frame and hop must be positive".into()));
    }
    let n = est.len();
    let starts: Vec<usize> = if n <= frame {
        vec![0]
    } else {
        (0..=(n - frame) / hop).map(|k| k * hop).collect()
    };
    let (mut total, mut active) = (0.0, 0usize);
    for s in starts {
        let end = (s + frame).min(n);
        let (mut sig, mut err) = (0.0, 0.0);
        for k in s..end {
            sig += reference[k] * reference[k];
            err += (reference[k] - est[k]).powi(2);
        }
        if sig <= SEG_GATE {
            continue;
        }
        let db = if err == 0.0 {
            SEG_CEIL
        } else {
            10.0 * (sig / err).log10()
        };
        total += db.clamp(SEG_FLOOR, SEG_CEIL);
        active += 1;
    }
    if active == 0 {
        return Err(Error::Degenerate("seg_snr: no frame of the reference is active".into()));
    }
    Ok(total / active as f64)
}

/// RMS over frames of the per-frame RMS difference between
/// `20·log10(|S| + 1e-8)` spectra.
pub fn log_spectral_distance(est: &[f64], reference: &[f64], cfg: &StftConfig) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::dims("log_spectral_distance", &[est.len()], &[reference.len()]));
    }
    let (se, sr) = (stft(est, cfg)?.abs(), stft(reference, cfg)?.abs());
    let (bins, frames) = (se.shape()[0], se.shape()[1]);
    let mut acc = 0.0;
    for t in 0..frames {
        let mut d2 = 0.0;
        for k in 0..bins {
            let a = 20.0 * (se.data()[k * frames + t] + LSD_EPS).log10();
            let b = 20.0 * (sr.data()[k * frames + t] + LSD_EPS).log10();
            d2 += (a - b) * (a - b);
        }
        acc += d2 / bins as f64;
    }
    Ok((acc / frames as f64).sqrt())
}

/// Metric values of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceScores {
    pub id: String,
    pub snr_db: f64,
    pub metrics: Vec<(String, f64)>,
}

/// Tab-separated `id metric value` lines with four decimals: each utterance,
/// then the mean of every metric per SNR label (`snr_<label>`) and over all
/// utterances (`all`).
pub fn format_report(scores: &[UtteranceScores]) -> String {
    let mut out = String::new();
    for u in scores {
        for (m, v) in &u.metrics {
            writeln!(out, "{}\t{}\t{:.4}", u.id, m, v).unwrap();
        }
    }
    for (id, mean) in aggregate(scores) {
        for (m, v) in mean {
            writeln!(out, "{id}\t{m}\t{v:.4}").unwrap();
        }
    }
    out
}

/// Means per SNR label (ascending) followed by the overall mean.
pub fn aggregate(scores: &[UtteranceScores]) -> Vec<(String, Vec<(String, f64)>)> {
    let mut groups: BTreeMap<i64, Vec<&UtteranceScores>> = BTreeMap::new();
    for u in scores {
        groups.entry((u.snr_db * 1000.0).round() as i64).or_default().push(u);
    }
    let mut out: Vec<(String, Vec<(String, f64)>)> = groups
        .into_iter()
        .map(|(key, g)| (format!("snr_{}", key as f64 / 1000.0), means(&g)))
        .collect();
    if !scores.is_empty() {
        out.push(("all".into(), means(&scores.iter().collect::<Vec<_>>())));
    }
    out
}

fn means(group: &[&UtteranceScores]) -> Vec<(String, f64)> {
    let names: Vec<String> = group[0].metrics.iter().map(|(m, _)| m.clone()).collect();
    names
        .into_iter()
        .map(|name| {
            let vals: Vec<f64> = group
                .iter()
                .filter_map(|u| u.metrics.iter().find(|(m, _)| *m == name).map(|(_, v)| *v))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (name, mean)
        })
        .collect()
}

/// Parses a report back into `(id, metric, value)` triples.
pub fn parse_report(text: &str) -> Result<Vec<(String, String, f64)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Parse {
                path: "metric report".into(),
                detail: format!("line {}: {line:?}", n + 1),
            };
            if parts.len() != 3 {
                return Err(bad());
            }
            let v = parts[2].parse::<f64>().map_err(|_| bad())?;
            Ok((parts[0].to_string(), parts[1].to_string(), v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    /// Direct definition without the mean removal shortcut.
    fn si_sdr_oracle(est: &[f64], reference: &[f64]) -> f64 {
        let n = est.len() as f64;
        let me = est.iter().sum::<f64>() / n;
        let mr = reference.iter().sum::<f64>() / n;
        let mut dot = 0.0;
        let mut rr = 0.0;
        for k in 0..est.len() {
            dot += (est[k] - me) * (reference[k] - mr);
            rr += (reference[k] - mr).powi(2);
        }
        let mut ss = 0.0;
        let mut ee = 0.0;
        for k in 0..est.len() {
            let s = dot / rr * (reference[k] - mr);
            ss += s * s;
            ee += (est[k] - me - s).powi(2);
        }
        10.0 * (ss / ee).log10()
    }

    #[test]
    fn si_sdr_perfect_and_scaled() {
        let r = noise(1, 1000);
        assert_eq!(si_sdr(&r, &r).unwrap(), 100.0);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&twice, &r).unwrap(), 100.0);
    }

    #[test]
    fn si_sdr_at_known_snr() {
        let r = noise(2, 16000);
        let n = noise(3, 16000);
        let pr: f64 = r.iter().map(|v| v * v).sum();
        let pn: f64 = n.iter().map(|v| v * v).sum();
        let g = (pr / pn / 10.0).sqrt();
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        let v = si_sdr(&est, &r).unwrap();
        assert!((v - 10.0).abs() < 0.5, "{v}");
        assert!((v - si_sdr_oracle(&est, &r)).abs() < 1e-9);
    }

    #[test]
    fn si_sdr_errors() {
        assert!(matches!(si_sdr(&[1.0; 4], &[0.5; 4]), Err(Error::Degenerate(_))));
        assert!(matches!(si_sdr(&[1.0; 4], &[0.5; 3]), Err(Error::Dimension { .. })));
        assert_eq!(si_sdr(&[0.0; 4], &[1.0, -1.0, 1.0, -1.0]).unwrap(), -100.0);
    }

    #[test]
    fn seg_snr_examples() {
        let r = noise(4, 4000);
        assert_eq!(seg_snr(&r, &r).unwrap(), 35.0);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        // error energy is four times the reference energy in every frame
        assert!((seg_snr(&neg, &r).unwrap() - 10.0 * 0.25f64.log10()).abs() < 1e-12);
        let scaled: Vec<f64> = r.iter().map(|v| 0.9 * v).collect();
        assert!((seg_snr(&scaled, &r).unwrap() - 20.0).abs() < 1e-9);
        let close: Vec<f64> = r.iter().map(|v| 0.99 * v).collect();
        assert_eq!(seg_snr(&close, &r).unwrap(), 35.0);
    }

    #[test]
    fn seg_snr_ignores_silent_frames() {
        let mut r = vec![0.0; 2000];
        r.extend(noise(5, 2000));
        let mut e = noise(6, 2000);
        e.extend(r[2000..].iter().map(|v| 0.9 * v));
        let expect = 10.0 * (1.0f64 / 0.01).log10();
        // frames straddling the boundary still see only the active half
        let v = seg_snr(&e, &r).unwrap();
        let only_active = seg_snr(&e[2000..], &r[2000..]).unwrap();
        assert!((only_active - expect).abs() < 1e-9);
        assert!(v < only_active);
        assert!(matches!(seg_snr(&[1.0; 800], &[0.0; 800]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn lsd_examples() {
        let cfg = StftConfig::paper();
        let r = noise(7, 4000);
        assert_eq!(log_spectral_distance(&r, &r, &cfg).unwrap(), 0.0);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert!((log_spectral_distance(&twice, &r, &cfg).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-6);
        assert!(matches!(
            log_spectral_distance(&r, &r[1..], &cfg),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn lsd_matches_two_loop_oracle() {
        let cfg = StftConfig::toy();
        let (a, b) = (noise(8, 1000), noise(9, 1000));
        let (sa, sb) = (stft(&a, &cfg).unwrap(), stft(&b, &cfg).unwrap());
        let (bins, frames) = (sa.shape()[0], sa.shape()[1]);
        let mut total = 0.0;
        for t in 0..frames {
            let mut f = 0.0;
            for k in 0..bins {
                let i = k * frames + t;
                let ma = (sa.re.data()[i].powi(2) + sa.im.data()[i].powi(2)).sqrt();
                let mb = (sb.re.data()[i].powi(2) + sb.im.data()[i].powi(2)).sqrt();
                f += (20.0 * (ma + 1e-8).log10() - 20.0 * (mb + 1e-8).log10()).powi(2);
            }
            total += f / bins as f64;
        }
        let oracle = (total / frames as f64).sqrt();
        assert!((log_spectral_distance(&a, &b, &cfg).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn report_format_and_aggregation() {
        let s = |id: &str, snr: f64, v: f64| UtteranceScores {
            id: id.into(),
            snr_db: snr,
            metrics: vec![("si_sdr".into(), v), ("seg_snr".into(), v / 2.0)],
        };
        let scores = vec![s("u0", 7.5, 10.0), s("u1", 2.5, 4.0), s("u2", 7.5, 12.0)];
        let text = format_report(&scores);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "u0\tsi_sdr\t10.0000");
        assert!(lines.contains(&"snr_2.5\tsi_sdr\t4.0000"));
        assert!(lines.contains(&"snr_7.5\tsi_sdr\t11.0000"));
        assert!(lines.contains(&"all\tseg_snr\t4.3333"));
        let parsed = parse_report(&text).unwrap();
        assert_eq!(parsed.len(), lines.len());
        assert!(parse_report("a\tb").is_err());
    }

    proptest! {
        #[test]
        fn si_sdr_scale_and_sign_invariant(seed in 0u64..1000, gain in 0.01f64..100.0) {
            let r = noise(seed, 256);
            let e: Vec<f64> = r.iter().zip(noise(seed + 1, 256)).map(|(a, b)| a + 0.3 * b).collect();
            let base = si_sdr(&e, &r).unwrap();
            let scaled: Vec<f64> = e.iter().map(|v| gain * v).collect();
            let flipped: Vec<f64> = e.iter().map(|v| -v).collect();
            prop_assert!((si_sdr(&scaled, &r).unwrap() - base).abs() < 1e-9);
            prop_assert!((si_sdr(&flipped, &r).unwrap() - base).abs() < 1e-9);
            prop_assert!((base - si_sdr_oracle(&e, &r)).abs() < 1e-9);
        }
    }
}
