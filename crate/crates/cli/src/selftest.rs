//! Quick end-to-end sanity checks of the signal path and the losses.

use std::fmt;

use complex_se::data::{mix_at_snr, synth_clean, synth_noise, NoiseKind};
use complex_se::masking::{apply_mask_crm, oracle_crm};
use complex_se::metrics::si_sdr;
use complex_se::signal::{istft, reconstruct_utterance, slice_utterance, stft, StftConfig};
use complex_se::train::{relativistic_average_losses, relativistic_d_loss, relativistic_g_adv_loss};
use complex_se::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SelfCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "ok" } else { "FAIL" };
        write!(f, "selftest/{}: {} {verdict}", self.name, self.detail)
    }
}

fn utterance(seed: u64, len: usize, snr: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let clean = synth_clean(seed, len)?;
    let noisy = mix_at_snr(&clean, &synth_noise(NoiseKind::White, seed, len), snr)?;
    Ok((clean, noisy))
}

fn stft_round_trip() -> Result<SelfCheck> {
    let mut worst = 0.0f64;
    for cfg in [StftConfig::paper(), StftConfig::toy()] {
        let (_, x) = utterance(1, 16000, 5.0)?;
        let y = istft(&stft(&x, &cfg)?, &cfg, x.len())?;
        let interior = cfg.win_len..x.len() - cfg.win_len;
        worst = interior.map(|n| (x[n] - y[n]).abs()).fold(worst, f64::max);
    }
    Ok(SelfCheck {
        name: "stft_round_trip",
        passed: worst < 1e-6,
        detail: format!("max interior error {worst:.3e}"),
    })
}

fn slicing() -> Result<SelfCheck> {
    let mut exact = true;
    for len in [9000usize, 16000, 40000] {
        let (_, x) = utterance(2, len, 5.0)?;
        let s = slice_utterance(&x);
        exact &= reconstruct_utterance(&s.slices, s.original_len)? == x;
    }
    Ok(SelfCheck {
        name: "slice_reconstruct",
        passed: exact,
        detail: format!("exact {exact}"),
    })
}

fn oracle_mask() -> Result<SelfCheck> {
    let cfg = StftConfig::paper();
    let (clean, noisy) = utterance(3, 16000, 0.0)?;
    let x = stft(&noisy, &cfg)?;
    let y = stft(&clean, &cfg)?;
    let est = apply_mask_crm(&x, &oracle_crm(&x, &y)?)?;
    let mut worst = 0.0f64;
    for k in 0..x.re.len() {
        let (xr, xi) = (x.re.data()[k], x.im.data()[k]);
        if xr.hypot(xi) > 1e-3 {
            let (yr, yi) = (y.re.data()[k], y.im.data()[k]);
            let err = (est.re.data()[k] - yr).hypot(est.im.data()[k] - yi) / yr.hypot(yi).max(1e-12);
            worst = worst.max(err);
        }
    }
    let wave = istft(&est, &cfg, clean.len())?;
    // frames start at sample 0 without padding, so only the fully
    // overlapped interior can be reconstructed
    let interior = cfg.win_len..clean.len() - cfg.win_len;
    let score = si_sdr(&wave[interior.clone()], &clean[interior])?;
    let full = si_sdr(&wave, &clean)?;
    Ok(SelfCheck {
        name: "oracle_mask",
        passed: worst < 1e-6 && score >= 60.0,
        detail: format!("max relative bin error {worst:.3e}, interior SI-SDR {score:.2} dB (full length {full:.2} dB)"),
    })
}

fn loss_identities() -> Result<SelfCheck> {
    let ln2 = 2f64.ln();
    let scores = [0.3, -1.2, 4.0];
    let equal = (relativistic_d_loss(&scores, &scores)? - ln2).abs();
    let (ra_g, _) = relativistic_average_losses(&[1.5], &[-0.5])?;
    let doubled = (ra_g - 2.0 * relativistic_g_adv_loss(&[1.5], &[-0.5])?).abs();
    let shifted: Vec<f64> = scores.iter().map(|s| s + 7.0).collect();
    let fake = [0.1, 0.2, -0.3];
    let fake_shifted: Vec<f64> = fake.iter().map(|s| s + 7.0).collect();
    let shift = (relativistic_d_loss(&scores, &fake)? - relativistic_d_loss(&shifted, &fake_shifted)?).abs();
    let worst = equal.max(doubled).max(shift);
    Ok(SelfCheck {
        name: "loss_identities",
        passed: worst <= 1e-10,
        detail: format!("max deviation {worst:.3e}"),
    })
}

pub fn run_selftest() -> Result<Vec<SelfCheck>> {
    Ok(vec![stft_round_trip()?, slicing()?, oracle_mask()?, loss_identities()?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest().unwrap() {
            assert!(c.passed, "{c}");
        }
    }
}
