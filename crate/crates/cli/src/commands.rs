use std::path::{Path, PathBuf};

use complex_se::checkpoint::Checkpoint;
use complex_se::data::{generate_corpus, load_manifest, read_wav, write_corpus, write_wav, CorpusSpec};
use complex_se::gradcheck;
use complex_se::masking::MaskMode;
use complex_se::metrics::{aggregate, format_report, log_spectral_distance, seg_snr, si_sdr, UtteranceScores};
use complex_se::models::{
    load_generator_config, DiscriminatorConfig, Generator, GeneratorConfig, RecurrentKind, Scale,
};
use complex_se::signal::{StftConfig, SLICE_LEN};
use complex_se::train::{split_and_slice, train_loop, Gan, LossKind, Pair, TrainConfig, TrainReport};
use complex_se::{Error, Real, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Resolver;
use crate::selftest::run_selftest;
use crate::{EnhanceArgs, EvaluateArgs, GradcheckArgs, SelftestArgs, SynthDataArgs, TrainArgs, EXIT_RUNTIME};

pub const CHECKPOINT_FILE: &str = "checkpoint.dcrg";
pub const REPORT_FILE: &str = "train_report.tsv";
pub const REPORT_HEADER: &str = "epoch\tg_loss\td_loss\tl1\tval_si_sdr\tlr";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn synth_data(a: SynthDataArgs) -> Result<i32> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let out: PathBuf = r.get("out", a.out, None)?;
    let base = CorpusSpec::new(0, 0, 0);
    let spec = CorpusSpec {
        n_train: r.get("n-train", a.n_train, Some("200"))?,
        n_test: r.get("n-test", a.n_test, Some("40"))?,
        seed: r.get("seed", a.seed, Some("0"))?,
        min_len: r.get("min-len", a.min_len, Some(&base.min_len.to_string()))?,
        max_len: r.get("max-len", a.max_len, Some(&base.max_len.to_string()))?,
        ..base
    };
    eprint!("{}", r.finish()?);
    spec.validate()?;
    let corpus = generate_corpus(&spec)?;
    write_corpus(&out, &corpus)?;
    eprintln!(
        "wrote {} train and {} test utterances to {}",
        corpus.train.len(),
        corpus.test.len(),
        out.display()
    );
    Ok(0)
}

struct TrainOptions {
    manifest: PathBuf,
    out: PathBuf,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    train: TrainConfig,
    precision: String,
}

fn resolve_train(a: TrainArgs) -> Result<TrainOptions> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let manifest = r.get("manifest", a.manifest, None)?;
    let out = r.get("out", a.out, None)?;
    let scale: Scale = r.get("scale", a.scale, Some("toy"))?;
    let mask: MaskMode = r.get("mask", a.mask, Some("crm"))?;
    let recurrent: RecurrentKind = r.get("recurrent", a.recurrent, Some("cblstm"))?;
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        loss: r.get::<LossKind>("loss", a.loss, Some("r"))?,
        epochs: r.get("epochs", a.epochs, Some(&defaults.epochs.to_string()))?,
        batch_size: r.get("batch", a.batch, Some(&defaults.batch_size.to_string()))?,
        lr: r.get("lr", a.lr, Some(&defaults.lr.to_string()))?,
        lr_decay: r.get("lr-decay", a.lr_decay, Some(&defaults.lr_decay.to_string()))?,
        lambda_l1: r.get("lambda-l1", a.lambda_l1, Some(&defaults.lambda_l1.to_string()))?,
        seed: r.get("seed", a.seed, Some("0"))?,
        val_fraction: r.get("val-fraction", a.val_fraction, Some(&defaults.val_fraction.to_string()))?,
    };
    let precision: String = r.get("precision", a.precision, Some("f32"))?;
    eprint!("{}", r.finish()?);
    if precision != "f32" && precision != "f64" {
        return Err(Error::Config(format!(
            "precision must be f32 or f64, got {precision:?}"
        )));
    }
    train.validate()?;
    let generator = GeneratorConfig {
        mask_mode: mask,
        recurrent_kind: recurrent,
        ..GeneratorConfig::for_scale(scale)
    };
    generator.validate()?;
    let discriminator = DiscriminatorConfig::for_scale(scale);
    discriminator.validate()?;
    Ok(TrainOptions {
        manifest,
        out,
        generator,
        discriminator,
        train,
        precision,
    })
}

fn run_training<T: Real>(o: &TrainOptions) -> Result<TrainReport> {
    let utterances = load_manifest(&o.manifest)?;
    if utterances.is_empty() {
        return Err(Error::Degenerate(format!(
            "manifest {} lists no utterances",
            o.manifest.display()
        )));
    }
    let pairs: Vec<Pair<T>> = utterances
        .iter()
        .map(|u| Pair {
            noisy: u.noisy.iter().map(|&v| T::from_f64_lossy(v)).collect(),
            clean: u.clean.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        })
        .collect();
    let (train, val) = split_and_slice(&pairs, o.train.val_fraction, o.train.seed);
    eprintln!(
        "{} training slices of {SLICE_LEN} samples, {} validation utterances",
        train.len(),
        val.len()
    );
    create_dir(&o.out)?;
    let mut gan = Gan::<T>::new(
        o.generator.clone(),
        o.discriminator.clone(),
        o.train.lr,
        o.train.lr_decay,
        o.train.seed,
    )?;
    let ck_path = o.out.join(CHECKPOINT_FILE);
    let report = train_loop(&mut gan, &train, &val, &o.train, |gan, rec| {
        eprintln!(
            "epoch {}: g_loss {:.4} d_loss {:.4} l1 {:.5} val_si_sdr {:.3} dB lr {}",
            rec.epoch, rec.g_loss, rec.d_loss, rec.l1, rec.val_si_sdr, rec.lr
        );
        gan.to_checkpoint().write(&ck_path)
    })?;
    write_text(
        &o.out.join(REPORT_FILE),
        &format!("{REPORT_HEADER}\n{}", report.to_text()),
    )?;
    eprintln!("wrote {} and {}", ck_path.display(), o.out.join(REPORT_FILE).display());
    Ok(report)
}

pub fn train(a: TrainArgs) -> Result<i32> {
    let o = resolve_train(a)?;
    if o.precision == "f64" {
        run_training::<f64>(&o)?;
    } else {
        run_training::<f32>(&o)?;
    }
    Ok(0)
}

/// Generator with its trained state; evaluation runs in 32-bit.
fn load_generator(path: &Path) -> Result<Generator<f32>> {
    let ck = Checkpoint::read(path)?;
    let cfg = load_generator_config(&ck)?;
    let mut g = Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    g.load_state(&ck, "g")?;
    Ok(g)
}

fn enhance_wave(g: &mut Generator<f32>, noisy: &[f64], batch: usize) -> Result<Vec<f64>> {
    let x: Vec<f32> = noisy.iter().map(|&v| v as f32).collect();
    Ok(g.enhance_utterance(&x, batch)?.into_iter().map(f64::from).collect())
}

fn positive_batch(batch: usize) -> Result<usize> {
    if batch == 0 {
        return Err(Error::Config("batch must be at least 1".into()));
    }
    Ok(batch)
}

pub fn enhance(a: EnhanceArgs) -> Result<i32> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let checkpoint: PathBuf = r.get("checkpoint", a.checkpoint, None)?;
    let input: PathBuf = r.get("in", a.input, None)?;
    let out: PathBuf = r.get("out", a.out, None)?;
    let batch = positive_batch(r.get("batch", a.batch, Some("8"))?)?;
    eprint!("{}", r.finish()?);
    let mut g = load_generator(&checkpoint)?;
    let noisy = read_wav(&input)?;
    let enhanced = enhance_wave(&mut g, &noisy, batch)?;
    write_wav(&out, &enhanced)?;
    eprintln!("enhanced {} samples into {}", enhanced.len(), out.display());
    Ok(0)
}

pub fn evaluate(a: EvaluateArgs) -> Result<i32> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let manifest: PathBuf = r.get("manifest", a.manifest, None)?;
    let checkpoint: PathBuf = r.get("checkpoint", a.checkpoint, None)?;
    let report: PathBuf = r.get("report", a.report, None)?;
    let batch = positive_batch(r.get("batch", a.batch, Some("8"))?)?;
    eprint!("{}", r.finish()?);
    let mut g = load_generator(&checkpoint)?;
    let lsd_cfg = StftConfig::paper();
    let mut scores = Vec::new();
    for u in load_manifest(&manifest)? {
        let est = enhance_wave(&mut g, &u.noisy, batch)?;
        let enhanced_sdr = si_sdr(&est, &u.clean)?;
        let noisy_sdr = si_sdr(&u.noisy, &u.clean)?;
        scores.push(UtteranceScores {
            id: u.id,
            snr_db: u.snr_db,
            metrics: vec![
                ("si_sdr".into(), enhanced_sdr),
                ("seg_snr".into(), seg_snr(&est, &u.clean)?),
                ("lsd".into(), log_spectral_distance(&est, &u.clean, &lsd_cfg)?),
                ("noisy_si_sdr".into(), noisy_sdr),
                ("noisy_seg_snr".into(), seg_snr(&u.noisy, &u.clean)?),
                ("noisy_lsd".into(), log_spectral_distance(&u.noisy, &u.clean, &lsd_cfg)?),
                ("si_sdr_gain".into(), enhanced_sdr - noisy_sdr),
            ],
        });
    }
    if scores.is_empty() {
        return Err(Error::Degenerate(format!(
            "manifest {} lists no utterances",
            manifest.display()
        )));
    }
    write_text(&report, &format_report(&scores))?;
    for (group, means) in aggregate(&scores) {
        let line: Vec<String> = means.iter().map(|(m, v)| format!("{m} {v:.4}")).collect();
        eprintln!("{group}: {}", line.join(", "));
    }
    eprintln!("wrote {}", report.display());
    Ok(0)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let mut r = Resolver::new(a.config.as_deref())?;
    let module: String = r.get("module", a.module, Some("all"))?;
    eprint!("{}", r.finish()?);
    let outcomes = gradcheck::run((module != "all").then_some(module.as_str()))?;
    let mut failed = 0;
    for o in &outcomes {
        eprintln!("{o}");
        failed += usize::from(!o.passed());
    }
    eprintln!("{} checks, {failed} failed", outcomes.len());
    Ok(if failed == 0 { 0 } else { EXIT_RUNTIME })
}

pub fn selftest(a: SelftestArgs) -> Result<i32> {
    let r = Resolver::new(a.config.as_deref())?;
    eprint!("{}", r.finish()?);
    let checks = run_selftest()?;
    for c in &checks {
        eprintln!("{c}");
    }
    Ok(if checks.iter().all(|c| c.passed) {
        0
    } else {
        EXIT_RUNTIME
    })
}
