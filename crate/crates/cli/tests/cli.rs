use std::path::Path;
use std::process::Command;

use complex_se::data::{mix_at_snr, read_wav, synth_clean, synth_noise, write_wav, NoiseKind};

fn complex_se(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_complex-se"))
        .args(args)
        .output()
        .expect("spawn binary");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path) {
    let (code, err) = complex_se(&[
        "synth-data",
        "--out",
        s(dir),
        "--n-train",
        "2",
        "--n-test",
        "2",
        "--min-len",
        "16000",
        "--max-len",
        "16000",
        "--seed",
        "4",
    ]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(complex_se(&["--help"]).0, 0);
    assert_eq!(complex_se(&["--version"]).0, 0);
    assert_eq!(complex_se(&["train", "--help"]).0, 0);
}

#[test]
fn validation_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(complex_se(&[]).0, 1);
    assert_eq!(complex_se(&["train", "--bogus"]).0, 1);
    assert_eq!(complex_se(&["train", "--out", s(dir.path())]).0, 1, "missing manifest");
    let m = dir.path().join("m.tsv");
    assert_eq!(
        complex_se(&["train", "--manifest", s(&m), "--out", s(dir.path()), "--epochs", "0"]).0,
        1
    );
    assert_eq!(
        complex_se(&["train", "--manifest", s(&m), "--out", s(dir.path()), "--mask", "square"]).0,
        1
    );
    assert_eq!(
        complex_se(&[
            "train",
            "--manifest",
            s(&m),
            "--out",
            s(dir.path()),
            "--precision",
            "f16"
        ])
        .0,
        1
    );
    assert_eq!(complex_se(&["gradcheck", "--module", "nonsense"]).0, 1);
}

#[test]
fn missing_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("absent.tsv");
    let (code, err) = complex_se(&[
        "train",
        "--manifest",
        s(&m),
        "--out",
        s(&dir.path().join("o")),
        "--epochs",
        "1",
    ]);
    assert_eq!(code, 2, "{err}");
    let ck = dir.path().join("absent.dcrg");
    assert_eq!(
        complex_se(&["enhance", "--checkpoint", s(&ck), "--in", s(&m), "--out", s(&m)]).0,
        2
    );
}

#[test]
fn config_file_is_merged_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "module = loss\ncolour = blue\n").unwrap();
    let (code, err) = complex_se(&["gradcheck", "--config", s(&conf)]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("colour"), "{err}");

    let conf = dir.path().join("good.conf");
    std::fs::write(&conf, "# only the loss section\nmodule = nonsense\n").unwrap();
    let (code, err) = complex_se(&["gradcheck", "--config", s(&conf), "--module", "loss"]);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("module = loss"), "{err}");
}

#[test]
fn selftest_passes() {
    let (code, err) = complex_se(&["selftest"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(err.matches(" ok").count(), 4, "{err}");
}

#[test]
fn train_enhance_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    corpus(&data);
    let conf = dir.path().join("train.conf");
    std::fs::write(&conf, "epochs = 0\nbatch = 2\nrecurrent = lstm\n").unwrap();
    let run = dir.path().join("run");
    let (code, err) = complex_se(&[
        "train",
        "--config",
        s(&conf),
        "--epochs",
        "1",
        "--manifest",
        s(&data.join("train_manifest.tsv")),
        "--out",
        s(&run),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("epochs = 1") && err.contains("recurrent = lstm"), "{err}");
    let report = std::fs::read_to_string(run.join("train_report.tsv")).unwrap();
    assert_eq!(report.lines().count(), 2, "{report}");
    assert!(report.starts_with("epoch\tg_loss"));

    let clean = synth_clean(1, 40000).unwrap();
    let noisy = mix_at_snr(&clean, &synth_noise(NoiseKind::Pink, 1, 40000), 5.0).unwrap();
    let input = dir.path().join("noisy.wav");
    write_wav(&input, &noisy).unwrap();
    let output = dir.path().join("enhanced.wav");
    let ck = run.join("checkpoint.dcrg");
    let (code, err) = complex_se(&[
        "enhance",
        "--checkpoint",
        s(&ck),
        "--in",
        s(&input),
        "--out",
        s(&output),
    ]);
    assert_eq!(code, 0, "{err}");
    let enhanced = read_wav(&output).unwrap();
    assert_eq!(enhanced.len(), 40000);

    let eval = dir.path().join("eval.tsv");
    let (code, err) = complex_se(&[
        "evaluate",
        "--manifest",
        s(&data.join("test_manifest.tsv")),
        "--checkpoint",
        s(&ck),
        "--report",
        s(&eval),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&eval).unwrap();
    for metric in ["si_sdr", "seg_snr", "lsd", "noisy_si_sdr", "si_sdr_gain"] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("all\t{metric}\t"))),
            "{metric} missing:\n{text}"
        );
    }
    assert!(text.lines().any(|l| l.starts_with("test_00000\tsi_sdr\t")));
}

#[test]
fn gradcheck_section_passes() {
    let (code, err) = complex_se(&["gradcheck", "--module", "loss"]);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("0 failed"), "{err}");
}
