use std::path::Path;
use std::process::{Command, Output};

use featvae::pipeline::PipelineConfig;

fn featvae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featvae"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn unknown_config_field_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 1, "batchsize": 3}"#).unwrap();
    let out = featvae(dir.path(), &["--config", cfg.to_str().unwrap(), "generate"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_flag_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = featvae(dir.path(), &["--preset", "huge", "train"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_upstream_exits_with_3_and_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = featvae(dir.path(), &["extract"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("finetune"));
    let out = featvae(dir.path(), &["report"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn preset_and_seed_flags_are_archived() {
    let dir = tempfile::tempdir().unwrap();
    let out = featvae(dir.path(), &["--preset", "appendix-b", "--seed", "9", "train"]);
    assert_eq!(out.status.code(), Some(3));
    let archived = PipelineConfig::load(&dir.path().join("config.json")).unwrap();
    assert_eq!(archived.seed, 9);
    let vae = archived.vae_config();
    assert_eq!(vae.arch.latent, 16);
    assert_eq!((vae.arch.hidden, vae.arch.encoder_layers), (1024, 4));
    let s = vae.train.schedule;
    assert_eq!(
        (s.epochs, s.beta_start, s.beta_end, s.t_start, s.t_end),
        (100, 0.001, 0.4, 10, 49)
    );

    // the archived config is reused when no --config is given
    let _ = featvae(dir.path(), &["train"]);
    let again = PipelineConfig::load(&dir.path().join("config.json")).unwrap();
    assert_eq!(again, archived);
}

#[test]
fn generate_is_reproducible_and_skips_when_up_to_date() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = featvae(d.path(), &["--seed", "3", "generate"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["real/images.bin", "toy/labels.bin", "realistic/meta.json"] {
        let read = |d: &Path| std::fs::read(d.join("data").join(f)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{f}");
    }
    let out = featvae(a.path(), &["generate"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("up to date"));
}
