use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cortinv::audio::AudioBuffer;
use cortinv::config::ExperimentConfig;
use cortinv::ftc;
use cortinv::tv::load_tv_csv;

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.synth.n_speakers = 3;
    cfg.data.synth.utterances_per_speaker = 2;
    cfg.data.synth.duration = 0.5;
    cfg.model.hidden_layers = 2;
    cfg.model.width = 16;
    cfg.model.max_epochs = 3;
    cfg.eval.q_grid = vec![1.0, 10.0];
    cfg.eval.r_grid = vec![0.01];
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p
}

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cortinv"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(config: &Path, args: &[&str]) -> String {
    let out = run(config, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn full_stage_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let c = write_config(dir.path(), &cfg);
    let work = dir.path().join("work");

    assert!(ok(&c, &["synth"]).starts_with("6 utterances"));
    let wav = read(dir.path().join("data/wav/spk00_utt00.wav"));

    assert_eq!(ok(&c, &["--jobs", "1", "extract"]), "extracted 6 utterances, 0 already current\n");
    let rec = ftc::read_file(&work.join("features/spk00_utt00.ftc")).unwrap();
    let cort = rec.iter().find(|r| r.meta("section") == Some("cortical")).unwrap();
    assert_eq!(cort.dims, vec![50, 4, 10, 128]);
    assert_eq!(cort.meta("provenance"), Some(cfg.feature_hash().as_str()));

    // resume recomputes only what is missing
    let first = read(work.join("features/spk01_utt01.ftc"));
    std::fs::remove_file(work.join("features/spk01_utt01.ftc")).unwrap();
    assert_eq!(ok(&c, &["extract"]), "extracted 1 utterances, 5 already current\n");
    assert_eq!(read(work.join("features/spk01_utt01.ftc")), first);

    ok(&c, &["fit-reduce"]);
    let energy = String::from_utf8(read(work.join("energy.csv"))).unwrap();
    assert_eq!(energy.lines().count(), 1 + 142);
    let basis = read(work.join("basis.ftc"));
    ok(&c, &["fit-reduce"]);
    assert_eq!(read(work.join("basis.ftc")), basis);
    // only train speakers fed the basis
    let manifest = cortinv::dataset::DatasetManifest::load(&dir.path().join("data/manifest.csv")).unwrap();
    let train: Vec<String> = manifest
        .split(cortinv::dataset::Split::Train)
        .map(|e| e.utt_id.clone())
        .collect();
    let listed = String::from_utf8(read(work.join("fit_reduce_inputs.txt"))).unwrap();
    assert_eq!(listed.lines().collect::<Vec<_>>(), train);

    ok(&c, &["train"]);
    let ckpt = work.join("models/cortical_980_w16.mlp");
    let log = String::from_utf8(read(work.join("models/cortical_980_w16_log.csv"))).unwrap();
    assert!(log.starts_with("epoch,train_mse,dev_mse,seconds\n"));
    assert!(work.join("models/cortical_980_w16_kalman.toml").exists());

    let report = ok(&c, &["eval"]);
    assert!(report.starts_with("feature,context,LA,LP,TBCL,TBCD,TTCL,TTCD,average\ncortical_980,7,"));
    let csv = read(work.join("reports/cortical_980_w16.csv"));
    ok(&c, &["eval"]);
    assert_eq!(read(work.join("reports/cortical_980_w16.csv")), csv);
    let prov = String::from_utf8(read(work.join("reports/cortical_980_w16.provenance"))).unwrap();
    assert!(prov.contains(&cfg.model_hash()));

    // 2 s of audio in, 200 frames out
    let audio: Vec<f64> = (0..32000).map(|i| 0.05 * (i as f64 * 0.07).sin()).collect();
    let in_wav = dir.path().join("probe.wav");
    AudioBuffer::new(audio, 16000, "probe").unwrap().save_wav(&in_wav).unwrap();
    let out_csv = dir.path().join("probe.csv");
    ok(&c, &["infer", in_wav.to_str().unwrap(), "-o", out_csv.to_str().unwrap()]);
    assert_eq!(load_tv_csv(&out_csv).unwrap().n_frames(), 200);

    let silence = dir.path().join("silence.wav");
    AudioBuffer::new(vec![0.0; 16000], 16000, "s").unwrap().save_wav(&silence).unwrap();
    ok(&c, &["infer", silence.to_str().unwrap(), "-o", out_csv.to_str().unwrap()]);
    let tv = load_tv_csv(&out_csv).unwrap();
    assert!(tv.values().iter().all(|v| v.is_finite()));
    for k in 0..6 {
        let ch = tv.channel(k);
        let spread = ch.iter().cloned().fold(f64::MIN, f64::max) - ch.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-6, "channel {k} moves by {spread} on silence");
    }

    let summary = ok(&c, &["report"]);
    assert!(summary.lines().next().unwrap().ends_with("average,model"));
    assert!(summary.contains("cortical_980_w16"));

    // a changed front end makes stored artifacts stale
    let mut changed = cfg.clone();
    changed.frontend.q = 5.0;
    write_config(dir.path(), &changed);
    assert_eq!(run(&c, &["extract"]).status.code(), Some(3));
    assert_eq!(run(&c, &["eval"]).status.code(), Some(3));
    assert_eq!(run(&c, &["infer", in_wav.to_str().unwrap(), "-o", "x.csv"]).status.code(), Some(3));
    assert_eq!(run(&c, &["--jobs", "1", "--force", "extract"]).status.code(), Some(0));

    // same seed regenerates nothing; --force rewrites identical bytes
    write_config(dir.path(), &cfg);
    ok(&c, &["--force", "synth"]);
    assert_eq!(read(dir.path().join("data/wav/spk00_utt00.wav")), wav);
    assert!(ckpt.exists());
}

#[test]
fn width_grid_trains_one_model_per_width() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.reduction.feature = cortinv::config::FeatureKind::Mfcc;
    cfg.model.max_epochs = 1;
    let c = write_config(dir.path(), &cfg);
    ok(&c, &["synth"]);
    ok(&c, &["extract"]);
    ok(&c, &["train", "--widths", "8,12"]);
    for w in [8, 12] {
        assert!(dir.path().join(format!("work/models/mfcc_w{w}.mlp")).exists());
    }
    let out = ok(&c, &["eval", "--widths", "8,12"]);
    assert_eq!(out.matches("mfcc,17,").count(), 2);
    let summary = ok(&c, &["report"]);
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), &tiny_config());
    assert_eq!(run(&c, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&c, &["--jobs", "many", "synth"]).status.code(), Some(1));
    assert_eq!(run(&c, &["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\ninput_dim = 999\n").unwrap();
    let out = run(&bad, &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("980"));
    std::fs::write(&bad, "[model]\nwidht = 3\n").unwrap();
    assert_eq!(run(&bad, &["synth"]).status.code(), Some(1));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), &tiny_config());
    assert_eq!(run(&c, &["extract"]).status.code(), Some(2));
    ok(&c, &["synth"]);
    ok(&c, &["extract"]);
    assert_eq!(run(&c, &["train"]).status.code(), Some(1));
    let out = run(&c, &["infer", "nope.wav", "-o", "x.csv"]);
    assert_ne!(out.status.code(), Some(0));
}
