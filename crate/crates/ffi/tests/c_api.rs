use std::ffi::{CStr, CString};
use std::ptr;

use cortinv::config::ExperimentConfig;
use cortinv::mlp::{init_mlp, save_model, MlpArchitecture, MlpModel};
use cortinv::pipeline;
use cortinv_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cortinv_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn ppmc_through_the_abi() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let y = [1.0, 2.0, 3.0, 5.0];
    let mut r = 0.0;
    let s = unsafe { cortinv_ppmc(x.as_ptr(), y.as_ptr(), 4, &mut r) };
    assert_eq!(s, CortinvStatus::Ok);
    assert!((r - 6.5 / (5.0f64 * 8.75).sqrt()).abs() < 1e-12);
    assert_eq!(last_error(), "");

    let c = [2.0; 4];
    let s = unsafe { cortinv_ppmc(c.as_ptr(), y.as_ptr(), 4, &mut r) };
    assert_eq!(s, CortinvStatus::UndefinedCorrelation);
    assert!(last_error().contains("constant"));

    let s = unsafe { cortinv_ppmc(ptr::null(), y.as_ptr(), 4, &mut r) };
    assert_eq!(s, CortinvStatus::NullPointer);
    let s = unsafe { cortinv_ppmc(x.as_ptr(), y.as_ptr(), 4, ptr::null_mut()) };
    assert_eq!(s, CortinvStatus::NullPointer);
}

#[test]
fn kalman_keeps_constants_and_smooths_in_place() {
    let n = 50;
    let mut v = vec![0.0; n * 6];
    for t in 0..n {
        for k in 0..6 {
            v[t * 6 + k] = k as f64 + if k == 0 { ((t * 7919) % 13) as f64 * 0.01 } else { 0.0 };
        }
    }
    let copy = v.clone();
    let s = unsafe { cortinv_kalman_smooth(v.as_ptr(), n, 1.0, 0.01, 0, v.as_mut_ptr()) };
    assert_eq!(s, CortinvStatus::Ok);
    for t in 10..n {
        for k in 1..6 {
            assert!((v[t * 6 + k] - k as f64).abs() < 1e-6);
        }
    }
    assert_ne!(v[..6], copy[..6]);
    let s = unsafe { cortinv_kalman_smooth(copy.as_ptr(), n, -1.0, 0.01, 0, v.as_mut_ptr()) };
    assert_eq!(s, CortinvStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let s = unsafe { cortinv_kalman_smooth(ptr::null(), 0, 1.0, 0.01, 1, ptr::null_mut()) };
    assert_eq!(s, CortinvStatus::Ok);
}

#[test]
fn bare_checkpoint_matches_rust_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let arch = MlpArchitecture::new(5, 2, 8);
    let model: MlpModel<f32> = init_mlp(&arch, 3).unwrap();
    let path = dir.path().join("m.mlp");
    save_model(&model, &path).unwrap();

    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cortinv_model_load_checkpoint(c.as_ptr(), &mut h) }, CortinvStatus::Ok);
    assert_eq!(unsafe { cortinv_model_input_dim(h) }, 5);
    let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut out = vec![0.0; 18];
    assert_eq!(unsafe { cortinv_model_predict(h, x.as_ptr(), 3, out.as_mut_ptr()) }, CortinvStatus::Ok);
    assert_eq!(out, model.predict(&x).unwrap().values());

    // no pipeline attached
    let audio = vec![0.0; 1600];
    let mut t = ptr::null_mut();
    let s = unsafe { cortinv_model_invert(h, audio.as_ptr(), audio.len(), 16000, &mut t) };
    assert_eq!(s, CortinvStatus::InvalidArgument);
    assert!(t.is_null());
    unsafe { cortinv_model_free(h) };

    let missing = CString::new(dir.path().join("none.mlp").to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cortinv_model_load_checkpoint(missing.as_ptr(), &mut h) }, CortinvStatus::Io);
    assert!(h.is_null());

    std::fs::write(&path, b"MLP1garbage").unwrap();
    assert_eq!(unsafe { cortinv_model_load_checkpoint(c.as_ptr(), &mut h) }, CortinvStatus::Data);
    assert_eq!(unsafe { cortinv_model_input_dim(ptr::null()) }, 0);
    unsafe { cortinv_model_free(ptr::null_mut()) };
}

#[test]
fn full_model_inverts_audio() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.data.root = dir.path().join("data");
    cfg.output.work_dir = dir.path().join("work");
    cfg.data.synth.n_speakers = 3;
    cfg.data.synth.utterances_per_speaker = 1;
    cfg.data.synth.duration = 0.4;
    cfg.model.hidden_layers = 1;
    cfg.model.width = 8;
    cfg.model.max_epochs = 2;
    cfg.eval.q_grid = vec![1.0];
    cfg.eval.r_grid = vec![0.01];
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();

    pipeline::stage_synth(&cfg, false).unwrap();
    pipeline::stage_extract(&cfg, 1, false).unwrap();
    pipeline::stage_fit_reduce(&cfg, 1).unwrap();
    let (ckpt, _) = pipeline::stage_train(&cfg, 1).unwrap();

    let c_cfg = CString::new(cfg_path.to_str().unwrap()).unwrap();
    let c_ckpt = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    let s = unsafe { cortinv_model_load(c_cfg.as_ptr(), c_ckpt.as_ptr(), &mut h) };
    assert_eq!(s, CortinvStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { cortinv_model_input_dim(h) }, 980);

    let audio: Vec<f64> = (0..16000).map(|i| 0.1 * (i as f64 * 0.05).sin()).collect();
    let mut t = ptr::null_mut();
    let s = unsafe { cortinv_model_invert(h, audio.as_ptr(), audio.len(), 16000, &mut t) };
    assert_eq!(s, CortinvStatus::Ok, "{}", last_error());
    let frames = unsafe { cortinv_trajectory_frames(t) };
    assert_eq!(frames, 100);
    let data = unsafe { std::slice::from_raw_parts(cortinv_trajectory_data(t), frames * 6) };
    assert!(data.iter().all(|v| v.is_finite()));

    let inv = pipeline::load_inversion_model(&cfg, &ckpt).unwrap();
    let expected = inv.invert(&cortinv::audio::AudioBuffer::new(audio, 16000, "x").unwrap()).unwrap();
    assert_eq!(data, expected.values());
    unsafe {
        cortinv_trajectory_free(t);
        cortinv_model_free(h);
    }

    // a checkpoint from another configuration is refused
    let mut other = cfg.clone();
    other.model.seed += 1;
    std::fs::write(&cfg_path, other.to_toml()).unwrap();
    let mut h = ptr::null_mut();
    let s = unsafe { cortinv_model_load(c_cfg.as_ptr(), c_ckpt.as_ptr(), &mut h) };
    assert_eq!(s, CortinvStatus::Provenance);
    assert!(h.is_null());
}
