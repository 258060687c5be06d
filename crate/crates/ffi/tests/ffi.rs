use std::ffi::{CStr, CString};
use std::ptr;

use semiseq::features::{HrvFreqFeatures, HrvTimeFeatures};
use semiseq::nn::{Classifier, LstmLayerSpec, NetworkSpec};
use semiseq::trainer::{Method, Scaler, TrainedModel};
use semiseq::RngSeed;
use semiseq_ffi::*;

fn model() -> TrainedModel {
    let spec = NetworkSpec {
        input_dim: 3,
        lstm_layers: vec![LstmLayerSpec { hidden: 4, dropout: 0.0, recurrent_dropout: 0.0 }],
        batch_norm: true,
        bn_momentum: 0.9,
        bn_eps: 1e-3,
        dense_hidden: 5,
        dense_dropout: 0.0,
    };
    TrainedModel {
        classifier: Classifier::new(spec, &mut RngSeed(1).rng()).unwrap(),
        scaler: Scaler { mean: vec![1.0, -2.0, 0.5], std: vec![2.0, 1.0, 0.25] },
        feature_names: vec!["a".into(), "b".into(), "c".into()],
        method: Method::Baseline,
    }
}

fn last_error() -> String {
    let p = semiseq_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(m: &TrainedModel) -> (tempfile::TempDir, *mut SemiseqModel) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.save(&path, Some(1)).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { semiseq_model_load(c.as_ptr(), &mut h) }, SemiseqStatus::Ok);
    assert!(!h.is_null());
    (dir, h)
}

#[test]
fn predictions_match_the_library() {
    let m = model();
    let (_dir, h) = load(&m);
    let (n, t, f) = (4, 6, 3);
    let data: Vec<f64> = (0..n * t * f).map(|i| ((i * 37) % 11) as f64 / 3.0 - 1.0).collect();
    let mut out = vec![0.0; n];
    let st = unsafe { semiseq_model_predict(h, data.as_ptr(), n, t, f, out.as_mut_ptr()) };
    assert_eq!(st, SemiseqStatus::Ok);
    let views: Vec<_> = data.chunks(t * f).map(|c| ndarray::ArrayView2::from_shape((t, f), c).unwrap()).collect();
    assert_eq!(out, m.predict(&views).unwrap());
    assert!(out.iter().all(|p| *p > 0.0 && *p < 1.0));

    let mut fc = 0;
    assert_eq!(unsafe { semiseq_model_feature_count(h, &mut fc) }, SemiseqStatus::Ok);
    assert_eq!(fc, 3);

    let mut map = vec![0.0; t * f];
    assert_eq!(unsafe { semiseq_model_saliency(h, data.as_ptr(), n, t, f, map.as_mut_ptr()) }, SemiseqStatus::Ok);
    assert_eq!(map.iter().copied().fold(0.0, f64::max), 1.0);
    unsafe { semiseq_model_free(h) };
}

#[test]
fn errors_are_reported() {
    let m = model();
    let (_dir, h) = load(&m);
    let data = vec![0.0; 2 * 5 * 4];
    let mut out = vec![0.0; 2];
    let st = unsafe { semiseq_model_predict(h, data.as_ptr(), 2, 5, 4, out.as_mut_ptr()) };
    assert_eq!(st, SemiseqStatus::Dimension);
    assert!(last_error().contains("expected 3"), "{}", last_error());
    let st = unsafe { semiseq_model_predict(h, ptr::null(), 2, 5, 3, out.as_mut_ptr()) };
    assert_eq!(st, SemiseqStatus::NullPointer);
    let st = unsafe { semiseq_model_predict(ptr::null(), data.as_ptr(), 2, 5, 3, out.as_mut_ptr()) };
    assert_eq!(st, SemiseqStatus::NullPointer);
    let st = unsafe { semiseq_model_predict(h, data.as_ptr(), 0, 5, 3, out.as_mut_ptr()) };
    assert_eq!(st, SemiseqStatus::InvalidArgument);
    unsafe { semiseq_model_free(h) };
    unsafe { semiseq_model_free(ptr::null_mut()) };

    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { semiseq_model_load(missing.as_ptr(), &mut h) }, SemiseqStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { semiseq_model_load(junk.as_ptr(), &mut h) }, SemiseqStatus::Format);
}

#[test]
fn hrv_features() {
    let rr: Vec<f64> = (0..300).map(|i| 800.0 + 40.0 * (i as f64 * 0.7).sin()).collect();
    let mut time = vec![0.0; SEMISEQ_HRV_TIME_COUNT];
    assert_eq!(unsafe { semiseq_hrv_time(rr.as_ptr(), rr.len(), time.as_mut_ptr()) }, SemiseqStatus::Ok);
    assert!((time[0] - rr.iter().sum::<f64>() / rr.len() as f64).abs() < 1e-9);
    let mut freq = vec![0.0; SEMISEQ_HRV_FREQ_COUNT];
    assert_eq!(unsafe { semiseq_hrv_freq(rr.as_ptr(), rr.len(), freq.as_mut_ptr()) }, SemiseqStatus::Ok);
    assert!((freq[5] + freq[6] - 100.0).abs() < 1e-9);
    let short = [800.0];
    assert_ne!(unsafe { semiseq_hrv_time(short.as_ptr(), 1, time.as_mut_ptr()) }, SemiseqStatus::Ok);

    for (i, n) in HrvTimeFeatures::NAMES.iter().enumerate() {
        assert_eq!(unsafe { CStr::from_ptr(semiseq_hrv_feature_name(0, i)) }.to_str().unwrap(), *n);
    }
    for (i, n) in HrvFreqFeatures::NAMES.iter().enumerate() {
        assert_eq!(unsafe { CStr::from_ptr(semiseq_hrv_feature_name(1, i)) }.to_str().unwrap(), *n);
    }
    assert!(semiseq_hrv_feature_name(0, 99).is_null());
    assert!(semiseq_hrv_feature_name(2, 0).is_null());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/semiseq.h")).unwrap();
    for f in [
        "semiseq_model_load",
        "semiseq_model_free",
        "semiseq_model_predict",
        "semiseq_model_saliency",
        "semiseq_model_feature_count",
        "semiseq_hrv_time",
        "semiseq_hrv_freq",
        "semiseq_hrv_feature_name",
        "semiseq_last_error",
        "semiseq_version",
        "SEMISEQ_STATUS_DIMENSION",
        "typedef struct SemiseqModel SemiseqModel",
    ] {
        assert!(header.contains(f), "missing {f}");
    }
    let v = unsafe { CStr::from_ptr(semiseq_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
