use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use efa_core::config::RunConfig;
use efa_core::data::generate_synthetic_dataset;
use efa_core::evaluation::{bleu, cider, meteor, rouge_l};
use efa_core::pipeline;
use efa_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(efa_last_error_message()) }.to_string_lossy().into_owned()
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let cfg = RunConfig::load(
        Some(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs/desk.toml")),
        &["train.max_steps=4".into(), "model.decoder.max_len=12".into()],
    )
    .unwrap();
    let ds = generate_synthetic_dataset(&cfg.synthetic).unwrap();
    ds.write_to(dir).unwrap();
    let manifest = efa_core::data::load_manifest(&dir.join("manifest.json")).unwrap();
    let ids: Vec<String> = manifest.records.iter().map(|r| r.sample_id.clone()).collect();
    let trained = pipeline::train(&cfg, &manifest, &ids, |_| {}).unwrap();
    let path = dir.join("checkpoint.json");
    trained.checkpoint(&cfg).save(&path).unwrap();
    path
}

#[test]
fn null_arguments_are_reported() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { efa_model_load(ptr::null(), &mut out) }, EfaStatus::NullPointer);
    assert!(last_error().contains("path"));
    assert!(out.is_null());
    let mut v = 0.0;
    assert_eq!(unsafe { efa_caption_metric(EfaMetric::Bleu4, ptr::null(), ptr::null(), 2, &mut v) }, EfaStatus::NullPointer);
    assert_eq!(unsafe { efa_assessment_category(ptr::null()) }, usize::MAX);
    assert!(unsafe { efa_assessment_quality_prob(ptr::null()) }.is_nan());
    assert_eq!(unsafe { efa_assessment_is_standard(ptr::null()) }, -1);
    unsafe {
        efa_model_free(ptr::null_mut());
        efa_assessment_free(ptr::null_mut());
        efa_string_free(ptr::null_mut());
    }
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let path = CString::new("/nonexistent/checkpoint.json").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { efa_model_load(path.as_ptr(), &mut out) }, EfaStatus::Io);
    assert!(last_error().contains("/nonexistent/checkpoint.json"));
}

#[test]
fn metrics_match_the_core_library() {
    let hyps = ["the knee caves inward", "keep the back flat"];
    let refs = ["the knee drifts inward", "keep your back flat and tight"];
    let ch: Vec<CString> = hyps.iter().map(|s| CString::new(*s).unwrap()).collect();
    let cr: Vec<CString> = refs.iter().map(|s| CString::new(*s).unwrap()).collect();
    let ph: Vec<*const std::ffi::c_char> = ch.iter().map(|c| c.as_ptr()).collect();
    let pr: Vec<*const std::ffi::c_char> = cr.iter().map(|c| c.as_ptr()).collect();
    let expect = [
        (EfaMetric::Bleu4, bleu(&hyps, &refs).unwrap()),
        (EfaMetric::Meteor, meteor(&hyps, &refs).unwrap()),
        (EfaMetric::CiderD, cider(&hyps, &refs).unwrap()),
        (EfaMetric::RougeL, rouge_l(&hyps, &refs).unwrap()),
    ];
    for (m, want) in expect {
        let mut got = f64::NAN;
        assert_eq!(unsafe { efa_caption_metric(m, ph.as_ptr(), pr.as_ptr(), 2, &mut got) }, EfaStatus::Ok);
        assert_eq!(got.to_bits(), want.to_bits(), "{m:?}");
    }
    let mut got = 0.0;
    assert_eq!(unsafe { efa_caption_metric(EfaMetric::Bleu4, ph.as_ptr(), pr.as_ptr(), 0, &mut got) }, EfaStatus::InvalidArgument);
    assert!(!last_error().is_empty());

    let mut stats = EfaCorpusStats::default();
    assert_eq!(unsafe { efa_corpus_stats(pr.as_ptr(), 2, &mut stats) }, EfaStatus::Ok);
    assert_eq!(stats.samples, 2);
    assert_eq!(stats.avg_words, 5.0);
}

#[test]
fn load_and_assess() {
    let dir = tempfile::tempdir().unwrap();
    let ck = CString::new(tiny_checkpoint(dir.path()).to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { efa_model_load(ck.as_ptr(), &mut model) }, EfaStatus::Ok, "{}", last_error());
    let (mut c, mut d) = (0usize, 0usize);
    unsafe {
        assert_eq!(efa_model_num_categories(model, &mut c), EfaStatus::Ok);
        assert_eq!(efa_model_visual_dim(model, &mut d), EfaStatus::Ok);
    }
    assert_eq!((c, d), (4, 16));

    let fixture = dir.path().join("features/syn-c002-s000.feat");
    let fpath = CString::new(fixture.to_str().unwrap()).unwrap();
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { efa_assess_fixture(model, fpath.as_ptr(), 0, &mut a) }, EfaStatus::Ok, "{}", last_error());
    let category = unsafe { efa_assessment_category(a) };
    assert!(category < 4);
    let p = unsafe { efa_assessment_quality_prob(a) };
    assert!((0.0..=1.0).contains(&p));
    let explanation = unsafe { CStr::from_ptr(efa_assessment_explanation(a)) }.to_str().unwrap().to_string();

    let mut n = 0usize;
    assert_eq!(unsafe { efa_assessment_category_probs(a, ptr::null_mut(), 0, &mut n) }, EfaStatus::Ok);
    let mut probs = vec![0.0; n];
    let mut short = [0.0; 1];
    assert_eq!(unsafe { efa_assessment_category_probs(a, short.as_mut_ptr(), 1, &mut n) }, EfaStatus::InvalidArgument);
    assert_eq!(unsafe { efa_assessment_category_probs(a, probs.as_mut_ptr(), n, &mut n) }, EfaStatus::Ok);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { efa_assessment_to_json(a, &mut json) }, EfaStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    assert_eq!(v["category"], category);
    assert_eq!(v["explanation"], explanation.as_str());
    unsafe { efa_string_free(json) };

    // The same tokens passed as a raw buffer give the same answer.
    let m = efa_core::FeatureMatrix::read_fixture(&fixture).unwrap().into_matrix();
    let key = CString::new("syn-c002-s000").unwrap();
    let mut b = ptr::null_mut();
    let status = unsafe { efa_assess_features(model, m.as_slice().as_ptr(), m.rows(), m.cols(), key.as_ptr(), 2, &mut b) };
    assert_eq!(status, EfaStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { efa_assessment_category(b) }, category);
    let mut bad = ptr::null_mut();
    let status = unsafe { efa_assess_features(model, m.as_slice().as_ptr(), m.rows() * 2, m.cols() / 2, key.as_ptr(), 0, &mut bad) };
    assert_eq!(status, EfaStatus::Shape);
    assert!(bad.is_null());
    unsafe {
        efa_assessment_free(a);
        efa_assessment_free(b);
        efa_model_free(model);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/efa.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["efa_model_load", "efa_assess_features", "efa_caption_metric", "efa_string_free", "EFA_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"efa.h\"\nint main(void) { EfaStatus s = EFA_STATUS_OK; return (int)s; }\n").unwrap();
    let Ok(status) =
        Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(header.parent().unwrap()).arg(&src).status()
    else {
        eprintln!("no C compiler on PATH; header syntax check skipped");
        return;
    };
    assert!(status.success());
}
