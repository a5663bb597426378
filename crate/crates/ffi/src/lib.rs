//! C interface to the assessment model and the caption metrics.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every fallible call returns an
//! [`EfaStatus`]; on failure, [`efa_last_error_message`] describes the error
//! for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use efa_core::encoders::{Encoders, VisualInput};
use efa_core::evaluation::{bleu, cider, corpus_statistics, meteor, rouge_l, KeywordLists};
use efa_core::heads::{AssessmentResult, DecodeMode};
use efa_core::training::Checkpoint;
use efa_core::{EfaError, FeatureMatrix, Matrix};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EfaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Parse = 5,
    Shape = 6,
    Runtime = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EfaMetric {
    Bleu4 = 0,
    Meteor = 1,
    CiderD = 2,
    RougeL = 3,
}

/// Corpus statistics of a set of explanations.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EfaCorpusStats {
    pub samples: usize,
    pub avg_words: f64,
    pub avg_sentences: f64,
    pub vocab_size: usize,
    pub avg_reasoning_steps: f64,
    pub avg_suggestions: f64,
}

/// A trained model with its encoders.
pub struct EfaModel {
    model: efa_core::model::EfaModel,
    encoders: Encoders,
}

/// Result of one assessment.
pub struct EfaAssessment {
    result: AssessmentResult,
    explanation: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &EfaError) -> EfaStatus {
    match e {
        EfaError::Io { .. } => EfaStatus::Io,
        EfaError::Parse { .. } | EfaError::VersionMismatch { .. } => EfaStatus::Parse,
        EfaError::Shape(_) => EfaStatus::Shape,
        EfaError::Config(_) | EfaError::ProviderUnavailable(_) => EfaStatus::Config,
        EfaError::InvalidArgument(_) | EfaError::Schema { .. } | EfaError::TokenOutOfVocabulary { .. } => EfaStatus::InvalidArgument,
        _ => EfaStatus::Runtime,
    }
}

/// Run `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), (EfaStatus, String)>) -> EfaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EfaStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EfaStatus::Panic
        }
    }
}

fn core(e: EfaError) -> (EfaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (EfaStatus, String) {
    (EfaStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (EfaStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (EfaStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn str_array<'a>(p: *const *const c_char, n: usize, name: &str) -> Result<Vec<&'a str>, (EfaStatus, String)> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(name));
    }
    std::slice::from_raw_parts(p, n).iter().map(|&s| str_arg(s, name)).collect()
}

fn decode_mode(beam_width: u32) -> DecodeMode {
    match beam_width {
        0 => DecodeMode::Greedy,
        w => DecodeMode::Beam { width: w as usize },
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn efa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn efa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint file written by `efa train`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn efa_model_load(path: *const c_char, out: *mut *mut EfaModel) -> EfaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ck = Checkpoint::load(Path::new(path)).map_err(core)?;
        let model = ck.restore_model().map_err(core)?;
        let encoders = Encoders::toy(&ck.encoder_config()).map_err(core)?;
        *out = Box::into_raw(Box::new(EfaModel { model, encoders }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`efa_model_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn efa_model_free(model: *mut EfaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn efa_model_num_categories(model: *const EfaModel, out: *mut usize) -> EfaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.num_categories();
        Ok(())
    })
}

/// Width each visual token must have.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn efa_model_visual_dim(model: *const EfaModel, out: *mut usize) -> EfaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.dims.visual_dim;
        Ok(())
    })
}

fn run_assessment(m: &EfaModel, input: VisualInput, key: &str, beam_width: u32) -> Result<*mut EfaAssessment, (EfaStatus, String)> {
    let video = m.encoders.visual_encode(&input).map_err(core)?.into_matrix();
    let result: AssessmentResult = m.model.assess_with(&m.encoders, &video, key, decode_mode(beam_width)).map_err(core)?;
    let explanation = CString::new(result.explanation.replace('\0', " ")).expect("nul bytes removed");
    Ok(Box::into_raw(Box::new(EfaAssessment { result, explanation })))
}

/// Assess a video given as `rows x cols` row-major visual tokens.
/// `sample_key` only matters for the shuffled-text ablation and may be null.
/// `beam_width` 0 decodes greedily.
///
/// # Safety
/// `features` must point to `rows * cols` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn efa_assess_features(
    model: *const EfaModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    sample_key: *const c_char,
    beam_width: u32,
    out: *mut *mut EfaAssessment,
) -> EfaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if features.is_null() {
            return Err(null("features"));
        }
        let len = rows.checked_mul(cols).ok_or((EfaStatus::InvalidArgument, "rows * cols overflows".to_string()))?;
        let data = std::slice::from_raw_parts(features, len).to_vec();
        let key = if sample_key.is_null() { "" } else { str_arg(sample_key, "sample_key")? };
        let matrix = Matrix::from_vec(rows, cols, data).map_err(core)?;
        let input = VisualInput::Fixture(FeatureMatrix::new(matrix).map_err(core)?);
        *out = run_assessment(m, input, key, beam_width)?;
        Ok(())
    })
}

/// Assess a video stored as a feature fixture file.
///
/// # Safety
/// `model`, `path` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn efa_assess_fixture(
    model: *const EfaModel,
    path: *const c_char,
    beam_width: u32,
    out: *mut *mut EfaAssessment,
) -> EfaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = Path::new(str_arg(path, "path")?);
        let key = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let input = VisualInput::Fixture(FeatureMatrix::read_fixture(path).map_err(core)?);
        *out = run_assessment(m, input, &key, beam_width)?;
        Ok(())
    })
}

/// # Safety
/// `a` must come from an assess call and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn efa_assessment_free(a: *mut EfaAssessment) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Predicted category id, or `usize::MAX` for a null handle.
///
/// # Safety
/// `a` must be null or a live assessment.
#[no_mangle]
pub unsafe extern "C" fn efa_assessment_category(a: *const EfaAssessment) -> usize {
    a.as_ref().map_or(usize::MAX, |a| a.result.category)
}

/// Probability of standard execution, or NaN for a null handle.
///
/// # Safety
/// `a` must be null or a live assessment.
#[no_mangle]
pub unsafe extern "C" fn efa_assessment_quality_prob(a: *const EfaAssessment) -> f64 {
    a.as_ref().map_or(f64::NAN, |a| a.result.quality_prob)
}

/// 1 when judged standard, 0 when non-standard, -1 for a null handle.
///
/// # Safety
/// `a` must be null or a live assessment.
#[no_mangle]
pub unsafe extern "C" fn efa_assessment_is_standard(a: *const EfaAssessment) -> i32 {
    a.as_ref().map_or(-1, |a| i32::from(a.result.is_standard()))
}

/// Generated explanation, owned by the assessment. Null for a null handle.
///
/// # Safety
/// `a` must be null or a live assessment; the string dies with it.
#[no_mangle]
pub unsafe extern "C" fn efa_assessment_explanation(a: *const EfaAssessment) -> *const c_char {
    a.as_ref().map_or(ptr::null(), |a| a.explanation.as_ptr())
}

/// Copy category probabilities into `buf`. `written` receives the number of
/// categories; `buf` may be null to query it.
///
/// # Safety
/// `buf` must hold `len` doubles when non-null.
#[no_mangle]
pub unsafe extern "C" fn efa_assessment_category_probs(
    a: *const EfaAssessment,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> EfaStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("assessment"))?;
        let probs = a.result.category_probabilities();
        *written.as_mut().ok_or_else(|| null("written"))? = probs.len();
        if buf.is_null() {
            return Ok(());
        }
        if len < probs.len() {
            return Err((EfaStatus::InvalidArgument, format!("buffer holds {len} values, need {}", probs.len())));
        }
        std::slice::from_raw_parts_mut(buf, probs.len()).copy_from_slice(&probs);
        Ok(())
    })
}

/// The assessment as a JSON object. Release the string with [`efa_string_free`].
///
/// # Safety
/// `a` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn efa_assessment_to_json(a: *const EfaAssessment, out: *mut *mut c_char) -> EfaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let a = a.as_ref().ok_or_else(|| null("assessment"))?;
        let json = serde_json::json!({
            "category": a.result.category,
            "category_probabilities": a.result.category_probabilities(),
            "quality_prob": a.result.quality_prob,
            "is_standard": a.result.is_standard(),
            "explanation": a.result.explanation,
        })
        .to_string();
        *out = CString::new(json).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn efa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Corpus-level caption metric of `n` hypothesis/reference pairs, on a 0..1
/// scale (CIDEr-D on its usual 0..10 scale).
///
/// # Safety
/// `hyps` and `refs` must each point to `n` valid strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn efa_caption_metric(
    metric: EfaMetric,
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> EfaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let h = str_array(hyps, n, "hyps")?;
        let r = str_array(refs, n, "refs")?;
        *out = match metric {
            EfaMetric::Bleu4 => bleu(&h, &r),
            EfaMetric::Meteor => meteor(&h, &r),
            EfaMetric::CiderD => cider(&h, &r),
            EfaMetric::RougeL => rouge_l(&h, &r),
        }
        .map_err(core)?;
        Ok(())
    })
}

/// Word, sentence, vocabulary and keyword statistics using the built-in keyword lists.
///
/// # Safety
/// `texts` must point to `n` valid strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn efa_corpus_stats(texts: *const *const c_char, n: usize, out: *mut EfaCorpusStats) -> EfaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = str_array(texts, n, "texts")?;
        let s = corpus_statistics(&t, &KeywordLists::default()).map_err(core)?;
        *out = EfaCorpusStats {
            samples: s.samples,
            avg_words: s.avg_words,
            avg_sentences: s.avg_sentences,
            vocab_size: s.vocab_size,
            avg_reasoning_steps: s.avg_reasoning_steps,
            avg_suggestions: s.avg_suggestions,
        };
        Ok(())
    })
}
