mod common;

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use common::model_path;
use convctl::engine::Engine;
use convctl_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = convctl_last_error();
    assert!(!p.is_null(), "no error message recorded");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    convctl_string_free(p);
    s
}

unsafe fn load() -> *mut ConvctlModel {
    let mut model = ptr::null_mut();
    let path = c(model_path().to_str().unwrap());
    assert_eq!(convctl_model_load(path.as_ptr(), &mut model), ConvctlStatus::Ok);
    assert!(!model.is_null());
    model
}

unsafe fn send(session: *mut ConvctlSession, text: &str) -> serde_json::Value {
    let mut out = ptr::null_mut();
    let msg = c(text);
    let status = convctl_session_send(session, msg.as_ptr(), &mut out);
    assert_eq!(status, ConvctlStatus::Ok, "{}", last_error());
    serde_json::from_str(&take(out)).unwrap()
}

#[test]
fn conversation_round_trip() {
    unsafe {
        let model = load();
        let mut session = ptr::null_mut();
        let preset = c("Question-controlled CT 0");
        let persona = c("i like tea .\ni have a cat .");
        assert_eq!(
            convctl_session_new(model, preset.as_ptr(), persona.as_ptr(), &mut session),
            ConvctlStatus::Ok
        );
        // the session keeps the model alive
        convctl_model_free(model);

        let first = send(session, "hello , how are you ?");
        assert_eq!(first["turn_index"], 1);
        assert!(!first["response"].as_str().unwrap().is_empty());
        assert!(first["diagnostics"]["mean_nidf"].is_number());

        assert_eq!(convctl_session_set_z(session, c("question").as_ptr(), 10), ConvctlStatus::Ok);
        assert_eq!(
            convctl_session_set_weight(session, c("extrep_bigram").as_ptr(), f64::NEG_INFINITY),
            ConvctlStatus::Ok
        );
        let second = send(session, "i work at a bakery .");
        assert_eq!(second["turn_index"], 3);

        let mut out = ptr::null_mut();
        assert_eq!(convctl_session_transcript(session, &mut out), ConvctlStatus::Ok);
        let log: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        let turns = log["turns"].as_array().unwrap();
        assert_eq!(turns.len(), 4);
        assert_eq!(turns[1]["settings"]["controls"][0]["z"], 0);
        assert_eq!(turns[3]["settings"]["controls"][0]["z"], 10);
        assert_eq!(log["personas"][1], serde_json::json!(["i like tea .", "i have a cat ."]));

        assert_eq!(convctl_session_clear_weight(session, c("extrep_bigram").as_ptr()), ConvctlStatus::Ok);
        assert_eq!(convctl_session_set_z(session, c("question").as_ptr(), -1), ConvctlStatus::Ok);
        convctl_session_free(session);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut model = ptr::null_mut();
        let status = convctl_model_load(c("/no/such/model.cvct").as_ptr(), &mut model);
        assert_eq!(status, ConvctlStatus::Io);
        assert!(model.is_null());
        assert!(last_error().contains("/no/such/model.cvct"));

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.cvct");
        std::fs::write(&junk, b"not an archive").unwrap();
        let status = convctl_model_load(c(junk.to_str().unwrap()).as_ptr(), &mut model);
        assert_eq!(status, ConvctlStatus::Archive, "{}", last_error());

        assert_eq!(convctl_model_load(ptr::null(), &mut model), ConvctlStatus::NullArgument);
        assert_eq!(convctl_model_load(c("x").as_ptr(), ptr::null_mut()), ConvctlStatus::NullArgument);
        let bad_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(
            convctl_model_load(bad_utf8.as_ptr().cast(), &mut model),
            ConvctlStatus::InvalidUtf8
        );

        let model = load();
        // success clears the previous message
        assert!(convctl_last_error().is_null());
        let mut session = ptr::null_mut();
        assert_eq!(
            convctl_session_new(model, c("No Such Preset").as_ptr(), ptr::null(), &mut session),
            ConvctlStatus::UnknownPreset
        );
        assert_eq!(
            convctl_session_new(model, c("Greedy Search").as_ptr(), ptr::null(), &mut session),
            ConvctlStatus::Ok
        );
        let q = c("question");
        assert_eq!(convctl_session_set_z(session, q.as_ptr(), 11), ConvctlStatus::UnknownBucket);
        assert_eq!(convctl_session_set_z(session, q.as_ptr(), 300), ConvctlStatus::UnknownBucket);
        assert_eq!(
            convctl_session_set_z(session, c("politeness").as_ptr(), 1),
            ConvctlStatus::UnknownControl
        );
        assert_eq!(
            convctl_session_set_weight(session, c("fluency").as_ptr(), 1.0),
            ConvctlStatus::Config
        );
        assert_eq!(
            convctl_session_set_weight(session, c("nidf").as_ptr(), f64::NAN),
            ConvctlStatus::Config
        );
        assert_eq!(
            convctl_session_set_weight(session, c("nidf").as_ptr(), f64::INFINITY),
            ConvctlStatus::Config
        );

        let mut out = ptr::null_mut();
        assert_eq!(
            convctl_session_send(session, c("   ").as_ptr(), &mut out),
            ConvctlStatus::Validation
        );
        assert!(out.is_null());
        assert_eq!(convctl_session_send(ptr::null_mut(), c("hi").as_ptr(), &mut out), ConvctlStatus::NullArgument);

        convctl_session_free(session);

        // only the commonest words survive the nidf block, and they cannot
        // fill 40 tokens without repeating a bigram
        let stuck = dir.path().join("stuck.toml");
        std::fs::write(
            &stuck,
            "[[preset]]\nname = \"stuck\"\nbase = \"Greedy Search\"\n[preset.weights]\n\
             nidf = -inf\nintrep_bigram = -inf\n[preset.beam]\nmin_len = 40\n",
        )
        .unwrap();
        let mut session = ptr::null_mut();
        assert_eq!(
            convctl_session_new(model, c(stuck.to_str().unwrap()).as_ptr(), ptr::null(), &mut session),
            ConvctlStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(
            convctl_session_send(session, c("hello there").as_ptr(), &mut out),
            ConvctlStatus::BeamExhausted
        );
        assert!(out.is_null());
        assert!(last_error().contains("beam exhausted"));

        // a failed send leaves the transcript untouched
        let mut log = ptr::null_mut();
        assert_eq!(convctl_session_transcript(session, &mut log), ConvctlStatus::Ok);
        let log: serde_json::Value = serde_json::from_str(&take(log)).unwrap();
        assert_eq!(log["turns"], serde_json::json!([]));

        convctl_session_free(session);
        convctl_model_free(model);
        convctl_session_free(ptr::null_mut());
        convctl_model_free(ptr::null_mut());
        convctl_string_free(ptr::null_mut());
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(convctl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn engine_loads_the_same_archive() {
    // sanity: the fixture is a real archive for the Rust API too
    Engine::load(model_path()).unwrap();
}
