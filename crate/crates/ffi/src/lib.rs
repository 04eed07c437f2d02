//! C interface to the convctl dialogue engine.
//!
//! Handles are opaque pointers. Every fallible call returns a
//! [`ConvctlStatus`]; on anything but `CONVCTL_STATUS_OK` the message is
//! available from [`convctl_last_error`] on the same thread. Strings handed
//! out by the library must be released with [`convctl_string_free`].
//!
//! A session keeps its model alive, so freeing the model while sessions are
//! still open is fine.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use convctl::engine::Engine;
use convctl::error::Error;
use convctl::features::{FeatureId, Weight};
use convctl::model::ControlSetting;
use convctl::presets::load_preset;
use convctl::simulator::Session;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvctlStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    /// Checksum, version or layout problem in a model archive.
    Archive = 5,
    UnknownPreset = 6,
    UnknownControl = 7,
    UnknownBucket = 8,
    /// Bad feature name or weight.
    Config = 9,
    /// Every beam candidate was pruned by a blocking weight.
    BeamExhausted = 10,
    /// Input rejected, e.g. an empty message.
    Validation = 11,
    Internal = 12,
    /// A Rust panic was caught at the boundary.
    Panic = 13,
}

impl From<&Error> for ConvctlStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => ConvctlStatus::Io,
            Error::Parse { .. } | Error::Json(_) => ConvctlStatus::Parse,
            Error::Checksum | Error::UnsupportedVersion { .. } | Error::Archive(_) => ConvctlStatus::Archive,
            Error::UnknownPreset(_) => ConvctlStatus::UnknownPreset,
            Error::UnknownControl(_) => ConvctlStatus::UnknownControl,
            Error::UnknownBucket { .. } => ConvctlStatus::UnknownBucket,
            Error::Config(_) => ConvctlStatus::Config,
            Error::BeamExhausted { .. } => ConvctlStatus::BeamExhausted,
            Error::Validation(_) => ConvctlStatus::Validation,
            _ => ConvctlStatus::Internal,
        }
    }
}

/// A loaded model.
pub struct ConvctlModel {
    engine: Arc<Engine>,
}

/// One human-to-agent conversation.
pub struct ConvctlSession {
    engine: Arc<Engine>,
    session: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(ConvctlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail((&e).into(), e.to_string())
    }
}

/// Runs `f`, recording any error or panic for `convctl_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ConvctlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ConvctlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            ConvctlStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ConvctlStatus::NullArgument, format!("{what} is NULL"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ConvctlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut *mut T, what: &str) -> Result<&'a mut *mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn session_mut<'a>(p: *mut ConvctlSession) -> Result<&'a mut ConvctlSession, Fail> {
    p.as_mut().ok_or_else(|| null("session"))
}

fn to_c(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(ConvctlStatus::Internal, "output contains NUL".into()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn convctl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn convctl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model archive from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convctl_model_load(path: *const c_char, out: *mut *mut ConvctlModel) -> ConvctlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = text(path, "path")?;
        let engine = Engine::load(path)?;
        *out = Box::into_raw(Box::new(ConvctlModel {
            engine: Arc::new(engine),
        }));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from `convctl_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn convctl_model_free(model: *mut ConvctlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Starts a session with a built-in preset (or a preset file path).
/// `persona` may be NULL; otherwise one persona line per `\n`.
///
/// # Safety
/// `model` must be a live model handle, strings NUL-terminated, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn convctl_session_new(
    model: *const ConvctlModel,
    preset: *const c_char,
    persona: *const c_char,
    out: *mut *mut ConvctlSession,
) -> ConvctlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let preset = load_preset(text(preset, "preset")?)?;
        let persona = if persona.is_null() {
            Vec::new()
        } else {
            text(persona, "persona")?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        };
        let agent = preset.agent(persona);
        model.engine.model().check_controls(&agent.controls)?;
        *out = Box::into_raw(Box::new(ConvctlSession {
            engine: model.engine.clone(),
            session: Session::new("ffi", agent),
        }));
        Ok(())
    })
}

/// Releases a session. NULL is ignored.
///
/// # Safety
/// `session` must come from `convctl_session_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn convctl_session_free(session: *mut ConvctlSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Sends one user message and writes the reply as JSON
/// (`response`, `diagnostics`, `turn_index`) to `out`. On failure the
/// session is unchanged.
///
/// # Safety
/// `session` must be live, `message` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn convctl_session_send(
    session: *mut ConvctlSession,
    message: *const c_char,
    out: *mut *mut c_char,
) -> ConvctlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = session_mut(session)?;
        let step = s.session.step(&s.engine, text(message, "message")?)?;
        *out = to_c(serde_json::to_string(&step).map_err(Error::from)?)?;
        Ok(())
    })
}

/// Sets control `control` to bucket `z`; a negative `z` removes the control.
///
/// # Safety
/// `session` must be live and `control` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn convctl_session_set_z(
    session: *mut ConvctlSession,
    control: *const c_char,
    z: i32,
) -> ConvctlStatus {
    guard(|| {
        let s = session_mut(session)?;
        let control = text(control, "control")?;
        let mut controls = s.session.agent.controls.clone();
        controls.retain(|c| c.control != control);
        if z >= 0 {
            let z = u8::try_from(z).map_err(|_| Error::UnknownBucket {
                control: control.into(),
                bucket: u8::MAX,
            })?;
            controls.push(ControlSetting::new(control, z));
        }
        s.engine.model().check_controls(&controls)?;
        s.session.agent.controls = controls;
        Ok(())
    })
}

/// Sets a decoding weight. `-INFINITY` blocks the feature; NaN and
/// `+INFINITY` are rejected.
///
/// # Safety
/// `session` must be live and `feature` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn convctl_session_set_weight(
    session: *mut ConvctlSession,
    feature: *const c_char,
    weight: f64,
) -> ConvctlStatus {
    guard(|| {
        let s = session_mut(session)?;
        let id: FeatureId = text(feature, "feature")?.parse()?;
        s.session.agent.weights.set(id, Weight::new(weight)?);
        Ok(())
    })
}

/// Drops a decoding weight.
///
/// # Safety
/// `session` must be live and `feature` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn convctl_session_clear_weight(
    session: *mut ConvctlSession,
    feature: *const c_char,
) -> ConvctlStatus {
    guard(|| {
        let s = session_mut(session)?;
        let id: FeatureId = text(feature, "feature")?.parse()?;
        s.session.agent.weights.remove(id);
        Ok(())
    })
}

/// Writes the whole conversation as a chat-log JSON object to `out`.
///
/// # Safety
/// `session` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn convctl_session_transcript(
    session: *mut ConvctlSession,
    out: *mut *mut c_char,
) -> ConvctlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = session_mut(session)?;
        *out = to_c(s.session.to_chatlog(0).to_line()?)?;
        Ok(())
    })
}

/// Releases a string returned by the library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn convctl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
