//! C ABI over the engagerank pipeline: opaque handles for worlds and trained
//! models, integer status codes mirroring the CLI exit codes, and a
//! thread-local last-error message.
//!
//! Ownership: every `*_generate`/`*_load`/`*_train` returns a heap handle the
//! caller must release with the matching `*_free`. Null and non-UTF-8 inputs
//! are usage errors, never crashes. Panics are caught at the boundary and
//! reported as `INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use engagerank::cli::{prepare_pipeline, train_variant, truncate_inputs};
use engagerank::config::RunConfig;
use engagerank::error::Error;
use engagerank::featurizer::FeatureLayout;
use engagerank::metrics::RankedList;
use engagerank::model::{checkpoint, forward_scores, ModelParams, Variant};
use engagerank::synthgen::{generate_world, World, WorldConfig};

/// Status codes; the nonzero values mirror the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngagerankStatus {
    Ok = 0,
    /// Bad arguments: null pointers, malformed JSON, invalid settings.
    Usage = 1,
    /// Missing or inconsistent data.
    Data = 2,
    /// Numerical failure (non-finite loss, failed gradient check).
    Numeric = 3,
    /// A bug tripped an internal panic; details in the last-error message.
    Internal = 4,
}

/// Opaque synthetic-world handle.
pub struct EngagerankWorld {
    inner: World,
}

/// Opaque trained-model handle (parameters + feature layout).
pub struct EngagerankModel {
    model: ModelParams,
    layout: FeatureLayout,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> EngagerankStatus {
    match err {
        Error::Config(_) => EngagerankStatus::Usage,
        Error::Data(_) | Error::Ingest { .. } | Error::Io(_) => EngagerankStatus::Data,
        Error::Numeric(_) => EngagerankStatus::Numeric,
    }
}

fn fail(err: &Error) -> EngagerankStatus {
    set_error(err.to_string());
    status_of(err)
}

fn usage(msg: &str) -> EngagerankStatus {
    set_error(msg.to_string());
    EngagerankStatus::Usage
}

/// Run a fallible body with panic containment; the body reports through the
/// same status codes.
fn guarded(body: impl FnOnce() -> EngagerankStatus) -> EngagerankStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".to_string());
            EngagerankStatus::Internal
        }
    }
}

/// As `guarded`, for constructors that hand back a pointer (null on error).
fn guarded_ptr<T>(body: impl FnOnce() -> Result<T, Error>) -> *mut T {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(v)) => Box::into_raw(Box::new(v)),
        Ok(Err(e)) => {
            fail(&e);
            std::ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic".to_string());
            std::ptr::null_mut()
        }
    }
}

unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Error> {
    if ptr.is_null() {
        return Err(Error::Config(format!("{name} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Error::Config(format!("{name} is not valid UTF-8")))
}

/// Copy the most recent error message for this thread into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length in
/// bytes, so callers can detect truncation; 0 means no error recorded.
#[no_mangle]
pub unsafe extern "C" fn engagerank_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Generate a seeded synthetic world. `config_json` is a WorldConfig JSON
/// document; omitted fields take their defaults. Returns null on error.
#[no_mangle]
pub unsafe extern "C" fn engagerank_world_generate(
    config_json: *const c_char,
) -> *mut EngagerankWorld {
    guarded_ptr(|| {
        let raw = unsafe { utf8_arg(config_json, "config_json") }?;
        let cfg: WorldConfig = serde_json::from_str(raw)
            .map_err(|e| Error::Config(format!("bad world config: {e}")))?;
        Ok(EngagerankWorld { inner: generate_world(&cfg)? })
    })
}

/// Load a previously saved world directory. Returns null on error.
#[no_mangle]
pub unsafe extern "C" fn engagerank_world_load(dir: *const c_char) -> *mut EngagerankWorld {
    guarded_ptr(|| {
        let dir = unsafe { utf8_arg(dir, "dir") }?;
        Ok(EngagerankWorld { inner: World::load(Path::new(dir))? })
    })
}

#[no_mangle]
pub unsafe extern "C" fn engagerank_world_save(
    world: *const EngagerankWorld,
    dir: *const c_char,
) -> EngagerankStatus {
    guarded(|| {
        let Some(world) = (unsafe { world.as_ref() }) else {
            return usage("world is null");
        };
        let dir = match unsafe { utf8_arg(dir, "dir") } {
            Ok(d) => d,
            Err(e) => return fail(&e),
        };
        match world.inner.save(Path::new(dir)) {
            Ok(()) => EngagerankStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn engagerank_world_free(world: *mut EngagerankWorld) {
    if !world.is_null() {
        drop(unsafe { Box::from_raw(world) });
    }
}

/// Number of influencers (the length score buffers must have).
/// Returns 0 if `world` is null.
#[no_mangle]
pub unsafe extern "C" fn engagerank_world_influencer_count(
    world: *const EngagerankWorld,
) -> usize {
    unsafe { world.as_ref() }.map_or(0, |w| w.inner.config.n_influencers)
}

/// Copy influencer `index`'s id into `buf` (NUL terminated, truncated to
/// `cap`). Returns the id's full length, or 0 if the handle is null or the
/// index is out of range. Index order matches score buffers.
#[no_mangle]
pub unsafe extern "C" fn engagerank_world_influencer_id(
    world: *const EngagerankWorld,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> usize {
    let Some(world) = (unsafe { world.as_ref() }) else {
        set_error("world is null".to_string());
        return 0;
    };
    let Some(profile) = world.inner.profiles.get(index) else {
        set_error(format!("influencer index {index} out of range"));
        return 0;
    };
    let id = &profile.influencer_id;
    if !buf.is_null() && cap > 0 {
        let n = id.len().min(cap - 1);
        unsafe {
            std::ptr::copy_nonoverlapping(id.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
    }
    id.len()
}

/// Train the full model on a world. `run_config_json` is a RunConfig JSON
/// document (its `model` and `train` sections apply; paths are ignored).
/// Returns null on error.
#[no_mangle]
pub unsafe extern "C" fn engagerank_train(
    world: *const EngagerankWorld,
    run_config_json: *const c_char,
) -> *mut EngagerankModel {
    guarded_ptr(|| {
        let world = unsafe { world.as_ref() }
            .ok_or_else(|| Error::Config("world is null".to_string()))?;
        let raw = unsafe { utf8_arg(run_config_json, "run_config_json") }?;
        let cfg: RunConfig = serde_json::from_str(raw)
            .map_err(|e| Error::Config(format!("bad run config: {e}")))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        let mut p = prepare_pipeline(&world.inner.posts, &world.inner.profiles)?;
        truncate_inputs(&mut p, cfg.train.input_windows);
        let (model, _) = train_variant(&cfg, &p, Variant::Full)?;
        Ok(EngagerankModel { model, layout: p.layout })
    })
}

#[no_mangle]
pub unsafe extern "C" fn engagerank_model_save(
    model: *const EngagerankModel,
    path: *const c_char,
) -> EngagerankStatus {
    guarded(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return usage("model is null");
        };
        let path = match unsafe { utf8_arg(path, "path") } {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        match checkpoint::save(Path::new(path), &m.model, &m.layout) {
            Ok(()) => EngagerankStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Load a checkpoint written by `engagerank_model_save` (or the CLI).
/// Returns null on error.
#[no_mangle]
pub unsafe extern "C" fn engagerank_model_load(path: *const c_char) -> *mut EngagerankModel {
    guarded_ptr(|| {
        let path = unsafe { utf8_arg(path, "path") }?;
        let (model, layout) = checkpoint::load(Path::new(path))?;
        Ok(EngagerankModel { model, layout })
    })
}

#[no_mangle]
pub unsafe extern "C" fn engagerank_model_free(model: *mut EngagerankModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

fn eval_pipeline(
    world: &EngagerankWorld,
    model: &EngagerankModel,
) -> Result<(Vec<f64>, Vec<f64>, Vec<String>), Error> {
    let p = prepare_pipeline(&world.inner.posts, &world.inner.profiles)?;
    if p.layout != model.layout {
        return Err(Error::Data(
            "model feature layout does not match this world".to_string(),
        ));
    }
    let scores = forward_scores(&model.model, &p.eval_net);
    Ok((scores, p.eval_rates, p.eval_net.influencer_ids))
}

/// Score every influencer on the world's held-out evaluation window. `out`
/// must hold `engagerank_world_influencer_count` doubles; entries follow
/// influencer index order.
#[no_mangle]
pub unsafe extern "C" fn engagerank_score(
    model: *const EngagerankModel,
    world: *const EngagerankWorld,
    out: *mut f64,
    len: usize,
) -> EngagerankStatus {
    guarded(|| {
        let (Some(model), Some(world)) = (unsafe { model.as_ref() }, unsafe { world.as_ref() })
        else {
            return usage("model or world is null");
        };
        if out.is_null() {
            return usage("out is null");
        }
        let n = world.inner.config.n_influencers;
        if len < n {
            return usage("out buffer is too short");
        }
        match eval_pipeline(world, model) {
            Ok((scores, _, _)) => {
                unsafe { std::ptr::copy_nonoverlapping(scores.as_ptr(), out, n) };
                EngagerankStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// NDCG@k of the model's ranking against the world's held-out window.
#[no_mangle]
pub unsafe extern "C" fn engagerank_eval_ndcg(
    model: *const EngagerankModel,
    world: *const EngagerankWorld,
    k: usize,
    out: *mut f64,
) -> EngagerankStatus {
    guarded(|| {
        let (Some(model), Some(world)) = (unsafe { model.as_ref() }, unsafe { world.as_ref() })
        else {
            return usage("model or world is null");
        };
        if out.is_null() || k == 0 {
            return usage("out is null or k is zero");
        }
        match eval_pipeline(world, model) {
            Ok((scores, rates, ids)) => {
                let ranked = RankedList::from_scores(&ids, &scores, &rates);
                unsafe { *out = ranked.ndcg(k) };
                EngagerankStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Finite-difference check of the full composed gradient on a tiny instance.
/// Writes the max relative error and returns OK iff it is below 1e-4.
#[no_mangle]
pub unsafe extern "C" fn engagerank_gradcheck(out_max_rel_err: *mut f64) -> EngagerankStatus {
    guarded(|| {
        if out_max_rel_err.is_null() {
            return usage("out_max_rel_err is null");
        }
        match engagerank::trainer::gradcheck_full_model(false) {
            Ok(outcome) => {
                unsafe { *out_max_rel_err = outcome.max_rel_err };
                if outcome.max_rel_err < engagerank::cli::GRADCHECK_TOLERANCE {
                    EngagerankStatus::Ok
                } else {
                    set_error(format!(
                        "gradient check failed on {}: {:.3e}",
                        outcome.worst_param, outcome.max_rel_err
                    ));
                    EngagerankStatus::Numeric
                }
            }
            Err(e) => fail(&e),
        }
    })
}
