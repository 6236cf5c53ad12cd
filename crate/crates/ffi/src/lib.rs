//! C ABI over `est-core`.
//!
//! Every function returns an [`EstStatus`]. On failure a human-readable
//! message is available from [`est_last_error_message`] on the same thread
//! until the next call into this library. Handles are opaque; free them with
//! the matching `*_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use est_core::config::RunConfig;
use est_core::data::{load_dataset_dir, DatasetSummary, Split, TemporalKG};
use est_core::eval::evaluate;
use est_core::memory::DualStateMemory;
use est_core::model::{EstModel, StateSource};
use est_core::train::train;
use est_core::EstError;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Config = 5,
    Numeric = 6,
    Io = 7,
    Lookup = 8,
    Deserialize = 9,
    Contract = 10,
    BufferSize = 11,
    Panic = 12,
}

/// Values accepted by the `split` argument of [`est_session_evaluate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstSplit {
    Valid = 1,
    Test = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstDatasetCounts {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub snapshots: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub query_count: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstTrainSummary {
    pub epochs: usize,
    pub total_steps: usize,
    pub final_loss: f64,
    /// NaN when validation was disabled.
    pub final_valid_mrr: f64,
}

/// A loaded temporal knowledge graph.
pub struct EstDataset {
    kg: TemporalKG,
}

/// A model, its entity memory and the run configuration.
pub struct EstSession {
    config: RunConfig,
    model: EstModel,
    memory: DualStateMemory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(EstStatus, String);

impl From<EstError> for Failure {
    fn from(e: EstError) -> Self {
        let status = match &e {
            EstError::Parse { .. } => EstStatus::Parse,
            EstError::Validation(_) | EstError::Split(_) | EstError::Generation(_) | EstError::Sampling(_) => {
                EstStatus::Validation
            }
            EstError::Lookup(_) => EstStatus::Lookup,
            EstError::Numeric(_) => EstStatus::Numeric,
            EstError::Config(_) => EstStatus::Config,
            EstError::Contract(_) => EstStatus::Contract,
            EstError::Deserialize(_) => EstStatus::Deserialize,
            EstError::Io { .. } => EstStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EstStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EstStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            EstStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(EstStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EstStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn check_dataset(session: &EstSession, kg: &TemporalKG) -> Result<(), Failure> {
    let cfg = session.model.config();
    if cfg.entity_count != kg.entity_count() || cfg.relation_count != kg.relation_count() {
        return Err(Failure(
            EstStatus::Config,
            format!(
                "session expects {} entities and {} relations, dataset has {} and {}",
                cfg.entity_count,
                cfg.relation_count,
                kg.entity_count(),
                kg.relation_count()
            ),
        ));
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn est_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn est_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the dataset described by a TOML run configuration (a dataset
/// directory, a single file or a synthetic generator).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn est_dataset_from_config(config_toml: *const c_char, out: *mut *mut EstDataset) -> EstStatus {
    guard(|| {
        let cfg = RunConfig::from_toml_str(text(config_toml, "config_toml")?)?;
        let kg = cfg.load_graph()?;
        put(out, Box::into_raw(Box::new(EstDataset { kg })), "out")
    })
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn est_dataset_load_dir(
    dir: *const c_char,
    time_step: u32,
    inverse: bool,
    out: *mut *mut EstDataset,
) -> EstStatus {
    guard(|| {
        let kg = load_dataset_dir(Path::new(text(dir, "dir")?), time_step, inverse)?;
        put(out, Box::into_raw(Box::new(EstDataset { kg })), "out")
    })
}

/// # Safety
/// `dataset` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn est_dataset_counts(dataset: *const EstDataset, out: *mut EstDatasetCounts) -> EstStatus {
    guard(|| {
        let s = DatasetSummary::of(&get(dataset, "dataset")?.kg);
        let counts = EstDatasetCounts {
            entities: s.entities,
            relations: s.relations,
            train: s.train,
            valid: s.valid,
            test: s.test,
            snapshots: s.snapshots,
        };
        put(out, counts, "out")
    })
}

/// # Safety
/// `dataset` must come from this library (or be null) and not be used after.
#[no_mangle]
pub unsafe extern "C" fn est_dataset_free(dataset: *mut EstDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Creates an untrained session sized for `dataset`.
///
/// # Safety
/// Pointers must be valid; `config_toml` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn est_session_new(
    config_toml: *const c_char,
    dataset: *const EstDataset,
    out: *mut *mut EstSession,
) -> EstStatus {
    guard(|| {
        let config = RunConfig::from_toml_str(text(config_toml, "config_toml")?)?;
        let kg = &get(dataset, "dataset")?.kg;
        let model = EstModel::new(config.model_config(kg)?, config.seed)?;
        let memory = DualStateMemory::new(kg.entity_count(), config.dim, config.memory_params())?;
        put(out, Box::into_raw(Box::new(EstSession { config, model, memory })), "out")
    })
}

/// Trains the session on the dataset's training split for the configured
/// number of epochs. `summary` may be null.
///
/// # Safety
/// Pointers must come from this library; `summary` may be null.
#[no_mangle]
pub unsafe extern "C" fn est_session_train(
    session: *mut EstSession,
    dataset: *const EstDataset,
    summary: *mut EstTrainSummary,
) -> EstStatus {
    guard(|| {
        let session = get_mut(session, "session")?;
        let kg = &get(dataset, "dataset")?.kg;
        check_dataset(session, kg)?;
        let cfg = session.config.train_config()?;
        let log = train(kg, &mut session.model, &mut session.memory, &cfg)?;
        if !summary.is_null() {
            let last = log.epochs.last();
            summary.write(EstTrainSummary {
                epochs: log.epochs.len(),
                total_steps: log.total_steps,
                final_loss: last.map_or(f64::NAN, |e| e.loss),
                final_valid_mrr: last.and_then(|e| e.valid_mrr).unwrap_or(f64::NAN),
            });
        }
        Ok(())
    })
}

/// Ranks a split given as an [`EstSplit`] value. The session's memory is
/// left untouched.
///
/// # Safety
/// Pointers must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn est_session_evaluate(
    session: *const EstSession,
    dataset: *const EstDataset,
    split: i32,
    out: *mut EstMetrics,
) -> EstStatus {
    guard(|| {
        let session = get(session, "session")?;
        let kg = &get(dataset, "dataset")?.kg;
        check_dataset(session, kg)?;
        let split = match split {
            s if s == EstSplit::Valid as i32 => Split::Valid,
            s if s == EstSplit::Test as i32 => Split::Test,
            other => return Err(Failure(EstStatus::Validation, format!("unknown split {other}"))),
        };
        let opts = session.config.train_config()?.eval_options();
        let r = evaluate(kg, &session.model, &mut session.memory.clone(), split, &opts)?;
        let metrics = EstMetrics {
            mrr: r.mrr,
            hits1: r.hits1,
            hits3: r.hits3,
            hits10: r.hits10,
            query_count: r.query_count,
        };
        put(out, metrics, "out")
    })
}

/// Writes one score per entity for `(subject, relation, ?, time)` into
/// `scores`, which must hold exactly the dataset's entity count.
///
/// # Safety
/// `scores` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn est_session_score(
    session: *const EstSession,
    dataset: *const EstDataset,
    subject: usize,
    relation: usize,
    time: u32,
    scores: *mut f64,
    len: usize,
) -> EstStatus {
    guard(|| {
        let session = get(session, "session")?;
        let kg = &get(dataset, "dataset")?.kg;
        check_dataset(session, kg)?;
        if scores.is_null() {
            return Err(null("scores"));
        }
        if len != kg.entity_count() {
            return Err(Failure(
                EstStatus::BufferSize,
                format!("scores buffer holds {len} values, need {}", kg.entity_count()),
            ));
        }
        let abl = session.config.ablation()?;
        let states = if abl.wo_state { StateSource::Zeros } else { StateSource::Memory(&session.memory) };
        let (s, _) = session.model.forward_query(
            kg,
            states,
            subject,
            relation,
            time,
            session.config.history_len,
            abl.wo_context,
        )?;
        std::slice::from_raw_parts_mut(scores, len).copy_from_slice(&s);
        Ok(())
    })
}

/// Writes `model.bin` and `memory.bin` into `dir`, creating it if needed.
///
/// # Safety
/// `session` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn est_session_save(session: *const EstSession, dir: *const c_char) -> EstStatus {
    guard(|| {
        let session = get(session, "session")?;
        let dir = Path::new(text(dir, "dir")?);
        std::fs::create_dir_all(dir).map_err(|e| EstError::io(dir, e))?;
        for (name, bytes) in [("model.bin", session.model.to_bytes()), ("memory.bin", session.memory.to_bytes())] {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| EstError::io(path, e))?;
        }
        Ok(())
    })
}

/// Restores a session saved by [`est_session_save`].
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn est_session_load(
    config_toml: *const c_char,
    dir: *const c_char,
    out: *mut *mut EstSession,
) -> EstStatus {
    guard(|| {
        let config = RunConfig::from_toml_str(text(config_toml, "config_toml")?)?;
        let dir = Path::new(text(dir, "dir")?);
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| EstError::io(path, e))
        };
        let model = EstModel::from_bytes(&read("model.bin")?)?;
        let memory = DualStateMemory::from_bytes(&read("memory.bin")?)?;
        if memory.entity_count() != model.config().entity_count || memory.dim() != model.dim() {
            return Err(Failure(EstStatus::Deserialize, "model and memory files do not belong together".into()));
        }
        put(out, Box::into_raw(Box::new(EstSession { config, model, memory })), "out")
    })
}

/// # Safety
/// `session` must come from this library (or be null) and not be used after.
#[no_mangle]
pub unsafe extern "C" fn est_session_free(session: *mut EstSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
