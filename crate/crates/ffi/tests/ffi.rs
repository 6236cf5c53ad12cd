use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use est_ffi::*;

const CONFIG: &str = "seed = 4\nsynthetic_timestamps = 24\ndim = 8\ntime_dim = 4\nhistory_len = 4\n\
epochs = 2\nbatch_size = 16\nneg_count = 4\nwarmup_epochs = 1\n";

fn last_error() -> String {
    let p = est_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    config: CString,
    dataset: *mut EstDataset,
    session: *mut EstSession,
}

impl Fixture {
    fn trained() -> Self {
        let config = CString::new(CONFIG).unwrap();
        let mut dataset = ptr::null_mut();
        let mut session = ptr::null_mut();
        let mut summary = EstTrainSummary::default();
        unsafe {
            assert_eq!(est_dataset_from_config(config.as_ptr(), &mut dataset), EstStatus::Ok);
            assert_eq!(est_session_new(config.as_ptr(), dataset, &mut session), EstStatus::Ok);
            assert_eq!(est_session_train(session, dataset, &mut summary), EstStatus::Ok);
        }
        assert_eq!(summary.epochs, 2);
        assert!(summary.final_loss.is_finite() && summary.final_loss > 0.0);
        assert!((0.0..=1.0).contains(&summary.final_valid_mrr));
        Fixture { config, dataset, session }
    }

    fn metrics(&self, session: *const EstSession) -> EstMetrics {
        let mut m = EstMetrics::default();
        unsafe {
            assert_eq!(est_session_evaluate(session, self.dataset, EstSplit::Test as i32, &mut m), EstStatus::Ok);
        }
        m
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            est_session_free(self.session);
            est_dataset_free(self.dataset);
        }
    }
}

#[test]
fn evaluate_is_repeatable_and_save_load_round_trips() {
    let fx = Fixture::trained();
    let first = fx.metrics(fx.session);
    assert!(first.query_count > 0);
    assert_eq!(fx.metrics(fx.session), first, "evaluation must not advance the session memory");

    let dir = tempfile::tempdir().unwrap();
    let d = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut restored = ptr::null_mut();
    unsafe {
        assert_eq!(est_session_save(fx.session, d.as_ptr()), EstStatus::Ok);
        assert_eq!(est_session_load(fx.config.as_ptr(), d.as_ptr(), &mut restored), EstStatus::Ok);
    }
    assert_eq!(fx.metrics(restored), first);
    unsafe { est_session_free(restored) };
}

#[test]
fn scores_cover_every_entity() {
    let fx = Fixture::trained();
    let mut counts = EstDatasetCounts::default();
    unsafe { assert_eq!(est_dataset_counts(fx.dataset, &mut counts), EstStatus::Ok) };
    let mut scores = vec![f64::NAN; counts.entities];
    unsafe {
        let st = est_session_score(fx.session, fx.dataset, 1, 0, 20, scores.as_mut_ptr(), scores.len());
        assert_eq!(st, EstStatus::Ok);
        assert!(scores.iter().all(|s| s.is_finite()));
        let st = est_session_score(fx.session, fx.dataset, 1, 0, 20, scores.as_mut_ptr(), 3);
        assert_eq!(st, EstStatus::BufferSize);
        assert!(last_error().contains("need"));
        let st = est_session_score(fx.session, fx.dataset, 1, 99, 20, scores.as_mut_ptr(), scores.len());
        assert_eq!(st, EstStatus::Lookup);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut dataset = ptr::null_mut();
    unsafe {
        assert_eq!(est_dataset_from_config(ptr::null(), &mut dataset), EstStatus::NullPointer);
        let bad = CString::new("dimm = 3").unwrap();
        assert_eq!(est_dataset_from_config(bad.as_ptr(), &mut dataset), EstStatus::Config);
        assert!(last_error().contains("dimm"));
        let missing = CString::new("/nonexistent/dataset").unwrap();
        assert_eq!(est_dataset_load_dir(missing.as_ptr(), 1, true, &mut dataset), EstStatus::Io);
        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(est_dataset_from_config(invalid.as_ptr().cast(), &mut dataset), EstStatus::InvalidUtf8);
        let cfg = CString::new(CONFIG).unwrap();
        assert_eq!(est_dataset_from_config(cfg.as_ptr(), ptr::null_mut()), EstStatus::NullPointer);
        assert_eq!(est_dataset_from_config(cfg.as_ptr(), &mut dataset), EstStatus::Ok);
        assert!(est_last_error_message().is_null(), "success clears the error");
        let mut m = EstMetrics::default();
        assert_eq!(est_session_evaluate(ptr::null(), dataset, 2, &mut m), EstStatus::NullPointer);
        est_dataset_free(dataset);
        est_dataset_free(ptr::null_mut());
        est_session_free(ptr::null_mut());
    }
}

#[test]
fn session_rejects_a_foreign_dataset() {
    let fx = Fixture::trained();
    let other = CString::new("synthetic_entities = 30\nsynthetic_timestamps = 24\n").unwrap();
    let mut ds = ptr::null_mut();
    let mut m = EstMetrics::default();
    unsafe {
        assert_eq!(est_dataset_from_config(other.as_ptr(), &mut ds), EstStatus::Ok);
        assert_eq!(est_session_evaluate(fx.session, ds, 2, &mut m), EstStatus::Config);
        est_dataset_free(ds);
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/ffi-<hash> -> target/<profile>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libest_ffi.a");
    assert!(lib.is_file(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "smoke exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
