use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use bwe_lab::learner::{ActorKind, ActorPolicy, Agent, Checkpoint, TrainConfig};
use bwe_lab::mixture::{gm_log_density, mw2_upper, GaussianMixture};
use bwe_lab::session::{normalize_observation, ActionMap, Observation, OBS_DIM};
use bwe_lab::sim::{CallConfig, RatePolicy};
use bwe_lab_ffi::*;

fn tiny_checkpoint() -> Checkpoint {
    let cfg = TrainConfig {
        actor: ActorKind::Stacked,
        stack_len: 3,
        hidden_layers: 1,
        hidden_width: 8,
        seed: 5,
        ..Default::default()
    };
    Agent::new(cfg, 3.0).unwrap().checkpoint(1, 0.1, &CallConfig::default())
}

fn raw_obs(k: usize) -> Vec<f64> {
    (0..OBS_DIM).map(|i| ((i * 37 + k * 11) % 50) as f64 * 1234.5).collect()
}

fn last_error() -> String {
    let p = bwe_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn load(path: &Path) -> *mut BwePolicy {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(bwe_policy_load(c.as_ptr(), false, &mut h), BweStatus::Ok);
    h
}

#[test]
fn policy_handle_matches_the_library_policy() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    let ck = tiny_checkpoint();
    ck.save(&path).unwrap();
    let mut reference = ActorPolicy::from_checkpoint(&ck, false);
    reference.reset(9);
    let norm = ck.meta.call.normalization;
    unsafe {
        let h = load(&path);
        assert_eq!(bwe_policy_reset(h, 9), BweStatus::Ok);
        for k in 0..6 {
            let raw = raw_obs(k);
            let mut bps = 0.0;
            assert_eq!(bwe_policy_act(h, raw.as_ptr(), raw.len(), &mut bps), BweStatus::Ok);
            let o = Observation::from_raw(raw).unwrap();
            let want = reference.decide(&o, &normalize_observation(&o, &norm).unwrap());
            assert_eq!(bps.to_bits(), want.to_bits());
        }
        let mut map = BweActionMap { b_min: 0.0, b_max: 0.0 };
        assert_eq!(bwe_policy_action_map(h, &mut map), BweStatus::Ok);
        assert_eq!((map.b_min, map.b_max), (1e4, 8e6));
        bwe_policy_free(h);
    }
}

#[test]
fn reset_replays_the_same_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    tiny_checkpoint().save(&path).unwrap();
    unsafe {
        let h = load(&path);
        let run = |h| {
            bwe_policy_reset(h, 1);
            (0..4)
                .map(|k| {
                    let raw = raw_obs(k);
                    let mut bps = 0.0;
                    bwe_policy_act(h, raw.as_ptr(), raw.len(), &mut bps);
                    bps
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(h), run(h));
        bwe_policy_free(h);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        let missing = CString::new(dir.path().join("absent.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(bwe_policy_load(missing.as_ptr(), false, &mut h), BweStatus::Io);
        assert!(h.is_null());
        assert!(last_error().contains("absent.ckpt"));

        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk_c = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(bwe_policy_load(junk_c.as_ptr(), false, &mut h), BweStatus::BadCheckpoint);
        assert!(last_error().contains("magic"));

        assert_eq!(bwe_policy_load(ptr::null(), false, &mut h), BweStatus::NullPointer);
        assert_eq!(bwe_policy_reset(ptr::null_mut(), 0), BweStatus::NullPointer);

        let path = dir.path().join("p.ckpt");
        tiny_checkpoint().save(&path).unwrap();
        let h = load(&path);
        let short = vec![0.0; OBS_DIM - 1];
        let mut bps = 0.0;
        assert_eq!(bwe_policy_act(h, short.as_ptr(), short.len(), &mut bps), BweStatus::InvalidArgument);
        assert!(last_error().contains("53"));
        bwe_policy_free(h);
        bwe_policy_free(ptr::null_mut());
    }
}

#[test]
fn action_map_and_normalization_match_the_library() {
    let map = bwe_action_map_default();
    let lib = ActionMap::default();
    unsafe {
        for a in [-1.0, -0.3, 0.0, 0.8, 1.0] {
            let mut bps = 0.0;
            assert_eq!(bwe_action_to_bps(map, a, &mut bps), BweStatus::Ok);
            assert_eq!(bps, lib.action_to_bps(a));
            let mut back = 0.0;
            assert_eq!(bwe_bps_to_action(map, bps, &mut back), BweStatus::Ok);
            assert!((back - a).abs() < 1e-12);
        }
        let mut x = 0.0;
        let bad = BweActionMap { b_min: 5.0, b_max: 1.0 };
        assert_eq!(bwe_action_to_bps(bad, 0.0, &mut x), BweStatus::InvalidArgument);

        let raw = raw_obs(3);
        let mut out = vec![0.0; OBS_DIM];
        assert_eq!(bwe_normalize_observation(map, raw.as_ptr(), out.as_mut_ptr(), OBS_DIM), BweStatus::Ok);
        let o = Observation::from_raw(raw).unwrap();
        let want = normalize_observation(&o, &bwe_lab::session::Normalization::for_action_map(&lib)).unwrap();
        assert_eq!(out, want.values());
    }
    assert_eq!(bwe_obs_dim(), OBS_DIM);
}

#[test]
fn mixture_helpers_match_the_library() {
    let (wa, ma, sa) = ([0.3, 0.7], [0.0, 2.0], [1.0, 0.5]);
    let (wb, mb, sb) = ([1.0], [1.0], [2.0]);
    let a = GaussianMixture::new(wa.to_vec(), ma.to_vec(), sa.to_vec()).unwrap();
    let b = GaussianMixture::new(wb.to_vec(), mb.to_vec(), sb.to_vec()).unwrap();
    unsafe {
        let mut d = 0.0;
        let st = bwe_mw2_upper(wa.as_ptr(), ma.as_ptr(), sa.as_ptr(), 2, wb.as_ptr(), mb.as_ptr(), sb.as_ptr(), 1, &mut d);
        assert_eq!(st, BweStatus::Ok);
        assert_eq!(d, mw2_upper(&a, &b));
        let mut lp = 0.0;
        assert_eq!(bwe_gm_log_density(wa.as_ptr(), ma.as_ptr(), sa.as_ptr(), 2, 0.4, &mut lp), BweStatus::Ok);
        assert_eq!(lp, gm_log_density(&a, 0.4));
        let bad_w = [0.5, 0.2];
        assert_eq!(
            bwe_gm_log_density(bad_w.as_ptr(), ma.as_ptr(), sa.as_ptr(), 2, 0.0, &mut lp),
            BweStatus::InvalidArgument
        );
        assert_eq!(bwe_gm_log_density(wa.as_ptr(), ma.as_ptr(), sa.as_ptr(), 0, 0.0, &mut lp), BweStatus::InvalidArgument);
    }
    assert_eq!(bwe_gaussian_w2_sq(1.0, 2.0, 4.0, 0.0), 13.0);
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/bwe_lab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "bwe_last_error",
        "bwe_obs_dim",
        "bwe_policy_load",
        "bwe_policy_reset",
        "bwe_policy_act",
        "bwe_policy_action_map",
        "bwe_policy_free",
        "bwe_action_map_default",
        "bwe_action_to_bps",
        "bwe_bps_to_action",
        "bwe_normalize_observation",
        "bwe_gaussian_w2_sq",
        "bwe_mw2_upper",
        "bwe_gm_log_density",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(text.contains("typedef struct BwePolicy BwePolicy;"));
    // syntax check with the system C compiler when there is one
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        return;
    };
    assert!(status.success());
}
