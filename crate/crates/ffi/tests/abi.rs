use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cmflow::config::ModelConfig;
use cmflow::Checkpoint;
use cmflow_ffi::*;

fn last_error() -> String {
    let p = cmf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn identity(d: usize, big_d: usize) -> *mut CmfFlow {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cmf_flow_new_identity(d, big_d, &mut h) }, CmfStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(cmf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn identity_embed_project() {
    let h = identity(2, 4);
    let (mut d, mut big_d) = (0usize, 0usize);
    unsafe {
        assert_eq!(cmf_flow_dims(h, &mut d, &mut big_d), CmfStatus::Ok);
        assert_eq!((d, big_d), (2, 4));

        let z = [0.5, -1.5];
        let mut x = [9.0; 4];
        assert_eq!(cmf_flow_embed(h, z.as_ptr(), 2, x.as_mut_ptr(), 4), CmfStatus::Ok);
        assert_eq!(x, [0.5, -1.5, 0.0, 0.0]);

        let mut back = [0.0; 2];
        assert_eq!(cmf_flow_project(h, x.as_ptr(), 4, back.as_mut_ptr(), 2), CmfStatus::Ok);
        assert_eq!(back, z);

        let mut jac = [0.0; 8];
        assert_eq!(cmf_flow_jacobian(h, z.as_ptr(), 2, jac.as_mut_ptr(), 8), CmfStatus::Ok);
        assert_eq!(jac, [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);

        let mut g = [0.0; 4];
        assert_eq!(cmf_flow_metric_tensor(h, z.as_ptr(), 2, g.as_mut_ptr(), 4), CmfStatus::Ok);
        assert_eq!(g, [1.0, 0.0, 0.0, 1.0]);

        let mut lp = 0.0;
        assert_eq!(cmf_flow_log_prob(h, x.as_ptr(), 4, &mut lp), CmfStatus::Ok);
        let expect = -(std::f64::consts::TAU).ln() - 0.5 * (0.25 + 2.25);
        assert!((lp - expect).abs() < 1e-12);

        let mut m = -1.0;
        assert_eq!(cmf_flow_macs(h, x.as_ptr(), 1, 4, &mut m), CmfStatus::Ok);
        assert_eq!(m, 0.0);
        cmf_flow_free(h);
    }
}

#[test]
fn length_mismatch_is_reported() {
    let h = identity(2, 3);
    unsafe {
        let z = [0.0; 2];
        let mut x = [0.0; 2];
        let st = cmf_flow_embed(h, z.as_ptr(), 2, x.as_mut_ptr(), 2);
        assert_eq!(st, CmfStatus::InvalidArgument);
        assert!(last_error().contains("x_out"));
        assert_eq!(cmf_flow_embed(h, z.as_ptr(), 2, ptr::null_mut(), 3), CmfStatus::NullPointer);
        assert_eq!(cmf_flow_dims(ptr::null(), ptr::null_mut(), ptr::null_mut()), CmfStatus::NullPointer);
        let mut x3 = [0.0; 3];
        assert_eq!(cmf_flow_embed(h, z.as_ptr(), 2, x3.as_mut_ptr(), 3), CmfStatus::Ok);
        assert!(cmf_last_error_message().is_null());
        cmf_flow_free(h);
        cmf_flow_free(ptr::null_mut());
    }
}

#[test]
fn bad_dimensions_and_paths() {
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(cmf_flow_new_identity(3, 2, &mut h), CmfStatus::Config);
        assert!(h.is_null());
        let path = CString::new("/nonexistent/ckpt.json").unwrap();
        assert_eq!(cmf_flow_load(path.as_ptr(), &mut h), CmfStatus::Io);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn sampling_is_seeded() {
    let h = identity(2, 3);
    let mut a = vec![0.0; 30];
    let mut b = vec![0.0; 30];
    unsafe {
        assert_eq!(cmf_flow_sample(h, 10, 7, a.as_mut_ptr(), 30), CmfStatus::Ok);
        assert_eq!(cmf_flow_sample(h, 10, 7, b.as_mut_ptr(), 30), CmfStatus::Ok);
        cmf_flow_free(h);
    }
    assert_eq!(a, b);
    assert!(a.chunks(3).all(|r| r[2] == 0.0));
}

#[test]
fn fid_of_identical_sets_is_zero() {
    let a: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 * 0.3 - (i % 3) as f64).collect();
    let mut out = -1.0;
    unsafe {
        assert_eq!(cmf_fid_like(a.as_ptr(), 20, a.as_ptr(), 20, 2, &mut out), CmfStatus::Ok);
    }
    assert!(out.abs() < 1e-8);
    let shifted: Vec<f64> = a.iter().enumerate().map(|(i, v)| if i % 2 == 0 { v + 2.0 } else { *v }).collect();
    unsafe {
        assert_eq!(cmf_fid_like(a.as_ptr(), 20, shifted.as_ptr(), 20, 2, &mut out), CmfStatus::Ok);
    }
    assert!((out - 4.0).abs() < 1e-8);
}

#[test]
fn loads_json_and_binary_checkpoints() {
    let model = ModelConfig {
        latent_dim: 2,
        data_dim: 3,
        h_couplings: 2,
        f_couplings: 2,
        hidden: vec![4],
        scale_clamp: 2.0,
    };
    let mut gf = model.build(5).unwrap();
    let p: Vec<f64> = (0..gf.param_count()).map(|i| ((i % 7) as f64 - 3.0) * 0.02).collect();
    gf.set_params(&p).unwrap();
    let ck = Checkpoint::new(&gf, 5, None);
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("m.json");
    let bin = dir.path().join("m.cmfb");
    ck.save(&json).unwrap();
    std::fs::write(&bin, ck.to_binary().unwrap()).unwrap();

    let x = [0.3, -0.2, 0.1];
    let expect = cmflow::evalkit::log_prob(&gf, &x).unwrap();
    for path in [&json, &bin] {
        let c = CString::new(path.to_str().unwrap()).unwrap();
        let mut h = ptr::null_mut();
        let mut lp = 0.0;
        unsafe {
            assert_eq!(cmf_flow_load(c.as_ptr(), &mut h), CmfStatus::Ok, "{}", path.display());
            assert_eq!(cmf_flow_log_prob(h, x.as_ptr(), 3, &mut lp), CmfStatus::Ok);
            cmf_flow_free(h);
        }
        assert_eq!(lp.to_bits(), expect.to_bits());
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cmflow.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "cmf_version",
        "cmf_last_error_message",
        "cmf_flow_load",
        "cmf_flow_new_identity",
        "cmf_flow_free",
        "cmf_flow_dims",
        "cmf_flow_embed",
        "cmf_flow_project",
        "cmf_flow_log_prob",
        "cmf_flow_jacobian",
        "cmf_flow_metric_tensor",
        "cmf_flow_sample",
        "cmf_flow_macs",
        "cmf_fid_like",
        "CMF_STATUS_INVALID_ARGUMENT",
        "typedef struct CmfFlow CmfFlow",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cmflow.h");
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
