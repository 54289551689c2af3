use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cedo_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cedo_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn cosine_and_errors() {
    let a = [1.0, 0.0];
    let b = [1.0, 1.0];
    let mut c = 0.0;
    assert_eq!(
        unsafe { cedo_cosine(a.as_ptr(), b.as_ptr(), 2, &mut c) },
        CedoStatus::Ok
    );
    assert!((c - 0.5f64.sqrt()).abs() < 1e-15);
    assert!(last_error().is_empty());

    assert_eq!(
        unsafe { cedo_cosine(a.as_ptr(), ptr::null(), 2, &mut c) },
        CedoStatus::NullPointer
    );
    assert!(last_error().contains("`b`"));
    assert_eq!(
        unsafe { cedo_cosine(a.as_ptr(), b.as_ptr(), 2, ptr::null_mut()) },
        CedoStatus::NullPointer
    );
}

#[test]
fn pareto_matches_library() {
    let (t, q, v) = ([1.0, 0.0, 0.5], [-1.0, 0.2, 0.0], [0.0, 1.0, -0.3]);
    let mut alpha = [0.0; 3];
    let mut combined = [0.0; 3];
    let (mut norm, mut stationary) = (0.0, true);
    let status = unsafe {
        cedo_pareto_min_norm(
            t.as_ptr(),
            q.as_ptr(),
            v.as_ptr(),
            3,
            alpha.as_mut_ptr(),
            combined.as_mut_ptr(),
            &mut norm,
            &mut stationary,
        )
    };
    assert_eq!(status, CedoStatus::Ok);
    let gs = cedo::gms::GradientSet::new(
        t.to_vec().into(),
        q.to_vec().into(),
        v.to_vec().into(),
        cedo::model::GradScope::ClassifierOnly,
    )
    .unwrap();
    let sol = cedo::gms::pareto_min_norm(&gs, &Default::default()).unwrap();
    assert_eq!(alpha, sol.weights.as_array());
    assert_eq!(&combined[..], &sol.combined[..]);
    assert_eq!(norm, sol.min_norm);
    assert_eq!(stationary, sol.stationary);

    let bad = [f64::NAN, 0.0, 0.0];
    let status = unsafe {
        cedo_pareto_min_norm(
            bad.as_ptr(),
            q.as_ptr(),
            v.as_ptr(),
            3,
            alpha.as_mut_ptr(),
            ptr::null_mut(),
            &mut norm,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, CedoStatus::Numeric);
}

#[test]
fn orthogonalize_removes_conflicts() {
    let (t, q, v) = ([1.0, 1.0], [-1.0, 0.5], [2.0, -1.0]);
    let (mut ot, mut oq, mut ov) = ([0.0; 2], [0.0; 2], [0.0; 2]);
    let status = unsafe {
        cedo_orthogonalize(
            t.as_ptr(),
            q.as_ptr(),
            v.as_ptr(),
            2,
            CedoOrthoMode::Orthogonal,
            true,
            ot.as_mut_ptr(),
            oq.as_mut_ptr(),
            ov.as_mut_ptr(),
        )
    };
    assert_eq!(status, CedoStatus::Ok);
    let dot = |a: &[f64], b: &[f64]| a[0] * b[0] + a[1] * b[1];
    assert!(dot(&ot, &q).abs() < 1e-12);
    assert!(dot(&oq, &v).abs() < 1e-12);
    assert!(dot(&ov, &q).abs() < 1e-12);
}

#[test]
fn dlr_weight_values() {
    let (mut w, mut big_w) = (0.0, 0.0);
    assert_eq!(unsafe { cedo_dlr_weight(2, 8, &mut w, &mut big_w) }, CedoStatus::Ok);
    assert_eq!(w, 1.0 / 16.0);
    assert!((big_w - w.exp().ln_1p()).abs() < 1e-15);
    assert_eq!(
        unsafe { cedo_dlr_weight(0, 8, &mut w, &mut big_w) },
        CedoStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { cedo_dlr_weight(9, 8, &mut w, &mut big_w) },
        CedoStatus::InvalidArgument
    );
}

#[test]
fn supcon_matches_library() {
    let x = [0.3, -0.2, 0.9, 0.1, -0.5, 0.4, 0.2, 0.2];
    let answers = [0usize, 0, 1, 1];
    let weights = [1.0, 0.5, 2.0, 1.0];
    let mut value = 0.0;
    let mut grads = [0.0; 8];
    let status = unsafe {
        cedo_weighted_supcon(
            x.as_ptr(),
            4,
            2,
            answers.as_ptr(),
            weights.as_ptr(),
            0.5,
            true,
            &mut value,
            grads.as_mut_ptr(),
        )
    };
    assert_eq!(status, CedoStatus::Ok);
    let rows: Vec<&[f64]> = x.chunks(2).collect();
    let lib = cedo::losses::supcon_with_weights(&rows, &answers, &weights, 0.5, true).unwrap();
    assert_eq!(value, lib.value);
    assert_eq!(grads.to_vec(), lib.grads.concat());

    let status = unsafe {
        cedo_weighted_supcon(
            x.as_ptr(),
            1,
            2,
            answers.as_ptr(),
            weights.as_ptr(),
            0.5,
            true,
            &mut value,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, CedoStatus::InvalidArgument);
}

#[test]
fn model_lifecycle() {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { cedo_model_new(3, 4, 5, 6, 7, 42, &mut model) }, CedoStatus::Ok);
    let mut count = 0;
    assert_eq!(unsafe { cedo_model_num_params(model, &mut count) }, CedoStatus::Ok);
    assert_eq!(count, (3 * 5 + 5) + (4 * 5 + 5) + (10 * 6 + 6) + (6 * 7 + 7));

    let q = [0.1, -0.3, 0.8];
    let v = [1.0, 0.0, -1.0, 0.5];
    let (mut joint, mut qonly) = ([0.0; 7], [0.0; 7]);
    let status = unsafe {
        cedo_model_forward(
            model,
            q.as_ptr(),
            v.as_ptr(),
            joint.as_mut_ptr(),
            qonly.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, CedoStatus::Ok);
    assert!(joint.iter().all(|x| x.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cedo_model_save(model, path.as_ptr()) }, CedoStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { cedo_model_load(path.as_ptr(), &mut loaded) }, CedoStatus::Ok);
    let mut again = [0.0; 7];
    let status = unsafe {
        cedo_model_forward(
            loaded,
            q.as_ptr(),
            v.as_ptr(),
            again.as_mut_ptr(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, CedoStatus::Ok);
    assert_eq!(joint, again);

    let missing = CString::new(dir.path().join("absent.json").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { cedo_model_load(missing.as_ptr(), &mut none) }, CedoStatus::Io);
    assert!(none.is_null());

    assert_eq!(
        unsafe { cedo_model_new(0, 4, 5, 6, 7, 1, &mut none) },
        CedoStatus::InvalidArgument
    );
    unsafe {
        cedo_model_free(model);
        cedo_model_free(loaded);
        cedo_model_free(ptr::null_mut());
    }
}

#[test]
fn train_from_json() {
    let cfg = CString::new(r#"{"epochs": 1, "data": {"kind": "synthetic", "samples": 200}}"#).unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { cedo_train_json(cfg.as_ptr(), &mut json) }, CedoStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { cedo_string_free(json) };
    let metrics: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(metrics["epochs"].as_array().unwrap().len(), 1);
    assert!(metrics["accuracy"]["all"].is_number());

    let bad = CString::new(r#"{"batch_size": 0}"#).unwrap();
    assert_eq!(unsafe { cedo_train_json(bad.as_ptr(), &mut json) }, CedoStatus::Config);
    assert!(json.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cedo.h");
    let header = std::fs::read_to_string(&header_path).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 14);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "header lacks {name}");
    }

    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let probe = dir.path().join("probe.c");
    std::fs::write(
        &probe,
        r#"#include <stdio.h>
#include "cedo.h"
int main(void) {
    double a[2] = {3.0, 4.0}, b[2] = {3.0, 4.0}, c = 0.0;
    if (cedo_cosine(a, b, 2, &c) != CEDO_STATUS_OK) return 1;
    if (cedo_cosine(a, NULL, 2, &c) != CEDO_STATUS_NULL_POINTER) return 2;
    if (cedo_last_error_message()[0] == '\0') return 3;
    printf("%.6f\n", c);
    return 0;
}
"#,
    )
    .unwrap();
    let include = header_path.parent().unwrap();
    let staticlib = std::env::current_exe()
        .unwrap()
        .parent()
        .and_then(Path::parent)
        .map(|d| d.join("libcedo_ffi.a"))
        .filter(|p| p.is_file());
    let mut cmd = Command::new(cc);
    cmd.args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(include)
        .arg(&probe);
    let Some(lib) = staticlib else {
        let out = cmd.arg("-fsyntax-only").output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        return;
    };
    let exe = dir.path().join("probe");
    let out = cmd
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "probe exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "1.000000");
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .ok_or(())
}
