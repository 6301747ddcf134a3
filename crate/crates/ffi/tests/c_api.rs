use std::ffi::{CStr, CString};
use std::fs;
use std::ptr;

use relaxprune::data::{make_blobs, write_csv};
use relaxprune_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = rp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn prox_operators_work_on_caller_buffers() {
    let mut v = [0.5, -2.0, 0.1, 3.0];
    assert_eq!(
        unsafe { rp_hard_threshold(v.as_mut_ptr(), 4, 0.5) },
        RpStatus::Ok
    );
    assert_eq!(v, [0.0, -2.0, 0.0, 3.0]);
    let mut v = [2.0, -0.5];
    assert_eq!(
        unsafe { rp_soft_threshold(v.as_mut_ptr(), 2, 1.0) },
        RpStatus::Ok
    );
    assert_eq!(v, [1.0, 0.0]);
    let mut g = [3.0, 4.0];
    assert_eq!(
        unsafe { rp_prox_group_lasso(g.as_mut_ptr(), 2, 1.0) },
        RpStatus::Ok
    );
    assert!((g[0] - 2.4).abs() < 1e-15 && (g[1] - 3.2).abs() < 1e-15);
    let mut g = [3.0, 4.0];
    assert_eq!(
        unsafe { rp_prox_group_l0(g.as_mut_ptr(), 2, 12.5) },
        RpStatus::Ok
    );
    assert_eq!(g, [0.0, 0.0]);
}

#[test]
fn bad_arguments_report_status_and_message() {
    let mut v = [1.0];
    assert_eq!(
        unsafe { rp_hard_threshold(v.as_mut_ptr(), 1, -1.0) },
        RpStatus::Parameter
    );
    assert!(last_error().contains("threshold"), "{}", last_error());
    assert_eq!(
        unsafe { rp_soft_threshold(ptr::null_mut(), 3, 1.0) },
        RpStatus::NullPointer
    );
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { rp_checkpoint_load(ptr::null(), &mut m) },
        RpStatus::NullPointer
    );
    let missing = c("/definitely/not/here.ckpt");
    assert_eq!(
        unsafe { rp_checkpoint_load(missing.as_ptr(), &mut m) },
        RpStatus::Io
    );
    assert!(m.is_null());
    let mut out = 0.0;
    assert_eq!(
        unsafe { rp_model_sparsity(ptr::null(), &mut out) },
        RpStatus::NullPointer
    );
    unsafe {
        rp_model_free(ptr::null_mut());
        rp_dataset_free(ptr::null_mut());
    }
}

#[test]
fn corrupt_checkpoint_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("junk.ckpt");
    fs::write(&p, b"RPCKjunk").unwrap();
    let path = c(p.to_str().unwrap());
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { rp_checkpoint_load(path.as_ptr(), &mut m) },
        RpStatus::Format
    );
}

#[test]
fn experiment_checkpoint_and_queries_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "data.n_per_class=20\ndata.classes=3\ndata.dim=3\nmodel.hidden=6\n\
         optim.epochs=2\noptim.decay_epochs=1\noptim.batch_size=8\n\
         pruner.lambda=1e-3\nattack.train=fgsm:eps=8/255\n\
         attack.a3=ifgsm:eps=8/255,alpha=2/255,steps=3\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let (cp, op) = (c(cfg.to_str().unwrap()), c(out.to_str().unwrap()));
    assert_eq!(
        unsafe { rp_run_experiment(cp.as_ptr(), op.as_ptr()) },
        RpStatus::Ok
    );

    let ck = c(out.join("best.ckpt").to_str().unwrap());
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { rp_checkpoint_load(ck.as_ptr(), &mut model) },
        RpStatus::Ok
    );
    let (mut len, mut classes) = (0usize, 0usize);
    unsafe {
        assert_eq!(rp_model_input_len(model, &mut len), RpStatus::Ok);
        assert_eq!(rp_model_classes(model, &mut classes), RpStatus::Ok);
    }
    assert_eq!((len, classes), (3, 3));

    let inputs = [0.1, 0.2, 0.3, 0.9, 0.8, 0.7];
    let mut labels = [usize::MAX; 2];
    let st = unsafe { rp_model_predict(model, inputs.as_ptr(), 2, labels.as_mut_ptr()) };
    assert_eq!(st, RpStatus::Ok);
    assert!(labels.iter().all(|l| *l < 3));

    let (mut sp, mut ch) = (-1.0, -1.0);
    unsafe {
        assert_eq!(rp_model_sparsity(model, &mut sp), RpStatus::Ok);
        assert_eq!(rp_model_channel_sparsity(model, &mut ch), RpStatus::Ok);
    }
    assert!((0.0..=100.0).contains(&sp) && (0.0..=100.0).contains(&ch));

    let csv = dir.path().join("eval.csv");
    write_csv(&make_blobs(10, 3, 3, 0.1, 9).unwrap(), &csv, false).unwrap();
    let csvp = c(csv.to_str().unwrap());
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { rp_dataset_load_csv(csvp.as_ptr(), false, &mut ds) },
        RpStatus::Ok
    );
    let mut n = 0;
    assert_eq!(unsafe { rp_dataset_len(ds, &mut n) }, RpStatus::Ok);
    assert_eq!(n, 30);
    let (mut clean, mut robust) = (0.0, 0.0);
    let none = c("none");
    let fgsm = c("fgsm:eps=8/255");
    unsafe {
        assert_eq!(
            rp_accuracy(model, ds, none.as_ptr(), 0, &mut clean),
            RpStatus::Ok
        );
        assert_eq!(
            rp_accuracy(model, ds, fgsm.as_ptr(), 0, &mut robust),
            RpStatus::Ok
        );
    }
    assert!((0.0..=100.0).contains(&clean) && (0.0..=100.0).contains(&robust));
    let bogus = c("deepfool:eps=1");
    assert_ne!(
        unsafe { rp_accuracy(model, ds, bogus.as_ptr(), 0, &mut clean) },
        RpStatus::Ok
    );
    unsafe {
        rp_dataset_free(ds);
        rp_model_free(model);
    }
}

#[test]
fn header_declares_the_api() {
    let h =
        fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/relaxprune.h")).unwrap();
    for name in [
        "RpStatus",
        "RP_STATUS_OK",
        "typedef struct RpModel RpModel",
        "rp_last_error",
        "rp_checkpoint_load",
        "rp_model_predict",
        "rp_accuracy",
        "rp_prox_group_lasso",
        "rp_run_experiment",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}
