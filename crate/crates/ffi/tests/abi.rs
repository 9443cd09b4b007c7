use pucl_ffi::*;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

fn last_error() -> String {
    let need = unsafe { pucl_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; need];
    unsafe { pucl_last_error_message(buf.as_mut_ptr(), need) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn scalar_helpers() {
    assert!((pucl_kappa_pu(0.5, 0.0) - 0.25).abs() < 1e-15);
    assert!(pucl_breakdown_violated(0.8, 0.5));
    assert!(!pucl_breakdown_violated(0.5, 0.1));
    let (mut p, mut n) = (0.0, 1.0);
    assert_eq!(unsafe { pucl_noise_rates(0.5, 0.5, &mut p, &mut n) }, PuclStatus::Ok);
    assert!((p - 0.5).abs() < 1e-15 && n == 0.0);
    let v = unsafe { CStr::from_ptr(pucl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_and_invalid_arguments_report_errors() {
    assert_eq!(unsafe { pucl_noise_rates(0.5, 0.5, ptr::null_mut(), ptr::null_mut()) }, PuclStatus::NullPointer);
    assert!(last_error().contains("xi_p"));
    let (mut p, mut n) = (0.0, 0.0);
    assert_eq!(unsafe { pucl_noise_rates(1.5, 0.5, &mut p, &mut n) }, PuclStatus::InvalidArgument);
    let mut h = ptr::null_mut();
    let widths = [2usize, 0, 3];
    assert_ne!(unsafe { pucl_encoder_new(widths.as_ptr(), 3, PuclActivation::Tanh, true, 0, &mut h) }, PuclStatus::Ok);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    unsafe { pucl_encoder_free(ptr::null_mut()) };
    unsafe { pucl_head_free(ptr::null_mut()) };
}

#[test]
fn loss_matches_library() {
    let z1 = [1.0, 0.2, -0.3, 0.8, 0.5, 0.5];
    let z2 = [0.9, 0.1, -0.2, 1.0, 0.4, 0.7];
    let labeled = [1u8, 1, 0];
    let mut value = 0.0;
    let mut grad = [0.0; 12];
    let s = unsafe {
        pucl_loss(PuclLossKind::Pucl, 0.0, z1.as_ptr(), z2.as_ptr(), 3, 2, labeled.as_ptr(), ptr::null(), 0.5, &mut value, grad.as_mut_ptr())
    };
    assert_eq!(s, PuclStatus::Ok, "{}", last_error());
    let m1 = pucl::numerics::Matrix::new(3, 2, z1.to_vec()).unwrap();
    let m2 = pucl::numerics::Matrix::new(3, 2, z2.to_vec()).unwrap();
    let b = pucl::contrastive::MultiViewBatch::from_views(&m1, &m2, &[true, true, false], 0.5).unwrap();
    let rep = pucl::contrastive::pucl_loss(&b);
    assert_eq!(value, rep.value);
    assert_eq!(&grad[..], rep.grad.as_slice());
    let s = unsafe {
        pucl_loss(PuclLossKind::Scl, 0.0, z1.as_ptr(), z2.as_ptr(), 3, 2, labeled.as_ptr(), ptr::null(), 0.5, &mut value, grad.as_mut_ptr())
    };
    assert_ne!(s, PuclStatus::Ok);
}

#[test]
fn encoder_round_trip_and_pipeline() {
    let widths = [2usize, 8, 3];
    let mut enc = ptr::null_mut();
    assert_eq!(unsafe { pucl_encoder_new(widths.as_ptr(), 3, PuclActivation::Tanh, true, 7, &mut enc) }, PuclStatus::Ok);
    assert_eq!(unsafe { pucl_encoder_input_dim(enc) }, 2);
    assert_eq!(unsafe { pucl_encoder_output_dim(enc) }, 3);

    let n = 40;
    let x: Vec<f64> = (0..n).flat_map(|i| {
        let s = if i < n / 2 { 3.0 } else { -3.0 };
        [s + 0.1 * (i % 5) as f64, 0.1 * (i % 7) as f64]
    }).collect();
    let labeled: Vec<u8> = (0..n).map(|i| (i < 5) as u8).collect();
    let mut loss = 0.0;
    let s = unsafe {
        pucl_encoder_train(enc, x.as_ptr(), n, labeled.as_ptr(), PuclLossKind::Pucl, 0.0, 0.05, 5, 16, 0.5, 0.3, 1, &mut loss)
    };
    assert_eq!(s, PuclStatus::Ok, "{}", last_error());
    assert!(loss.is_finite());

    let mut need = 0usize;
    assert_eq!(unsafe { pucl_encoder_to_json(enc, ptr::null_mut(), 0, &mut need) }, PuclStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; need];
    assert_eq!(unsafe { pucl_encoder_to_json(enc, buf.as_mut_ptr(), need, &mut need) }, PuclStatus::Ok);
    let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_owned();
    let mut enc2 = ptr::null_mut();
    assert_eq!(unsafe { pucl_encoder_from_json(json.as_ptr(), &mut enc2) }, PuclStatus::Ok);

    let mut z = vec![0.0; n * 3];
    let mut z2 = vec![0.0; n * 3];
    assert_eq!(unsafe { pucl_encoder_encode(enc, x.as_ptr(), n, z.as_mut_ptr()) }, PuclStatus::Ok);
    assert_eq!(unsafe { pucl_encoder_encode(enc2, x.as_ptr(), n, z2.as_mut_ptr()) }, PuclStatus::Ok);
    assert_eq!(z, z2);

    let mut labels = vec![0u8; n];
    let (mut mp, mut mn, mut pot) = ([0.0; 3], [0.0; 3], 0.0);
    let s = unsafe {
        pucl_pupl(z.as_ptr(), n, 3, labeled.as_ptr(), 3, 100, 1e-8, labels.as_mut_ptr(), mp.as_mut_ptr(), mn.as_mut_ptr(), &mut pot)
    };
    assert_eq!(s, PuclStatus::Ok, "{}", last_error());
    assert!(labels[..5].iter().all(|&l| l == 1));
    assert!(pot >= 0.0);

    let mut head = ptr::null_mut();
    assert_eq!(unsafe { pucl_head_train_ce(z.as_ptr(), n, 3, labels.as_ptr(), 0.5, 50, 1e-4, 0, &mut head) }, PuclStatus::Ok);
    let mut pred = vec![0u8; n];
    assert_eq!(unsafe { pucl_head_predict(head, z.as_ptr(), n, 3, pred.as_mut_ptr()) }, PuclStatus::Ok);
    let mut r = PuclRisk::default();
    let s = unsafe { pucl_head_pu_risk(head, z.as_ptr(), 5, z.as_ptr().add(15), n - 5, 3, 0.5, true, &mut r) };
    assert_eq!(s, PuclStatus::Ok);
    assert!(r.risk >= 0.5 * r.r_p_plus - 1e-15);

    unsafe {
        pucl_head_free(head);
        pucl_encoder_free(enc);
        pucl_encoder_free(enc2);
    }
}

#[test]
fn head_params_and_risks() {
    let w = [1.0, -1.0];
    let mut head = ptr::null_mut();
    assert_eq!(unsafe { pucl_head_new(w.as_ptr(), 2, 0.25, &mut head) }, PuclStatus::Ok);
    let (mut w2, mut b) = ([0.0; 2], 0.0);
    assert_eq!(unsafe { pucl_head_params(head, w2.as_mut_ptr(), 2, &mut b) }, PuclStatus::Ok);
    assert_eq!((w2, b), (w, 0.25));
    assert_eq!(unsafe { pucl_head_params(head, w2.as_mut_ptr(), 3, &mut b) }, PuclStatus::DimMismatch);
    let zp = [1.0, 0.0, 0.5, 0.5];
    let zu = [1.0, 0.0, -1.0, 0.5, 0.0, 2.0];
    let (mut up, mut nn) = (PuclRisk::default(), PuclRisk::default());
    unsafe {
        assert_eq!(pucl_head_pu_risk(head, zp.as_ptr(), 2, zu.as_ptr(), 3, 2, 0.4, false, &mut up), PuclStatus::Ok);
        assert_eq!(pucl_head_pu_risk(head, zp.as_ptr(), 2, zu.as_ptr(), 3, 2, 0.4, true, &mut nn), PuclStatus::Ok);
    }
    if !nn.clipped {
        assert_eq!(up.risk, nn.risk);
    }
    assert_eq!(unsafe { pucl_head_pu_risk(head, zp.as_ptr(), 0, zu.as_ptr(), 3, 2, 0.4, false, &mut up) }, PuclStatus::EmptyInput);
    unsafe { pucl_head_free(head) };
}

#[test]
fn bad_json_is_a_parse_error() {
    let s = CString::new("{not json").unwrap();
    let mut enc = ptr::null_mut();
    assert_eq!(unsafe { pucl_encoder_from_json(s.as_ptr(), &mut enc) }, PuclStatus::Parse);
    assert!(enc.is_null());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pucl.h")).unwrap();
    for name in [
        "pucl_version", "pucl_last_error_message", "pucl_kappa_pu", "pucl_breakdown_violated", "pucl_noise_rates",
        "pucl_loss", "pucl_encoder_new", "pucl_encoder_from_json", "pucl_encoder_to_json", "pucl_encoder_encode",
        "pucl_encoder_train", "pucl_encoder_free", "pucl_pupl", "pucl_head_new", "pucl_head_train_ce",
        "pucl_head_params", "pucl_head_predict", "pucl_head_pu_risk", "pucl_head_free", "PUCL_STATUS_OK",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
