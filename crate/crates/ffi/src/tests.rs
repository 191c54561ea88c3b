use std::ffi::CString;

use lineweave::doc_io::{generate_synthetic_page, save_document_png, SynthConfig};
use lineweave::nn::{save_checkpoint, ArchConfig, ModelState};

use super::*;

struct Fixture {
    _dir: tempfile::TempDir,
    ckpt: CString,
    config: CString,
    image: CString,
    page: DocumentImage,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let model: ModelState = ModelState::init(&ArchConfig::tiny(), 3).unwrap();
    let ckpt = dir.path().join("m.lwck");
    save_checkpoint(&model, &ckpt).unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "patch_size = 8\ncentral_window = 4\n[model]\narch = \"tiny\"\n").unwrap();
    let page = generate_synthetic_page(&SynthConfig {
        height: 48,
        width: 64,
        margin: 5,
        line_count: [2, 2],
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap()
    .image;
    let image = dir.path().join("p.png");
    save_document_png(&page, &image).unwrap();
    let c = |p: &std::path::Path| CString::new(p.to_str().unwrap()).unwrap();
    Fixture {
        ckpt: c(&ckpt),
        config: c(&config),
        image: c(&image),
        page,
        _dir: dir,
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(lw_last_error()) }.to_str().unwrap().to_owned()
}

fn load(f: &Fixture) -> *mut LwModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { lw_model_load(f.ckpt.as_ptr(), f.config.as_ptr(), &mut m) }, LwStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(lw_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn segment_file_and_buffer_agree() {
    let f = fixture();
    let m = load(&f);
    let mut size = 0;
    assert_eq!(unsafe { lw_model_patch_size(m, &mut size) }, LwStatus::Ok);
    assert_eq!(size, 8);

    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { lw_segment_file(m, f.image.as_ptr(), &mut a) }, LwStatus::Ok, "{}", last_error());
    assert_eq!(last_error(), "");
    let reloaded = load_document(f.image.to_str().unwrap()).unwrap();
    let (h, w) = reloaded.dims();
    assert_eq!((h, w), f.page.dims());
    assert_eq!(
        unsafe { lw_segment_gray(m, reloaded.pixels().as_ptr(), h, w, &mut b) },
        LwStatus::Ok
    );

    let (mut hh, mut ww) = (0, 0);
    assert_eq!(unsafe { lw_segmentation_dims(a, &mut hh, &mut ww) }, LwStatus::Ok);
    assert_eq!((hh, ww), (h, w));
    let mut la = vec![0u32; h * w];
    let mut lb = vec![0u32; h * w];
    assert_eq!(unsafe { lw_segmentation_labels(a, la.as_mut_ptr(), la.len()) }, LwStatus::Ok);
    assert_eq!(unsafe { lw_segmentation_labels(b, lb.as_mut_ptr(), lb.len()) }, LwStatus::Ok);
    assert_eq!(la, lb);
    assert_eq!(
        unsafe { lw_segmentation_labels(a, la.as_mut_ptr(), la.len() - 1) },
        LwStatus::BufferTooSmall
    );

    let mut count = 0;
    assert_eq!(unsafe { lw_segmentation_line_count(a, &mut count) }, LwStatus::Ok);
    assert_eq!(count, la.iter().copied().max().unwrap());
    let mut fallback = true;
    assert_eq!(unsafe { lw_segmentation_fallback(a, &mut fallback) }, LwStatus::Ok);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { lw_segmentation_to_json(a, &mut json) }, LwStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["lines"].as_array().unwrap().len() as u32, count);

    let (mut liu, mut piu) = (0.0, 0.0);
    assert_eq!(
        unsafe { lw_evaluate(la.as_ptr(), la.as_ptr(), h, w, 0.75, &mut liu, &mut piu) },
        LwStatus::Ok
    );
    assert_eq!((liu, piu), (1.0, 1.0));

    unsafe {
        lw_string_free(json);
        lw_segmentation_free(a);
        lw_segmentation_free(b);
        lw_model_free(m);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let f = fixture();
    let mut m = ptr::null_mut();
    let missing = CString::new("/nonexistent/m.lwck").unwrap();
    assert_eq!(unsafe { lw_model_load(missing.as_ptr(), ptr::null(), &mut m) }, LwStatus::Io);
    assert!(m.is_null());
    assert!(last_error().contains("nonexistent"));

    // default config asks for 350px patches
    assert_eq!(unsafe { lw_model_load(f.ckpt.as_ptr(), ptr::null(), &mut m) }, LwStatus::Config);
    assert_eq!(unsafe { lw_model_load(ptr::null(), ptr::null(), &mut m) }, LwStatus::NullArgument);
    assert_eq!(unsafe { lw_model_load(f.ckpt.as_ptr(), ptr::null(), ptr::null_mut()) }, LwStatus::NullArgument);

    let m = load(&f);
    let mut seg = ptr::null_mut();
    let bad = CString::new("/nonexistent/p.png").unwrap();
    assert_eq!(unsafe { lw_segment_file(m, bad.as_ptr(), &mut seg) }, LwStatus::Io);
    assert!(seg.is_null());
    // fewer than 3 grid cells leave nothing to project
    let px = [0.5f32; 4];
    assert_eq!(unsafe { lw_segment_gray(m, px.as_ptr(), 2, 2, &mut seg) }, LwStatus::InvalidArgument);
    assert!(last_error().contains("3 grid cells"));
    assert_eq!(unsafe { lw_segment_gray(m, ptr::null(), 2, 2, &mut seg) }, LwStatus::NullArgument);
    let mut n = 0;
    assert_eq!(unsafe { lw_segmentation_line_count(ptr::null(), &mut n) }, LwStatus::NullArgument);
    let (mut liu, mut piu) = (0.0, 0.0);
    let a = [1u32, 0];
    assert_eq!(
        unsafe { lw_evaluate(a.as_ptr(), ptr::null(), 1, 2, 0.75, &mut liu, &mut piu) },
        LwStatus::NullArgument
    );
    unsafe {
        lw_model_free(m);
        lw_model_free(ptr::null_mut());
        lw_segmentation_free(ptr::null_mut());
        lw_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lineweave.h")).unwrap();
    for name in [
        "LwStatus",
        "LW_STATUS_OK",
        "typedef struct LwModel LwModel",
        "typedef struct LwSegmentation LwSegmentation",
        "lw_model_load",
        "lw_segment_gray",
        "lw_segmentation_labels",
        "lw_evaluate",
        "lw_last_error",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/lineweave.h");
    let status = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
