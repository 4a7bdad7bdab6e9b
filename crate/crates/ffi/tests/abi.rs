use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use spray_ffi::*;

fn last_error() -> String {
    let p = spray_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

/// Two groups of 2 × 2 maps: mass in the top-left or bottom-right pixel,
/// with small per-sample perturbations.
fn two_groups(per: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for g in 0..2 {
        for i in 0..per {
            let e = 0.01 * (i as f64 + 1.0);
            if g == 0 {
                v.extend([1.0, e, 0.5 * e, 0.0]);
            } else {
                v.extend([0.0, 0.5 * e, e, 1.0]);
            }
        }
    }
    v
}

fn compute(maps: &[f64], n: usize, metric: SprayMetric) -> *mut SprayDistanceMatrix {
    let mut dm = ptr::null_mut();
    let st = unsafe { spray_distance_matrix_compute(maps.as_ptr(), n, 2, 2, metric, &mut dm) };
    assert_eq!(st, SprayStatus::Ok);
    dm
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(spray_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn euclidean_entries_match_direct_sums() {
    let maps = two_groups(3);
    let dm = compute(&maps, 6, SprayMetric::Euclidean);
    assert_eq!(unsafe { spray_distance_matrix_n(dm) }, 6);
    for i in 0..6 {
        for j in 0..6 {
            let mut d = f64::NAN;
            assert_eq!(unsafe { spray_distance_matrix_get(dm, i, j, &mut d) }, SprayStatus::Ok);
            let direct: f64 = (0..4).map(|p| (maps[i * 4 + p] - maps[j * 4 + p]).powi(2)).sum::<f64>().sqrt();
            assert!((d - direct).abs() < 1e-12, "({i},{j}) {d} vs {direct}");
        }
    }
    let mut d = 0.0;
    assert_eq!(unsafe { spray_distance_matrix_get(dm, 6, 0, &mut d) }, SprayStatus::InvalidArgument);
    assert!(last_error().contains("outside"));
    unsafe { spray_distance_matrix_free(dm) };
}

#[test]
fn null_arguments_are_reported() {
    let mut dm = ptr::null_mut();
    let st = unsafe { spray_distance_matrix_compute(ptr::null(), 1, 2, 2, SprayMetric::Euclidean, &mut dm) };
    assert_eq!(st, SprayStatus::NullPointer);
    assert!(last_error().contains("maps"));
    assert!(dm.is_null());
    assert_eq!(unsafe { spray_distance_matrix_n(ptr::null()) }, 0);
    assert_eq!(unsafe { spray_embedding_q(ptr::null()) }, 0);
    unsafe { spray_distance_matrix_free(ptr::null_mut()) };
    unsafe { spray_embedding_free(ptr::null_mut()) };
    let mut k = 0usize;
    assert_eq!(unsafe { spray_eigengap_estimate(ptr::null(), 3, 2, &mut k) }, SprayStatus::NullPointer);
}

#[test]
fn embedding_separates_groups() {
    let maps = two_groups(8);
    let dm = compute(&maps, 16, SprayMetric::Wasserstein);
    let mut emb = ptr::null_mut();
    assert_eq!(unsafe { spray_embedding_compute(dm, 3, 6, 0, &mut emb) }, SprayStatus::Ok);
    assert_eq!(unsafe { spray_embedding_n(emb) }, 16);
    assert_eq!(unsafe { spray_embedding_q(emb) }, 6);
    let mut eig = [0.0; 6];
    assert_eq!(unsafe { spray_embedding_eigenvalues(emb, eig.as_mut_ptr(), 6) }, SprayStatus::Ok);
    assert!(eig[0].abs() < 1e-9 && eig[1].abs() < 1e-9, "{eig:?}");
    assert!(eig[2] > 1e-3);
    let mut k = 0usize;
    assert_eq!(unsafe { spray_eigengap_estimate(eig.as_ptr(), 6, 4, &mut k) }, SprayStatus::Ok);
    let mut best = 1;
    for i in 2..=4 {
        if eig[i] - eig[i - 1] > eig[best] - eig[best - 1] {
            best = i;
        }
    }
    assert_eq!(k, best);

    let mut short = [0.0; 3];
    assert_eq!(unsafe { spray_embedding_row(emb, 0, short.as_mut_ptr(), 3) }, SprayStatus::InvalidArgument);
    let mut row = [0.0; 6];
    assert_eq!(unsafe { spray_embedding_row(emb, 15, row.as_mut_ptr(), 6) }, SprayStatus::Ok);
    assert_eq!(unsafe { spray_embedding_row(emb, 16, row.as_mut_ptr(), 6) }, SprayStatus::InvalidArgument);

    let mut tau = f64::NAN;
    assert_eq!(unsafe { spray_tau_score(emb, 2, 4, 0, &mut tau) }, SprayStatus::Ok);
    assert!(tau.is_finite() && tau > 0.0);
    unsafe { spray_embedding_free(emb) };
    unsafe { spray_distance_matrix_free(dm) };
}

#[test]
fn knn_too_large_is_an_invalid_argument() {
    let maps = two_groups(2);
    let dm = compute(&maps, 4, SprayMetric::Euclidean);
    let mut emb = ptr::null_mut();
    assert_eq!(unsafe { spray_embedding_compute(dm, 4, 2, 0, &mut emb) }, SprayStatus::InvalidArgument);
    assert!(last_error().contains("knn_k"));
    assert!(emb.is_null());
    unsafe { spray_distance_matrix_free(dm) };
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("spray.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["spray_distance_matrix_compute", "spray_embedding_free", "spray_tau_score", "spray_last_error_message"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(status.success());
}
