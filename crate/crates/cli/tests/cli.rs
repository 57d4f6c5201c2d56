use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Mutex, OnceLock};

use serde_json::{json, Value};
use tempfile::TempDir;

fn geomat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geomat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn check(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A two-class dataset small enough to train in seconds.
fn small_spec(seed: u64) -> Value {
    let out = geomat(&["synth", "--print-spec"]);
    check(&out);
    let mut spec: Value = serde_json::from_slice(&out.stdout).unwrap();
    spec["seed"] = json!(seed);
    spec["image_size"] = json!(240);
    spec["region_half_size"] = json!(110.0);
    spec["views"] = json!([
        { "incidence_deg": 0.0, "azimuth_deg": 0.0 },
        { "incidence_deg": 20.0, "azimuth_deg": 90.0 }
    ]);
    let classes = spec["classes"].as_array_mut().unwrap();
    classes.truncate(2);
    for c in classes.iter_mut() {
        c["surfaces"] = json!(3);
    }
    spec["scene"] = json!({ "width": 480, "height": 240, "bands": [0, 1], "superpixels": 30, "point_spacing": 4.0 });
    spec
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    let config = json!({
        "scales": [100],
        "train_per_category": 6,
        "test_per_category": 6,
        "texton_samples": 2000,
        "pca_dim": 10,
        "pca_samples": 3000,
        "gmm_modes": 4,
        "gmm_samples": 3000,
        "gmm_iterations": 10
    });
    fs::write(&path, config.to_string()).unwrap();
    path
}

struct Fixture {
    _tmp: TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_path_buf();
        let spec = root.join("spec.json");
        fs::write(&spec, small_spec(3).to_string()).unwrap();
        let data = root.join("data");
        check(&geomat(&["synth", "--spec", s(&spec), "--out", s(&data)]));
        let config = small_config(&root);
        Fixture { _tmp: tmp, root, data, config }
    })
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn train(out: &Path, features: &str, manifest: &Path) -> Output {
    let f = fixture();
    geomat(&["train", "--manifest", s(manifest), "--config", s(&f.config), "--features", features, "--out", s(out)])
}

fn trained(features: &str) -> PathBuf {
    static LOCK: Mutex<()> = Mutex::new(());
    let _guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let f = fixture();
    let out = f.root.join(format!("model_{}", features.replace(',', "_")));
    if !out.join("model.json").exists() {
        check(&train(&out, features, &f.data.join("manifest.json")));
    }
    out
}

#[test]
fn synth_refuses_non_empty_output_without_force() {
    let f = fixture();
    let spec = f.root.join("spec.json");
    let out = geomat(&["synth", "--spec", s(&spec), "--out", s(&f.data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
}

#[test]
fn synth_seed_changes_content_but_not_layout() {
    let f = fixture();
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(&spec, small_spec(4).to_string()).unwrap();
    let other = tmp.path().join("data");
    check(&geomat(&["synth", "--spec", s(&spec), "--out", s(&other)]));
    let a = files(&f.data);
    let b = files(&other);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    assert_ne!(a["surfaces/s000/v00.png"], b["surfaces/s000/v00.png"]);
}

#[test]
fn invalid_spec_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let mut spec = small_spec(1);
    spec["classes"] = json!([]);
    let path = tmp.path().join("spec.json");
    fs::write(&path, spec.to_string()).unwrap();
    let out = geomat(&["synth", "--spec", s(&path), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(&path, "{ not json").unwrap();
    let out = geomat(&["synth", "--spec", s(&path), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_manifest_is_a_data_error() {
    let f = fixture();
    let out = train(&f.root.join("nowhere"), "mr8", &f.root.join("absent.json"));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn texture_model_writes_only_what_it_needs_and_is_reproducible() {
    let f = fixture();
    let model = trained("mr8");
    let names: Vec<String> = files(&model).into_keys().collect();
    assert_eq!(names, ["dict_mr8.bin", "model.json", "svm.bin"]);
    let again = f.root.join("model_mr8_again");
    check(&train(&again, "mr8", &f.data.join("manifest.json")));
    assert_eq!(files(&model), files(&again));
}

#[test]
fn geometry_fisher_model_writes_its_encoders() {
    let model = trained("fv_n,n3d");
    let names: Vec<String> = files(&model).into_keys().collect();
    assert_eq!(names, ["dict_n3d.bin", "gmm_fvn.bin", "model.json", "pca.bin", "svm.bin"]);
    let header: Value = serde_json::from_slice(&fs::read(model.join("model.json")).unwrap()).unwrap();
    assert_eq!(header["categories"].as_array().unwrap().len(), 2);
}

#[test]
fn eval_writes_tables_and_checks_features() {
    let f = fixture();
    let model = trained("mr8");
    let manifest = f.data.join("manifest.json");
    let out = f.root.join("eval_mr8");
    check(&geomat(&["eval", "--manifest", s(&manifest), "--model", s(&model), "--out", s(&out), "--features", "mr8"]));
    for name in ["confusion.csv", "confusion.png", "per_class.csv", "by_scale.csv", "by_angle.csv", "summary.csv", "predictions.csv", "report.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let confusion = fs::read_to_string(out.join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 3);
    let wrong = f.root.join("eval_wrong");
    let res = geomat(&["eval", "--manifest", s(&manifest), "--model", s(&model), "--out", s(&wrong), "--features", "mr8,hsv"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn geometry_features_without_normals_fail_cleanly() {
    let f = fixture();
    let mut manifest: Value = serde_json::from_slice(&fs::read(f.data.join("manifest.json")).unwrap()).unwrap();
    let absolute = |v: &mut Value| *v = json!(s(&f.data.join(v.as_str().unwrap())));
    for surface in manifest["surfaces"].as_array_mut().unwrap() {
        for view in surface["images"].as_array_mut().unwrap() {
            view.as_object_mut().unwrap().remove("normals");
            absolute(&mut view["image"]);
            absolute(&mut view["camera"]);
        }
    }
    let dir = f.root.join("no_normals");
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join("manifest.json");
    fs::write(&path, manifest.to_string()).unwrap();
    let out = train(&f.root.join("model_no_normals"), "mr8,n3d", &path);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("surface"));
}

#[test]
fn scene_eval_writes_label_maps_at_image_size() {
    let f = fixture();
    let model = trained("mr8");
    let out = f.root.join("scene_mr8");
    let manifest = f.data.join("manifest.json");
    check(&geomat(&["scene-eval", "--manifest", s(&manifest), "--model", s(&model), "--out", s(&out)]));
    let header: Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    let scene = &header["scenes"][0];
    let name = scene["name"].as_str().unwrap();
    let image = image::open(f.data.join(scene["images"][0]["image"].as_str().unwrap())).unwrap();
    let labels = image::open(out.join(format!("{name}_00_labels.png"))).unwrap();
    assert_eq!((labels.width(), labels.height()), (image.width(), image.height()));
    let accuracy = fs::read_to_string(out.join("scene_accuracy.csv")).unwrap();
    assert!(accuracy.lines().last().unwrap().starts_with("all,"));

    let direct = f.root.join("scene_mr8_direct");
    let cloud = f.data.join(scene["cloud"].as_str().unwrap());
    let img = f.data.join(scene["images"][0]["image"].as_str().unwrap());
    let cam = f.data.join(scene["images"][0]["camera"].as_str().unwrap());
    check(&geomat(&[
        "scene-eval", "--model", s(&model), "--cloud", s(&cloud), "--image", s(&img), "--camera", s(&cam),
        "--superpixels", &scene["superpixels"].to_string(), "--out", s(&direct),
    ]));
    let stem = cloud.file_stem().unwrap().to_str().unwrap();
    assert_eq!(
        fs::read(out.join(format!("{name}_00_labels.png"))).unwrap(),
        fs::read(direct.join(format!("{stem}_00_labels.png"))).unwrap()
    );
}

#[test]
fn report_renders_a_difference_against_a_baseline() {
    let f = fixture();
    let manifest = f.data.join("manifest.json");
    let a = f.root.join("report_a");
    let b = f.root.join("report_b");
    check(&geomat(&["eval", "--manifest", s(&manifest), "--model", s(&trained("mr8")), "--out", s(&a)]));
    check(&geomat(&["eval", "--manifest", s(&manifest), "--model", s(&trained("fv_n,n3d")), "--out", s(&b)]));
    let out = f.root.join("report_diff");
    check(&geomat(&["report", "--input", s(&b), "--baseline", s(&a), "--out", s(&out)]));
    for name in ["confusion.csv", "confusion_difference.csv", "confusion_difference.png", "difference_summary.csv"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    assert_eq!(fs::read(b.join("confusion.csv")).unwrap(), fs::read(out.join("confusion.csv")).unwrap());
}
