mod common;

use std::fs;

use common::*;
use entroseg_core::image::RasterImage;
use entroseg_core::synth::{half_flat_checkerboard, text_scene, uniform_noise, SceneParams};
use serde_json::Value;

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn blank(size: usize) -> RasterImage {
    RasterImage::filled(size, size, 3, 0.8).unwrap()
}

#[test]
fn entropy_of_constant_and_noise_images() {
    let dir = tmp();
    let flat = write_image(dir.path(), "flat.png", &blank(64));
    let doc = stdout_json(&run(&["entropy", flat.to_str().unwrap()]));
    assert_eq!(doc["entropy"], 0.0);
    assert_eq!(doc["class"], "ProductLike");
    assert_eq!(doc["threshold"], 6.5);

    // Single-channel: averaging independent RGB noise into gray would not
    // leave a flat histogram.
    let noise = write_image(dir.path(), "noise.png", &uniform_noise(256, 256, 1, 7));
    let doc = stdout_json(&run(&["entropy", noise.to_str().unwrap()]));
    assert!(doc["entropy"].as_f64().unwrap() >= 7.9, "{doc}");
    assert_eq!(doc["class"], "SceneLike");
}

#[test]
fn corrupt_image_is_an_input_error() {
    let dir = tmp();
    let path = dir.path().join("broken.png");
    fs::write(&path, b"\x89PNG\r\n\x1a\nnot really").unwrap();
    for cmd in ["entropy", "segment", "detect"] {
        let out = run(&[cmd, path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read image"), "{cmd}");
    }
    let missing = run(&["entropy", dir.path().join("nope.png").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn invalid_configuration_is_an_input_error() {
    let dir = tmp();
    let img = write_image(dir.path(), "a.png", &blank(32));
    let img = img.to_str().unwrap();
    assert_eq!(run(&["entropy", img, "--p-th", "0.5", "--p-tl", "0.9"]).status.code(), Some(1));
    assert_eq!(run(&["entropy", img, "--detector", "nonsense"]).status.code(), Some(1));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = run(&["entropy", img, "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn config_file_values_reach_the_pipeline() {
    let dir = tmp();
    let img = write_image(dir.path(), "a.png", &blank(32));
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "entropy_threshold = 7.25\n").unwrap();
    let doc = stdout_json(&run(&["entropy", img.to_str().unwrap(), "--config", cfg.to_str().unwrap()]));
    assert_eq!(doc["threshold"], 7.25);
    let doc = stdout_json(&run(&[
        "entropy",
        img.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--entropy-threshold",
        "5",
    ]));
    assert_eq!(doc["threshold"], 5.0);
}

/// Share of each half's cells carrying that half's majority label, with
/// the two majorities required to differ.
fn half_agreement(doc: &Value) -> (f64, f64) {
    let cols = doc["grid"]["cols"].as_u64().unwrap() as usize;
    let labels: Vec<u64> = doc["labels"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    let side = |left: bool| -> Vec<u64> {
        labels
            .iter()
            .enumerate()
            .filter(|(i, _)| (i % cols < cols / 2) == left)
            .map(|(_, &l)| l)
            .collect()
    };
    let majority = |cells: &[u64]| {
        let mut best = (0, 0);
        for &l in cells {
            let n = cells.iter().filter(|&&m| m == l).count();
            if n > best.1 {
                best = (l, n);
            }
        }
        best
    };
    let (left, right) = (side(true), side(false));
    let (ll, ln) = majority(&left);
    let (rl, rn) = majority(&right);
    assert_ne!(ll, rl, "both halves share one label");
    (ln as f64 / left.len() as f64, rn as f64 / right.len() as f64)
}

#[test]
fn segment_recovers_flat_and_textured_halves_deterministically() {
    let dir = tmp();
    let img = write_image(dir.path(), "halves.png", &half_flat_checkerboard(128, 8));
    let out_dir = dir.path().join("out");
    let args = ["segment", img.to_str().unwrap(), "--k", "2", "--out", out_dir.to_str().unwrap()];
    let first = run(&args);
    let doc = stdout_json(&first);
    let (left, right) = half_agreement(&doc);
    assert!(left >= 0.95 && right >= 0.95, "agreement {left} / {right}");

    // The two largest segments are the halves.
    let mut sizes: Vec<u64> = doc["segments"].as_array().unwrap().iter().map(|s| s["cell_count"].as_u64().unwrap()).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let cells = doc["labels"].as_array().unwrap().len() as f64;
    assert!(sizes.iter().take(2).sum::<u64>() as f64 >= 0.95 * cells, "{sizes:?}");

    let json = fs::read(out_dir.join("halves.segments.json")).unwrap();
    assert_eq!(json, first.stdout);
    let labels_png = fs::read(out_dir.join("halves.labels.png")).unwrap();
    let map = image::load_from_memory(&labels_png).unwrap().to_rgb8();
    assert_eq!(map.dimensions(), (128, 128));
    assert_ne!(map.get_pixel(10, 64), map.get_pixel(118, 64));

    let second = run(&args);
    assert_eq!(first.stdout, second.stdout, "segment JSON differs between runs");
    assert_eq!(fs::read(out_dir.join("halves.labels.png")).unwrap(), labels_png);
}

#[test]
fn one_class_gives_one_whole_image_segment() {
    let dir = tmp();
    let scene = text_scene(&SceneParams { width: 96, height: 80, ..Default::default() }, 1);
    let img = write_image(dir.path(), "s.png", &scene.image);
    let doc = stdout_json(&run(&["segment", img.to_str().unwrap(), "--k", "1"]));
    let segments = doc["segments"].as_array().unwrap();
    assert_eq!(segments.len(), 1, "{doc}");
    assert_eq!(segments[0]["bbox"], serde_json::json!([0, 0, 96, 80]));
    assert!(doc["labels"].as_array().unwrap().iter().all(|l| l == 0));
}

#[test]
fn detect_finds_rendered_text_and_draws_the_overlay() {
    let dir = tmp();
    let scene = text_scene(&SceneParams::default(), 3);
    let img = write_image(dir.path(), "scene.png", &scene.image);
    let gt = dir.path().join("gt_scene.txt");
    let lines: Vec<String> = scene.truth.iter().map(|t| format!("{},{},{},{},\"w\"", t.x1, t.y1, t.x2, t.y2)).collect();
    fs::write(&gt, lines.join("\n")).unwrap();
    let out_dir = dir.path().join("out");
    let doc = stdout_json(&run(&[
        "detect",
        img.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let boxes = doc["detections"].as_array().unwrap();
    assert!(!boxes.is_empty());
    assert!(boxes.iter().all(|b| b["model_id"] == "reference"));
    assert!(doc["metrics"]["tp"].as_u64().unwrap() >= 1, "{}", doc["metrics"]);

    // Truth is drawn over predictions, and here they mostly coincide.
    let overlay = image::open(out_dir.join("scene.overlay.png")).unwrap().to_rgb8();
    assert!(overlay.pixels().any(|p| p.0 == [255, 0, 0]), "no ground-truth outlines");

    let plain_dir = dir.path().join("plain");
    stdout_json(&run(&["detect", img.to_str().unwrap(), "--out", plain_dir.to_str().unwrap()]));
    let plain = image::open(plain_dir.join("scene.overlay.png")).unwrap().to_rgb8();
    let original = image::open(&img).unwrap().to_rgb8();
    let changed: Vec<[u8; 3]> = plain.pixels().zip(original.pixels()).filter(|(a, b)| a != b).map(|(a, _)| a.0).collect();
    assert!(!changed.is_empty());
    assert!(changed.iter().all(|&c| c == [0, 0, 255]), "only blue outlines without truth");
    assert!(out_dir.join("scene.detections.json").is_file());
}

#[test]
fn blank_image_with_full_image_crop_has_no_detections() {
    let dir = tmp();
    let img = write_image(dir.path(), "blank.png", &blank(128));
    let doc = stdout_json(&run(&["detect", img.to_str().unwrap(), "--include-full-image"]));
    assert_eq!(doc["detections"], serde_json::json!([]));
    let crops = doc["crops"].as_array().unwrap();
    assert!(crops.iter().any(|c| c["bbox"] == serde_json::json!([0, 0, 128, 128])));
}

#[test]
fn scripted_external_detectors_fuse_as_traced_by_hand() {
    // One class on a blank image gives one crop: the whole image, so crop
    // and image coordinates coincide.
    //
    // best (0.9):  A p=.95 kept, boosted to 1;  B p=.85 < P_th, dropped
    // other (0.6): A' p=.99 kept, then suppressed by A (IoU 1 > .95);
    //              D p=.82 kept;  E p=.70 < P_tl, dropped
    let best = mock("best", vec![wire(10.0, 10.0, 30.0, 20.0, 0.95), wire(40.0, 40.0, 60.0, 50.0, 0.85)]);
    let other = mock(
        "other",
        vec![
            wire(10.0, 10.0, 30.0, 20.0, 0.99),
            wire(5.0, 40.0, 25.0, 55.0, 0.82),
            wire(40.0, 5.0, 60.0, 15.0, 0.70),
        ],
    );
    let dir = tmp();
    let img = write_image(dir.path(), "blank.png", &blank(64));
    let doc = stdout_json(&run(&[
        "detect",
        img.to_str().unwrap(),
        "--k",
        "1",
        "--detector",
        &format!("best={}@0.9", best.endpoint()),
        "--detector",
        &format!("other={}@0.6", other.endpoint()),
    ]));
    let got: Vec<(f64, f64, f64, f64, f64, String)> = doc["detections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| {
            let f = |k: &str| b[k].as_f64().unwrap();
            (f("x1"), f("y1"), f("x2"), f("y2"), f("prob"), b["model_id"].as_str().unwrap().to_string())
        })
        .collect();
    assert_eq!(got.len(), 2, "{got:?}");
    assert_eq!(got[0], (10.0, 10.0, 30.0, 20.0, 1.0, "best".to_string()));
    let d = &got[1];
    assert_eq!((d.0, d.1, d.2, d.3, d.5.as_str()), (5.0, 40.0, 25.0, 55.0, "other"));
    assert!((d.4 - 0.82).abs() < 1e-6);
    assert_eq!(doc["diagnostics"]["raw_boxes"], 5);
}

#[test]
fn unreachable_detector_is_skipped_unless_it_is_the_only_one() {
    let dir = tmp();
    let img = write_image(dir.path(), "blank.png", &blank(64));
    // Bind and drop a listener to get a port nothing is serving.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dead = format!("dead=127.0.0.1:{port}");

    let out = run(&["detect", img.to_str().unwrap(), "--detector", "builtin", "--detector", &dead]);
    let doc = stdout_json(&out);
    assert!(!doc["diagnostics"]["failures"].as_array().unwrap().is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dead"));

    let out = run(&["detect", img.to_str().unwrap(), "--detector", &dead]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("every detector failed"));
}

#[test]
fn perfect_detector_scores_one() {
    let dir = tmp();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    write_image(&data, "only.png", &blank(64));
    fs::write(data.join("gt_only.txt"), "10,10,30,20,\"word\"\n").unwrap();
    let perfect = mock("perfect", vec![wire(10.0, 10.0, 30.0, 20.0, 1.0)]);
    let doc = stdout_json(&run(&[
        "evaluate",
        data.to_str().unwrap(),
        "--k",
        "1",
        "--detector",
        &format!("perfect={}@0.9", perfect.endpoint()),
    ]));
    for key in ["precision", "recall", "f_measure"] {
        assert_eq!(doc["aggregate"][key], 1.0, "{key}");
    }
    assert_eq!(doc["protocol"], "one-to-one");
}

#[test]
fn evaluate_rejects_empty_dirs_and_missing_truth() {
    let dir = tmp();
    let out = run(&["evaluate", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no images"));

    write_image(dir.path(), "lonely.png", &blank(32));
    let out = run(&["evaluate", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gt_lonely.txt"));
}

#[test]
fn aggregate_matches_the_per_image_reports() {
    let dir = tmp();
    let data = dir.path().join("data");
    fs::create_dir_all(data.join("gt")).unwrap();
    for seed in 0..10 {
        let scene = text_scene(&SceneParams::default(), 100 + seed);
        write_image(&data, &format!("img_{seed}.png"), &scene.image);
        let lines: Vec<String> = scene.truth.iter().map(|t| format!("{},{},{},{},\"w\"", t.x1, t.y1, t.x2, t.y2)).collect();
        fs::write(data.join("gt").join(format!("gt_img_{seed}.txt")), lines.join("\n")).unwrap();
    }
    let out_dir = dir.path().join("out");
    let report = stdout_json(&run(&[
        "evaluate",
        data.to_str().unwrap(),
        "--workers",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(report, serde_json::from_slice::<Value>(&fs::read(out_dir.join("evaluation.json")).unwrap()).unwrap());

    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let per_image = report["per_image"].as_array().unwrap();
    assert_eq!(per_image.len(), 10);
    for (seed, row) in per_image.iter().enumerate() {
        assert_eq!(row["image"], format!("img_{seed}.png"));
        let doc: Value = serde_json::from_slice(&fs::read(out_dir.join(format!("img_{seed}.detections.json"))).unwrap()).unwrap();
        assert_eq!(doc["metrics"], row["metrics"]);
        assert_eq!(doc["detections"].as_array().unwrap().len() as u64, row["detections"].as_u64().unwrap());
        tp += doc["metrics"]["tp"].as_u64().unwrap();
        fp += doc["metrics"]["fp"].as_u64().unwrap();
        fn_ += doc["metrics"]["fn"].as_u64().unwrap();
    }
    let agg = &report["aggregate"];
    assert_eq!((agg["tp"].as_u64(), agg["fp"].as_u64(), agg["fn"].as_u64()), (Some(tp), Some(fp), Some(fn_)));
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    assert!((agg["precision"].as_f64().unwrap() - p).abs() < 1e-12);
    assert!((agg["recall"].as_f64().unwrap() - r).abs() < 1e-12);
    assert!((agg["f_measure"].as_f64().unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-12);
    let table = fs::read_to_string(out_dir.join("evaluation.txt")).unwrap();
    assert!(table.contains("img_9.png") && table.contains("micro"));
}

#[test]
fn log_level_comes_from_the_environment() {
    let dir = tmp();
    let img = write_image(dir.path(), "a.png", &blank(64));
    let quiet = run(&["segment", img.to_str().unwrap()]);
    assert!(quiet.status.success());
    assert!(quiet.stderr.is_empty(), "{}", String::from_utf8_lossy(&quiet.stderr));
    let loud = entroseg().env("ENTROSEG_LOG", "info").args(["segment", img.to_str().unwrap()]).output().unwrap();
    assert!(String::from_utf8_lossy(&loud.stderr).contains("segments"));
}
