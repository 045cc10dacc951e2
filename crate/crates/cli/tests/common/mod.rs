#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use entroseg_core::detection::protocol::{MockServer, WireBox};
use entroseg_core::image::RasterImage;
use jsonschema::JSONSchema;
use serde_json::Value;

pub fn entroseg() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_entroseg"));
    cmd.env_remove("ENTROSEG_LOG");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    entroseg().args(args).output().expect("spawn entroseg")
}

pub fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn save_png(img: &RasterImage, path: &Path) {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = img.to_u8();
    match img.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes).unwrap().save(path).unwrap(),
        _ => image::RgbImage::from_raw(w, h, bytes).unwrap().save(path).unwrap(),
    }
}

pub fn write_image(dir: &Path, name: &str, img: &RasterImage) -> PathBuf {
    let path = dir.join(name);
    save_png(img, &path);
    path
}

pub fn wire(x1: f64, y1: f64, x2: f64, y2: f64, prob: f64) -> WireBox {
    WireBox { x1, y1, x2, y2, prob }
}

/// A mock detector answering `seg-0` with `boxes`.
pub fn mock(model_id: &str, boxes: Vec<WireBox>) -> MockServer {
    MockServer::spawn(model_id, BTreeMap::from([("seg-0".to_string(), boxes)])).expect("mock server")
}

pub fn schema(name: &str) -> JSONSchema {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    JSONSchema::compile(&serde_json::from_str(&text).unwrap()).expect("schema compiles")
}

pub fn assert_valid(schema_name: &str, doc: &Value) {
    let schema = schema(schema_name);
    let msgs: Vec<String> = match schema.validate(doc) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    panic!("{schema_name}: {}", msgs.join("; "));
}
