//! Newline-delimited JSON protocol for out-of-process detectors.
//!
//! Each request is one JSON object on one line:
//!
//! ```text
//! {"request_id": "...", "image": "<base64 PNG>", "meta": {"segment_id": "seg-0", "width": 64, "height": 32}}
//! ```
//!
//! and the server answers with exactly one line:
//!
//! ```text
//! {"request_id": "...", "boxes": [{"x1": 1, "y1": 2, "x2": 3, "y2": 4, "prob": 0.9}], "model_id": "tb", "error": null}
//! ```
//!
//! Boxes are axis-aligned and local to the crop. A response carries either
//! boxes or an error, never both.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Cursor, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::boxes::DetBox;
use super::detector::Detector;
use crate::error::{Error, Result};
use crate::image::RasterImage;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestMeta {
    pub segment_id: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectRequest {
    pub request_id: String,
    pub image: String,
    pub meta: RequestMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub request_id: String,
    #[serde(default)]
    pub boxes: Vec<WireBox>,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub error: Option<String>,
}

pub fn segment_id(segment: usize) -> String {
    format!("seg-{segment}")
}

/// Encodes an image as base64 PNG, 8 bits per channel.
pub fn encode_png(img: &RasterImage) -> Result<String> {
    let color = if img.channels() == 3 {
        image::ColorType::Rgb8
    } else {
        image::ColorType::L8
    };
    let mut buf = Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut buf,
        &img.to_u8(),
        img.width() as u32,
        img.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Protocol(format!("png encoding failed: {e}")))?;
    Ok(STANDARD.encode(buf.into_inner()))
}

pub fn decode_png(data: &str) -> Result<RasterImage> {
    let bytes = STANDARD
        .decode(data.trim())
        .map_err(|e| Error::Protocol(format!("image is not valid base64: {e}")))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Protocol(format!("image is not a valid PNG: {e}")))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if decoded.color().has_color() {
        RasterImage::from_u8(w, h, 3, decoded.to_rgb8().as_raw())
    } else {
        RasterImage::from_u8(w, h, 1, decoded.to_luma8().as_raw())
    }
}

/// Checks a response against its request: echoed id, no error, and boxes
/// ordered, inside `[0, width] x [0, height]` with probabilities in `[0, 1]`.
pub fn validate_response(request: &DetectRequest, response: &DetectResponse) -> Result<()> {
    if response.request_id != request.request_id {
        return Err(Error::Protocol(format!(
            "response id {:?} does not echo request id {:?}",
            response.request_id, request.request_id
        )));
    }
    if let Some(err) = &response.error {
        if !response.boxes.is_empty() {
            return Err(Error::Protocol("response carries both boxes and an error".into()));
        }
        return Err(Error::Protocol(format!("detector reported: {err}")));
    }
    let (w, h) = (request.meta.width as f64, request.meta.height as f64);
    for b in &response.boxes {
        let inside = 0.0 <= b.x1 && b.x1 <= b.x2 && b.x2 <= w && 0.0 <= b.y1 && b.y1 <= b.y2 && b.y2 <= h;
        if !inside {
            return Err(Error::Protocol(format!("bounds violation: {b:?} outside {w}x{h}")));
        }
        if !(0.0..=1.0).contains(&b.prob) {
            return Err(Error::Protocol(format!("probability {} outside [0, 1]", b.prob)));
        }
    }
    Ok(())
}

fn resolve(endpoint: &str) -> Result<SocketAddr> {
    let hostport = endpoint.strip_prefix("tcp://").unwrap_or(endpoint);
    hostport
        .to_socket_addrs()
        .map_err(|e| Error::Protocol(format!("cannot resolve {endpoint:?}: {e}")))?
        .next()
        .ok_or_else(|| Error::Protocol(format!("{endpoint:?} resolves to no address")))
}

/// Sends one request over a fresh connection and returns the raw response.
pub fn exchange(endpoint: &str, request: &DetectRequest, timeout: Duration) -> Result<DetectResponse> {
    let addr = resolve(endpoint)?;
    let io = |e: std::io::Error| Error::Protocol(format!("{endpoint}: {e}"));
    let stream = TcpStream::connect_timeout(&addr, timeout).map_err(io)?;
    stream.set_read_timeout(Some(timeout)).map_err(io)?;
    stream.set_write_timeout(Some(timeout)).map_err(io)?;
    let mut line = serde_json::to_string(request)?;
    line.push('\n');
    (&stream).write_all(line.as_bytes()).map_err(io)?;
    let mut reply = String::new();
    BufReader::new(&stream).read_line(&mut reply).map_err(io)?;
    let _ = stream.shutdown(Shutdown::Both);
    if reply.trim().is_empty() {
        return Err(Error::Protocol(format!("{endpoint}: connection closed without a response")));
    }
    serde_json::from_str(&reply).map_err(|e| Error::Protocol(format!("malformed response: {e}")))
}

/// Sends `sample` to a server and validates the answer.
pub fn roundtrip_check(endpoint: &str, sample: &RasterImage, timeout: Duration) -> Result<DetectResponse> {
    let request = DetectRequest {
        request_id: "roundtrip-check".into(),
        image: encode_png(sample)?,
        meta: RequestMeta {
            segment_id: segment_id(0),
            width: sample.width(),
            height: sample.height(),
        },
    };
    let response = exchange(endpoint, &request, timeout)?;
    validate_response(&request, &response)?;
    Ok(response)
}

/// Ensemble member backed by a remote detector service.
#[derive(Debug)]
pub struct ExternalDetector {
    endpoint: String,
    timeout: Duration,
    counter: AtomicU64,
}

impl ExternalDetector {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: DEFAULT_TIMEOUT,
            counter: AtomicU64::new(0),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Detector for ExternalDetector {
    fn detect(&self, region: &RasterImage, segment: usize) -> Result<Vec<DetBox>> {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let request = DetectRequest {
            request_id: format!("{}-{n}", segment_id(segment)),
            image: encode_png(region)?,
            meta: RequestMeta {
                segment_id: segment_id(segment),
                width: region.width(),
                height: region.height(),
            },
        };
        let response = exchange(&self.endpoint, &request, self.timeout)?;
        validate_response(&request, &response)?;
        Ok(response
            .boxes
            .iter()
            .map(|b| DetBox::new(b.x1, b.y1, b.x2, b.y2, b.prob, response.model_id.clone()).in_segment())
            .collect())
    }
}

/// In-process scripted server speaking the protocol, answering each
/// `segment_id` with its scripted boxes (none if unscripted). Malformed
/// requests get an error response and the connection stays open.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn spawn(model_id: impl Into<String>, script: BTreeMap<String, Vec<WireBox>>) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let script = Arc::new(script);
        let model_id: Arc<str> = model_id.into().into();
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let (script, model_id) = (script.clone(), model_id.clone());
                thread::spawn(move || serve_connection(conn, &script, &model_id));
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("tcp://{}", self.addr)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Answer for one request line.
pub fn mock_response(line: &str, model_id: &str, script: &BTreeMap<String, Vec<WireBox>>) -> DetectResponse {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return error_response(String::new(), model_id, format!("malformed JSON: {e}")),
    };
    let request_id = value
        .get("request_id")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    let request: DetectRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return error_response(request_id, model_id, format!("malformed request: {e}")),
    };
    match decode_png(&request.image) {
        Ok(img) if img.width() == request.meta.width && img.height() == request.meta.height => DetectResponse {
            request_id,
            boxes: script.get(&request.meta.segment_id).cloned().unwrap_or_default(),
            model_id: model_id.to_string(),
            error: None,
        },
        Ok(img) => error_response(
            request_id,
            model_id,
            format!(
                "meta says {}x{} but image is {}x{}",
                request.meta.width,
                request.meta.height,
                img.width(),
                img.height()
            ),
        ),
        Err(e) => error_response(request_id, model_id, e.to_string()),
    }
}

fn error_response(request_id: String, model_id: &str, error: String) -> DetectResponse {
    DetectResponse {
        request_id,
        boxes: Vec::new(),
        model_id: model_id.to_string(),
        error: Some(error),
    }
}

fn serve_connection(conn: TcpStream, script: &BTreeMap<String, Vec<WireBox>>, model_id: &str) {
    let Ok(read_half) = conn.try_clone() else { return };
    let mut writer = conn;
    for line in BufReader::new(read_half).lines() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() {
            continue;
        }
        let response = mock_response(&line, model_id, script);
        let Ok(mut out) = serde_json::to_string(&response) else { return };
        out.push('\n');
        if writer.write_all(out.as_bytes()).is_err() {
            return;
        }
    }
}
