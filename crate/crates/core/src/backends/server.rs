//! Minimal HTTP server exposing any backend over the wire format, for
//! loopback testing and for serving mocks to a remote-configured pipeline.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use nalgebra::Point2;
use tiny_http::{Header, Response, Server};

use super::wire::{decode_png, encode_png, WireRequest, WireResponse};
use super::{
    BackendError, BackendKind, Enhancer, FeatureExtractor, Renderer, RoiDetector, Segmenter,
};
use crate::geometry::rle_encode;

#[derive(Clone)]
pub enum ServedBackend {
    Enhancer(Arc<dyn Enhancer>),
    RoiDetector(Arc<dyn RoiDetector>),
    Segmenter(Arc<dyn Segmenter>),
    FeatureExtractor(Arc<dyn FeatureExtractor>),
    Renderer(Arc<dyn Renderer>),
}

impl ServedBackend {
    pub fn kind(&self) -> BackendKind {
        match self {
            ServedBackend::Enhancer(_) => BackendKind::Enhancer,
            ServedBackend::RoiDetector(_) => BackendKind::RoiDetector,
            ServedBackend::Segmenter(_) => BackendKind::Segmenter,
            ServedBackend::FeatureExtractor(_) => BackendKind::FeatureExtractor,
            ServedBackend::Renderer(_) => BackendKind::Renderer,
        }
    }
}

/// Handler outcome: HTTP status plus body.
type Reply = (u16, WireResponse);

fn bad_request(message: impl Into<String>) -> Reply {
    (400, WireResponse::error(message))
}

fn status_for(err: &BackendError) -> u16 {
    match err {
        BackendError::Protocol { .. } => 400,
        BackendError::Contract { .. } => 422,
        BackendError::Unavailable { .. } => 503,
        BackendError::Failed { .. } | BackendError::Config { .. } => 500,
    }
}

fn handle(backend: &ServedBackend, body: &str) -> Reply {
    let req: WireRequest = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("bad request JSON: {e}")),
    };
    if req.kind != backend.kind() {
        return bad_request(format!(
            "this server hosts a {}, not a {}",
            backend.kind(),
            req.kind
        ));
    }
    match dispatch(backend, req) {
        Ok(Ok(resp)) => (200, resp),
        Ok(Err(e)) => (status_for(&e), WireResponse::error(e.to_string())),
        Err(reply) => reply,
    }
}

/// Outer error: the request itself was malformed.
fn dispatch(
    backend: &ServedBackend,
    req: WireRequest,
) -> Result<Result<WireResponse, BackendError>, Reply> {
    let image = || -> Result<image::RgbImage, Reply> {
        let data = req
            .image_png_b64
            .as_deref()
            .ok_or_else(|| bad_request("missing image_png_b64"))?;
        decode_png(data).map_err(bad_request)
    };
    Ok(match backend {
        ServedBackend::Enhancer(b) => b.enhance(&image()?).map(|out| WireResponse {
            image_png_b64: Some(encode_png(&out)),
            ..Default::default()
        }),
        ServedBackend::RoiDetector(b) => {
            let prompt = req
                .prompt
                .as_deref()
                .ok_or_else(|| bad_request("missing prompt"))?;
            b.detect(&image()?, prompt).map(|boxes| WireResponse {
                boxes: Some(boxes),
                ..Default::default()
            })
        }
        ServedBackend::Segmenter(b) => {
            let points: Vec<Point2<f64>> = req
                .points
                .as_ref()
                .ok_or_else(|| bad_request("missing points"))?
                .iter()
                .map(|p| Point2::new(p[0], p[1]))
                .collect();
            b.segment(&image()?, &points).map(|masks| WireResponse {
                point_indices: Some(masks.iter().map(|m| m.point_index).collect()),
                confidences: Some(masks.iter().map(|m| m.confidence).collect()),
                masks_rle: Some(masks.iter().map(|m| rle_encode(&m.mask)).collect()),
                ..Default::default()
            })
        }
        ServedBackend::FeatureExtractor(b) => {
            let img = image()?;
            let mask = match &req.mask_rle {
                Some(rle) => Some(
                    rle.decode()
                        .map_err(|e| bad_request(format!("bad mask: {e}")))?,
                ),
                None => None,
            };
            b.extract(&img, mask.as_ref()).map(|f| WireResponse {
                embedding: Some(f.global),
                patches: Some(f.patches),
                ..Default::default()
            })
        }
        ServedBackend::Renderer(b) => {
            let r = req
                .render
                .as_ref()
                .ok_or_else(|| bad_request("missing render"))?;
            b.render(
                &r.model(),
                &r.rotation(),
                r.distance_mm,
                &r.intrinsics,
                (r.canvas[0], r.canvas[1]),
            )
            .map(|view| WireResponse {
                image_png_b64: Some(encode_png(&view.image)),
                silhouette_bbox: Some(view.silhouette_bbox),
                ..Default::default()
            })
        }
    })
}

/// A running server; stops when dropped.
pub struct BackendServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl BackendServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves requests
    /// on `threads` worker threads.
    pub fn start(backend: ServedBackend, addr: &str, threads: usize) -> std::io::Result<Self> {
        let server = Server::http(addr)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..threads.max(1))
            .map(|_| {
                let (server, stop, backend) = (server.clone(), stop.clone(), backend.clone());
                thread::spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        let mut req = match server.recv_timeout(Duration::from_millis(50)) {
                            Ok(Some(r)) => r,
                            Ok(None) => continue,
                            Err(_) => break,
                        };
                        let mut body = String::new();
                        let (status, resp) = match req.as_reader().read_to_string(&mut body) {
                            Ok(_) => handle(&backend, &body),
                            Err(e) => bad_request(format!("unreadable body: {e}")),
                        };
                        let json = serde_json::to_string(&resp).unwrap_or_else(|_| "{}".into());
                        let header = Header::from_bytes("Content-Type", "application/json")
                            .expect("static header");
                        let _ = req.respond(
                            Response::from_string(json)
                                .with_status_code(status)
                                .with_header(header),
                        );
                    }
                })
            })
            .collect();
        Ok(Self {
            addr: local,
            stop,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for BackendServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}
