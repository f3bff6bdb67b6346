//! Read-only static file server for bundle directories.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tiny_http::{Header, Method, Request, Response, Server, StatusCode};

use crate::error::{Error, Result};

pub fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("json") => "application/json",
        Some("bin") => "application/octet-stream",
        Some("html" | "htm") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("png") => "image/png",
        Some("pfm") => "image/x-portable-floatmap",
        Some("txt") => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// A parsed single-range `Range` header, resolved against the file length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteRange {
    Full,
    Partial { start: u64, end: u64 },
    Unsatisfiable,
}

pub fn parse_range(header: Option<&str>, len: u64) -> ByteRange {
    let Some(spec) = header.and_then(|h| h.trim().strip_prefix("bytes=")) else {
        return ByteRange::Full;
    };
    // multi-range requests are answered with the whole body
    if spec.contains(',') {
        return ByteRange::Full;
    }
    let Some((a, b)) = spec.split_once('-') else {
        return ByteRange::Unsatisfiable;
    };
    let (a, b) = (a.trim(), b.trim());
    let parsed = match (a.is_empty(), b.is_empty()) {
        (false, _) => a.parse::<u64>().ok().and_then(|s| {
            let e = if b.is_empty() { len.checked_sub(1)? } else { b.parse::<u64>().ok()?.min(len.checked_sub(1)?) };
            (s <= e).then_some((s, e))
        }),
        (true, false) => b.parse::<u64>().ok().filter(|n| *n > 0 && len > 0).map(|n| (len.saturating_sub(n), len - 1)),
        (true, true) => None,
    };
    match parsed {
        Some((start, end)) if start < len => ByteRange::Partial { start, end },
        _ => ByteRange::Unsatisfiable,
    }
}

fn percent_decode(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = std::str::from_utf8(bytes.get(i + 1..i + 3)?).ok()?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

/// Maps a request path onto a file under `root`. `Err(403)` for anything
/// that would leave the root, `Err(404)` when missing.
pub fn resolve(root: &Path, url: &str) -> std::result::Result<PathBuf, u16> {
    let path = url.split(['?', '#']).next().unwrap_or("");
    let decoded = percent_decode(path).ok_or(400u16)?;
    let rel = decoded.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let mut out = root.to_path_buf();
    for c in Path::new(rel).components() {
        match c {
            Component::Normal(p) => out.push(p),
            Component::CurDir => {}
            _ => return Err(403),
        }
    }
    let canonical = out.canonicalize().map_err(|_| 404u16)?;
    if !canonical.starts_with(root) {
        return Err(403);
    }
    if !canonical.is_file() {
        return Err(404);
    }
    Ok(canonical)
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("ASCII header")
}

fn respond_status(req: Request, code: u16) {
    let msg = format!("{code}\n");
    let _ = req.respond(
        Response::from_string(msg)
            .with_status_code(StatusCode(code))
            .with_header(header("Access-Control-Allow-Origin", "*")),
    );
}

fn handle(root: &Path, req: Request) {
    let method = req.method().clone();
    log::info!("{} {}", method, req.url());
    if !matches!(method, Method::Get | Method::Head) {
        respond_status(req, 405);
        return;
    }
    let path = match resolve(root, req.url()) {
        Ok(p) => p,
        Err(code) => {
            respond_status(req, code);
            return;
        }
    };
    let Ok(mut file) = File::open(&path) else {
        respond_status(req, 404);
        return;
    };
    let len = file.metadata().map(|m| m.len()).unwrap_or(0);
    let range_header = req
        .headers()
        .iter()
        .find(|h| h.field.equiv("Range"))
        .map(|h| h.value.as_str().to_string());
    let common = |r: Response<std::io::Cursor<Vec<u8>>>| {
        r.with_header(header("Content-Type", content_type(&path)))
            .with_header(header("Accept-Ranges", "bytes"))
            .with_header(header("Access-Control-Allow-Origin", "*"))
    };
    let (status, start, count) = match parse_range(range_header.as_deref(), len) {
        ByteRange::Full => (200, 0, len),
        ByteRange::Partial { start, end } => (206, start, end - start + 1),
        ByteRange::Unsatisfiable => {
            let r = Response::from_data(Vec::new())
                .with_status_code(StatusCode(416))
                .with_header(header("Content-Range", &format!("bytes */{len}")));
            let _ = req.respond(common(r));
            return;
        }
    };
    let mut body = vec![0u8; if method == Method::Head { 0 } else { count as usize }];
    if !body.is_empty() && (file.seek(SeekFrom::Start(start)).is_err() || file.read_exact(&mut body).is_err()) {
        respond_status(req, 500);
        return;
    }
    let mut resp = common(Response::from_data(body)).with_status_code(StatusCode(status));
    if status == 206 {
        resp = resp.with_header(header("Content-Range", &format!("bytes {start}-{}/{len}", start + count - 1)));
    }
    let _ = req.respond(resp);
}

/// A bound server. Dropping the [`StopHandle`]'s flag ends [`BundleServer::run`].
pub struct BundleServer {
    root: PathBuf,
    server: Server,
    stop: Arc<AtomicBool>,
}

#[derive(Clone)]
pub struct StopHandle(Arc<AtomicBool>);

impl StopHandle {
    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }
}

impl BundleServer {
    /// Binds `127.0.0.1:port` (`0` picks a free port).
    pub fn bind(root: impl AsRef<Path>, host: &str, port: u16) -> Result<Self> {
        let root = root
            .as_ref()
            .canonicalize()
            .map_err(|e| Error::input(format!("cannot serve {}: {e}", root.as_ref().display())))?;
        if !root.is_dir() {
            return Err(Error::input(format!("{} is not a directory", root.display())));
        }
        let server = Server::http((host, port))
            .map_err(|e| Error::input(format!("cannot listen on {host}:{port}: {e} (is the port in use?)")))?;
        Ok(BundleServer { root, server, stop: Arc::new(AtomicBool::new(false)) })
    }

    pub fn port(&self) -> u16 {
        self.server.server_addr().to_ip().map(|a| a.port()).unwrap_or(0)
    }

    pub fn stop_handle(&self) -> StopHandle {
        StopHandle(self.stop.clone())
    }

    /// Serves requests until stopped, one worker thread per core.
    pub fn run(self) {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2).clamp(2, 8);
        let server = Arc::new(self.server);
        let root = Arc::new(self.root);
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let (server, root, stop) = (server.clone(), root.clone(), self.stop.clone());
                std::thread::spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        match server.recv_timeout(Duration::from_millis(100)) {
                            Ok(Some(req)) => handle(&root, req),
                            Ok(None) => {}
                            Err(e) => {
                                log::error!("accept failed: {e}");
                                break;
                            }
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range(None, 10), ByteRange::Full);
        assert_eq!(parse_range(Some("bytes=0-3"), 10), ByteRange::Partial { start: 0, end: 3 });
        assert_eq!(parse_range(Some("bytes=4-"), 10), ByteRange::Partial { start: 4, end: 9 });
        assert_eq!(parse_range(Some("bytes=-2"), 10), ByteRange::Partial { start: 8, end: 9 });
        assert_eq!(parse_range(Some("bytes=5-100"), 10), ByteRange::Partial { start: 5, end: 9 });
        assert_eq!(parse_range(Some("bytes=10-"), 10), ByteRange::Unsatisfiable);
        assert_eq!(parse_range(Some("bytes=3-1"), 10), ByteRange::Unsatisfiable);
        assert_eq!(parse_range(Some("bytes=0-0"), 0), ByteRange::Unsatisfiable);
    }

    #[test]
    fn traversal_is_forbidden() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        let root = dir.path().canonicalize().unwrap();
        assert!(resolve(&root, "/manifest.json").is_ok());
        assert_eq!(resolve(&root, "/../etc/passwd"), Err(403));
        assert_eq!(resolve(&root, "/%2e%2e/%2e%2e/etc/passwd"), Err(403));
        assert_eq!(resolve(&root, "/missing.bin"), Err(404));
    }

    #[test]
    fn types() {
        assert_eq!(content_type(Path::new("a/manifest.json")), "application/json");
        assert_eq!(content_type(Path::new("transfer.bin")), "application/octet-stream");
    }
}
