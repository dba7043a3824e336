//! Client for the external ViT feature server.
//!
//! Wire format, identical in both directions: a 4-byte little-endian `u32`
//! giving the length of a UTF-8 JSON header, the header itself, then
//! `payload_bytes` raw bytes. Requests carry a PNG image; feature responses
//! carry `rows · cols · dim` little-endian `f32` values, row-major.
//!
//! Transport is either TCP or the stdin/stdout of a spawned server process.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use super::{grid_extent, DescriptorError, DescriptorGrid, DescriptorProvider, ProviderConfig, PATCH_SIZE};

pub const PROTOCOL_VERSION: &str = "1";
pub const OP_HEALTH: &str = "health";
pub const OP_FEATURES: &str = "features";

pub const STATUS_OK: u32 = 0;
pub const STATUS_DECODE_FAILURE: u32 = 1;
pub const STATUS_UNSUPPORTED_RESOLUTION: u32 = 2;
pub const STATUS_MODEL_FAILURE: u32 = 3;
pub const STATUS_MALFORMED: u32 = 4;

const MAX_HEADER_BYTES: u32 = 1 << 20;
const MAX_PAYLOAD_BYTES: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub op: String,
    pub width: u32,
    pub height: u32,
    pub resolution: u32,
    pub layer: u32,
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub op: String,
    pub status: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
    #[serde(default)]
    pub rows: usize,
    #[serde(default)]
    pub cols: usize,
    #[serde(default)]
    pub dim: usize,
    #[serde(default)]
    pub payload_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    Header(String),
}

pub fn write_frame<W: Write, H: Serialize>(w: &mut W, header: &H, payload: &[u8]) -> Result<(), FrameError> {
    let json = serde_json::to_vec(header).map_err(|e| FrameError::Header(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| FrameError::Header("header too long".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// Reads the length prefix and JSON header; the caller then reads the payload
/// whose size the header announces.
pub fn read_header<R: Read, H: for<'de> Deserialize<'de>>(r: &mut R) -> Result<H, FrameError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER_BYTES {
        return Err(FrameError::Header(format!("header length {len} exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    serde_json::from_slice(&buf).map_err(|e| FrameError::Header(e.to_string()))
}

pub fn read_payload<R: Read>(r: &mut R, bytes: u64) -> Result<Vec<u8>, FrameError> {
    if bytes > MAX_PAYLOAD_BYTES {
        return Err(FrameError::Header(format!("payload of {bytes} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; bytes as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn encode_f32_le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f32_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, image::ImageError> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(image.as_raw(), image.width(), image.height(), ExtendedColorType::Rgb8)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// `host:port` of a running server.
    pub address: Option<String>,
    /// Server command line; spoken to over stdio. Used when `address` is unset.
    pub command: Option<Vec<String>>,
    pub timeout_ms: Option<u64>,
}

struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Connection {
    fn open(cfg: &BridgeConfig) -> Result<Self, DescriptorError> {
        let unavailable = |e: std::io::Error| DescriptorError::BridgeUnavailable(e.to_string());
        if let Some(addr) = &cfg.address {
            let stream = TcpStream::connect(addr).map_err(unavailable)?;
            if let Some(ms) = cfg.timeout_ms {
                let t = Some(Duration::from_millis(ms));
                stream.set_read_timeout(t).map_err(unavailable)?;
                stream.set_write_timeout(t).map_err(unavailable)?;
            }
            stream.set_nodelay(true).map_err(unavailable)?;
            let reader = stream.try_clone().map_err(unavailable)?;
            return Ok(Self {
                reader: Box::new(BufReader::new(reader)),
                writer: Box::new(BufWriter::new(stream)),
                child: None,
            });
        }
        if let Some(cmd) = cfg.command.as_ref().filter(|c| !c.is_empty()) {
            let mut child = Command::new(&cmd[0])
                .args(&cmd[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(unavailable)?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            return Ok(Self {
                reader: Box::new(BufReader::new(stdout)),
                writer: Box::new(BufWriter::new(stdin)),
                child: Some(child),
            });
        }
        Err(DescriptorError::BridgeUnavailable(
            "no bridge address or command configured".into(),
        ))
    }

    fn round_trip(&mut self, header: &RequestHeader, payload: &[u8]) -> Result<(ResponseHeader, Vec<u8>), DescriptorError> {
        let proto = |e: FrameError| DescriptorError::BridgeUnavailable(e.to_string());
        write_frame(&mut self.writer, header, payload).map_err(proto)?;
        let resp: ResponseHeader = read_header(&mut self.reader).map_err(proto)?;
        let body = read_payload(&mut self.reader, resp.payload_bytes).map_err(proto)?;
        Ok((resp, body))
    }
}

/// Server identity reported by the health check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeInfo {
    pub version: String,
    pub model: String,
}

pub struct BridgeProvider {
    conn: Mutex<Connection>,
    input_resolution: u32,
    layer: u32,
    info: BridgeInfo,
}

impl std::fmt::Debug for BridgeProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeProvider")
            .field("input_resolution", &self.input_resolution)
            .field("layer", &self.layer)
            .field("info", &self.info)
            .finish()
    }
}

impl BridgeProvider {
    pub const NAME: &'static str = "bridge";

    /// Connects and performs the version handshake.
    pub fn connect(cfg: &ProviderConfig) -> Result<Self, DescriptorError> {
        if !cfg.input_resolution.is_multiple_of(PATCH_SIZE) {
            return Err(DescriptorError::InvalidConfig(format!(
                "bridge input_resolution {} must be a multiple of {PATCH_SIZE}",
                cfg.input_resolution
            )));
        }
        let mut conn = Connection::open(&cfg.bridge)?;
        let info = health(&mut conn)?;
        if info.version != PROTOCOL_VERSION {
            return Err(DescriptorError::BridgeUnavailable(format!(
                "protocol version mismatch: server {} vs client {PROTOCOL_VERSION}",
                info.version
            )));
        }
        tracing::info!(model = %info.model, "connected to feature bridge");
        Ok(Self {
            conn: Mutex::new(conn),
            input_resolution: cfg.input_resolution,
            layer: cfg.layer,
            info,
        })
    }

    pub fn info(&self) -> &BridgeInfo {
        &self.info
    }

    pub fn healthcheck(&self) -> Result<BridgeInfo, DescriptorError> {
        let mut conn = self.conn.lock().expect("bridge connection poisoned");
        health(&mut conn)
    }
}

fn health(conn: &mut Connection) -> Result<BridgeInfo, DescriptorError> {
    let req = RequestHeader {
        op: OP_HEALTH.into(),
        width: 0,
        height: 0,
        resolution: 0,
        layer: 0,
        payload_bytes: 0,
    };
    let (resp, _) = conn.round_trip(&req, &[])?;
    if resp.status != STATUS_OK {
        return Err(DescriptorError::BridgeStatus {
            code: resp.status,
            message: resp.message,
        });
    }
    Ok(BridgeInfo {
        version: resp.version.unwrap_or_default(),
        model: resp.model.unwrap_or_default(),
    })
}

impl DescriptorProvider for BridgeProvider {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn extract_raw(&self, image: &RgbImage) -> Result<DescriptorGrid, DescriptorError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(DescriptorError::EmptyImage);
        }
        let png = encode_png(image).map_err(|e| DescriptorError::BridgeUnavailable(e.to_string()))?;
        let req = RequestHeader {
            op: OP_FEATURES.into(),
            width: image.width(),
            height: image.height(),
            resolution: self.input_resolution,
            layer: self.layer,
            payload_bytes: png.len() as u64,
        };
        let (resp, body) = {
            let mut conn = self.conn.lock().expect("bridge connection poisoned");
            conn.round_trip(&req, &png)?
        };
        if resp.status != STATUS_OK {
            return Err(DescriptorError::BridgeStatus {
                code: resp.status,
                message: resp.message,
            });
        }
        let expected = grid_extent(self.input_resolution, PATCH_SIZE, PATCH_SIZE);
        if resp.rows != expected || resp.cols != expected || resp.dim == 0 {
            return Err(DescriptorError::BridgeUnavailable(format!(
                "unexpected grid {}×{}×{} for resolution {}",
                resp.rows, resp.cols, resp.dim, self.input_resolution
            )));
        }
        let n = resp.rows * resp.cols * resp.dim;
        if body.len() != n * 4 {
            return Err(DescriptorError::BridgeUnavailable(format!(
                "payload has {} bytes, expected {}",
                body.len(),
                n * 4
            )));
        }
        Ok(DescriptorGrid::new(
            resp.rows,
            resp.cols,
            resp.dim,
            decode_f32_le(&body),
            PATCH_SIZE,
            PATCH_SIZE,
            self.input_resolution,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_layout_is_length_prefixed_json() {
        let header = RequestHeader {
            op: OP_FEATURES.into(),
            width: 2,
            height: 3,
            resolution: 308,
            layer: 11,
            payload_bytes: 3,
        };
        let mut buf = Vec::new();
        write_frame(&mut buf, &header, &[9, 8, 7]).unwrap();
        let len = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
        let json: serde_json::Value = serde_json::from_slice(&buf[4..4 + len]).unwrap();
        assert_eq!(json["op"], "features");
        assert_eq!(json["payload_bytes"], 3);
        assert_eq!(&buf[4 + len..], &[9, 8, 7]);

        let mut cur = Cursor::new(buf);
        let back: RequestHeader = read_header(&mut cur).unwrap();
        assert_eq!(back, header);
        assert_eq!(read_payload(&mut cur, 3).unwrap(), vec![9, 8, 7]);
    }

    #[test]
    fn oversized_header_is_rejected() {
        let mut buf = (MAX_HEADER_BYTES + 1).to_le_bytes().to_vec();
        buf.extend_from_slice(b"{}");
        let res: Result<RequestHeader, _> = read_header(&mut Cursor::new(buf));
        assert!(res.is_err());
    }

    #[test]
    fn f32_codec() {
        let v = [1.5f32, -0.25, f32::MAX];
        assert_eq!(decode_f32_le(&encode_f32_le(&v)), v);
        assert_eq!(encode_f32_le(&[1.0]), vec![0, 0, 0x80, 0x3f]);
    }

    #[test]
    fn unconfigured_bridge_is_unavailable() {
        let cfg = ProviderConfig {
            kind: BridgeProvider::NAME.into(),
            ..Default::default()
        };
        assert!(matches!(
            BridgeProvider::connect(&cfg),
            Err(DescriptorError::BridgeUnavailable(_))
        ));
    }

    #[test]
    fn refused_connection_is_unavailable() {
        // Bind then drop to obtain a port with nothing listening.
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let cfg = ProviderConfig {
            kind: BridgeProvider::NAME.into(),
            bridge: BridgeConfig {
                address: Some(format!("127.0.0.1:{port}")),
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(
            BridgeProvider::connect(&cfg),
            Err(DescriptorError::BridgeUnavailable(_))
        ));
    }
}
