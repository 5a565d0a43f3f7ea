//! PNG color export and a small raw format for depth and face-id buffers.
//!
//! Raw layout: `ZKB1`, width (u32 LE), height (u32 LE), element kind (u8:
//! 2 = f64 depth, 3 = u32 face id), three zero pad bytes, then row-major
//! little-endian elements.

use image::{ImageBuffer, ImageFormat, Rgb};

use super::{RenderError, RenderedView};

pub const RAW_MAGIC: &[u8; 4] = b"ZKB1";
const KIND_DEPTH: u8 = 2;
const KIND_FACE: u8 = 3;
const HEADER_LEN: usize = 16;

pub fn encode_png(view: &RenderedView) -> Vec<u8> {
    let (w, h) = (view.width(), view.height());
    let raw: Vec<u8> = view.color_buffer().iter().flatten().copied().collect();
    let img: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(w, h, raw).expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png encoding into memory");
    out.into_inner()
}

fn header(w: u32, h: u32, kind: u8, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + len);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&[kind, 0, 0, 0]);
    out
}

pub fn encode_depth_raw(view: &RenderedView) -> Vec<u8> {
    let mut out = header(view.width(), view.height(), KIND_DEPTH, view.depth_buffer().len() * 8);
    for d in view.depth_buffer() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn encode_face_raw(view: &RenderedView) -> Vec<u8> {
    let mut out = header(view.width(), view.height(), KIND_FACE, view.face_buffer().len() * 4);
    for f in view.face_buffer() {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawBuffer {
    Depth { width: u32, height: u32, data: Vec<f64> },
    Face { width: u32, height: u32, data: Vec<u32> },
}

pub fn decode_raw_buffer(bytes: &[u8]) -> Result<RawBuffer, RenderError> {
    let bad = |m: &str| RenderError::RawBuffer(m.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(bad("missing magic"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let n = w as usize * h as usize;
    let body = &bytes[HEADER_LEN..];
    match bytes[12] {
        KIND_DEPTH => {
            if body.len() != n * 8 {
                return Err(bad("depth payload length mismatch"));
            }
            let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(RawBuffer::Depth { width: w, height: h, data })
        }
        KIND_FACE => {
            if body.len() != n * 4 {
                return Err(bad("face payload length mismatch"));
            }
            let data = body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(RawBuffer::Face { width: w, height: h, data })
        }
        k => Err(bad(&format!("unknown element kind {k}"))),
    }
}
