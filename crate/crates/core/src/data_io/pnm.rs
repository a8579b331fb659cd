//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    Gray,
    Rgb,
}

impl PnmKind {
    fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    /// Interleaved samples, row-major.
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<PnmImage> {
    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let kind = match bytes.get(..2) {
        Some(b"P5") => PnmKind::Gray,
        Some(b"P6") => PnmKind::Rgb,
        _ => return Err(malformed("expected magic P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number().ok_or_else(|| malformed("missing width"))?;
    let height = cur.number().ok_or_else(|| malformed("missing height"))?;
    let maxval = cur.number().ok_or_else(|| malformed("missing maxval"))?;
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval {
            path: path.to_path_buf(),
            maxval,
        });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(malformed("no whitespace after maxval")),
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width * height * kind.channels();
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            got: payload.len(),
        });
    }
    Ok(PnmImage {
        kind,
        width,
        height,
        pixels: payload[..expected].to_vec(),
    })
}

impl PnmImage {
    /// `[3 × H × W]` tensor in `[0, 1]`; grayscale is replicated to three channels.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0; 3 * plane];
        match self.kind {
            PnmKind::Gray => {
                for (i, &p) in self.pixels.iter().enumerate() {
                    let v = f64::from(p) / 255.0;
                    data[i] = v;
                    data[plane + i] = v;
                    data[2 * plane + i] = v;
                }
            }
            PnmKind::Rgb => {
                for (i, px) in self.pixels.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        data[c * plane + i] = f64::from(px[c]) / 255.0;
                    }
                }
            }
        }
        Tensor::new(&[3, self.height, self.width], data).expect("pixel count matches")
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = match self.kind {
            PnmKind::Gray => "P5",
            PnmKind::Rgb => "P6",
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Quantizes a `[3 × H × W]` tensor in `[0, 1]` to an RGB image.
pub fn from_tensor(t: &Tensor) -> Result<PnmImage> {
    let (h, w) = match t.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::shape(format!("expected [3, H, W] image, got {s:?}"))),
    };
    let plane = h * w;
    let d = t.data();
    let mut pixels = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            pixels.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(PnmImage {
        kind: PnmKind::Rgb,
        width: w,
        height: h,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("x.ppm")
    }

    #[test]
    fn one_red_pixel() {
        let img = decode(b"P6\n1 1\n255\n\xff\x00\x00", p()).unwrap();
        assert_eq!(img.to_tensor().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn comments_and_gray() {
        let img = decode(b"P5 # comment\n2 # w\n1\n255\n\x00\xff", p()).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode(b"P3\n1 1\n255\n", p()), Err(Error::MalformedHeader { .. })));
        assert!(matches!(decode(b"P6\n1\n", p()), Err(Error::MalformedHeader { .. })));
        assert!(matches!(
            decode(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00", p()),
            Err(Error::UnsupportedMaxval { maxval: 65535, .. })
        ));
        assert!(matches!(
            decode(b"P6\n2 1\n255\n\x00\x00\x00", p()),
            Err(Error::TruncatedPayload { expected: 6, got: 3, .. })
        ));
    }

    #[test]
    fn encode_decode() {
        let img = PnmImage {
            kind: PnmKind::Rgb,
            width: 2,
            height: 2,
            pixels: (0..12).map(|v| v * 20).collect(),
        };
        assert_eq!(decode(&img.encode(), p()).unwrap(), img);
        let back = from_tensor(&img.to_tensor()).unwrap();
        assert_eq!(back, img);
    }
}
