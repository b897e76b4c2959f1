//! 8-bit binary Netpbm rasters: PPM (`P6`) for images, PGM (`P5`) for label
//! maps and masks.
//!
//! Writers emit the canonical header `P6\n<w> <h>\n255\n`. Readers accept any
//! conforming header (comments, arbitrary whitespace, maxval up to 255).

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{LabelMap, MixMask, SegImage};

/// `round(v * 255)`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

pub fn encode_ppm(image: &SegImage) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "PPM needs 3 channels, image has {}",
            image.channels()
        )));
    }
    let mut out = header("P6", image.width(), image.height());
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn encode_label_pgm(labels: &LabelMap) -> Vec<u8> {
    let mut out = header("P5", labels.width(), labels.height());
    out.extend_from_slice(labels.data());
    out
}

/// Masks are scaled to `{0, 255}` so they are viewable.
pub fn encode_mask_pgm(mask: &MixMask) -> Vec<u8> {
    let mut out = header("P5", mask.width(), mask.height());
    out.extend(mask.data().iter().map(|&v| v * 255));
    out
}

struct Raster<'a> {
    width: usize,
    height: usize,
    maxval: u16,
    pixels: &'a [u8],
}

fn parse<'a>(bytes: &'a [u8], magic: &[u8; 2], depth: usize, path: &Path) -> Result<Raster<'a>> {
    let err = |reason: String| Error::format(path, reason);
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(err(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and comments before each header token.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(err("malformed header field".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("header field out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err(format!("zero-sized raster {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err(format!("unsupported maxval {maxval} (8-bit only)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(err("missing whitespace after header".into()));
    }
    pos += 1;
    let expected = width * height * depth;
    let pixels = &bytes[pos..];
    if pixels.len() != expected {
        return Err(err(format!(
            "expected {expected} raster bytes, found {}",
            pixels.len()
        )));
    }
    Ok(Raster {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<SegImage> {
    let r = parse(bytes, b"P6", 3, path)?;
    let scale = f64::from(r.maxval);
    let data = r
        .pixels
        .iter()
        .map(|&b| (f64::from(b) / scale).min(1.0))
        .collect();
    SegImage::new(r.height, r.width, 3, data)
}

pub fn decode_label_pgm(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let r = parse(bytes, b"P5", 1, path)?;
    LabelMap::new(r.height, r.width, r.pixels.to_vec())
}

/// Any non-zero value reads as 1.
pub fn decode_mask_pgm(bytes: &[u8], path: &Path) -> Result<MixMask> {
    let r = parse(bytes, b"P5", 1, path)?;
    MixMask::new(
        r.height,
        r.width,
        r.pixels.iter().map(|&b| u8::from(b != 0)).collect(),
    )
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<SegImage> {
    decode_ppm(&read(path)?, path)
}

pub fn read_label_pgm(path: &Path) -> Result<LabelMap> {
    decode_label_pgm(&read(path)?, path)
}

pub fn read_mask_pgm(path: &Path) -> Result<MixMask> {
    decode_mask_pgm(&read(path)?, path)
}

/// Writes `bytes` unless the file already holds exactly those bytes.
/// Returns whether anything was written.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if let Ok(existing) = std::fs::read(path) {
        if existing == bytes {
            return Ok(false);
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(true)
}

pub fn write_ppm(path: &Path, image: &SegImage) -> Result<bool> {
    write_if_changed(path, &encode_ppm(image)?)
}

pub fn write_label_pgm(path: &Path, labels: &LabelMap) -> Result<bool> {
    write_if_changed(path, &encode_label_pgm(labels))
}

pub fn write_mask_pgm(path: &Path, mask: &MixMask) -> Result<bool> {
    write_if_changed(path, &encode_mask_pgm(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn canonical_header() {
        let img = SegImage::new(1, 2, 3, vec![0.0, 0.5, 1.0, 1.0, 0.0, 0.25]).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 255, 255, 0, 64]);
    }

    #[test]
    fn reads_comments_and_odd_whitespace() {
        let mut bytes = b"P5 # a comment\n# another\n 3\t1\r\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 4, 255]);
        let l = decode_label_pgm(&bytes, p()).unwrap();
        assert_eq!(l.data(), &[0, 4, 255]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\0", p()).is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0", p()).is_err());
        assert!(decode_ppm(b"P6\n2 1\n255\n\0\0\0", p()).is_err());
        assert!(decode_label_pgm(b"P5\n1", p()).is_err());
    }

    #[test]
    fn mask_scaled_to_255() {
        let m = MixMask::new(1, 3, vec![1, 0, 1]).unwrap();
        let bytes = encode_mask_pgm(&m);
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 255]);
        assert_eq!(decode_mask_pgm(&bytes, p()).unwrap(), m);
    }

    #[test]
    fn low_maxval_rescaled() {
        let img = decode_ppm(b"P6\n1 1\n3\n\x00\x03\x01", p()).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 1.0 / 3.0]);
    }

    proptest! {
        #[test]
        fn quantized_images_round_trip(
            (h, w, bytes) in (1usize..5, 1usize..5)
                .prop_flat_map(|(h, w)| (Just(h), Just(w), proptest::collection::vec(any::<u8>(), h * w * 3)))
        ) {
            let img = SegImage::new(h, w, 3, bytes.iter().map(|&b| f64::from(b) / 255.0).collect()).unwrap();
            let enc = encode_ppm(&img).unwrap();
            let back = decode_ppm(&enc, p()).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode_ppm(&back).unwrap(), enc);
        }

        #[test]
        fn labels_round_trip(
            (h, w, bytes) in (1usize..6, 1usize..6)
                .prop_flat_map(|(h, w)| (Just(h), Just(w), proptest::collection::vec(any::<u8>(), h * w)))
        ) {
            let l = LabelMap::new(h, w, bytes).unwrap();
            prop_assert_eq!(decode_label_pgm(&encode_label_pgm(&l), p()).unwrap(), l);
        }
    }
}
