//! Binary PPM (P6, maxval 255) images.
//!
//! A byte `p` maps to `2·p/255 − 1`; writing rounds half away from zero.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ppm {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

#[inline]
pub fn byte_to_value(p: u8) -> f32 {
    (2.0 * p as f64 / 255.0 - 1.0) as f32
}

#[inline]
pub fn value_to_byte(v: f32) -> u8 {
    let v = (v as f64).clamp(-1.0, 1.0);
    ((v + 1.0) * 0.5 * 255.0).round() as u8
}

/// Reads one header token, skipping whitespace and `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(malformed(path, "header ends early")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, path: &Path, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos, path)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(path, format!("bad {what} `{}`", String::from_utf8_lossy(tok))))
}

/// Decodes a P6 image into a `[1, 3, H, W]` tensor.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut pos = 0;
    if header_token(bytes, &mut pos, path)? != b"P6" {
        return Err(malformed(path, "missing P6 magic"));
    }
    let width = header_number(bytes, &mut pos, path, "width")?;
    let height = header_number(bytes, &mut pos, path, "height")?;
    let maxval = header_number(bytes, &mut pos, path, "maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero extent"));
    }
    if maxval != 255 {
        return Err(malformed(path, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(malformed(path, "header ends early"));
    }
    pos += 1;
    let plane = width * height;
    let payload = &bytes[pos..];
    if payload.len() < 3 * plane {
        return Err(malformed(path, format!("truncated payload: {} of {} bytes", payload.len(), 3 * plane)));
    }
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in payload[..3 * plane].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = byte_to_value(px[c]);
        }
    }
    Tensor::new([1, 3, height, width], data)
}

/// Encodes a `[1, 3, H, W]` or `[3, H, W]` image in canonical P6 form.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *image.shape() {
        [1, 3, h, w] | [3, h, w] => (h, w),
        _ => return Err(Error::dim("encode_ppm", "shape", "[1, 3, H, W]", format!("{:?}", image.shape()))),
    };
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    let d = image.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push(value_to_byte(d[c * plane + i]));
        }
    }
    Ok(out)
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn save_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

/// Sorted `*.ppm` paths directly inside `dir`.
pub fn ppm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `*.ppm` in `dir` (sorted by name) into one `[N, 3, H, W]` batch.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Tensor> {
    let dir = dir.as_ref();
    let files = ppm_files(dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("no .ppm files in {}", dir.display())));
    }
    let images = files.iter().map(load_ppm).collect::<Result<Vec<_>>>()?;
    Tensor::stack_outer(&images)
}

/// Tiles a `[N, 3, H, W]` batch into one image, `cols` images per row.
pub fn tile(batch: &Tensor, cols: usize) -> Result<Tensor> {
    let (n, c, h, w) = batch.dims4("tile")?;
    let cols = cols.clamp(1, n);
    let rows = n.div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut grid = Tensor::full([1, c, gh, gw], -1.0);
    let src = batch.data();
    let dst = grid.data_mut();
    for i in 0..n {
        let (r, col) = (i / cols, i % cols);
        for ch in 0..c {
            for y in 0..h {
                let s = ((i * c + ch) * h + y) * w;
                let d = (ch * gh + r * h + y) * gw + col * w;
                dst[d..d + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(path: &str) -> PathBuf {
        PathBuf::from(path)
    }

    #[test]
    fn white_pixel_is_one() {
        let t = decode_ppm(b"P6\n1 1\n255\n\xff\xff\xff", &p("w.ppm")).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 1]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mid_value_mapping() {
        assert!((byte_to_value(128) - 0.003_921_6).abs() < 1e-6);
        assert_eq!(byte_to_value(0), -1.0);
        for b in 0..=255u8 {
            assert_eq!(value_to_byte(byte_to_value(b)), b);
        }
    }

    #[test]
    fn comments_and_layout() {
        let bytes = b"P6 # comment\n2 1\n# another\n255\n\x00\x80\xff\x10\x20\x30";
        let t = decode_ppm(bytes, &p("c.ppm")).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        // channel-first: R plane is [px0.r, px1.r]
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], byte_to_value(0x10));
        assert_eq!(encode_ppm(&t).unwrap(), b"P6\n2 1\n255\n\x00\x80\xff\x10\x20\x30");
    }

    #[test]
    fn structured_errors() {
        let cases: [&[u8]; 5] = [
            b"P5\n1 1\n255\n\x00",
            b"P6\n1 x\n255\n\x00\x00\x00",
            b"P6\n1 1\n65535\n\x00\x00\x00",
            b"P6\n2 2\n255\n\x00\x00\x00",
            b"P6\n1 1",
        ];
        for bytes in cases {
            let err = decode_ppm(bytes, &p("bad.ppm")).unwrap_err();
            assert!(matches!(err, Error::Ppm { .. }), "{err}");
        }
        let msg = decode_ppm(cases[2], &p("bad.ppm")).unwrap_err().to_string();
        assert!(msg.contains("maxval"));
        let msg = decode_ppm(cases[3], &p("bad.ppm")).unwrap_err().to_string();
        assert!(msg.contains("truncated"));
    }

    #[test]
    fn tile_places_images() {
        let batch = Tensor::from_fn([3, 3, 2, 2], |i| (i / 12) as f32 * 0.5 - 0.5);
        let grid = tile(&batch, 2).unwrap();
        assert_eq!(grid.shape(), &[1, 3, 4, 4]);
        // image 2 lands in row 1, col 0; the empty slot stays black
        assert_eq!(grid.data()[2 * 4], 0.5);
        assert_eq!(grid.data()[2 * 4 + 2], -1.0);
    }
}
