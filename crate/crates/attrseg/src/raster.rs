//! Plain raster IO: binary PPM (P6) for color images, binary PGM (P5) for
//! masks, plus the alpha-blended overlay renderer used by `infer`.

use std::io::{self, Write};
use std::path::Path;

use crate::datakit::mask::Bitmap;

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    /// RGB triples, `3 * h * w` bytes.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0; 3 * h * w] }
    }

    #[inline]
    pub fn put(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.w + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.w + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel values scaled to [0, 1].
    pub fn to_unit_rgb(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64 / 255.0).collect()
    }
}

pub fn write_ppm(path: &Path, img: &Image) -> io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", img.w, img.h)?;
    f.write_all(&img.data)
}

pub fn read_ppm(path: &Path) -> io::Result<Image> {
    let bytes = std::fs::read(path)?;
    let (magic, w, h, maxval, offset) = parse_netpbm_header(&bytes)?;
    if magic != "P6" {
        return Err(bad_data(format!("expected P6 magic, got {magic}")));
    }
    if maxval != 255 {
        return Err(bad_data(format!("unsupported maxval {maxval}")));
    }
    let need = 3 * w * h;
    if bytes.len() < offset + need {
        return Err(bad_data("truncated PPM payload".into()));
    }
    Ok(Image { h, w, data: bytes[offset..offset + need].to_vec() })
}

pub fn write_pgm_mask(path: &Path, mask: &Bitmap) -> io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    let bytes: Vec<u8> = mask.data().iter().map(|&v| if v == 1 { 255 } else { 0 }).collect();
    f.write_all(&bytes)
}

pub fn read_pgm_mask(path: &Path) -> io::Result<Bitmap> {
    let bytes = std::fs::read(path)?;
    let (magic, w, h, maxval, offset) = parse_netpbm_header(&bytes)?;
    if magic != "P5" {
        return Err(bad_data(format!("expected P5 magic, got {magic}")));
    }
    let need = w * h;
    if bytes.len() < offset + need {
        return Err(bad_data("truncated PGM payload".into()));
    }
    let data = bytes[offset..offset + need]
        .iter()
        .map(|&v| (v as usize * 2 > maxval) as u8)
        .collect();
    Ok(Bitmap::from_raw(h, w, data))
}

/// Alpha-blends the mask onto the image as a red tint.
pub fn overlay(img: &Image, mask: &Bitmap, alpha: f64) -> Image {
    assert_eq!(img.h, mask.height());
    assert_eq!(img.w, mask.width());
    let mut out = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            if mask.get(y, x) == 1 {
                let [r, g, b] = img.at(y, x);
                let blend = |v: u8, t: f64| ((v as f64) * (1.0 - alpha) + t * alpha) as u8;
                out.put(y, x, [blend(r, 255.0), blend(g, 40.0), blend(b, 40.0)]);
            }
        }
    }
    out
}

fn parse_netpbm_header(bytes: &[u8]) -> io::Result<(String, usize, usize, usize, usize)> {
    let mut cursor = 0usize;
    let mut fields: Vec<String> = Vec::new();
    // magic + width + height + maxval, whitespace separated with optional
    // comment lines.
    while fields.len() < 4 {
        while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if cursor >= bytes.len() {
            return Err(bad_data("truncated netpbm header".into()));
        }
        if bytes[cursor] == b'#' {
            while cursor < bytes.len() && bytes[cursor] != b'\n' {
                cursor += 1;
            }
            continue;
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..cursor]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the payload.
    cursor += 1;
    let parse = |s: &String| {
        s.parse::<usize>().map_err(|_| bad_data(format!("bad header field {s}")))
    };
    Ok((fields[0].clone(), parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?, cursor))
}

fn bad_data(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}
