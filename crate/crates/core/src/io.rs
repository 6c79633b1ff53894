//! File formats: PFM for lossless floats, PNG for 8/16-bit display images,
//! and two encodings of a [`PsfStack`] (a PFM directory with a JSON manifest,
//! and a single binary container).

use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use ndarray::{s, Array2, Array3, Array4, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{HeightMap, MaskSpec};
use crate::rpsf::PsfStack;

pub const CONTAINER_MAGIC: &[u8; 4] = b"RPSF";
pub const CONTAINER_VERSION: u32 = 1;
pub const STACK_MANIFEST: &str = "manifest.json";

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never observes a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::Format(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Encodes an `H×W×C` image (`C` = 1 or 3) as little-endian PFM. Rows are
/// stored bottom to top, as the format requires.
pub fn encode_pfm(img: &ArrayView3<f64>) -> Result<Vec<u8>> {
    let (h, w, c) = img.dim();
    let tag = match c {
        1 => "Pf",
        3 => "PF",
        _ => return Err(Error::Dimension(format!("PFM holds 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * c * 4);
    for i in (0..h).rev() {
        for j in 0..w {
            for k in 0..c {
                out.extend_from_slice(&(img[[i, j, k]] as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("PFM header is not ASCII".into()))
}

/// Decodes a PFM of either byte order into `H×W×C`.
pub fn decode_pfm(bytes: &[u8]) -> Result<Array3<f64>> {
    let mut pos = 0;
    let c = match header_token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(Error::Format(format!("not a PFM file (magic {t:?})"))),
    };
    let parse = |t: &str| t.parse::<usize>().map_err(|_| Error::Format(format!("bad PFM dimension {t:?}")));
    let w = parse(header_token(bytes, &mut pos)?)?;
    let h = parse(header_token(bytes, &mut pos)?)?;
    let scale: f64 = header_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Format("bad PFM scale".into()))?;
    if scale == 0.0 {
        return Err(Error::Format("PFM scale must be non-zero".into()));
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let need = h * w * c * 4;
    let data = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::Format(format!("PFM payload has {} bytes, expected {need}", bytes.len().saturating_sub(pos)))
    })?;
    let little = scale < 0.0;
    let mut img = Array3::zeros((h, w, c));
    for (n, chunk) in data.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, rest) = (n / (w * c), n % (w * c));
        img[[h - 1 - row, rest / c, rest % c]] = v as f64;
    }
    Ok(img)
}

pub fn write_pfm(path: &Path, img: &ArrayView3<f64>) -> Result<()> {
    write_atomic(path, &encode_pfm(img)?)
}

pub fn read_pfm(path: &Path) -> Result<Array3<f64>> {
    decode_pfm(&read_input(path)?)
}

/// Reads a file, mapping "not found" to [`Error::Io`] with the path in the message.
pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Encodes `[0, 1]` values as an 8- or 16-bit PNG (gray for one channel,
/// RGB for three). Values are clamped and rounded.
pub fn encode_png(img: &ArrayView3<f64>, bits: u8) -> Result<Vec<u8>> {
    let (h, w, c) = img.dim();
    let q = |v: f64, max: f64| (v.clamp(0.0, 1.0) * max).round();
    let dynimg = match (c, bits) {
        (1, 8) => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Luma([q(img[[y as usize, x as usize, 0]], 255.0) as u8])
        })),
        (1, 16) => DynamicImage::ImageLuma16(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Luma([q(img[[y as usize, x as usize, 0]], 65535.0) as u16])
        })),
        (3, 8) => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let p = |k| q(img[[y as usize, x as usize, k]], 255.0) as u8;
            Rgb([p(0), p(1), p(2)])
        })),
        (3, 16) => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let p = |k| q(img[[y as usize, x as usize, k]], 65535.0) as u16;
            Rgb([p(0), p(1), p(2)])
        })),
        _ => return Err(Error::Dimension(format!("PNG export supports 1 or 3 channels at 8 or 16 bits, got {c} at {bits}"))),
    };
    let mut out = Cursor::new(Vec::new());
    dynimg
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
    Ok(out.into_inner())
}

/// Decodes an 8- or 16-bit PNG to `[0, 1]` values. Gray images give one
/// channel; everything else is converted to RGB.
pub fn decode_png(bytes: &[u8]) -> Result<Array3<f64>> {
    let dynimg = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG decode: {e}")))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    Ok(match dynimg {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) => {
            let g = dynimg.into_luma16();
            Array3::from_shape_fn((h, w, 1), |(i, j, _)| g.get_pixel(j as u32, i as u32)[0] as f64 / 65535.0)
        }
        other => {
            let rgb = other.into_rgb16();
            Array3::from_shape_fn((h, w, 3), |(i, j, k)| rgb.get_pixel(j as u32, i as u32)[k] as f64 / 65535.0)
        }
    })
}

/// Reads an image by extension: `.pfm` or `.png`.
pub fn read_image(path: &Path) -> Result<Array3<f64>> {
    let bytes = read_input(path)?;
    match extension(path).as_str() {
        "pfm" => decode_pfm(&bytes),
        "png" => decode_png(&bytes),
        e => Err(Error::Format(format!("unsupported image extension {e:?} for {}", path.display()))),
    }
}

fn extension(path: &Path) -> String {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default()
}

pub fn as_single_channel(img: &Array2<f64>) -> Array3<f64> {
    img.clone().insert_axis(ndarray::Axis(2))
}

/// Height map as a one-channel PFM in meters.
pub fn height_map_pfm(map: &HeightMap) -> Result<Vec<u8>> {
    encode_pfm(&as_single_channel(&map.data).view())
}

/// Height map as a 16-bit PNG, normalized to the wrapped range `[0, λ_ref/(n−1))`.
pub fn height_map_png(map: &HeightMap, spec: &MaskSpec) -> Result<Vec<u8>> {
    let top = spec.max_height();
    encode_png(&as_single_channel(&map.data.mapv(|h| h / top)).view(), 16)
}

/// Manifest of a PFM stack directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub psis: Vec<f64>,
    pub wavelengths: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    /// `files[d][c]`, relative to the manifest.
    pub files: Vec<Vec<String>>,
}

pub fn kernel_file_name(plane: usize, channel: usize) -> String {
    format!("psf_d{plane:02}_c{channel}.pfm")
}

/// Writes one PFM per (plane, channel) and `manifest.json` into `dir`.
/// Returns the written paths, manifest last.
pub fn write_stack_dir(stack: &PsfStack, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for d in 0..stack.depth() {
        let mut row = Vec::new();
        for c in 0..stack.channels() {
            let name = kernel_file_name(d, c);
            let path = dir.join(&name);
            write_pfm(&path, &as_single_channel(&stack.kernel(d, c).to_owned()).view())?;
            written.push(path);
            row.push(name);
        }
        files.push(row);
    }
    let manifest = StackManifest { psis: stack.psis().to_vec(), wavelengths: stack.wavelengths().to_vec(), k: stack.size(), files };
    let path = dir.join(STACK_MANIFEST);
    write_atomic(&path, &serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?)?;
    written.push(path);
    Ok(written)
}

/// Loads a stack from its manifest path or from the directory holding it.
/// Kernels are renormalized after the `f32` round trip.
pub fn read_stack_dir(path: &Path) -> Result<PsfStack> {
    let manifest_path = if path.is_dir() { path.join(STACK_MANIFEST) } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: StackManifest = serde_json::from_slice(&read_input(&manifest_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let (d, c, k) = (manifest.psis.len(), manifest.wavelengths.len(), manifest.k);
    if manifest.files.len() != d || manifest.files.iter().any(|r| r.len() != c) {
        return Err(Error::Dimension(format!("manifest lists files that do not match {d} planes x {c} channels")));
    }
    let mut kernels = Array4::zeros((d, c, k, k));
    for (dd, row) in manifest.files.iter().enumerate() {
        for (cc, name) in row.iter().enumerate() {
            let img = read_pfm(&dir.join(name))?;
            if img.dim() != (k, k, 1) {
                return Err(Error::Dimension(format!("{name} is {:?}, expected {k}x{k}x1", img.dim())));
            }
            kernels.slice_mut(s![dd, cc, .., ..]).assign(&img.slice(s![.., .., 0]));
        }
    }
    PsfStack::renormalized(kernels, manifest.psis, manifest.wavelengths)
}

/// Binary container: magic `RPSF`, `u32` version, `u32` D, C, K, then D
/// `f64` defocus values, C `f64` wavelengths and the `f32` kernels in
/// `(d, c, row, col)` order. Everything little-endian.
pub fn encode_stack(stack: &PsfStack) -> Vec<u8> {
    let (d, c, k) = (stack.depth(), stack.channels(), stack.size());
    let mut out = Vec::with_capacity(20 + 8 * (d + c) + 4 * d * c * k * k);
    out.extend_from_slice(CONTAINER_MAGIC);
    for v in [CONTAINER_VERSION, d as u32, c as u32, k as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in stack.psis().iter().chain(stack.wavelengths()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in stack.kernels().iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_stack(bytes: &[u8]) -> Result<PsfStack> {
    if bytes.len() < 20 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::Format("not an RPSF container".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = u32_at(4);
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let (d, c, k) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let expected = 20 + 8 * (d + c) + 4 * d * c * k * k;
    if bytes.len() != expected {
        return Err(Error::Format(format!("container has {} bytes, expected {expected}", bytes.len())));
    }
    let f64s: Vec<f64> = bytes[20..20 + 8 * (d + c)]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    let payload: Vec<f64> = bytes[20 + 8 * (d + c)..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")) as f64)
        .collect();
    let kernels = Array4::from_shape_vec((d, c, k, k), payload).map_err(|e| Error::Dimension(e.to_string()))?;
    PsfStack::renormalized(kernels, f64s[..d].to_vec(), f64s[d..].to_vec())
}

/// Loads a stack from a container file, a manifest, or a stack directory.
pub fn read_stack(path: &Path) -> Result<PsfStack> {
    if path.is_dir() || extension(path) == "json" {
        read_stack_dir(path)
    } else {
        decode_stack(&read_input(path)?)
    }
}
