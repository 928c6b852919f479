//! On-disk formats: atomic writes, JSON documents and image tensors.
//!
//! An image set `name` is stored as `name.bin`, the pixels as little-endian
//! f64 in row-major `[n, side*side]` order, plus `name.hdr`, a text sidecar:
//!
//! ```text
//! # latent-walk images v1
//! n = 3
//! side = 16
//! n_classes = 2
//! range = -1 1
//! config_hash = ab12...
//!
//! 0 real 0
//! 1 real 1
//! - synthetic 0
//! ```
//!
//! Each label row is `identity origin class`, with `-` for no identity.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{ImageSet, Origin, ToyImage};
use crate::error::{Error, Result};

const IMAGES_MAGIC: &str = "# latent-walk images v1";

/// Writes `bytes` to a temporary sibling file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format("json", e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("json", format!("{}: {}", path.display(), e)))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn origin_name(o: Origin) -> &'static str {
    match o {
        Origin::Real => "real",
        Origin::Projection => "projection",
        Origin::Synthetic => "synthetic",
    }
}

fn parse_origin(s: &str) -> Option<Origin> {
    match s {
        "real" => Some(Origin::Real),
        "projection" => Some(Origin::Projection),
        "synthetic" => Some(Origin::Synthetic),
        _ => None,
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `stem.bin` and `stem.hdr`; returns both paths.
pub fn save_images(stem: &Path, set: &ImageSet, config_hash: &str) -> Result<[PathBuf; 2]> {
    let mut bin = Vec::with_capacity(set.len() * set.pixel_count() * 8);
    for im in &set.images {
        for v in &im.pixels {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut hdr = String::new();
    let _ = writeln!(hdr, "{}", IMAGES_MAGIC);
    let _ = writeln!(hdr, "n = {}", set.len());
    let _ = writeln!(hdr, "side = {}", set.side);
    let _ = writeln!(hdr, "n_classes = {}", set.n_classes);
    let _ = writeln!(hdr, "range = -1 1");
    let _ = writeln!(hdr, "config_hash = {}", config_hash);
    hdr.push('\n');
    for im in &set.images {
        let id = im.identity.map_or_else(|| "-".to_string(), |i| i.to_string());
        let _ = writeln!(hdr, "{} {} {}", id, origin_name(im.origin), im.class_label);
    }
    let bin_path = with_ext(stem, "bin");
    let hdr_path = with_ext(stem, "hdr");
    write_atomic(&bin_path, &bin)?;
    write_atomic(&hdr_path, hdr.as_bytes())?;
    Ok([bin_path, hdr_path])
}

pub fn load_images(stem: &Path) -> Result<ImageSet> {
    let hdr_path = with_ext(stem, "hdr");
    let bin_path = with_ext(stem, "bin");
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let bad = |d: String| Error::format("image header", format!("{}: {}", hdr_path.display(), d));
    let mut lines = text.lines();
    if lines.next() != Some(IMAGES_MAGIC) {
        return Err(bad("missing magic line".into()));
    }
    let (mut n, mut side, mut n_classes) = (None, None, None);
    for line in lines.by_ref() {
        if line.trim().is_empty() {
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad header line {:?}", line)))?;
        let parse = || v.trim().parse::<usize>().map_err(|_| bad(format!("bad value for {}", k.trim())));
        match k.trim() {
            "n" => n = Some(parse()?),
            "side" => side = Some(parse()?),
            "n_classes" => n_classes = Some(parse()?),
            _ => {}
        }
    }
    let (n, side, n_classes) = match (n, side, n_classes) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(bad("missing n, side or n_classes".into())),
    };
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let p = side * side;
    if bytes.len() != n * p * 8 {
        return Err(bad(format!("pixel file has {} bytes, expected {}", bytes.len(), n * p * 8)));
    }
    let mut images = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(bad(format!("bad label row {:?}", line)));
        }
        let identity = match parts[0] {
            "-" => None,
            s => Some(s.parse().map_err(|_| bad(format!("bad identity {:?}", s)))?),
        };
        let origin = parse_origin(parts[1]).ok_or_else(|| bad(format!("bad origin {:?}", parts[1])))?;
        let class_label = parts[2].parse().map_err(|_| bad(format!("bad class {:?}", parts[2])))?;
        if i >= n {
            return Err(bad("more label rows than images".into()));
        }
        let pixels = bytes[i * p * 8..(i + 1) * p * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        images.push(ToyImage {
            pixels,
            identity,
            class_label,
            origin,
        });
    }
    if images.len() != n {
        return Err(bad(format!("{} label rows for {} images", images.len(), n)));
    }
    ImageSet::new(side, n_classes, images)
}

/// Plain (ASCII) 8-bit PGM of one image, mapping [-1, 1] to [0, 255].
pub fn pgm(pixels: &[f64], side: usize) -> String {
    let mut s = format!("P2\n{} {}\n255\n", side, side);
    for row in pixels.chunks(side.max(1)) {
        let vals: Vec<String> = row
            .iter()
            .map(|v| (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8).to_string())
            .collect();
        s.push_str(&vals.join(" "));
        s.push('\n');
    }
    s
}
