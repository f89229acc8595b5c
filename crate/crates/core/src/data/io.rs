//! Dataset directories: `manifest.json` plus one binary PPM per image and
//! one binary PGM per mask. Pixels are stored as `round(v * 255)` and load
//! back as `i / 255`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledSample, Provenance, Split};
use crate::error::{Error, Result};
use crate::image::{quantize, Image, Mask};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    classes: usize,
    count: usize,
    split: Split,
    provenance: Provenance,
    samples: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    label: usize,
    image: String,
    #[serde(default)]
    mask: Option<String>,
}

fn write_pnm(path: &Path, magic: &str, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_pnm(path: &Path, magic: &str, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingSample(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let corrupt = |reason: &str| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    // header: magic, width, height, maxval separated by whitespace
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != magic {
        return Err(corrupt(&format!("expected {magic}, found {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| corrupt("non-numeric header field"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(corrupt("only 8-bit images are supported"));
    }
    let need = w * h * channels;
    if bytes.len() < pos + need {
        return Err(corrupt(&format!(
            "expected {need} pixel bytes, found {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok((w, h, bytes[pos..pos + need].to_vec()))
}

pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let (h, w) = s.image.dims();
        let image = format!("{i:06}.ppm");
        let px: Vec<u8> = s.image.data().iter().map(|&v| quantize(v)).collect();
        write_pnm(&dir.join(&image), "P6", w, h, &px)?;
        let mask = match &s.mask {
            Some(m) => {
                let name = format!("{i:06}.pgm");
                let px: Vec<u8> = m.data().iter().map(|&v| quantize(v)).collect();
                write_pnm(&dir.join(&name), "P5", w, h, &px)?;
                Some(name)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            label: s.label,
            image,
            mask,
        });
    }
    let manifest = Manifest {
        classes: ds.classes,
        count: ds.len(),
        split: ds.split,
        provenance: ds.provenance.clone(),
        samples: entries,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingManifest(path.clone()),
        _ => Error::io(&path, e),
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.count != manifest.samples.len() {
        return Err(Error::CountMismatch {
            declared: manifest.count,
            listed: manifest.samples.len(),
        });
    }
    let mut samples = Vec::with_capacity(manifest.count);
    for entry in &manifest.samples {
        if entry.label >= manifest.classes {
            return Err(Error::LabelOutOfRange {
                label: entry.label,
                classes: manifest.classes,
            });
        }
        let img_path: PathBuf = dir.join(&entry.image);
        let (w, h, px) = read_pnm(&img_path, "P6", 3)?;
        let image = Image::from_raw(h, w, px.iter().map(|&b| b as f32 / 255.0).collect())?;
        let mask = match &entry.mask {
            Some(name) => {
                let mask_path = dir.join(name);
                let (mw, mh, px) = read_pnm(&mask_path, "P5", 1)?;
                if (mh, mw) != (h, w) {
                    return Err(Error::CorruptImage {
                        path: mask_path,
                        reason: format!("mask is {mh}x{mw}, image is {h}x{w}"),
                    });
                }
                Some(Mask::from_fn(h, w, |y, x| px[y * w + x] as f32 / 255.0))
            }
            None => None,
        };
        samples.push(LabeledSample {
            image,
            label: entry.label,
            mask,
        });
    }
    Dataset::new(samples, manifest.classes, manifest.split, manifest.provenance)
}
