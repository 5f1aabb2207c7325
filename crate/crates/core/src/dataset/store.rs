//! `data.rgn` pixel container and `manifest.csv`.
//!
//! `data.rgn` layout, all integers little-endian:
//!
//! ```text
//! "RGGN" | version u32 = 1 | count u32 | height u32 | width u32
//! count * height * width f32 pixels, image-major, row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dataset, DatasetError, DatasetManifest, ImageRecord};
use crate::topology::{self, GrayImage, ScoreConfig};

pub const DATA_FILE: &str = "data.rgn";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "index,seed,circles,sigma,score,label,components";

const MAGIC: &[u8; 4] = b"RGGN";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(DATA_FILE), encode_pixels(&dataset.images)?)?;
    fs::write(dir.join(MANIFEST_FILE), encode_manifest(&dataset.manifest))?;
    Ok(())
}

/// Loads and validates a dataset directory. Every manifest row is checked
/// against a recomputation from the stored pixels at the default threshold.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    load_dataset_with(dir, &ScoreConfig::default())
}

pub fn load_dataset_with(dir: &Path, cfg: &ScoreConfig) -> Result<Dataset, DatasetError> {
    let images = decode_pixels(&fs::read(dir.join(DATA_FILE))?)?;
    let manifest = decode_manifest(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.records.len() != images.len() {
        return Err(DatasetError::format(
            0,
            format!(
                "manifest has {} rows but data file holds {} images",
                manifest.records.len(),
                images.len()
            ),
        ));
    }
    for (img, rec) in images.iter().zip(&manifest.records) {
        validate_record(img, rec, cfg)?;
    }
    Ok(Dataset { images, manifest })
}

fn validate_record(img: &GrayImage, rec: &ImageRecord, cfg: &ScoreConfig) -> Result<(), DatasetError> {
    let mismatch = |field, stored: String, recomputed: String| DatasetError::ManifestMismatch {
        index: rec.index,
        field,
        stored,
        recomputed,
    };
    let labels = topology::label_components(&topology::threshold(img, cfg));
    if labels.component_count() != rec.components {
        return Err(mismatch(
            "components",
            rec.components.to_string(),
            labels.component_count().to_string(),
        ));
    }
    let total = labels.foreground();
    let (score, label) = if total == 0 {
        (0.0, 0)
    } else {
        let largest = labels.largest_size();
        (largest as f64 / total as f64, topology::label_from_counts(largest, total))
    };
    let (stored, fresh) = (format!("{:.6}", rec.score), format!("{score:.6}"));
    if stored != fresh {
        return Err(mismatch("score", stored, fresh));
    }
    if label != rec.label {
        return Err(mismatch("label", rec.label.to_string(), label.to_string()));
    }
    Ok(())
}

pub fn encode_pixels(images: &[GrayImage]) -> Result<Vec<u8>, DatasetError> {
    let (h, w) = images.first().map_or((0, 0), |i| (i.height(), i.width()));
    if let Some(bad) = images.iter().position(|i| i.height() != h || i.width() != w) {
        return Err(DatasetError::InvalidConfig(format!(
            "image {bad} is not {h}x{w}; all images in a dataset share one shape"
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + images.len() * h * w * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, images.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for img in images {
        for p in img.pixels() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pixels(bytes: &[u8]) -> Result<Vec<GrayImage>, DatasetError> {
    if bytes.len() < HEADER_LEN {
        return Err(DatasetError::format(
            bytes.len() as u64,
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(DatasetError::format(0, "bad magic, expected \"RGGN\""));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let version = word(4);
    if version != VERSION as usize {
        return Err(DatasetError::format(4, format!("unsupported version {version}")));
    }
    let (count, h, w) = (word(8), word(12), word(16));
    if count > 0 && (h == 0 || w == 0) {
        return Err(DatasetError::format(12, format!("zero image dimension {h}x{w}")));
    }
    let expected = HEADER_LEN + count * h * w * 4;
    if bytes.len() < expected {
        return Err(DatasetError::format(
            bytes.len() as u64,
            format!("pixel block truncated: expected {expected} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(DatasetError::format(
            expected as u64,
            format!("{} trailing bytes after pixel block", bytes.len() - expected),
        ));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let base = HEADER_LEN + i * h * w * 4;
        let mut pixels = Vec::with_capacity(h * w);
        for j in 0..h * w {
            let at = base + j * 4;
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetError::format(at as u64, format!("pixel value {v} outside [0, 1]")));
            }
            pixels.push(v);
        }
        images.push(GrayImage::new(h, w, pixels).expect("validated pixels"));
    }
    Ok(images)
}

pub fn encode_manifest(manifest: &DatasetManifest) -> String {
    let mut out = String::with_capacity(64 * (manifest.records.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for r in &manifest.records {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{},{}\n",
            r.index, r.seed, r.circles, r.sigma, r.score, r.label, r.components
        ));
    }
    out
}

pub fn decode_manifest(text: &str) -> Result<DatasetManifest, DatasetError> {
    let mut lines = text.lines();
    let mut offset = 0u64;
    match lines.next() {
        Some(h) if h.trim_end() == MANIFEST_HEADER => offset += h.len() as u64 + 1,
        _ => return Err(DatasetError::format(0, "missing manifest header")),
    }
    let mut records = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            offset += line.len() as u64 + 1;
            continue;
        }
        let bad = |what: &str| DatasetError::format(offset, format!("bad {what} in row {:?}", line));
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 7 {
            return Err(bad("column count"));
        }
        let record = ImageRecord {
            index: fields[0].parse().map_err(|_| bad("index"))?,
            seed: fields[1].parse().map_err(|_| bad("seed"))?,
            circles: fields[2].parse().map_err(|_| bad("circles"))?,
            sigma: fields[3].parse().map_err(|_| bad("sigma"))?,
            score: fields[4].parse().map_err(|_| bad("score"))?,
            label: fields[5].parse().map_err(|_| bad("label"))?,
            components: fields[6].parse().map_err(|_| bad("components"))?,
        };
        if record.index != records.len() {
            return Err(bad("index (rows must be in order)"));
        }
        records.push(record);
        offset += line.len() as u64 + 1;
    }
    Ok(DatasetManifest { records })
}

/// Writes the manifest alone, e.g. for generated-image summaries.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(encode_manifest(manifest).as_bytes())?;
    f.flush()?;
    Ok(())
}
