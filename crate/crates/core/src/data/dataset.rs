use std::path::{Path, PathBuf};

use std::io::Cursor;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::resize::{downsample_bilinear, downsample_labels};
use crate::error::{Error, Result};
use crate::grid::{Image, LabelMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One image with its dense ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub image: Image,
    pub mask: LabelMask,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn train(&self) -> Vec<&Record> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&Record> {
        self.split(Split::Test)
    }

    /// Channel count shared by every image, or `None` for an empty dataset.
    pub fn channels(&self) -> Result<Option<usize>> {
        let mut out = None;
        for r in &self.records {
            match out {
                None => out = Some(r.image.channels()),
                Some(c) if c != r.image.channels() => {
                    return Err(Error::Load {
                        id: r.id.clone(),
                        reason: format!("has {} channels, expected {c}", r.image.channels()),
                    })
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Every image resized bilinearly and every mask by nearest neighbour.
    pub fn resized(&self, height: usize, width: usize) -> Result<Dataset> {
        let records = self
            .records
            .iter()
            .map(|r| {
                Ok(Record {
                    id: r.id.clone(),
                    image: downsample_bilinear(&r.image, height, width)?,
                    mask: downsample_labels(&r.mask, height, width)?,
                    split: r.split,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            classes: self.classes,
            records,
        })
    }
}

/// On-disk manifest; paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: usize,
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        manifest.validate(path)?;
        Ok(manifest)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if self.classes < 2 || self.classes > 255 {
            return Err(bad(format!("class count {} outside 2..=255", self.classes)));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(bad(format!("duplicate record id `{}`", r.id)));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads an 8-bit grayscale or RGB PNG (other layouts are converted) into `[0, 1]`.
pub fn read_image_png(path: &Path) -> Result<Image> {
    image_from_dynamic(open(path)?)
}

/// Reads a single-channel PNG of class ids.
pub fn read_mask_png(path: &Path) -> Result<LabelMask> {
    mask_from_dynamic(open(path)?).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

/// [`read_image_png`] for an in-memory PNG.
pub fn decode_image_png(bytes: &[u8]) -> Result<Image> {
    image_from_dynamic(decode(bytes)?)
}

/// [`read_mask_png`] for an in-memory PNG.
pub fn decode_mask_png(bytes: &[u8]) -> Result<LabelMask> {
    mask_from_dynamic(decode(bytes)?).map_err(Error::InvalidInput)
}

fn image_from_dynamic(img: DynamicImage) -> Result<Image> {
    let (channels, w, h, bytes) = if img.color().has_color() {
        let rgb = img.to_rgb8();
        (3, rgb.width(), rgb.height(), rgb.into_raw())
    } else {
        let g = img.to_luma8();
        (1, g.width(), g.height(), g.into_raw())
    };
    let values = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
    Image::new(h as usize, w as usize, channels, values)
}

fn mask_from_dynamic(img: DynamicImage) -> std::result::Result<LabelMask, String> {
    if img.color().has_color() {
        return Err("mask must be single-channel".into());
    }
    let g = img.to_luma8();
    LabelMask::new(g.height() as usize, g.width() as usize, g.into_raw()).map_err(|e| e.to_string())
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::invalid(format!("PNG: {e}")))
}

/// Encodes 1- or 3-channel images as 8-bit PNG, rounding to the nearest level.
pub fn encode_image_png(image: &Image) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = image
        .values()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let (w, h) = (image.width() as u32, image.height() as u32);
    let dynamic = match image.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size")),
        c => return Err(Error::Unsupported(format!("cannot write {c}-channel PNG"))),
    };
    encode(&dynamic)
}

/// Encodes class ids as a single-channel 8-bit PNG.
pub fn encode_mask_png(mask: &LabelMask) -> Result<Vec<u8>> {
    let gray = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.labels().to_vec())
        .expect("buffer size");
    encode(&DynamicImage::ImageLuma8(gray))
}

fn encode(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("PNG: {e}")))?;
    Ok(out.into_inner())
}

pub fn write_image_png(image: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_image_png(image)?).map_err(|e| Error::io(path, e))
}

pub fn write_mask_png(mask: &LabelMask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask_png(mask)?).map_err(|e| Error::io(path, e))
}

/// Loads every record listed in the manifest at `path`.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let load_err = |e: Error| Error::Load {
            id: r.id.clone(),
            reason: e.to_string(),
        };
        let image = read_image_png(&base.join(&r.image)).map_err(load_err)?;
        let mask = read_mask_png(&base.join(&r.mask)).map_err(load_err)?;
        if mask.height() != image.height() || mask.width() != image.width() {
            return Err(Error::Load {
                id: r.id.clone(),
                reason: format!(
                    "mask is {}x{} but image is {}x{}",
                    mask.height(),
                    mask.width(),
                    image.height(),
                    image.width()
                ),
            });
        }
        if let Some(l) = mask.labels().iter().find(|l| **l as usize >= manifest.classes) {
            return Err(Error::Load {
                id: r.id.clone(),
                reason: format!("label {l} is not below class count {}", manifest.classes),
            });
        }
        records.push(Record {
            id: r.id.clone(),
            image,
            mask,
            split: r.split,
        });
    }
    let dataset = Dataset {
        classes: manifest.classes,
        records,
    };
    dataset.channels()?;
    Ok(dataset)
}

/// Writes images, masks and `manifest.json` into `dir`; returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut records = Vec::with_capacity(dataset.records.len());
    for r in &dataset.records {
        let image = PathBuf::from("images").join(format!("{}.png", r.id));
        let mask = PathBuf::from("masks").join(format!("{}.png", r.id));
        write_image_png(&r.image, &dir.join(&image))?;
        write_mask_png(&r.mask, &dir.join(&mask))?;
        records.push(ManifestRecord {
            id: r.id.clone(),
            image,
            mask,
            split: r.split,
        });
    }
    let path = dir.join("manifest.json");
    DatasetManifest {
        classes: dataset.classes,
        records,
    }
    .write(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let img = Image::new(2, 3, 1, [0u8, 1, 64, 128, 255, 51].iter().map(|b| *b as f64 / 255.0).collect()).unwrap();
        let bright = Image::new(2, 3, 1, vec![1.0; 6]).unwrap();
        Dataset {
            classes: 2,
            records: vec![
                Record {
                    id: "a".into(),
                    image: img,
                    mask: LabelMask::new(2, 3, vec![0, 1, 1, 0, 0, 1]).unwrap(),
                    split: Split::Train,
                },
                Record {
                    id: "b".into(),
                    image: bright,
                    mask: LabelMask::filled(2, 3, 0),
                    split: Split::Test,
                },
            ],
        }
    }

    #[test]
    fn empty_manifest_loads_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, r#"{"classes": 2, "records": []}"#).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert!(ds.records.is_empty());
        assert_eq!(ds.classes, 2);
    }

    #[test]
    fn missing_mask_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_dataset(&tiny(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("masks/b.png")).unwrap();
        match load_dataset(&path) {
            Err(Error::Load { id, .. }) => assert_eq!(id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = tiny();
        ds.records[0].mask.set(0, 0, 7);
        let path = save_dataset(&ds, dir.path()).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(&err, Error::Load { id, .. } if id == "a"), "{err}");
    }

    #[test]
    fn shape_mismatch_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = save_dataset(&tiny(), dir.path()).unwrap();
        write_mask_png(&LabelMask::filled(3, 3, 0), &dir.path().join("masks/a.png")).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(&err, Error::Load { id, .. } if id == "a"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let rec = r#"{"id": "x", "image": "i.png", "mask": "m.png", "split": "train"}"#;
        std::fs::write(&path, format!(r#"{{"classes": 2, "records": [{rec}, {rec}]}}"#)).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        let path = save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<f64> = (0..18).map(|i| (i * 13) as f64 / 255.0).collect();
        let img = Image::new(2, 3, 3, vals).unwrap();
        let p = dir.path().join("rgb.png");
        write_image_png(&img, &p).unwrap();
        assert_eq!(read_image_png(&p).unwrap(), img);
    }
}
