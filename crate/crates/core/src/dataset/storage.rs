//! On-disk sequence persistence.
//!
//! Layout under a dataset root, one directory per sequence key:
//!
//! ```text
//! <root>/<subject>/<COND>-<tt>/<vvv>/<modality>/meta.json
//! <root>/<subject>/<COND>-<tt>/<vvv>/<modality>/0000.png ...   image modalities
//! <root>/<subject>/<COND>-<tt>/<vvv>/<modality>/points.pcf     point clouds
//! ```
//!
//! Image frames are 8-bit PNG (gray, gray+alpha or RGB for 1/2/3 channels).
//! Point clouds use the `PCF1` container: magic, little-endian `u32` frame
//! count, then per frame a `u32` point count followed by `f32` x,y,z triples.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::{parse_sequence_key, Frames, GaitSequence, PointFrame, SequenceError, SequenceMeta};

pub const PCF_MAGIC: &[u8; 4] = b"PCF1";
pub const META_FILE: &str = "meta.json";
pub const POINTS_FILE: &str = "points.pcf";

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: png: {message}")]
    Png { path: PathBuf, message: String },
    #[error("{path}: corrupt data: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, message: impl Into<String>) -> StorageError {
    StorageError::Corrupt {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Per-sequence metadata record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub key: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

pub fn sequence_dir(root: &Path, meta: &SequenceMeta) -> PathBuf {
    root.join(meta.key())
}

pub fn read_record(dir: &Path) -> Result<SequenceRecord, StorageError> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| corrupt(&path, e.to_string()))
}

fn write_record(dir: &Path, record: &SequenceRecord) -> Result<(), StorageError> {
    let path = dir.join(META_FILE);
    let mut text = serde_json::to_string_pretty(record).expect("record serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

/// Writes a sequence below `root` and returns its relative directory.
pub fn write_sequence(root: &Path, seq: &GaitSequence) -> Result<PathBuf, StorageError> {
    let rel = PathBuf::from(seq.meta.key());
    let dir = root.join(&rel);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    match &seq.frames {
        Frames::Image(frames) => {
            let (t, c, h, w) = frames.dim();
            for i in 0..t {
                let bytes: Vec<u8> = (0..h)
                    .flat_map(|y| (0..w).flat_map(move |x| (0..c).map(move |ch| (ch, y, x))))
                    .map(|(ch, y, x)| quantize(frames[[i, ch, y, x]]))
                    .collect();
                write_png(&dir.join(frame_file(i)), w, h, c, &bytes)?;
            }
            write_record(
                &dir,
                &SequenceRecord {
                    key: seq.meta.key(),
                    frames: t,
                    channels: Some(c),
                    height: Some(h),
                    width: Some(w),
                },
            )?;
        }
        Frames::Points(frames) => {
            let path = dir.join(POINTS_FILE);
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            let mut out = BufWriter::new(file);
            write_pcf(&mut out, frames).map_err(io_err(&path))?;
            out.flush().map_err(io_err(&path))?;
            write_record(
                &dir,
                &SequenceRecord {
                    key: seq.meta.key(),
                    frames: frames.len(),
                    channels: None,
                    height: None,
                    width: None,
                },
            )?;
        }
    }
    Ok(rel)
}

/// Reads the sequence stored in `dir`; image values are rescaled to `[0, 1]`.
pub fn read_sequence(dir: &Path) -> Result<GaitSequence, StorageError> {
    let record = read_record(dir)?;
    let meta_path = dir.join(META_FILE);
    let meta = parse_sequence_key(&record.key).map_err(|e| corrupt(&meta_path, e.to_string()))?;
    let frames = if meta.modality.is_image() {
        let raw = read_image_bytes(dir, &record)?;
        Frames::Image(raw.mapv(|b| f32::from(b) / 255.0))
    } else {
        let path = dir.join(POINTS_FILE);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let frames = decode_pcf(&bytes).map_err(|m| corrupt(&path, m))?;
        if frames.len() != record.frames {
            return Err(corrupt(&path, "frame count disagrees with meta.json"));
        }
        Frames::Points(frames)
    };
    Ok(GaitSequence::new(meta, frames)?)
}

/// Raw 8-bit frames `T x C x H x W` of an image sequence.
pub fn read_image_bytes(dir: &Path, record: &SequenceRecord) -> Result<Array4<u8>, StorageError> {
    let meta_path = dir.join(META_FILE);
    let (Some(c), Some(h), Some(w)) = (record.channels, record.height, record.width) else {
        return Err(corrupt(&meta_path, "image record without shape"));
    };
    let mut out = Array4::<u8>::zeros((record.frames, c, h, w));
    for i in 0..record.frames {
        let path = dir.join(frame_file(i));
        let (pw, ph, pc, bytes) = read_png(&path)?;
        if (pw, ph, pc) != (w, h, c) {
            return Err(corrupt(&path, "frame shape disagrees with meta.json"));
        }
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[[i, ch, y, x]] = bytes[(y * w + x) * c + ch];
                }
            }
        }
    }
    Ok(out)
}

fn frame_file(i: usize) -> String {
    format!("{i:04}.png")
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn png_color(channels: usize) -> Option<png::ColorType> {
    match channels {
        1 => Some(png::ColorType::Grayscale),
        2 => Some(png::ColorType::GrayscaleAlpha),
        3 => Some(png::ColorType::Rgb),
        _ => None,
    }
}

fn write_png(path: &Path, w: usize, h: usize, c: usize, bytes: &[u8]) -> Result<(), StorageError> {
    let color = png_color(c).ok_or_else(|| corrupt(path, format!("unsupported channel count {c}")))?;
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| StorageError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>), StorageError> {
    let png_err = |e: png::DecodingError| StorageError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = fs::File::open(path).map_err(io_err(path))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| corrupt(path, "png too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(corrupt(path, "expected 8-bit png"));
    }
    let c = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        other => return Err(corrupt(path, format!("unsupported color type {other:?}"))),
    };
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, c, buf))
}

pub fn write_pcf<W: Write>(out: &mut W, frames: &[PointFrame]) -> std::io::Result<()> {
    out.write_all(PCF_MAGIC)?;
    out.write_all(&(frames.len() as u32).to_le_bytes())?;
    for frame in frames {
        out.write_all(&(frame.len() as u32).to_le_bytes())?;
        for p in frame {
            for v in p {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn encode_pcf(frames: &[PointFrame]) -> Vec<u8> {
    let mut out = Vec::new();
    write_pcf(&mut out, frames).expect("writing to a Vec cannot fail");
    out
}

pub fn decode_pcf(bytes: &[u8]) -> Result<Vec<PointFrame>, String> {
    let mut cur = bytes;
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| "truncated header")?;
    if &magic != PCF_MAGIC {
        return Err("bad magic".into());
    }
    let read_u32 = |cur: &mut &[u8]| -> Result<u32, String> {
        let mut b = [0u8; 4];
        cur.read_exact(&mut b).map_err(|_| "truncated".to_string())?;
        Ok(u32::from_le_bytes(b))
    };
    let n_frames = read_u32(&mut cur)? as usize;
    let mut frames = Vec::with_capacity(n_frames.min(1 << 16));
    for _ in 0..n_frames {
        let n = read_u32(&mut cur)? as usize;
        if cur.len() < n * 12 {
            return Err("truncated point data".into());
        }
        let frame: PointFrame = cur[..n * 12]
            .chunks_exact(12)
            .map(|c| {
                let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]);
                [f(0), f(4), f(8)]
            })
            .collect();
        cur = &cur[n * 12..];
        frames.push(frame);
    }
    if !cur.is_empty() {
        return Err("trailing bytes".into());
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Condition, Modality};
    use proptest::prelude::*;

    #[test]
    fn pcf_layout_is_little_endian() {
        let bytes = encode_pcf(&[vec![[1.0, 2.0, 3.0]], vec![]]);
        assert_eq!(&bytes[..4], b"PCF1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &3.0f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &0u32.to_le_bytes());
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn pcf_rejects_garbage() {
        assert!(decode_pcf(b"PCF2\0\0\0\0").is_err());
        assert!(decode_pcf(b"PCF1\x01\0\0\0\x05\0\0\0").is_err());
        let mut ok = encode_pcf(&[vec![[0.0; 3]]]);
        ok.push(0);
        assert!(decode_pcf(&ok).is_err());
    }

    proptest! {
        #[test]
        fn pcf_round_trip(frames in prop::collection::vec(
            prop::collection::vec(prop::array::uniform3(-50.0f32..50.0), 0..20), 0..6)) {
            prop_assert_eq!(decode_pcf(&encode_pcf(&frames)).unwrap(), frames);
        }
    }

    #[test]
    fn image_sequence_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        for (m, c) in [
            (Modality::RgbSilhouette, 1),
            (Modality::Pose2dHeatmap, 2),
            (Modality::Rgb, 3),
        ] {
            let meta = SequenceMeta::new("s1", 36, Condition::Bg, 1, m).unwrap();
            let frames = Array4::from_shape_fn((2, c, 5, 4), |(t, ch, y, x)| {
                ((t + ch * 3 + y * 5 + x) % 11) as f32 / 10.0
            });
            let seq = GaitSequence::new(meta.clone(), Frames::Image(frames.clone())).unwrap();
            let rel = write_sequence(dir.path(), &seq).unwrap();
            assert_eq!(rel, PathBuf::from(meta.key()));
            let back = read_sequence(&dir.path().join(rel)).unwrap();
            assert_eq!(back.meta, meta);
            let img = back.image().unwrap();
            assert_eq!(img.dim(), frames.dim());
            for (a, b) in img.iter().zip(frames.iter()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn point_sequence_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let meta = SequenceMeta::new("s1", 0, Condition::Nm, 2, Modality::LidarPoints).unwrap();
        let frames = vec![vec![[0.1, 5.2, 1.3], [-0.4, 5.0, 0.7]], vec![[0.0, 4.9, 1.0]]];
        let seq = GaitSequence::new(meta, Frames::Points(frames.clone())).unwrap();
        let rel = write_sequence(dir.path(), &seq).unwrap();
        let back = read_sequence(&dir.path().join(rel)).unwrap();
        assert_eq!(back.points().unwrap(), &frames[..]);
    }
}
