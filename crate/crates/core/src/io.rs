//! On-disk formats: signal CSV, PNG frame directories with a JSON sidecar,
//! the `VBFS` tensor file with its index CSV, and the dataset manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ForceVector, Frame, FrameKind, SequenceRecord, Task, ToolSample};
use crate::error::{Error, Result};

pub const SIGNAL_HEADER: [&str; 15] = [
    "t", "x", "y", "z", "u", "v", "w", "theta", "s", "fx", "fy", "fz", "tx", "ty", "tz",
];

pub const TENSOR_MAGIC: &[u8; 4] = b"VBFS";
pub const TENSOR_VERSION: u16 = 1;
pub const TENSOR_HEADER_LEN: usize = 16;

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes CSV rows in memory then writes them atomically.
pub fn write_csv_atomic<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
    write_atomic(path, &bytes)
}

pub fn write_signals(path: &Path, tool: &[ToolSample], force: &[ForceVector]) -> Result<()> {
    if tool.len() != force.len() {
        return Err(Error::shape(format!("{} tool rows", tool.len()), format!("{} force rows", force.len())));
    }
    let rows: Vec<Vec<String>> = tool
        .iter()
        .zip(force)
        .map(|(s, f)| {
            let mut r = Vec::with_capacity(15);
            r.push(s.t.to_string());
            r.extend(s.position.iter().map(|v| v.to_string()));
            r.extend(s.orientation_axis.iter().map(|v| v.to_string()));
            r.push(s.orientation_angle.to_string());
            r.push(s.grasper.to_string());
            r.extend(f.0.iter().map(|v| v.to_string()));
            r
        })
        .collect();
    write_csv_atomic(path, &SIGNAL_HEADER, &rows)
}

pub fn read_signals(path: &Path) -> Result<(Vec<ToolSample>, Vec<ForceVector>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != SIGNAL_HEADER {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }
    let mut tool = Vec::new();
    let mut force = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::format(path, format!("row {}: bad field {}", line + 2, SIGNAL_HEADER[k])))
        };
        let t = rec
            .get(0)
            .and_then(|v| v.trim().parse::<u64>().ok())
            .ok_or_else(|| Error::format(path, format!("row {}: bad sample index", line + 2)))?;
        let s = num(8)?;
        if s != 0.0 && s != 1.0 {
            return Err(Error::format(path, format!("row {}: grasper must be 0 or 1", line + 2)));
        }
        tool.push(ToolSample {
            t,
            position: [num(1)?, num(2)?, num(3)?],
            orientation_axis: [num(4)?, num(5)?, num(6)?],
            orientation_angle: num(7)?,
            grasper: s as u8,
        });
        force.push(ForceVector([num(9)?, num(10)?, num(11)?, num(12)?, num(13)?, num(14)?]));
    }
    Ok((tool, force))
}

/// Orthographic camera mapping world `(x, y)` in meters to `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub px_per_m: f64,
    pub center_row: f64,
    pub center_col: f64,
}

impl CameraModel {
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.center_row - p[1] * self.px_per_m, self.center_col + p[0] * self.px_per_m)
    }
}

/// Sidecar stored next to each sequence's frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub id: String,
    pub task: Task,
    pub rate: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
}

pub const META_FILE: &str = "meta.json";
pub const SIGNAL_FILE: &str = "signals.csv";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, frame: &Frame) -> Result<()> {
    if frame.channels != 3 {
        return Err(Error::shape("3 channels", frame.channels));
    }
    let bytes: Vec<u8> = frame.pixels.iter().map(|v| to_u8(*v)).collect();
    let img = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, bytes)
        .ok_or_else(|| Error::invalid("frame buffer size"))?;
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    write_atomic(path, buf.get_ref())
}

pub fn read_png(path: &Path) -> Result<Frame> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Frame::new(
        h as usize,
        w as usize,
        3,
        img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
        FrameKind::RawRgb,
    )
}

/// Writes a sequence directory: frames, signals and sidecar.
pub fn write_sequence(dir: &Path, seq: &SequenceRecord, meta: &SequenceMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        write_png(&dir.join(frame_file_name(i)), f)?;
    }
    write_signals(&dir.join(SIGNAL_FILE), &seq.tool, &seq.force)?;
    write_atomic(&dir.join(META_FILE), serde_json::to_string_pretty(meta)?.as_bytes())
}

pub fn read_meta(dir: &Path) -> Result<SequenceMeta> {
    let p = dir.join(META_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a sequence directory. With `with_frames = false` only signals and
/// sidecar are loaded.
pub fn read_sequence(dir: &Path, with_frames: bool) -> Result<(SequenceRecord, SequenceMeta)> {
    let meta = read_meta(dir)?;
    let (tool, force) = read_signals(&dir.join(SIGNAL_FILE))?;
    let mut frames = Vec::new();
    if with_frames {
        for i in 0..tool.len() {
            let p = dir.join(frame_file_name(i));
            if !p.exists() {
                return Err(Error::format(dir, format!("missing {}", frame_file_name(i))));
            }
            let f = read_png(&p)?;
            if f.width != meta.width || f.height != meta.height {
                return Err(Error::format(&p, "frame size disagrees with sidecar"));
            }
            frames.push(f);
        }
    }
    let seq = SequenceRecord {
        id: meta.id.clone(),
        task: meta.task,
        frames,
        tool,
        force,
        rate: meta.rate,
    };
    seq.validate()?;
    Ok((seq, meta))
}

/// Header of a `VBFS` tensor file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorHeader {
    pub version: u16,
    pub height: u16,
    pub width: u16,
    pub channels: u16,
    pub count: u32,
}

impl TensorHeader {
    pub fn item_len(&self) -> usize {
        self.height as usize * self.width as usize * self.channels as usize
    }

    fn to_bytes(self) -> [u8; TENSOR_HEADER_LEN] {
        let mut b = [0u8; TENSOR_HEADER_LEN];
        b[0..4].copy_from_slice(TENSOR_MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.height.to_le_bytes());
        b[8..10].copy_from_slice(&self.width.to_le_bytes());
        b[10..12].copy_from_slice(&self.channels.to_le_bytes());
        b[12..16].copy_from_slice(&self.count.to_le_bytes());
        b
    }

    fn from_bytes(path: &Path, b: &[u8]) -> Result<Self> {
        if b.len() < TENSOR_HEADER_LEN || &b[0..4] != TENSOR_MAGIC {
            return Err(Error::format(path, "missing VBFS magic"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let h = Self {
            version: u16_at(4),
            height: u16_at(6),
            width: u16_at(8),
            channels: u16_at(10),
            count: u32::from_le_bytes([b[12], b[13], b[14], b[15]]),
        };
        if h.version != TENSOR_VERSION {
            return Err(Error::format(path, format!("unsupported version {}", h.version)));
        }
        Ok(h)
    }
}

/// In-memory tensor stack (f32 payload, item-major).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStack {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl TensorStack {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: Vec::new(),
        }
    }

    pub fn item_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn len(&self) -> usize {
        if self.item_len() == 0 {
            0
        } else {
            self.data.len() / self.item_len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.item_len() {
            return Err(Error::shape(self.item_len(), values.len()));
        }
        self.data.extend(values.iter().map(|v| *v as f32));
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = |v: usize, what: &str| -> Result<u16> {
            u16::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} exceeds u16")))
        };
        let header = TensorHeader {
            version: TENSOR_VERSION,
            height: dim(self.height, "height")?,
            width: dim(self.width, "width")?,
            channels: dim(self.channels, "channels")?,
            count: u32::try_from(self.len()).map_err(|_| Error::invalid("too many tensors"))?,
        };
        let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&header.to_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let h = TensorHeader::from_bytes(path, bytes)?;
        let n = h.item_len() * h.count as usize;
        let payload = &bytes[TENSOR_HEADER_LEN..];
        if payload.len() != 4 * n {
            return Err(Error::format(path, format!("expected {} payload bytes, found {}", 4 * n, payload.len())));
        }
        Ok(Self {
            height: h.height as usize,
            width: h.width as usize,
            channels: h.channels as usize,
            data: payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}

pub fn write_index(path: &Path, source_t: &[usize]) -> Result<()> {
    let rows: Vec<Vec<String>> = source_t
        .iter()
        .enumerate()
        .map(|(i, t)| vec![i.to_string(), t.to_string()])
        .collect();
    write_csv_atomic(path, &["frame_index", "source_t"], &rows)
}

pub fn read_index(path: &Path) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let idx: usize = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| Error::format(path, "bad frame_index"))?;
        let t: usize = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| Error::format(path, "bad source_t"))?;
        if idx != i {
            return Err(Error::format(path, format!("frame_index {idx} out of order")));
        }
        out.push(t);
    }
    Ok(out)
}

/// One row of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub task: Task,
    pub seed: u64,
    pub length: usize,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if entries.is_empty() {
        w.write_record(["id", "task", "seed", "length", "split"])?;
    }
    for e in entries {
        w.serialize(e)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
    write_atomic(path, &bytes)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn sequence_dir(root: &Path, id: &str) -> PathBuf {
    root.join(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signals_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tool = vec![
            ToolSample::new(0, [0.1, -0.2, 0.3], 1),
            ToolSample::new(1, [0.125, -0.2, 0.299], 0),
        ];
        let force = vec![ForceVector([1.0, 2.0, -3.5, 0.0, 0.1, 1e-7]); 2];
        let p = dir.path().join("s.csv");
        write_signals(&p, &tool, &force).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,x,y,z,u,v,w,theta,s,fx,fy,fz,tx,ty,tz\n"));
        let (t2, f2) = read_signals(&p).unwrap();
        assert_eq!(t2, tool);
        assert_eq!(f2, force);
    }

    #[test]
    fn bad_signal_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(read_signals(&p).is_err());
    }

    #[test]
    fn tensor_layout_is_bit_exact() {
        let mut st = TensorStack::new(2, 3, 1);
        st.push(&[0.0, 1.0, -1.0, 0.5, 0.25, 2.0]).unwrap();
        let b = st.to_bytes().unwrap();
        assert_eq!(&b[0..4], b"VBFS");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 2);
        assert_eq!(u16::from_le_bytes([b[8], b[9]]), 3);
        assert_eq!(u16::from_le_bytes([b[10], b[11]]), 1);
        assert_eq!(u32::from_le_bytes([b[12], b[13], b[14], b[15]]), 1);
        assert_eq!(b.len(), 16 + 6 * 4);
        assert_eq!(&b[16..20], &0.0f32.to_le_bytes());
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        let back = TensorStack::from_bytes(Path::new("x"), &b).unwrap();
        assert_eq!(back, st);
        assert!(TensorStack::from_bytes(Path::new("x"), &b[..20]).is_err());
    }

    #[test]
    fn png_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::new(1, 2, 3, vec![0.0, 0.5, 1.0, 0.2, 0.4, 0.6], FrameKind::RawRgb).unwrap();
        let p = dir.path().join(frame_file_name(7));
        assert!(p.ends_with("frame_000007.png"));
        write_png(&p, &f).unwrap();
        let g = read_png(&p).unwrap();
        for (a, b) in f.pixels.iter().zip(&g.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        write_manifest(&p, &[]).unwrap();
        assert!(read_manifest(&p).unwrap().is_empty());
        let e = vec![ManifestEntry { id: "push_00".into(), task: Task::Pushing, seed: 4, length: 10, split: Split::Test }];
        write_manifest(&p, &e).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), e);
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("id,task,seed,length,split\n"));
    }
}
