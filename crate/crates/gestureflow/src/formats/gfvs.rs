//! GFVS clip container.
//!
//! ```text
//! "GFVS"  u32 version  f64 fps  u32 frame count  u32 height  u32 width
//! frame count x (height x width x 3) bytes of interleaved RGB
//! ```
//!
//! All integers and the frame rate are little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use gestureflow_core::pipeline::FrameSource;
use gestureflow_core::video::{FrameSequence, RgbImage};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GFVS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 28;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub fps: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Header {
    pub fn frame_bytes(&self) -> usize {
        self.height * self.width * 3
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        for v in [self.frames, self.height, self.width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out
    }

    fn decode(b: &[u8; HEADER_LEN as usize], path: &Path) -> Result<Self> {
        if &b[..4] != MAGIC {
            return Err(Error::format(path, "not a GFVS container (bad magic)"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes")) as usize;
        let version = u32_at(4) as u32;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported GFVS version {version}")));
        }
        let fps = f64::from_le_bytes(b[8..16].try_into().expect("8 bytes"));
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::format(path, format!("invalid frame rate {fps}")));
        }
        Ok(Header {
            fps,
            frames: u32_at(16),
            height: u32_at(20),
            width: u32_at(24),
        })
    }
}

fn header_of(seq: &FrameSequence) -> Result<Header, gestureflow_core::Error> {
    let (height, width) = seq
        .dims()
        .ok_or_else(|| gestureflow_core::Error::InvalidData("cannot store an empty sequence".into()))?;
    Ok(Header {
        fps: seq.fps(),
        frames: seq.len(),
        height,
        width,
    })
}

/// Whole container as bytes.
pub fn encode(seq: &FrameSequence) -> Result<Vec<u8>> {
    let h = header_of(seq)?;
    let mut out = h.encode();
    out.reserve(h.frames * h.frame_bytes());
    for f in seq.frames() {
        out.extend_from_slice(&f.data);
    }
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, seq: &FrameSequence) -> Result<()> {
    let path = path.as_ref();
    let h = header_of(seq)?;
    let mut w = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    w.write_all(&h.encode()).map_err(Error::io(path))?;
    for f in seq.frames() {
        w.write_all(&f.data).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// Random-access reader; frames are read on demand.
#[derive(Debug)]
pub struct GfvsReader {
    file: File,
    path: PathBuf,
    id: String,
    header: Header,
}

impl GfvsReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(Error::io(&path))?;
        let mut buf = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut buf).map_err(|_| Error::format(&path, "truncated header"))?;
        let header = Header::decode(&buf, &path)?;
        let len = file.metadata().map_err(Error::io(&path))?.len();
        let want = HEADER_LEN + (header.frames * header.frame_bytes()) as u64;
        if len != want {
            return Err(Error::format(&path, format!("{len} bytes on disk, header implies {want}")));
        }
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(GfvsReader { file, path, id, header })
    }

    pub fn header(&self) -> Header {
        self.header
    }

    pub fn read_frame(&mut self, index: usize) -> Result<RgbImage> {
        let h = self.header;
        if index >= h.frames {
            return Err(Error::format(&self.path, format!("frame {index} beyond {} frames", h.frames)));
        }
        let offset = HEADER_LEN + (index * h.frame_bytes()) as u64;
        let mut data = vec![0u8; h.frame_bytes()];
        self.file
            .seek(SeekFrom::Start(offset))
            .and_then(|_| self.file.read_exact(&mut data))
            .map_err(Error::io(&self.path))?;
        Ok(RgbImage::new(h.width, h.height, data)?)
    }

    pub fn read_all(&mut self) -> Result<FrameSequence> {
        let frames = (0..self.header.frames).map(|i| self.read_frame(i)).collect::<Result<Vec<_>>>()?;
        Ok(FrameSequence::new(frames, self.header.fps, self.id.clone())?)
    }
}

impl FrameSource for GfvsReader {
    fn id(&self) -> &str {
        &self.id
    }

    fn n_frames(&self) -> usize {
        self.header.frames
    }

    fn fps(&self) -> f64 {
        self.header.fps
    }

    fn frame(&mut self, index: usize) -> gestureflow_core::Result<RgbImage> {
        self.read_frame(index).map_err(|e| match e {
            Error::Core(c) => c,
            other => gestureflow_core::Error::InvalidData(other.to_string()),
        })
    }
}

pub fn read(path: impl AsRef<Path>) -> Result<FrameSequence> {
    GfvsReader::open(path)?.read_all()
}
