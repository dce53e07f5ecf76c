//! Clip decoding with format detection.
//!
//! A directory is read as a PPM frame directory, a file as a GFVS container.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use gestureflow_core::pipeline::FrameSource;
use gestureflow_core::video::{FrameSequence, RgbImage};

use crate::error::{Error, Result};
use crate::formats::{framedir, gfvs};

/// An opened clip. GFVS clips are read frame by frame on demand; frame
/// directories are loaded whole.
#[derive(Debug)]
pub enum Clip {
    Gfvs(gfvs::GfvsReader),
    Frames(FrameSequence),
}

pub fn open_clip(path: impl AsRef<Path>) -> Result<Clip> {
    let path = path.as_ref();
    if path.is_dir() {
        return Ok(Clip::Frames(framedir::read(path)?));
    }
    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(Error::io(path))?;
    if &magic == gfvs::MAGIC {
        Ok(Clip::Gfvs(gfvs::GfvsReader::open(path)?))
    } else {
        Err(Error::format(path, "unrecognised clip format (expected a GFVS file or a frame directory)"))
    }
}

/// Every frame of the clip at `path`.
pub fn decode_sequence(path: impl AsRef<Path>) -> Result<FrameSequence> {
    match open_clip(path)? {
        Clip::Gfvs(mut r) => r.read_all(),
        Clip::Frames(seq) => Ok(seq),
    }
}

impl FrameSource for Clip {
    fn id(&self) -> &str {
        match self {
            Clip::Gfvs(r) => r.id(),
            Clip::Frames(s) => s.id(),
        }
    }

    fn n_frames(&self) -> usize {
        match self {
            Clip::Gfvs(r) => r.n_frames(),
            Clip::Frames(s) => s.n_frames(),
        }
    }

    fn fps(&self) -> f64 {
        match self {
            Clip::Gfvs(r) => FrameSource::fps(r),
            Clip::Frames(s) => FrameSource::fps(s),
        }
    }

    fn frame(&mut self, index: usize) -> gestureflow_core::Result<RgbImage> {
        match self {
            Clip::Gfvs(r) => r.frame(index),
            Clip::Frames(s) => s.frame(index),
        }
    }
}
