//! Directory of numbered binary PPM frames plus `meta.txt`.
//!
//! Frames are `frame_000001.ppm`, `frame_000002.ppm`, ... (P6, maxval 255);
//! `meta.txt` holds `fps=<real>` and `frames=<int>` lines.

use std::path::Path;

use gestureflow_core::video::{FrameSequence, RgbImage};

use crate::error::{Error, Result};

pub const META: &str = "meta.txt";

pub fn frame_name(index: usize) -> String {
    format!("frame_{:06}.ppm", index + 1)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    // Header: magic, width, height, maxval separated by whitespace, with
    // `#` comments allowed; exactly one whitespace byte before the pixels.
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PPM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::format(path, format!("expected P6 PPM, found {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::format(path, format!("bad PPM {what} {s:?}")))
    };
    let (w, h, maxval) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} unsupported (want 255)")));
    }
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    if data.len() != w * h * 3 {
        return Err(Error::format(path, format!("{} pixel bytes for {w}x{h}", data.len())));
    }
    Ok(RgbImage::new(w, h, data.to_vec())?)
}

pub fn write(dir: impl AsRef<Path>, seq: &FrameSequence) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    for (i, f) in seq.frames().iter().enumerate() {
        let p = dir.join(frame_name(i));
        std::fs::write(&p, encode_ppm(f)).map_err(Error::io(&p))?;
    }
    let meta = dir.join(META);
    std::fs::write(&meta, format!("fps={}\nframes={}\n", seq.fps(), seq.len())).map_err(Error::io(&meta))
}

struct Meta {
    fps: f64,
    frames: usize,
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join(META);
    if !path.is_file() {
        return Err(Error::format(dir, format!("missing metadata file {META}")));
    }
    let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    let (mut fps, mut frames) = (None, None);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(&path, format!("line {line:?} is not key=value")))?;
        match k.trim() {
            "fps" => fps = Some(v.trim().parse::<f64>().map_err(|_| Error::format(&path, format!("bad fps {v:?}")))?),
            "frames" => {
                frames = Some(v.trim().parse::<usize>().map_err(|_| Error::format(&path, format!("bad frame count {v:?}")))?)
            }
            other => return Err(Error::format(&path, format!("unknown key {other:?}"))),
        }
    }
    match (fps, frames) {
        (Some(fps), Some(frames)) => Ok(Meta { fps, frames }),
        (None, _) => Err(Error::format(&path, "missing fps")),
        (_, None) => Err(Error::format(&path, "missing frames")),
    }
}

pub fn read(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let mut frames = Vec::with_capacity(meta.frames);
    for i in 0..meta.frames {
        let p = dir.join(frame_name(i));
        let bytes = std::fs::read(&p).map_err(Error::io(&p))?;
        frames.push(decode_ppm(&bytes, &p)?);
    }
    if let Some(first) = frames.first() {
        let (w, h) = (first.width, first.height);
        if let Some(i) = frames.iter().position(|f| (f.width, f.height) != (w, h)) {
            return Err(Error::format(
                dir.join(frame_name(i)),
                format!("frame {} is {}x{}, expected {w}x{h} like frame 1", i + 1, frames[i].width, frames[i].height),
            ));
        }
    }
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(FrameSequence::new(frames, meta.fps, id)?)
}
