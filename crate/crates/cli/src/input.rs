//! Frame sources: a raw binary stream or a directory of images.
//!
//! Stream layout: `width`, `height`, `channels` as little-endian `u32`, then
//! frames of `height * width * channels` bytes each, row-major, interleaved
//! channels. A zero-byte input is an empty stream.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use sirep::data::{preprocess_clip, RawFrame};
use sirep::netspec::InputContract;
use sirep::tensor::Frames;
use sirep::{Error, Result};

pub struct FrameStream {
    reader: Box<dyn Read>,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    next_index: usize,
}

/// Fill `buf` as far as the reader allows; returns the bytes read.
fn read_full(reader: &mut dyn Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn malformed(msg: String) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::InvalidData, msg))
}

impl FrameStream {
    /// Open `path` (`-` for stdin). `None` for an empty input.
    pub fn open(path: &Path) -> Result<Option<Self>> {
        let mut reader: Box<dyn Read> = if path == Path::new("-") {
            Box::new(io::stdin().lock())
        } else {
            Box::new(io::BufReader::new(
                fs::File::open(path)
                    .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("opening {}: {e}", path.display()))))?,
            ))
        };
        let mut header = [0u8; 12];
        match read_full(reader.as_mut(), &mut header)? {
            0 => return Ok(None),
            12 => {}
            n => return Err(malformed(format!("frame stream header truncated after {n} of 12 bytes"))),
        }
        let field = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
        let (width, height, channels) = (field(0), field(1), field(2));
        if width == 0 || height == 0 || !(1..=4).contains(&channels) {
            return Err(malformed(format!("frame stream header declares {width}x{height} with {channels} channels")));
        }
        Ok(Some(Self { reader, width, height, channels, next_index: 0 }))
    }

    /// Next frame, `None` at a clean end of stream.
    pub fn next_frame(&mut self) -> Result<Option<RawFrame>> {
        let mut buf = vec![0u8; self.width * self.height * self.channels];
        let n = read_full(self.reader.as_mut(), &mut buf)?;
        let index = self.next_index;
        if n == 0 {
            return Ok(None);
        }
        if n < buf.len() {
            return Err(malformed(format!("frame {index} truncated: {n} of {} bytes", buf.len())));
        }
        self.next_index += 1;
        RawFrame::new(self.width, self.height, self.channels, buf).map(Some)
    }
}

/// Encode frames in the stream layout.
#[cfg(test)]
pub fn encode_stream(width: usize, height: usize, channels: usize, frames: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + frames.iter().map(Vec::len).sum::<usize>());
    for v in [width, height, channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in frames {
        out.extend_from_slice(f);
    }
    out
}

/// Images of a directory in file-name order, as RGB.
pub fn read_image_dir(dir: &Path) -> Result<Vec<RawFrame>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("listing {}: {e}", dir.display()))))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let img = image::open(p).map_err(|e| malformed(format!("decoding {}: {e}", p.display())))?.to_rgb8();
            RawFrame::new(img.width() as usize, img.height() as usize, 3, img.into_raw())
        })
        .collect()
}

/// All frames of a stream file or image directory.
pub fn read_all(path: &Path) -> Result<Vec<RawFrame>> {
    if path.is_dir() {
        return read_image_dir(path);
    }
    let Some(mut stream) = FrameStream::open(path)? else {
        return Ok(Vec::new());
    };
    let mut frames = Vec::new();
    while let Some(f) = stream.next_frame()? {
        frames.push(f);
    }
    Ok(frames)
}

/// Convert one frame to the network's `[C, H, W]` layout in [0, 1]. Frames
/// of another size are padded to square and resized; that needs a square
/// RGB input contract.
pub fn frame_to_input(frame: &RawFrame, input: &InputContract) -> Result<Vec<f64>> {
    if (frame.width, frame.height, frame.channels) == (input.width, input.height, input.channels) {
        let (w, h, c) = (frame.width, frame.height, frame.channels);
        let mut out = vec![0.0; c * h * w];
        for (i, v) in frame.data.iter().enumerate() {
            let (pixel, ch) = (i / c, i % c);
            out[ch * h * w + pixel] = f64::from(*v) / 255.0;
        }
        return Ok(out);
    }
    if input.height != input.width || input.channels != 3 {
        return Err(Error::contract(format!(
            "frame is {}x{}x{}, network expects {}x{}x{} and cannot resize to a non-square or non-RGB input",
            frame.width, frame.height, frame.channels, input.width, input.height, input.channels
        )));
    }
    let clip = preprocess_clip(std::slice::from_ref(frame), 16.0, input.height)?;
    Ok(clip.frames.into_iter().next().expect("one frame in, one frame out"))
}

/// Resample, pad and resize a whole clip for the network.
pub fn clip_to_input(frames: &[RawFrame], native_fps: f64, input: &InputContract) -> Result<Frames> {
    if native_fps == input.fps || frames.is_empty() {
        let mut clip = Frames::new(input.channels, input.height, input.width);
        for f in frames {
            clip.push(frame_to_input(f, input)?)?;
        }
        return Ok(clip);
    }
    if input.height != input.width {
        return Err(Error::contract("resampling needs a square network input"));
    }
    preprocess_clip(frames, native_fps, input.height)
}
