//! 8-bit RGB frames and frame sequences.

use alloc::vec;
use alloc::vec::Vec;

use crate::{err, Result};

/// Interleaved RGB image, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(err!(
                Shape,
                "frame data {} bytes, expected {}x{}x3",
                data.len(),
                width,
                height
            ));
        }
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = vec![0u8; width * height * 3];
        for px in data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        Frame { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Frame { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel value as f64 in [0, 255].
    pub fn channel_f64(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c] as f64
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// An ordered run of frames from one clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoSequence {
    pub frames: Vec<Frame>,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>) -> Self {
        VideoSequence { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Anchor, reference, and target frames for one transfer.
///
/// The anchor and reference are spatially aligned by provenance: the
/// reference is an appearance-only edit of the anchor.
#[derive(Debug, Clone)]
pub struct FrameTriplet {
    pub anchor: Frame,
    pub reference: Frame,
    pub target: Frame,
}

impl FrameTriplet {
    pub fn new(anchor: Frame, reference: Frame, target: Frame) -> Result<Self> {
        if !anchor.same_size(&reference) || !anchor.same_size(&target) {
            return Err(err!(Shape, "triplet frames must share dimensions"));
        }
        Ok(FrameTriplet { anchor, reference, target })
    }
}
