//! Run-length mask codec: row-major pixel order, alternating run counts
//! starting with zeros. A mask that begins with a 1-pixel therefore encodes
//! a leading zero-run of length 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mask::Bitmap;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// (height, width) of the encoded bitmap.
    pub size: (usize, usize),
    /// Alternating run lengths, zeros first.
    pub counts: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("run lengths sum to {got}, expected {expected} for a {h}x{w} mask")]
    LengthMismatch { got: usize, expected: usize, h: usize, w: usize },
}

pub fn encode_mask(bitmap: &Bitmap) -> RleMask {
    let mut counts = Vec::new();
    let mut current: u8 = 0;
    let mut run = 0usize;
    for &px in bitmap.data() {
        if px == current {
            run += 1;
        } else {
            counts.push(run);
            current = px;
            run = 1;
        }
    }
    counts.push(run);
    RleMask { size: (bitmap.height(), bitmap.width()), counts }
}

pub fn decode_mask(rle: &RleMask) -> Result<Bitmap, CodecError> {
    let (h, w) = rle.size;
    let expected = h * w;
    let total: usize = rle.counts.iter().sum();
    if total != expected {
        return Err(CodecError::LengthMismatch { got: total, expected, h, w });
    }
    let mut data = Vec::with_capacity(expected);
    let mut value: u8 = 0;
    for &run in &rle.counts {
        data.extend(std::iter::repeat_n(value, run));
        value = 1 - value;
    }
    Ok(Bitmap::from_raw(h, w, data))
}
