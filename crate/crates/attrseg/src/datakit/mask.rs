//! Binary mask bitmap shared by the data kit, the model and the metrics.

/// Row-major binary bitmap. Values are strictly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl Bitmap {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0; h * w] }
    }

    pub fn from_raw(h: usize, w: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), h * w, "bitmap data length mismatch");
        assert!(data.iter().all(|&v| v <= 1), "bitmap values must be 0/1");
        Self { h, w, data }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x) as u8);
            }
        }
        Self { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn same_shape(&self, other: &Bitmap) -> bool {
        self.h == other.h && self.w == other.w
    }
}
