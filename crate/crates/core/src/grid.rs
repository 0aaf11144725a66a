use crate::error::{Error, Result};

/// Single-channel image stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Inclusive-exclusive pixel rectangle `[y, y + h) × [x, x + w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.h && x >= self.x && x < self.x + self.w
    }

    pub fn area(&self) -> usize {
        self.h * self.w
    }
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Config(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Grid { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Grid { height, width, data: vec![0.0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Grid { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn crop(&self, r: Rect) -> Result<Grid> {
        if r.y + r.h > self.height || r.x + r.w > self.width {
            return Err(Error::Usage(format!("crop {r:?} exceeds {}x{} grid", self.height, self.width)));
        }
        let mut data = Vec::with_capacity(r.h * r.w);
        for y in r.y..r.y + r.h {
            data.extend_from_slice(&self.data[y * self.width + r.x..y * self.width + r.x + r.w]);
        }
        Ok(Grid { height: r.h, width: r.w, data })
    }

    pub fn paste(&mut self, src: &Grid, y0: usize, x0: usize) -> Result<()> {
        if y0 + src.height > self.height || x0 + src.width > self.width {
            return Err(Error::Usage("pasted grid exceeds destination".into()));
        }
        for y in 0..src.height {
            let d = (y0 + y) * self.width + x0;
            self.data[d..d + src.width].copy_from_slice(&src.data[y * src.width..(y + 1) * src.width]);
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}
