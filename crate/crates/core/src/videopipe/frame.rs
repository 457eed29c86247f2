use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chroma subsampling of a planar frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChromaFormat {
    #[serde(rename = "420")]
    Yuv420,
    #[serde(rename = "444")]
    Yuv444,
}

impl ChromaFormat {
    /// Chroma plane geometry for a `width x height` luma plane.
    pub fn chroma_dims(self, width: usize, height: usize) -> (usize, usize) {
        match self {
            ChromaFormat::Yuv420 => (width.div_ceil(2), height.div_ceil(2)),
            ChromaFormat::Yuv444 => (width, height),
        }
    }
}

/// Plane selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Y,
    Cb,
    Cr,
}

/// One video frame stored as three sample planes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanarFrame {
    width: usize,
    height: usize,
    bit_depth: u8,
    chroma: ChromaFormat,
    planes: [Vec<u16>; 3],
}

impl PlanarFrame {
    /// All-zero frame.
    pub fn new(width: usize, height: usize, bit_depth: u8, chroma: ChromaFormat) -> Result<Self> {
        Self::check_header(width, height, bit_depth, chroma)?;
        let (cw, ch) = chroma.chroma_dims(width, height);
        Ok(PlanarFrame {
            width,
            height,
            bit_depth,
            chroma,
            planes: [vec![0; width * height], vec![0; cw * ch], vec![0; cw * ch]],
        })
    }

    /// Frame with every sample of each plane set to the given value.
    pub fn constant(
        width: usize,
        height: usize,
        bit_depth: u8,
        chroma: ChromaFormat,
        yuv: [u16; 3],
    ) -> Result<Self> {
        let mut f = Self::new(width, height, bit_depth, chroma)?;
        for (p, v) in f.planes.iter_mut().zip(yuv) {
            p.iter_mut().for_each(|s| *s = v);
        }
        f.validate()?;
        Ok(f)
    }

    /// Frame from explicit planes, validated against the header.
    pub fn from_planes(
        width: usize,
        height: usize,
        bit_depth: u8,
        chroma: ChromaFormat,
        y: Vec<u16>,
        cb: Vec<u16>,
        cr: Vec<u16>,
    ) -> Result<Self> {
        Self::check_header(width, height, bit_depth, chroma)?;
        let f = PlanarFrame {
            width,
            height,
            bit_depth,
            chroma,
            planes: [y, cb, cr],
        };
        f.validate()?;
        Ok(f)
    }

    fn check_header(width: usize, height: usize, bit_depth: u8, chroma: ChromaFormat) -> Result<()> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!("empty frame {width}x{height}")));
        }
        if bit_depth != 8 && bit_depth != 10 {
            return Err(Error::InvalidInput(format!("unsupported bit depth {bit_depth}")));
        }
        if chroma == ChromaFormat::Yuv420 && (width % 2 != 0 || height % 2 != 0) {
            return Err(Error::InvalidInput(format!(
                "4:2:0 frame needs even dimensions, got {width}x{height}"
            )));
        }
        Ok(())
    }

    /// Checks plane sizes and sample ranges.
    pub fn validate(&self) -> Result<()> {
        let (cw, ch) = self.chroma_dims();
        let expect = [self.width * self.height, cw * ch, cw * ch];
        for (i, (p, n)) in self.planes.iter().zip(expect).enumerate() {
            if p.len() != n {
                return Err(Error::InvalidInput(format!(
                    "plane {i} has {} samples, expected {n}",
                    p.len()
                )));
            }
        }
        let max = self.max_value();
        if self.planes.iter().flatten().any(|&s| s > max) {
            return Err(Error::InvalidInput(format!(
                "sample exceeds {}-bit range",
                self.bit_depth
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn chroma_format(&self) -> ChromaFormat {
        self.chroma
    }

    pub fn chroma_dims(&self) -> (usize, usize) {
        self.chroma.chroma_dims(self.width, self.height)
    }

    /// Largest representable sample value.
    pub fn max_value(&self) -> u16 {
        (1u16 << self.bit_depth) - 1
    }

    pub fn plane_dims(&self, p: Plane) -> (usize, usize) {
        match p {
            Plane::Y => (self.width, self.height),
            _ => self.chroma_dims(),
        }
    }

    pub fn plane(&self, p: Plane) -> &[u16] {
        &self.planes[p as usize]
    }

    pub fn plane_mut(&mut self, p: Plane) -> &mut [u16] {
        &mut self.planes[p as usize]
    }

    pub fn get(&self, p: Plane, x: usize, y: usize) -> u16 {
        let (w, _) = self.plane_dims(p);
        self.planes[p as usize][y * w + x]
    }

    pub fn set(&mut self, p: Plane, x: usize, y: usize, v: u16) {
        let (w, _) = self.plane_dims(p);
        self.planes[p as usize][y * w + x] = v;
    }

    /// True when geometry, bit depth and chroma format agree.
    pub fn same_format(&self, other: &PlanarFrame) -> bool {
        (self.width, self.height, self.bit_depth, self.chroma)
            == (other.width, other.height, other.bit_depth, other.chroma)
    }
}
