use crate::error::{shape_err, Result};
use crate::model::Dims;
use crate::tensor::Tensor;

/// Dense single-channel volume, `[d, h, w]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    pub dims: Dims,
    pub data: Vec<T>,
}

pub type Image = Volume<f32>;
pub type Mask = Volume<u8>;

impl<T: Copy + Default> Volume<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.voxels() {
            return Err(shape_err("volume", format!("{} values for dims {dims}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![T::default(); dims.voxels()] }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims.h + y) * self.dims.w + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    /// Value at possibly out-of-range integer coordinates.
    #[inline]
    pub fn get_checked(&self, x: isize, y: isize, z: isize) -> Option<T> {
        let d = self.dims;
        if x < 0 || y < 0 || z < 0 || x >= d.w as isize || y >= d.h as isize || z >= d.d as isize {
            return None;
        }
        Some(self.get(x as usize, y as usize, z as usize))
    }

    /// Sub-volume starting at `origin = (x, y, z)`.
    pub fn crop(&self, origin: [usize; 3], dims: Dims) -> Result<Self> {
        let [ox, oy, oz] = origin;
        if ox + dims.w > self.dims.w || oy + dims.h > self.dims.h || oz + dims.d > self.dims.d {
            return Err(shape_err("crop", format!("window {dims} at {origin:?} exceeds {}", self.dims)));
        }
        let mut data = Vec::with_capacity(dims.voxels());
        for z in oz..oz + dims.d {
            for y in oy..oy + dims.h {
                let start = self.index(ox, y, z);
                data.extend_from_slice(&self.data[start..start + dims.w]);
            }
        }
        Ok(Self { dims, data })
    }

    /// Write `src` into this volume at `origin`.
    pub fn paste(&mut self, origin: [usize; 3], src: &Self) -> Result<()> {
        let [ox, oy, oz] = origin;
        let d = src.dims;
        if ox + d.w > self.dims.w || oy + d.h > self.dims.h || oz + d.d > self.dims.d {
            return Err(shape_err("paste", format!("window {d} at {origin:?} exceeds {}", self.dims)));
        }
        for z in 0..d.d {
            for y in 0..d.h {
                let dst = self.index(ox, oy + y, oz + z);
                let s = src.index(0, y, z);
                self.data[dst..dst + d.w].copy_from_slice(&src.data[s..s + d.w]);
            }
        }
        Ok(())
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl Volume<f32> {
    /// As a `[1, D, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.dims.dhw();
        Tensor::new(vec![1, d, h, w], self.data.clone()).expect("dims match data")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [1, d, h, w] | [d, h, w] => Self::new(Dims::new(w, h, d), t.data().to_vec()),
            _ => Err(shape_err("volume", format!("cannot view {:?} as a volume", t.shape()))),
        }
    }
}

impl Volume<u8> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v != 0).collect()
    }

    pub fn from_bools(dims: Dims, b: &[bool]) -> Self {
        Self { dims, data: b.iter().map(|&v| v as u8).collect() }
    }

    /// As a `[1, D, H, W]` tensor of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.dims.dhw();
        Tensor::new(vec![1, d, h, w], self.data.iter().map(|&v| (v != 0) as u8 as f32).collect()).expect("dims match data")
    }

    /// Elementwise union.
    pub fn union_with(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= (b != 0) as u8;
        }
    }
}
