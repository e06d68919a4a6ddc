use alloc::vec;
use alloc::vec::Vec;

use crate::volume::voxel_count;

/// Multi-channel 3D activation map, channel-major with x fastest inside a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Self {
            channels,
            dims,
            data: vec![0.0; channels * voxel_count(dims)],
        }
    }

    /// Single-channel tensor; panics if `data` does not match `dims`.
    pub fn from_single(dims: [usize; 3], data: Vec<f64>) -> Self {
        assert_eq!(data.len(), voxel_count(dims), "tensor data does not match dims");
        Self { channels: 1, dims, data }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        voxel_count(self.dims)
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[c * self.plane() + x + self.dims[0] * (y + self.dims[1] * z)]
    }
}
