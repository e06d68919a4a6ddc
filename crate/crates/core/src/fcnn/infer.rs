use alloc::format;

use super::arch::NetworkParams;
use super::net::forward;
use super::train::block_inputs;
use crate::error::{Error, Result};
use crate::volume::{Volume3D, VolumeKind};

/// Dense inference over the whole volume.
///
/// The volume is covered by non-overlapping output blocks of side
/// `tile - margin`; each block's inputs are mirror-padded where they leave
/// the volume. The result holds the foreground-class probability.
pub fn predict_volume(params: &NetworkParams, ct: &Volume3D, tile: usize) -> Result<Volume3D> {
    ct.expect_kind(VolumeKind::Hu)?;
    let arch = &params.arch;
    let out = arch
        .output_size(tile)
        .ok_or_else(|| Error::Config(format!("inference tile {tile} below receptive field")))?;
    let dims = ct.dims();
    let half = (arch.margin() / 2) as isize;
    let mut probs = alloc::vec![0.0; ct.len()];
    let tiles: [usize; 3] = core::array::from_fn(|a| dims[a].div_ceil(out));
    for tz in 0..tiles[2] {
        for ty in 0..tiles[1] {
            for tx in 0..tiles[0] {
                let base = [tx * out, ty * out, tz * out];
                let origin: [isize; 3] = core::array::from_fn(|a| base[a] as isize - half);
                let (main, context) = block_inputs(ct, origin, [tile; 3], [out; 3], arch, &params.input_norm);
                let pred = forward(params, &main, context.as_ref())?;
                let fg = pred.probs.channel(1);
                for k in 0..out.min(dims[2] - base[2]) {
                    for j in 0..out.min(dims[1] - base[1]) {
                        let src = out * (j + out * k);
                        let dst = base[0] + dims[0] * (base[1] + j + dims[1] * (base[2] + k));
                        let w = out.min(dims[0] - base[0]);
                        probs[dst..dst + w].copy_from_slice(&fg[src..src + w]);
                    }
                }
            }
        }
    }
    // Softmax can round a hair past 1.
    probs.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    ct.with_data(VolumeKind::Probability, probs)
}
