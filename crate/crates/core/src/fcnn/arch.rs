use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Initial negative-side slope of every PReLU unit.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// Layer layout of the dual-path network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    /// Output channels of each 3^3 convolution, shallow to deep. Both paths share it.
    pub conv_kernels: Vec<usize>,
    pub kernel_size: usize,
    /// Widths of the fully connected layers, realised as 1^3 convolutions.
    pub fc_widths: Vec<usize>,
    pub n_classes: usize,
    /// Adds the down-sampled context path.
    pub dual_path: bool,
}

impl ArchitectureSpec {
    /// Full-size network: 9 convolutions per path, 3 fully connected layers.
    pub fn paper_default() -> Self {
        Self {
            conv_kernels: vec![25, 25, 25, 50, 50, 50, 75, 75, 75],
            kernel_size: 3,
            fc_widths: vec![400, 200, 150],
            n_classes: 2,
            dual_path: true,
        }
    }

    /// Same depth and receptive field with far fewer channels, for CPU runs.
    pub fn tiny() -> Self {
        Self {
            conv_kernels: vec![4, 4, 4, 8, 8, 8, 12, 12, 12],
            kernel_size: 3,
            fc_widths: vec![32, 16, 8],
            n_classes: 2,
            dual_path: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_kernels.is_empty() {
            return Err(Error::Config("at least one convolutional layer is required".into()));
        }
        if self.conv_kernels.iter().chain(&self.fc_widths).any(|&c| c == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if self.n_classes != 2 {
            return Err(Error::Config(format!("{} classes requested; only 2 are supported", self.n_classes)));
        }
        Ok(())
    }

    /// Voxels lost per axis along one convolutional path.
    pub fn margin(&self) -> usize {
        self.conv_kernels.len() * (self.kernel_size - 1)
    }

    /// Receptive field of one path along each axis.
    pub fn receptive_field(&self) -> usize {
        self.margin() + 1
    }

    /// Spatial output size for a main-path input of side `input`.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        input.checked_sub(self.margin()).filter(|&o| o >= 1)
    }

    /// Side of the full-resolution context block for an output side `out`.
    pub fn context_size(&self, out: usize) -> usize {
        2 * (out.div_ceil(2) + self.margin())
    }

    /// Offset of the context block origin relative to the main block origin.
    /// The centre-cropped, up-sampled context output then lines up voxel for
    /// voxel with the main output.
    pub fn context_offset(&self, out: usize) -> isize {
        let crop = (2 * out.div_ceil(2) - out) / 2;
        self.margin() as isize / 2 - self.margin() as isize - crop as isize
    }

    fn fused_channels(&self) -> usize {
        let last = *self.conv_kernels.last().unwrap_or(&0);
        if self.dual_path {
            2 * last
        } else {
            last
        }
    }
}

/// One convolutional layer with optional PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// `[out][in][kz][ky][kx]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Absent on the classification layer.
    pub slopes: Option<Vec<f64>>,
}

impl Layer {
    fn zeros(in_channels: usize, out_channels: usize, kernel_size: usize, prelu: bool) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            weights: vec![0.0; out_channels * in_channels * kernel_size.pow(3)],
            bias: vec![0.0; out_channels],
            slopes: prelu.then(|| vec![0.0; out_channels]),
        }
    }

    /// Number of connections feeding one unit.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_size.pow(3)
    }
}

/// Affine intensity normalisation applied to CT values before the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl InputNorm {
    #[inline]
    pub fn apply(&self, hu: f64) -> f64 {
        (hu - self.mean) / self.std
    }
}

/// Every trainable tensor of the network plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchitectureSpec,
    pub input_norm: InputNorm,
    pub main: Vec<Layer>,
    /// Empty when the architecture has a single path.
    pub context: Vec<Layer>,
    pub fc: Vec<Layer>,
    pub classifier: Layer,
}

impl NetworkParams {
    /// All-zero parameters shaped for `arch`; also the gradient accumulator.
    pub fn zeros(arch: &ArchitectureSpec) -> Result<Self> {
        arch.validate()?;
        let k = arch.kernel_size;
        let path = || {
            let mut cin = 1;
            arch.conv_kernels
                .iter()
                .map(|&c| {
                    let l = Layer::zeros(cin, c, k, true);
                    cin = c;
                    l
                })
                .collect::<Vec<_>>()
        };
        let main = path();
        let context = if arch.dual_path { path() } else { Vec::new() };
        let mut cin = arch.fused_channels();
        let fc = arch
            .fc_widths
            .iter()
            .map(|&c| {
                let l = Layer::zeros(cin, c, 1, true);
                cin = c;
                l
            })
            .collect();
        let classifier = Layer::zeros(cin, arch.n_classes, 1, false);
        Ok(Self {
            arch: arch.clone(),
            input_norm: InputNorm::default(),
            main,
            context,
            fc,
            classifier,
        })
    }

    /// He-initialised weights, zero biases, PReLU slopes at 0.25.
    pub fn init<R: Rng + ?Sized>(arch: &ArchitectureSpec, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        for layer in params.layers_mut() {
            layer.weights = he_init(layer.weights.len(), layer.fan_in(), rng)?;
            if let Some(s) = layer.slopes.as_mut() {
                s.fill(PRELU_INIT_SLOPE);
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|t| t.fill(0.0));
        z
    }

    /// Layers in declaration order: main path, context path, fc, classifier.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.main
            .iter()
            .chain(&self.context)
            .chain(&self.fc)
            .chain(core::iter::once(&self.classifier))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.main
            .iter_mut()
            .chain(self.context.iter_mut())
            .chain(self.fc.iter_mut())
            .chain(core::iter::once(&mut self.classifier))
    }

    /// Trainable tensors in declaration order (per layer: weights, bias, slopes).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
            if let Some(s) = &l.slopes {
                out.push(s.as_slice());
            }
        }
        out
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for l in self.layers_mut() {
            f(&mut l.weights);
            f(&mut l.bias);
            if let Some(s) = l.slopes.as_mut() {
                f(s);
            }
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in self.layers_mut() {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
            if let Some(s) = l.slopes.as_mut() {
                out.push(s);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// `len` i.i.d. draws from N(0, 2 / n_l).
pub fn he_init<R: Rng + ?Sized>(len: usize, n_l: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n_l == 0 {
        return Err(Error::ZeroFanIn);
    }
    let std = (2.0 / n_l as f64).sqrt();
    Ok((0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_shapes() {
        let arch = ArchitectureSpec::paper_default();
        assert_eq!(arch.receptive_field(), 19);
        assert_eq!(arch.output_size(27), Some(9));
        assert_eq!(arch.output_size(45), Some(27));
        assert_eq!(arch.output_size(18), None);
        assert_eq!(arch.context_size(9), 46);
        let p = NetworkParams::zeros(&arch).unwrap();
        assert_eq!(p.main.len(), 9);
        assert_eq!(p.context.len(), 9);
        assert_eq!(p.fc.len(), 3);
        assert_eq!(p.fc[0].in_channels, 150);
        assert_eq!(p.classifier.out_channels, 2);
        assert!(p.classifier.slopes.is_none());
        // 18 conv + 3 fc layers carry slopes; 22 layers carry weights and biases.
        assert_eq!(p.tensors().len(), 22 * 2 + 21);
    }

    #[test]
    fn invalid_architecture_rejected() {
        let mut a = ArchitectureSpec::tiny();
        a.kernel_size = 2;
        assert!(a.validate().is_err());
        let mut a = ArchitectureSpec::tiny();
        a.conv_kernels[3] = 0;
        assert!(NetworkParams::zeros(&a).is_err());
        let mut a = ArchitectureSpec::tiny();
        a.n_classes = 3;
        assert!(a.validate().is_err());
    }

    #[test]
    fn he_init_std_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(he_init(3, 0, &mut rng), Err(Error::ZeroFanIn));
        for (n_l, target) in [(8usize, 0.5f64), (2, 1.0), (50, (2.0f64 / 50.0).sqrt())] {
            let draws = he_init(100_000, n_l, &mut rng).unwrap();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / draws.len() as f64;
            assert!((var.sqrt() - target).abs() < 0.02 * target, "n_l={n_l}");
            assert!(mean.abs() < 0.02 * target);
        }
    }

    #[test]
    fn he_init_is_seeded() {
        let a = he_init(16, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = he_init(16, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
