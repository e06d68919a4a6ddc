//! Network checkpoints: a versioned text header, a `data` line, then every
//! trainable tensor as little-endian `f32` in declaration order, optionally
//! followed by the optimizer's squared-gradient cache and velocity in the
//! same order.

use std::fs;
use std::path::Path;

use esoseg_core::fcnn::{ArchitectureSpec, InputNorm, NetworkParams, RmsProp};

use crate::error::CliError;

const MAGIC: &str = "esoseg-checkpoint 1";

/// A saved network, with optimizer state when saved mid-training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub epochs_done: usize,
    /// Squared-gradient cache and velocity, one buffer per tensor.
    pub optimizer: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl Checkpoint {
    pub fn new(params: NetworkParams, epochs_done: usize, optimizer: Option<&RmsProp>) -> Self {
        Self {
            params,
            epochs_done,
            optimizer: optimizer.map(|o| (o.cache.clone(), o.velocity.clone())),
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CliError> {
    let p = &ck.params;
    let a = &p.arch;
    let mut out = format!(
        "{MAGIC}\n\
         conv_kernels {}\n\
         kernel_size {}\n\
         fc_widths {}\n\
         n_classes {}\n\
         dual_path {}\n\
         input_norm {} {}\n\
         epochs_done {}\n\
         optimizer {}\n\
         parameters {}\n\
         data\n",
        join(&a.conv_kernels),
        a.kernel_size,
        join(&a.fc_widths),
        a.n_classes,
        a.dual_path,
        p.input_norm.mean,
        p.input_norm.std,
        ck.epochs_done,
        ck.optimizer.is_some(),
        p.parameter_count(),
    )
    .into_bytes();
    let mut put = |t: &[f64]| {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for t in p.tensors() {
        put(t);
    }
    if let Some((cache, velocity)) = &ck.optimizer {
        for t in cache.iter().chain(velocity) {
            put(t);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: String| CliError::format(path, msg);
    let marker = b"\ndata\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing data marker".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8".into()))?;
    let body = &bytes[split + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad(format!("not a checkpoint (expected first line {MAGIC:?})")));
    }
    let mut field = |name: &str| -> Result<String, CliError> {
        let line = lines.next().ok_or_else(|| bad(format!("missing field {name}")))?;
        let (key, value) = line.split_once(' ').unwrap_or((line, ""));
        if key != name {
            return Err(bad(format!("expected field {name}, found {key:?}")));
        }
        Ok(value.to_string())
    };
    let list = |s: &str| -> Result<Vec<usize>, CliError> {
        s.split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad integer {t:?}"))))
            .collect()
    };
    let int = |s: &str| -> Result<usize, CliError> { s.trim().parse().map_err(|_| bad(format!("bad integer {s:?}"))) };
    let boolean = |s: &str| -> Result<bool, CliError> { s.trim().parse().map_err(|_| bad(format!("bad flag {s:?}"))) };

    let arch = ArchitectureSpec {
        conv_kernels: list(&field("conv_kernels")?)?,
        kernel_size: int(&field("kernel_size")?)?,
        fc_widths: list(&field("fc_widths")?)?,
        n_classes: int(&field("n_classes")?)?,
        dual_path: boolean(&field("dual_path")?)?,
    };
    let norm = field("input_norm")?;
    let norm: Vec<f64> = norm
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad number {t:?}"))))
        .collect::<Result<_, _>>()?;
    if norm.len() != 2 {
        return Err(bad("input_norm needs mean and std".into()));
    }
    let epochs_done = int(&field("epochs_done")?)?;
    let has_optimizer = boolean(&field("optimizer")?)?;
    let count = int(&field("parameters")?)?;

    let mut params = NetworkParams::zeros(&arch).map_err(|e| bad(e.to_string()))?;
    params.input_norm = InputNorm {
        mean: norm[0],
        std: norm[1],
    };
    if params.parameter_count() != count {
        return Err(bad(format!(
            "header declares {count} parameters, the architecture has {}",
            params.parameter_count()
        )));
    }
    let blocks = if has_optimizer { 3 } else { 1 };
    if body.len() != 4 * count * blocks {
        return Err(bad(format!("payload has {} bytes, expected {}", body.len(), 4 * count * blocks)));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v = values.next().unwrap_or_default());
    }
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut take = || -> Vec<Vec<f64>> { shapes.iter().map(|&n| values.by_ref().take(n).collect()).collect() };
    let optimizer = has_optimizer.then(|| {
        let cache = take();
        (cache, take())
    });
    if !params.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(Checkpoint {
        params,
        epochs_done,
        optimizer,
    })
}
