//! Phantom datasets on disk and loading of manifest pairs.

use std::path::{Path, PathBuf};

use esoseg_core::phantom::generate_phantom;
use esoseg_core::{Volume3D, VolumeKind};

use crate::config::PhantomSection;
use crate::error::{CliError, Stage};
use crate::formats::{read_manifest, write_manifest, write_text};
use crate::mhd::{read_kind, write_volume};

/// Case identifier of the phantom generated from `seed`.
pub fn case_id(seed: u64) -> String {
    format!("case{seed:05}")
}

/// Writes phantoms for seeds `seed..seed + n` into `dir`: per case a CT, a
/// mask and the true centerline, plus `manifest.txt` listing `ct mask` pairs.
/// Returns the manifest path.
pub fn generate_dataset(dir: &Path, cfg: &PhantomSection, n: usize, seed: u64) -> Result<PathBuf, CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut rows = Vec::with_capacity(n);
    for s in seed..seed + n as u64 {
        let p = generate_phantom(&cfg.to_config(s)).map_err(|e| CliError::core(Stage::Phantom, e))?;
        let id = case_id(s);
        let ct = dir.join(format!("{id}_ct.mhd"));
        let mask = dir.join(format!("{id}.mhd"));
        write_volume(&ct, &p.ct)?;
        write_volume(&mask, &p.mask)?;
        let centerline: String = p
            .centerline
            .iter()
            .enumerate()
            .map(|(z, c)| format!("{z} {:.6} {:.6}\n", c[0], c[1]))
            .collect();
        write_text(&dir.join(format!("{id}_centerline.txt")), &centerline)?;
        rows.push(vec![ct, mask]);
    }
    let manifest = dir.join("manifest.txt");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

/// Loads every `ct mask` pair of a manifest.
pub fn load_pairs(manifest: &Path) -> Result<Vec<(String, Volume3D, Volume3D)>, CliError> {
    let rows = read_manifest(manifest)?;
    if rows.is_empty() {
        return Err(CliError::format(manifest, "manifest lists no cases"));
    }
    rows.iter()
        .map(|row| {
            if row.paths.len() != 2 {
                return Err(CliError::format(manifest, "expected `ct mask` pairs"));
            }
            let ct = read_kind(&row.paths[0], VolumeKind::Hu)?;
            let mask = read_kind(&row.paths[1], VolumeKind::Mask)?;
            if ct.dims() != mask.dims() {
                return Err(CliError::format(
                    &row.paths[1],
                    format!("mask dims {:?} differ from CT dims {:?}", mask.dims(), ct.dims()),
                ));
            }
            Ok((row.id(), ct, mask))
        })
        .collect()
}
