//! Bundled Kolkata tables and data-directory lookup.

use std::path::{Path, PathBuf};

/// Workers per sector for Kolkata, verbatim. Healthcare centers are listed
/// as hospitals;healthcare centres;isolation centres.
pub const KOLKATA_SECTORS: &str = include_str!("../data/kolkata_sectors.csv");

/// 141 wards summing to the Kolkata census total of 4,486,679. Per-ward
/// head-counts and densities are synthetic stand-ins for the census files.
pub const KOLKATA_WARDS: &str = include_str!("../data/kolkata_wards.csv");

pub const KOLKATA_TOTAL: u64 = 4_486_679;

/// Environment variable naming the default directory for input tables.
pub const DATA_DIR_ENV: &str = "CITYSIM_DATA_DIR";

/// Resolves a relative input path against `$CITYSIM_DATA_DIR` when the
/// variable is set and the file exists there.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        let candidate = Path::new(&dir).join(path);
        if candidate.exists() {
            return candidate;
        }
    }
    path.to_path_buf()
}
