//! Reading cumulative energy counters from a powercap directory tree.
//!
//! Each zone directory holds `name`, `energy_uj` and
//! `max_energy_range_uj`. Counters wrap back to zero after reaching the
//! published maximum.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::model::MetricKind;

pub const DEFAULT_POWERCAP_ROOT: &str = "/sys/class/powercap";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnergyDomain {
    Package,
    Dram,
}

impl EnergyDomain {
    pub fn metric(self) -> MetricKind {
        match self {
            EnergyDomain::Package => MetricKind::EnergyPkg,
            EnergyDomain::Dram => MetricKind::EnergyDram,
        }
    }

    fn from_zone_name(name: &str) -> Option<Self> {
        if name.starts_with("package") {
            Some(EnergyDomain::Package)
        } else if name == "dram" {
            Some(EnergyDomain::Dram)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyCounterSample {
    pub domain: EnergyDomain,
    pub energy_uj: u64,
    pub max_range_uj: u64,
}

/// Energy elapsed between two raw readings of a wrapping counter.
pub fn wrapping_delta(start: u64, end: u64, max_range: u64) -> u64 {
    if end >= start {
        end - start
    } else {
        max_range.saturating_sub(start) + end
    }
}

#[derive(Debug, Clone)]
pub struct Zone {
    pub name: String,
    pub domain: EnergyDomain,
    pub dir: PathBuf,
    pub max_range_uj: u64,
}

impl Zone {
    pub fn sample(&self) -> Result<EnergyCounterSample, ProbeError> {
        let energy_uj = read_u64(&self.dir.join("energy_uj"))?;
        if energy_uj > self.max_range_uj {
            return Err(ProbeError::Read(format!(
                "{}: energy_uj {energy_uj} exceeds max_energy_range_uj {}",
                self.dir.display(),
                self.max_range_uj
            )));
        }
        Ok(EnergyCounterSample {
            domain: self.domain,
            energy_uj,
            max_range_uj: self.max_range_uj,
        })
    }
}

fn read_u64(path: &Path) -> Result<u64, ProbeError> {
    let text = fs::read_to_string(path).map_err(|e| ProbeError::Read(format!("{}: {e}", path.display())))?;
    text.trim()
        .parse()
        .map_err(|e| ProbeError::Read(format!("{}: `{}`: {e}", path.display(), text.trim())))
}

/// Finds package and DRAM zones below `root`. Zones reachable through
/// several paths (the sysfs symlink layout) are reported once.
pub fn discover_zones(root: &Path) -> Result<Vec<Zone>, ProbeError> {
    let mut seen = BTreeSet::new();
    let mut zones = Vec::new();
    walk(root, 0, &mut seen, &mut zones)?;
    zones.sort_by(|a, b| (a.domain, &a.name, &a.dir).cmp(&(b.domain, &b.name, &b.dir)));
    Ok(zones)
}

fn walk(dir: &Path, depth: usize, seen: &mut BTreeSet<PathBuf>, zones: &mut Vec<Zone>) -> Result<(), ProbeError> {
    if depth > 3 {
        return Ok(());
    }
    let canonical = fs::canonicalize(dir).unwrap_or_else(|_| dir.to_path_buf());
    if !seen.insert(canonical) {
        return Ok(());
    }
    let name_file = dir.join("name");
    if name_file.is_file() && dir.join("energy_uj").is_file() {
        let name = fs::read_to_string(&name_file)
            .map_err(|e| ProbeError::Read(format!("{}: {e}", name_file.display())))?
            .trim()
            .to_owned();
        if let Some(domain) = EnergyDomain::from_zone_name(&name) {
            let max_range_uj = read_u64(&dir.join("max_energy_range_uj"))?;
            if max_range_uj == 0 {
                return Err(ProbeError::Read(format!("{}: max_energy_range_uj is zero", dir.display())));
            }
            zones.push(Zone {
                name,
                domain,
                dir: dir.to_path_buf(),
                max_range_uj,
            });
        }
    }
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    let mut children: Vec<PathBuf> = entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    children.sort();
    for child in children {
        walk(&child, depth + 1, seen, zones)?;
    }
    Ok(())
}

/// Wrap-corrected running total for one zone.
#[derive(Debug, Clone)]
pub(crate) struct ZoneTracker {
    pub zone: Zone,
    pub baseline_uj: u64,
    last_raw: u64,
    pub accumulated_uj: u64,
}

impl ZoneTracker {
    pub fn start(zone: Zone) -> Result<Self, ProbeError> {
        let s = zone.sample()?;
        Ok(ZoneTracker {
            zone,
            baseline_uj: s.energy_uj,
            last_raw: s.energy_uj,
            accumulated_uj: 0,
        })
    }

    pub fn advance(&mut self) -> Result<u64, ProbeError> {
        let s = self.zone.sample()?;
        self.accumulated_uj += wrapping_delta(self.last_raw, s.energy_uj, s.max_range_uj);
        self.last_raw = s.energy_uj;
        Ok(self.accumulated_uj)
    }
}
