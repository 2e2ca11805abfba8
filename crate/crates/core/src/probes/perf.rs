//! Hardware performance counters, either through `perf_event_open(2)` on
//! the harness process (counting inherited children) or by wrapping the
//! test command in an external `perf stat -x,` invocation and parsing its
//! CSV output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::ProbeError;
use crate::model::MetricKind;

/// Maps a perf event name (`instructions`, `cpu_core/cycles/`,
/// `branch-misses:u`) to a metric.
pub fn metric_for_event(event: &str) -> Option<MetricKind> {
    let mut name = event.trim();
    if let Some(stripped) = name.strip_suffix('/') {
        name = stripped.rsplit('/').next().unwrap_or(stripped);
    }
    let name = name.split(':').next().unwrap_or(name);
    match name {
        "instructions" => Some(MetricKind::Instructions),
        "cycles" | "cpu-cycles" => Some(MetricKind::Cycles),
        "cache-references" => Some(MetricKind::CacheReferences),
        "cache-misses" => Some(MetricKind::CacheMisses),
        "branches" | "branch-instructions" => Some(MetricKind::Branches),
        "branch-misses" => Some(MetricKind::BranchMisses),
        _ => None,
    }
}

pub fn event_name(metric: MetricKind) -> Option<&'static str> {
    match metric {
        MetricKind::Instructions => Some("instructions"),
        MetricKind::Cycles => Some("cycles"),
        MetricKind::CacheReferences => Some("cache-references"),
        MetricKind::CacheMisses => Some("cache-misses"),
        MetricKind::Branches => Some("branches"),
        MetricKind::BranchMisses => Some("branch-misses"),
        _ => None,
    }
}

/// Default external command; `{events}` and `{output}` are substituted
/// and the test command is appended.
pub const DEFAULT_PERF_TEMPLATE: &str = "perf stat -x, -o {output} -e {events} --";

/// Parses `perf stat -x,` output: `value,unit,event,...` per line.
/// Counts from hybrid CPUs reporting the same event several times are
/// summed.
pub fn parse_perf_csv(text: &str) -> Result<BTreeMap<MetricKind, f64>, ProbeError> {
    let mut out: BTreeMap<MetricKind, f64> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            continue;
        }
        let Some(metric) = metric_for_event(fields[2]) else {
            continue;
        };
        let raw = fields[0].trim();
        if raw.starts_with('<') {
            return Err(ProbeError::Read(format!("perf reported {raw} for {}", fields[2])));
        }
        let value: f64 = raw
            .parse()
            .map_err(|_| ProbeError::Read(format!("unparseable perf value `{raw}` for {}", fields[2])))?;
        *out.entry(metric).or_insert(0.0) += value;
    }
    Ok(out)
}

pub fn read_perf_output(path: &Path) -> Result<BTreeMap<MetricKind, f64>, ProbeError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ProbeError::Read(format!("perf output {}: {e}", path.display())))?;
    parse_perf_csv(&text)
}

#[cfg(target_os = "linux")]
pub(crate) mod os {
    use std::collections::BTreeMap;
    use std::io;
    use std::os::fd::{FromRawFd, OwnedFd};

    use crate::model::MetricKind;

    const PERF_TYPE_HARDWARE: u32 = 0;
    const PERF_FLAG_FD_CLOEXEC: libc::c_ulong = 8;
    const FLAG_INHERIT: u64 = 1 << 1;
    const FLAG_EXCLUDE_KERNEL: u64 = 1 << 5;
    const FLAG_EXCLUDE_HV: u64 = 1 << 6;

    #[repr(C)]
    #[derive(Default)]
    struct PerfEventAttr {
        type_: u32,
        size: u32,
        config: u64,
        sample_period: u64,
        sample_type: u64,
        read_format: u64,
        flags: u64,
        wakeup_events: u32,
        bp_type: u32,
        config1: u64,
        config2: u64,
        branch_sample_type: u64,
        sample_regs_user: u64,
        sample_stack_user: u32,
        clockid: i32,
        sample_regs_intr: u64,
        aux_watermark: u32,
        sample_max_stack: u16,
        reserved: u16,
    }

    fn hw_config(metric: MetricKind) -> Option<u64> {
        Some(match metric {
            MetricKind::Cycles => 0,
            MetricKind::Instructions => 1,
            MetricKind::CacheReferences => 2,
            MetricKind::CacheMisses => 3,
            MetricKind::Branches => 4,
            MetricKind::BranchMisses => 5,
            _ => return None,
        })
    }

    /// Counters on the calling process, inherited by children spawned
    /// after opening. Exited children fold into the parent's count.
    pub struct CounterGroup {
        counters: Vec<(MetricKind, OwnedFd, u64)>,
    }

    impl CounterGroup {
        pub fn open(metrics: &[MetricKind]) -> Result<Self, (MetricKind, io::Error)> {
            let mut counters = Vec::new();
            for &m in metrics {
                let Some(config) = hw_config(m) else { continue };
                let attr = PerfEventAttr {
                    type_: PERF_TYPE_HARDWARE,
                    size: std::mem::size_of::<PerfEventAttr>() as u32,
                    config,
                    flags: FLAG_INHERIT | FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_HV,
                    ..Default::default()
                };
                // SAFETY: attr is a fully initialized perf_event_attr of the declared size
                let fd = unsafe {
                    libc::syscall(
                        libc::SYS_perf_event_open,
                        &attr as *const PerfEventAttr,
                        0 as libc::pid_t,
                        -1 as libc::c_int,
                        -1 as libc::c_int,
                        PERF_FLAG_FD_CLOEXEC,
                    )
                };
                if fd < 0 {
                    return Err((m, io::Error::last_os_error()));
                }
                // SAFETY: the syscall returned a fresh descriptor we now own
                let fd = unsafe { OwnedFd::from_raw_fd(fd as i32) };
                let base = read_fd(&fd).map_err(|e| (m, e))?;
                counters.push((m, fd, base));
            }
            Ok(CounterGroup { counters })
        }

        pub fn read_deltas(&self) -> io::Result<BTreeMap<MetricKind, f64>> {
            self.counters
                .iter()
                .map(|(m, fd, base)| Ok((*m, read_fd(fd)?.saturating_sub(*base) as f64)))
                .collect()
        }
    }

    fn read_fd(fd: &OwnedFd) -> io::Result<u64> {
        use std::os::fd::AsRawFd;
        let mut buf = [0u8; 8];
        // SAFETY: buf is valid for 8 bytes
        let n = unsafe { libc::read(fd.as_raw_fd(), buf.as_mut_ptr().cast(), buf.len()) };
        if n != 8 {
            return Err(io::Error::last_os_error());
        }
        Ok(u64::from_ne_bytes(buf))
    }

}
