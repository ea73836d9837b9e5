//! File names and writers for run artifacts.
//!
//! Every file is written to a temporary sibling and renamed into place, so a
//! reader never sees a partially written output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{LatticeDomain, Origin};
use crate::moments::MomentField;

/// `tau` as it appears in file names: `0.5`, `1`, `0.0001`.
pub fn tau_tag(tau: f64) -> String {
    format!("{tau}")
}

pub fn hme_grid_name(tau: f64) -> String {
    format!("hme_joint_tau{}.grid", tau_tag(tau))
}

pub fn cme_grid_name(tau: f64) -> String {
    format!("cme_joint_tau{}.grid", tau_tag(tau))
}

pub fn ssa_grid_name(tau: f64) -> String {
    format!("ssa_joint_tau{}.grid", tau_tag(tau))
}

pub fn marginals_name(tau: f64) -> String {
    format!("marginals_tau{}.csv", tau_tag(tau))
}

pub fn domain_name(tau: f64) -> String {
    format!("domain_tau{}.csv", tau_tag(tau))
}

pub fn diagnostics_name(tau: f64) -> String {
    format!("diagnostics_tau{}.csv", tau_tag(tau))
}

pub fn run_meta_name(command: &str, tau: f64) -> String {
    format!("run_meta_{command}_tau{}.json", tau_tag(tau))
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = dir.join(tmp_name);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn slow_header(l: usize) -> Vec<String> {
    if l == 1 {
        vec!["d".into()]
    } else {
        (0..l).map(|i| format!("d{i}")).collect()
    }
}

fn fast_header(q: usize) -> Vec<String> {
    if q == 1 {
        vec!["c".into()]
    } else {
        (0..q).map(|j| format!("c{j}")).collect()
    }
}

/// `d,p,mean,var` per slow state (per fast coordinate `mean_c<j>`,
/// `var_c<j>` when there is more than one).
pub fn marginals_csv(field: &MomentField) -> String {
    let q = field.fast_dims();
    let mut cols = slow_header(field.slow_dims());
    cols.push("p".into());
    if q == 1 {
        cols.push("mean".into());
        cols.push("var".into());
    } else {
        cols.extend((0..q).map(|j| format!("mean_c{j}")));
        cols.extend((0..q).map(|j| format!("var_c{j}")));
    }
    let mut s = cols.join(",");
    s.push('\n');
    let mut order: Vec<usize> = (0..field.len()).collect();
    order.sort_by(|&a, &b| field.states()[a].cmp(&field.states()[b]));
    for idx in order {
        for v in &field.states()[idx] {
            write!(s, "{v},").unwrap();
        }
        write!(s, "{:.16e}", field.marginal(idx)).unwrap();
        for m in field.mean(idx) {
            write!(s, ",{m:.16e}").unwrap();
        }
        for j in 0..q {
            write!(s, ",{:.16e}", field.variance(idx, j)).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Every point of `Omega` with its class: `initial` (in `Omega0`),
/// `expanded` (in `Omega*` only) or `outside`.
pub fn domain_csv(domain: &LatticeDomain) -> String {
    let mut cols = slow_header(domain.slow_dims());
    cols.extend(fast_header(domain.fast_dims()));
    cols.push("origin".into());
    let mut s = cols.join(",");
    s.push('\n');
    for pt in domain.omega_points() {
        let member = domain.fast_grid(&pt.d).contains(&pt.c);
        let tag = match (member, domain.origin(&pt.d)) {
            (true, Some(Origin::Initial)) => "initial",
            (true, Some(Origin::Expanded)) => "expanded",
            _ => "outside",
        };
        for v in pt.d.iter().chain(&pt.c) {
            write!(s, "{v},").unwrap();
        }
        s.push_str(tag);
        s.push('\n');
    }
    s
}
