//! CSV emission with a provenance header.
//!
//! Every table starts with a comment block holding the fully resolved
//! configuration, so a result file alone reproduces its run. Files are
//! written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::forward::ProblemConfig;

/// `# key = value` provenance lines for a resolved configuration.
pub fn provenance(cfg: &ProblemConfig, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "# {k} = {v}");
    };
    kv("scheme", cfg.scheme.name.clone());
    kv("stages", cfg.scheme.s.to_string());
    kv("eps", format!("{:e}", cfg.eps));
    kv("nu", format!("{:e}", cfg.nu));
    kv("t_final", format!("{:e}", cfg.t_final));
    kv("n_steps", cfg.n_steps.to_string());
    kv("cells", cfg.grid.cells().to_string());
    kv("dt", format!("{:e}", cfg.dt()));
    kv("dx", format!("{:e}", cfg.grid.dx()));
    kv("u_lo", format!("{:e}", cfg.u_lo));
    kv("u_hi", format!("{:e}", cfg.u_hi));
    kv("phi", format!("{:e}", cfg.phi_value()));
    kv(
        "relaxation",
        match cfg.relaxation {
            crate::relaxation::RelaxationPolicy::Optimal => "optimal".into(),
            crate::relaxation::RelaxationPolicy::Exponential => "exponential".into(),
        },
    );
    for (k, v) in extra {
        kv(k, v.clone());
    }
    out
}

/// Writes `header block + header row + rows` atomically.
pub fn write_csv(path: &Path, comment_block: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::new();
    text.push_str(comment_block);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    write_atomic(path, &text)
}

pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp: PathBuf = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Fixed-width scientific formatting; deterministic across runs.
pub fn sci(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_deterministic_and_carries_provenance() {
        let cfg = crate::forward::tests_support::base_config("GSA342", 10, 5, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let block = provenance(&cfg, &[("experiment", "unit".into())]);
        write_csv(&path, &block, "a,b", &["1,2".into()]).unwrap();
        let first = std::fs::read(&path).unwrap();
        write_csv(&path, &block, "a,b", &["1,2".into()]).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        let text = String::from_utf8(first).unwrap();
        assert!(text.starts_with("# scheme = GSA342"));
        assert!(text.contains("# experiment = unit"));
        assert!(text.ends_with("a,b\n1,2\n"));
    }
}
