//! CSV/JSON output helpers shared by every subcommand.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// 17 significant digits, '.' decimal, no locale.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

/// Hex sha256 of the canonical JSON encoding of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_string(config)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// `# key: value` lines identifying the run that produced a file.
pub fn write_header<W: Write, T: Serialize>(out: &mut W, config: &T, seed: u64) -> Result<()> {
    writeln!(out, "# driftlab {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "# config_sha256: {}", config_hash(config)?)?;
    writeln!(out, "# seed: {seed}")?;
    writeln!(out, "# config: {}", serde_json::to_string(config)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(csv_row(&[1.0, -0.5]), "1.0000000000000000e0,-5.0000000000000000e-1");
    }

    #[test]
    fn header_is_deterministic() {
        let cfg = serde_json::json!({"n": 3, "alpha": 0.1});
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_header(&mut a, &cfg, 7).unwrap();
        write_header(&mut b, &cfg, 7).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("# seed: 7"));
        assert_eq!(config_hash(&cfg).unwrap().len(), 64);
    }
}
