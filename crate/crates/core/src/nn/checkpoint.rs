//! Plain-text checkpoint format.
//!
//! ```text
//! GUIDELIGHT-CHECKPOINT 1
//! config {"embed_dim":4,...}
//! tensors 29
//! tensor movement_embed.0.w 1 4
//! 0.123 -0.5 ...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use super::policy::{NetConfig, PolicyNet};
use super::{Matrix, NnError};

pub const CHECKPOINT_MAGIC: &str = "GUIDELIGHT-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_text(net: &PolicyNet) -> Result<String, NnError> {
    let mut out = String::new();
    let config = serde_json::to_string(net.config()).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let tensors = net.params().tensors();
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
    writeln!(out, "config {config}").unwrap();
    writeln!(out, "tensors {}", tensors.len()).unwrap();
    for t in tensors {
        let (rows, cols) = t.shape();
        writeln!(out, "tensor {} {rows} {cols}", t.name).unwrap();
        let line: Vec<String> = t.value.data().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    Ok(out)
}

pub fn from_text(text: &str) -> Result<PolicyNet, NnError> {
    let bad = |msg: String| NnError::Checkpoint(msg);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty checkpoint".into()))?;
    let version = header
        .strip_prefix(CHECKPOINT_MAGIC)
        .map(str::trim)
        .ok_or_else(|| bad("missing checkpoint header".into()))?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(NnError::VersionMismatch { found: version.to_string(), expected: CHECKPOINT_VERSION });
    }
    let config_line = lines.next().and_then(|l| l.strip_prefix("config ")).ok_or_else(|| bad("missing config line".into()))?;
    let config: NetConfig = serde_json::from_str(config_line).map_err(|e| bad(format!("config: {e}")))?;
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("tensors "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| bad("missing tensor count".into()))?;

    let mut net = PolicyNet::new(config)?;
    if count != net.params().len() {
        return Err(bad(format!("checkpoint has {count} tensors, architecture has {}", net.params().len())));
    }
    for _ in 0..count {
        let head = lines.next().ok_or_else(|| bad("truncated checkpoint".into()))?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        let [tag, name, rows, cols] = parts[..] else {
            return Err(bad(format!("malformed tensor header {head:?}")));
        };
        if tag != "tensor" {
            return Err(bad(format!("malformed tensor header {head:?}")));
        }
        let rows: usize = rows.parse().map_err(|_| bad(format!("bad rows in {head:?}")))?;
        let cols: usize = cols.parse().map_err(|_| bad(format!("bad cols in {head:?}")))?;
        let body = lines.next().ok_or_else(|| bad(format!("missing values for {name}")))?;
        let values = body
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("{name}: {e}")))?;
        if values.len() != rows * cols {
            return Err(bad(format!("{name}: expected {} values, found {}", rows * cols, values.len())));
        }
        let tensor = net.params_mut().by_name_mut(name).ok_or_else(|| bad(format!("unknown tensor {name}")))?;
        if tensor.shape() != (rows, cols) {
            return Err(bad(format!("{name}: shape {rows}x{cols} does not match {:?}", tensor.shape())));
        }
        tensor.value = Matrix::from_vec(rows, cols, values);
    }
    Ok(net)
}

pub fn save(net: &PolicyNet, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, to_text(net)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PolicyNet, NnError> {
    from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut net = PolicyNet::new(NetConfig::tiny()).unwrap();
        net.params_mut().tensors_mut()[0].value.data_mut()[0] = 0.1 + 0.2;
        net.params_mut().tensors_mut()[1].value.data_mut()[0] = -1.234_567_890_123_456_7e-300;
        let back = from_text(&to_text(&net).unwrap()).unwrap();
        assert_eq!(back.params().checksum(), net.params().checksum());
        assert_eq!(back.config(), net.config());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = to_text(&PolicyNet::new(NetConfig::tiny()).unwrap()).unwrap();
        let bumped = text.replacen("GUIDELIGHT-CHECKPOINT 1", "GUIDELIGHT-CHECKPOINT 2", 1);
        assert!(matches!(from_text(&bumped), Err(NnError::VersionMismatch { .. })));
        assert!(from_text("hello").is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = to_text(&PolicyNet::new(NetConfig::tiny()).unwrap()).unwrap();
        let cut: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(from_text(&cut).is_err());
    }
}
