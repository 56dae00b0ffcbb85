//! Result emission: canonical JSON with floats at 17 significant digits
//! (byte-identical across runs), content digests, and the run-result
//! envelope shared by every subcommand.

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::Value;
use std::io;

/// JSON formatter printing every float with 17 significant digits, which
/// round-trips `f64` exactly and keeps output byte-stable.
pub struct SigDigitFormatter;

impl Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serialize any value to canonical JSON text. Object keys are sorted by
/// construction (serde_json maps are ordered), floats carry 17 significant
/// digits.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigitFormatter);
    value
        .serialize(&mut ser)
        .expect("serialization of result types cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// FNV-1a 64-bit content hash of the canonical form of a parsed JSON
/// value; stable under key reordering in the input file.
pub fn digest_of(values: &[&Value]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for v in values {
        for byte in to_canonical_json(v).as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash ^= 0x1e;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("fnv1a:{hash:016x}")
}

/// Envelope every subcommand prints: command name, input digest, the
/// numeric result, diagnostics, tool version, and optional wall time.
#[derive(Serialize)]
pub struct RunResult {
    pub schema: u32,
    pub command: String,
    pub version: String,
    pub input_digest: String,
    pub result: Value,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub diagnostics: Value,
    /// Only present with `--timing`; wall time breaks byte-determinism.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl RunResult {
    pub fn new(command: &str, digest: String, result: Value) -> Self {
        RunResult {
            schema: 1,
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_digest: digest,
            result,
            diagnostics: Value::Null,
            wall_time_ms: None,
        }
    }
}

/// Render a float for CSV cells with the same 17-significant-digit rule.
pub fn csv_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_round_trip_at_17_digits() {
        let x = std::f64::consts::PI / 3.0;
        let s = to_canonical_json(&x);
        let back: f64 = s.parse().unwrap();
        assert_eq!(x, back);
    }

    #[test]
    fn digest_is_stable_under_key_reordering() {
        let a: Value = serde_json::from_str(r#"{"x": 1.5, "y": [1, 2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"y": [1, 2], "x": 1.5}"#).unwrap();
        assert_eq!(digest_of(&[&a]), digest_of(&[&b]));
        let c: Value = serde_json::from_str(r#"{"x": 1.6, "y": [1, 2]}"#).unwrap();
        assert_ne!(digest_of(&[&a]), digest_of(&[&c]));
    }

    #[test]
    fn run_result_omits_wall_time_by_default() {
        let r = RunResult::new("mcov", "fnv1a:0".into(), json!({"value": 1.0}));
        let s = to_canonical_json(&r);
        assert!(!s.contains("wall_time_ms"));
        assert!(s.contains("\"command\":\"mcov\""));
    }
}
