//! Report envelopes, hashing and CSV formatting.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use interp_lab::instance::Instance;

/// SHA-256 of the canonical JSON form of `inst`, hex encoded.
pub fn instance_hash(inst: &Instance) -> String {
    hex::encode(Sha256::digest(inst.to_json().as_bytes()))
}

#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_hash: Option<String>,
    pub config: Value,
    pub result: T,
}

impl<T: Serialize> Envelope<'_, T> {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("reports serialize");
        out.push('\n');
        out
    }
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn sci(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub const SWEEP_HEADER: &str = "t,k_t,K_t,ratio";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub t: f64,
    pub k_t: f64,
    #[serde(rename = "K_t")]
    pub big_k_t: f64,
    pub ratio: f64,
}

impl SweepRow {
    pub fn csv(&self) -> String {
        [self.t, self.k_t, self.big_k_t, self.ratio].map(sci).join(",")
    }
}

/// CSV with `#` comment lines carrying the hash and config.
pub fn sweep_csv(hash: &str, config: &Value, rows: &[SweepRow]) -> String {
    let mut out = format!("# instance_hash={hash}\n# config={config}\n{SWEEP_HEADER}\n");
    for row in rows {
        out.push_str(&row.csv());
        out.push('\n');
    }
    out
}
