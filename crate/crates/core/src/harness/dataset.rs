//! The bundled synthetic cohort: a linear target with planted data issues.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const TRAIN_ROWS: usize = 200;
pub const TEST_ROWS: usize = 100;
pub const NOISE_SD: f64 = 0.1;
pub const TARGET: &str = "y";
pub const ID_COLUMN: &str = "patient_id";
pub const LEAK_COLUMN: &str = "followup_score";
pub const GROUP_COLUMN: &str = "site";

pub const COLUMNS: [&str; 12] = ["patient_id", "age", "sex", "bmi", "smoking", "x1", "x2", "lab_a", "lab_b", "site", "followup_score", "y"];

/// Share of gaps planted per column in the training split.
pub const MISSING_RATES: [(&str, f64); 7] = [("lab_a", 0.85), ("lab_b", 0.30), ("bmi", 0.15), ("smoking", 0.08), ("x1", 0.01), ("x2", 0.01), ("y", 0.02)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Identifier,
    PostBaseline,
    Ok,
}

/// Column name to role, the ground truth for the dataset-issue detectors.
pub type Sidecar = BTreeMap<String, ColumnRole>;

pub fn sidecar() -> Sidecar {
    COLUMNS
        .iter()
        .map(|c| {
            let role = match *c {
                ID_COLUMN => ColumnRole::Identifier,
                LEAK_COLUMN => ColumnRole::PostBaseline,
                _ => ColumnRole::Ok,
            };
            (c.to_string(), role)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train_csv: String,
    pub test_csv: String,
    pub sidecar: Sidecar,
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn rows(rng: &mut ChaCha8Rng, n: usize, first_id: usize, noise_sd: f64) -> Vec<Vec<String>> {
    let std = Normal::new(0.0, 1.0).expect("valid");
    let eps = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE)).expect("valid");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x1: f64 = std.sample(rng);
        let x2: f64 = std.sample(rng);
        let e = if noise_sd > 0.0 { eps.sample(rng) } else { 0.0 };
        let y = 2.0 * x1 - 3.0 * x2 + e;
        let leak = y + 0.3 * std.sample(rng);
        let age = 30.0 + 50.0 * rng.random::<f64>();
        let bmi = 25.0 + 4.0 * std.sample(rng);
        let sex = if rng.random_bool(0.5) { "F" } else { "M" };
        let smoking = ["never", "former", "current"][rng.random_range(0..3)];
        let site = ["north", "south", "east"][rng.random_range(0..3)];
        let lab_a = 5.0 + std.sample(rng);
        let lab_b = 100.0 + 15.0 * std.sample(rng);
        out.push(vec![
            format!("P{:05}", first_id + i),
            format!("{age:.0}"),
            sex.to_string(),
            format!("{bmi:.1}"),
            smoking.to_string(),
            fmt(x1),
            fmt(x2),
            format!("{lab_a:.2}"),
            format!("{lab_b:.1}"),
            site.to_string(),
            fmt(leak),
            fmt(y),
        ]);
    }
    out
}

fn plant_gaps(rng: &mut ChaCha8Rng, rows: &mut [Vec<String>]) {
    let n = rows.len();
    for (col, rate) in MISSING_RATES {
        let j = COLUMNS.iter().position(|c| *c == col).expect("known column");
        let k = (rate * n as f64).round() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let swap = rng.random_range(i..n);
            idx.swap(i, swap);
        }
        for &r in &idx[..k] {
            rows[r][j].clear();
        }
    }
}

fn to_csv(rows: &[Vec<String>]) -> String {
    let mut s = COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

/// Training split with planted gaps, and a gap-free held-out split drawn
/// from the same model.
pub fn generate(seed: u64) -> SyntheticData {
    generate_with_noise(seed, NOISE_SD)
}

pub fn generate_with_noise(seed: u64, noise_sd: f64) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = rows(&mut rng, TRAIN_ROWS, 1, noise_sd);
    plant_gaps(&mut rng, &mut train);
    let test = rows(&mut rng, TEST_ROWS, TRAIN_ROWS + 1, noise_sd);
    SyntheticData { train_csv: to_csv(&train), test_csv: to_csv(&test), sidecar: sidecar() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::Frame;

    #[test]
    fn shape_and_missingness() {
        let d = generate(0);
        let f = Frame::parse(&d.train_csv).unwrap();
        assert_eq!((f.n_rows(), f.n_cols()), (TRAIN_ROWS, 12));
        let missing: usize = f.names().iter().map(|c| f.column(c).unwrap().missing_count()).sum();
        let frac = missing as f64 / (TRAIN_ROWS * 12) as f64;
        assert!((0.10..0.14).contains(&frac), "{frac}");
        assert_eq!(generate(0), d);
    }
}
