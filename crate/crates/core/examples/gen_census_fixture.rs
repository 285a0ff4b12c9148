//! Regenerates the committed census-like fixture:
//!
//! ```text
//! cargo run -p lethe-core --example gen_census_fixture [rows] [seed] [path]
//! ```

use lethe_core::data::{synthetic, write_csv};
use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let rows: usize = args.next().map(|v| v.parse().expect("rows")).unwrap_or(10_000);
    let seed: u64 = args.next().map(|v| v.parse().expect("seed")).unwrap_or(0);
    let path: PathBuf =
        args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/census_10k.csv"));
    let table = synthetic::census_like(rows, seed);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).expect("create data dir");
    }
    write_csv(&table, &path).expect("write fixture");
    let in_band = table
        .rows()
        .iter()
        .filter(|r| matches!(r[0], lethe_core::data::Cell::Num(a) if (30.0..=35.0).contains(&a)))
        .count();
    println!(
        "wrote {} ({} rows, {:.1}% in the 30..=35 age band)",
        path.display(),
        table.cardinality(),
        100.0 * in_band as f64 / table.cardinality() as f64
    );
}
