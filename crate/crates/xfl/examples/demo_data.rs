//! Writes the synthetic CSV files used by the demo configurations.
//!
//! ```text
//! cargo run -p xfl --example demo_data -- demos
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use xfl::io::{write_table, CsvSchema};
use xfl_core::data::{dirichlet_partition, vertical_split, PartitionKind, PartitionSpec, Table};
use xfl_core::sigmoid;

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Rows of a noisy logistic model over `d` features.
fn logistic_table(n: usize, d: usize, seed: u64, prefix: &str) -> Table {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|j| if j % 3 == 2 { 0.0 } else { rng.random_range(-1.5..1.5) }).collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| round4(rng.random_range(-2.0..2.0))).collect();
        let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.3;
        labels.push(if rng.random::<f64>() < sigmoid(z) { 1.0 } else { 0.0 });
        rows.push(x);
    }
    let ids = (0..n).map(|i| format!("{prefix}{i:04}")).collect();
    let names = (0..d).map(|j| format!("x{j}")).collect();
    Table::from_rows(ids, names, &rows, Some(labels)).expect("consistent shapes")
}

fn write(path: PathBuf, t: &Table) {
    write_table(&path, t, &CsvSchema::default()).unwrap_or_else(|e| panic!("{e}"));
    println!("wrote {} ({} rows)", path.display(), t.n_rows());
}

fn horizontal(root: &Path) {
    let all = logistic_table(900, 6, 11, "h");
    let train = all.select_rows(&(0..700).collect::<Vec<_>>());
    let valid = all.select_rows(&(700..900).collect::<Vec<_>>());
    let spec = PartitionSpec { kind: PartitionKind::Dirichlet, beta: 0.5, n_parties: 2, seed: 5 };
    let parts = dirichlet_partition(train.labels().expect("labels"), &spec).expect("partition");
    let dir = root.join("horizontal_lr/data");
    for (name, idx) in ["alice", "bob"].iter().zip(&parts) {
        let mut idx = idx.clone();
        idx.sort_unstable();
        write(dir.join(format!("{name}.csv")), &train.select_rows(&idx));
    }
    write(dir.join("valid.csv"), &valid);
}

fn vertical(root: &Path, demo: &str, n: usize, seed: u64) {
    let all = logistic_table(n, 8, seed, "v");
    let names: Vec<String> = all.feature_names().to_vec();
    let mut assignment = BTreeMap::new();
    assignment.insert("alice".to_owned(), names[..4].to_vec());
    assignment.insert("bob".to_owned(), names[4..].to_vec());
    let parts = vertical_split(&all, &assignment, "alice").expect("split");
    let dir = root.join(demo).join("data");
    for (name, t) in parts {
        write(dir.join(format!("{name}.csv")), &t);
    }
}

fn local(root: &Path) {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let n = 120;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            vec![
                round4(rng.random_range(0.0..100.0)),
                round4(rng.random_range(-5.0..5.0)),
                round4(rng.random_range(1000.0..2000.0)),
            ]
        })
        .collect();
    let labels = rows.iter().map(|r| if r[0] + 10.0 * r[1] > 50.0 { 1.0 } else { 0.0 }).collect();
    let ids = (0..n).map(|i| format!("l{i:03}")).collect();
    let names = vec!["age".into(), "score".into(), "income".into()];
    let t = Table::from_rows(ids, names, &rows, Some(labels)).expect("shapes");
    write(root.join("local_pipeline/data/alice.csv"), &t);
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demos".into()));
    horizontal(&root);
    vertical(&root, "vertical_lr", 400, 21);
    vertical(&root, "vertical_xgboost", 500, 31);
    local(&root);
}
