#![allow(dead_code)]

use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
pub struct ProductRow {
    pub n: usize,
    pub size: usize,
    pub state: String,
    pub p: usize,
    pub tau0: f64,
    pub tau1: f64,
    pub j_eff: f64,
    pub naive: String,
    pub perfect: f64,
    pub emulation: f64,
}

#[derive(Clone, Debug, Deserialize)]
pub struct BraceletRow {
    pub n: usize,
    pub size: usize,
    pub state: String,
    pub depth: usize,
    pub tau_eff: f64,
    pub gammas: String,
    pub naive: String,
    pub perfect: f64,
    pub emulation: f64,
}

impl BraceletRow {
    pub fn gamma(&self) -> Vec<f64> {
        self.gammas.split_whitespace().map(|g| g.parse().unwrap()).collect()
    }
}

fn load<T: for<'de> Deserialize<'de>>(name: &str) -> Vec<T> {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    csv::Reader::from_path(path).unwrap().deserialize().map(|r| r.unwrap()).collect()
}

pub fn product_rows() -> Vec<ProductRow> {
    load("product_rows.csv")
}

/// Printed rows, first occurrence of each (n, state, depth).
pub fn bracelet_rows() -> Vec<BraceletRow> {
    let mut rows: Vec<BraceletRow> = load("bracelet_rows.csv");
    let mut seen = std::collections::HashSet::new();
    rows.retain(|r| seen.insert((r.n, r.state.clone(), r.depth)));
    rows
}
