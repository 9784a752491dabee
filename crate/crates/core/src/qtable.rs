//! Look-up table of action values.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Keys that can be written to and read back from the text dump.
pub trait TableKey: Clone + Eq + Hash {
    /// Whitespace-free token.
    fn to_token(&self) -> String;
    fn from_token(token: &str) -> Result<Self>;
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Smallest index whose value is within `tol` of the maximum.
pub fn argmax_within(values: &[f64], tol: f64) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v >= best - tol).unwrap_or(0)
}

/// Action values per key; absent entries read as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<K: TableKey> {
    n_actions: usize,
    rows: HashMap<K, Vec<f64>>,
}

impl<K: TableKey> QTable<K> {
    pub fn new(n_actions: usize) -> Self {
        QTable {
            n_actions,
            rows: HashMap::new(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of keys with a stored row.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, key: &K, action: usize) -> f64 {
        self.rows.get(key).map_or(0.0, |row| row[action])
    }

    pub fn row(&self, key: &K) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    pub fn row_mut(&mut self, key: &K) -> &mut [f64] {
        let n = self.n_actions;
        self.rows
            .entry(key.clone())
            .or_insert_with(|| vec![0.0; n])
            .as_mut_slice()
    }

    pub fn set(&mut self, key: &K, action: usize, value: f64) {
        self.row_mut(key)[action] = value;
    }

    pub fn max_value(&self, key: &K) -> f64 {
        self.rows.get(key).map_or(0.0, |row| {
            row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
    }

    pub fn best_action(&self, key: &K) -> usize {
        self.rows.get(key).map_or(0, |row| argmax(row))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &[f64])> {
        self.rows.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// One `key action value` line per stored entry, keys sorted by token.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let mut keyed: Vec<(String, &Vec<f64>)> =
            self.rows.iter().map(|(k, v)| (k.to_token(), v)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        for (token, row) in keyed {
            for (action, value) in row.iter().enumerate() {
                writeln!(out, "{token} {action} {value}")?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R, n_actions: usize) -> Result<Self> {
        let mut table = QTable::new(n_actions);
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut parts = line.split_whitespace();
            let (Some(token), Some(action), Some(value), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(parse_err("expected `state action value`"));
            };
            let key = K::from_token(token)?;
            let action: usize = action.parse().map_err(|_| parse_err("bad action"))?;
            if action >= n_actions {
                return Err(parse_err("action out of range"));
            }
            let value: f64 = value.parse().map_err(|_| parse_err("bad value"))?;
            if !value.is_finite() {
                return Err(parse_err("non-finite value"));
            }
            table.set(&key, action, value);
        }
        Ok(table)
    }
}

impl TableKey for crate::bits::BitString {
    fn to_token(&self) -> String {
        self.to_string()
    }

    fn from_token(token: &str) -> Result<Self> {
        token.parse()
    }
}
