use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::panel::ObservedPanel;

/// Conditioning tuple of a discrete cell: `(Y_0, D_1)` or `(Y_0, Y_1, D_1)`.
/// Outcome levels are keyed by their bit pattern (with `-0.0` folded into
/// `0.0`), so two units share a cell only if their values are identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    y0: u64,
    y1: Option<u64>,
    d1: u8,
}

fn key_bits(x: f64) -> u64 {
    (x + 0.0).to_bits()
}

impl CellKey {
    pub fn new(y0: f64, y1: Option<f64>, d1: u8) -> Self {
        Self { y0: key_bits(y0), y1: y1.map(key_bits), d1 }
    }

    pub fn y0(&self) -> f64 {
        f64::from_bits(self.y0)
    }

    pub fn y1(&self) -> Option<f64> {
        self.y1.map(f64::from_bits)
    }

    pub fn d1(&self) -> u8 {
        self.d1
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.y1() {
            Some(y1) => write!(f, "(Y0={}, Y1={}, D1={})", self.y0(), y1, self.d1),
            None => write!(f, "(Y0={}, D1={})", self.y0(), self.d1),
        }
    }
}

impl Serialize for CellKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            y0: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            y1: Option<f64>,
            d1: u8,
        }
        Repr { y0: self.y0(), y1: self.y1(), d1: self.d1 }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CellKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            y0: f64,
            #[serde(default)]
            y1: Option<f64>,
            d1: u8,
        }
        let r = Repr::deserialize(d)?;
        Ok(CellKey::new(r.y0, r.y1, r.d1))
    }
}

/// Assignment of units to discrete cells, with cells in sorted key order.
#[derive(Debug, Clone)]
pub struct CellIndex {
    keys: Vec<CellKey>,
    counts: Vec<usize>,
    unit_cell: Vec<usize>,
}

impl CellIndex {
    pub fn from_keys(unit_keys: &[CellKey]) -> Self {
        let mut ids: BTreeMap<CellKey, usize> = unit_keys.iter().map(|k| (*k, 0)).collect();
        for (k, (_, id)) in ids.iter_mut().enumerate() {
            *id = k;
        }
        let keys: Vec<CellKey> = ids.keys().copied().collect();
        let mut counts = vec![0; keys.len()];
        let unit_cell = unit_keys
            .iter()
            .map(|k| {
                let c = ids[k];
                counts[c] += 1;
                c
            })
            .collect();
        Self { keys, counts, unit_cell }
    }

    /// Cells `(Y_0, D_1)`.
    pub fn by_y0_d1(panel: &ObservedPanel) -> Self {
        let keys: Vec<CellKey> = (0..panel.n()).map(|i| CellKey::new(panel.y(i, 0), None, panel.d(i, 1))).collect();
        Self::from_keys(&keys)
    }

    /// Cells `(Y_0, Y_1, D_1)`.
    pub fn by_history(panel: &ObservedPanel) -> Self {
        let keys: Vec<CellKey> =
            (0..panel.n()).map(|i| CellKey::new(panel.y(i, 0), Some(panel.y(i, 1)), panel.d(i, 1))).collect();
        Self::from_keys(&keys)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[CellKey] {
        &self.keys
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cell_of(&self, unit: usize) -> usize {
        self.unit_cell[unit]
    }

    pub fn unit_cells(&self) -> &[usize] {
        &self.unit_cell
    }

    /// Per-cell means of `values` (indexed by unit).
    pub fn means(&self, values: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.len()];
        for (c, v) in self.unit_cell.iter().zip(values) {
            sums[*c] += v;
        }
        sums.iter().zip(&self.counts).map(|(s, n)| s / *n as f64).collect()
    }

    /// Per-cell means over the units with `mask[i]`; cells without such units
    /// get count 0 and mean NaN.
    pub fn masked_means(&self, values: &[f64], mask: &[bool]) -> (Vec<f64>, Vec<usize>) {
        let mut sums = vec![0.0; self.len()];
        let mut counts = vec![0usize; self.len()];
        for ((c, v), m) in self.unit_cell.iter().zip(values).zip(mask) {
            if *m {
                sums[*c] += v;
                counts[*c] += 1;
            }
        }
        let means = sums.iter().zip(&counts).map(|(s, n)| if *n > 0 { s / *n as f64 } else { f64::NAN }).collect();
        (means, counts)
    }

    /// Broadcast per-cell values back to units.
    pub fn expand(&self, per_cell: &[f64]) -> Vec<f64> {
        self.unit_cell.iter().map(|c| per_cell[*c]).collect()
    }

    pub fn table(&self, statistic: impl Into<String>, values: &[f64]) -> CellTable {
        let means = self.means(values);
        CellTable {
            statistic: statistic.into(),
            rows: self
                .keys
                .iter()
                .zip(&self.counts)
                .zip(means)
                .map(|((key, count), mean)| CellRow { key: *key, count: *count, mean })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub key: CellKey,
    pub count: usize,
    pub mean: f64,
}

/// Per-cell count and mean of a named statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTable {
    pub statistic: String,
    pub rows: Vec<CellRow>,
}

impl CellTable {
    pub fn total_count(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_partition_units_and_average_within() {
        let keys = [
            CellKey::new(1.0, None, 0),
            CellKey::new(0.0, None, 1),
            CellKey::new(1.0, None, 0),
            CellKey::new(-0.0, None, 1),
        ];
        let idx = CellIndex::from_keys(&keys);
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.cell_of(1), idx.cell_of(3));
        let t = idx.table("x", &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.total_count(), 4);
        assert_eq!(t.rows[0].key.to_string(), "(Y0=0, D1=1)");
        assert_eq!(t.rows[0].mean, 3.0);
        assert_eq!(t.rows[1].mean, 2.0);
        let (m, c) = idx.masked_means(&[1.0, 2.0, 3.0, 4.0], &[true, false, false, false]);
        assert_eq!(c, vec![0, 1]);
        assert!(m[0].is_nan());
        let json = serde_json::to_string(&t.rows[0].key).unwrap();
        assert_eq!(json, r#"{"y0":0.0,"d1":1}"#);
        assert_eq!(serde_json::from_str::<CellKey>(&json).unwrap(), t.rows[0].key);
    }
}
