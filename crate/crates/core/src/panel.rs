use std::io::{Read, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::path::TreatmentPath;
use crate::world::PotentialOutcomeWorld;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("horizon error: {0}")]
    Horizon(String),
    #[error("malformed world: unit {unit} has no potential outcome for path {path:?}")]
    MalformedWorld { unit: usize, path: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Realised outcomes `Y_0..Y_T` and treatments `D_1..D_T` of a balanced panel.
/// This is the only input estimators see.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedPanel {
    horizon: usize,
    y: Vec<f64>,
    d: Vec<u8>,
}

impl ObservedPanel {
    /// `y` is unit-major with `T + 1` entries per unit; `d` has `T`.
    pub fn new(horizon: usize, y: Vec<f64>, d: Vec<u8>) -> Result<Self, PanelError> {
        if horizon == 0 {
            return Err(PanelError::Horizon("panel horizon must be at least 1".into()));
        }
        if y.len() % (horizon + 1) != 0 || d.len() != y.len() / (horizon + 1) * horizon {
            return Err(PanelError::Dimension(format!(
                "y has {} entries and d has {} for horizon {horizon}",
                y.len(),
                d.len()
            )));
        }
        if let Some(k) = d.iter().position(|&v| v > 1) {
            return Err(PanelError::Format(format!(
                "treatment of unit {} period {} is {}",
                k / horizon,
                k % horizon + 1,
                d[k]
            )));
        }
        Ok(Self { horizon, y, d })
    }

    pub fn n(&self) -> usize {
        self.d.len() / self.horizon
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn y(&self, unit: usize, t: usize) -> f64 {
        self.y[unit * (self.horizon + 1) + t]
    }

    /// `D_t`; `t = 0` is the implicit untreated period.
    #[inline]
    pub fn d(&self, unit: usize, t: usize) -> u8 {
        if t == 0 {
            0
        } else {
            self.d[unit * self.horizon + t - 1]
        }
    }

    pub fn path(&self, unit: usize) -> TreatmentPath {
        TreatmentPath::new(&self.d[unit * self.horizon..(unit + 1) * self.horizon]).expect("validated binary path")
    }

    pub fn outcomes(&self, unit: usize) -> &[f64] {
        &self.y[unit * (self.horizon + 1)..(unit + 1) * (self.horizon + 1)]
    }

    /// SHA-256 over the horizon and the raw bit patterns of every entry.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.horizon as u64).to_le_bytes());
        for v in &self.y {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(&self.d);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Long-format CSV with header `unit,t,y,d`; the `t = 0` row carries
    /// `d = 0`. Reals use the shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PanelError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit", "t", "y", "d"])?;
        for i in 0..self.n() {
            for t in 0..=self.horizon {
                w.write_record([i.to_string(), t.to_string(), format!("{:?}", self.y(i, t)), self.d(i, t).to_string()])?;
            }
        }
        w.flush().map_err(|e| PanelError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, PanelError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["unit", "t", "y", "d"] {
            return Err(PanelError::Format(format!("expected header unit,t,y,d, found {:?}", header)));
        }
        let mut rows: Vec<(usize, usize, f64, u8)> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
            let parse_err = |what: &str| PanelError::Format(format!("row {}: bad {what}", line + 2));
            let unit: usize = field(0).parse().map_err(|_| parse_err("unit"))?;
            let t: usize = field(1).parse().map_err(|_| parse_err("t"))?;
            let y: f64 = field(2).parse().map_err(|_| parse_err("y"))?;
            let d: u8 = field(3).parse().map_err(|_| parse_err("d"))?;
            rows.push((unit, t, y, d));
        }
        let horizon = rows.iter().map(|r| r.1).max().ok_or_else(|| PanelError::Format("empty panel".into()))?;
        let n = rows.iter().map(|r| r.0).max().unwrap() + 1;
        if rows.len() != n * (horizon + 1) {
            return Err(PanelError::Format(format!(
                "unbalanced panel: {} rows for {n} units and horizon {horizon}",
                rows.len()
            )));
        }
        let mut y = vec![f64::NAN; n * (horizon + 1)];
        let mut d = vec![0u8; n * horizon];
        let mut seen = vec![false; n * (horizon + 1)];
        for (unit, t, yv, dv) in rows {
            let k = unit * (horizon + 1) + t;
            if std::mem::replace(&mut seen[k], true) {
                return Err(PanelError::Format(format!("duplicate row for unit {unit}, t {t}")));
            }
            if t == 0 {
                if dv != 0 {
                    return Err(PanelError::Format(format!("unit {unit}: D_0 must be 0")));
                }
            } else {
                d[unit * horizon + t - 1] = dv;
            }
            y[k] = yv;
        }
        Self::new(horizon, y, d)
    }
}

/// Realise the observed panel: `Y_t = Y_t(D^t)` and `D` copies the assigned
/// paths. A non-finite stored outcome on a realised path counts as missing.
pub fn realize_observed(world: &PotentialOutcomeWorld) -> Result<ObservedPanel, PanelError> {
    let horizon = world.horizon();
    let n = world.n();
    let mut y = Vec::with_capacity(n * (horizon + 1));
    let mut d = Vec::with_capacity(n * horizon);
    for i in 0..n {
        let path = world.assigned(i);
        y.push(world.y0(i));
        for t in 1..=horizon {
            let prefix = path.prefix(t);
            let v = world.outcome(i, prefix);
            if !v.is_finite() {
                return Err(PanelError::MalformedWorld { unit: i, path: prefix.to_string() });
            }
            y.push(v);
            d.push(path.get(t));
        }
    }
    ObservedPanel::new(horizon, y, d)
}

/// First differences of a panel: `ΔY_t` for `t = 1..=T`, `ΔD_t` for `t = 2..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Differenced {
    horizon: usize,
    dy: Vec<f64>,
    dd: Vec<f64>,
}

impl Differenced {
    pub fn n(&self) -> usize {
        self.dy.len() / self.horizon
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn dy(&self, unit: usize, t: usize) -> f64 {
        debug_assert!((1..=self.horizon).contains(&t));
        self.dy[unit * self.horizon + t - 1]
    }

    #[inline]
    pub fn dd(&self, unit: usize, t: usize) -> f64 {
        debug_assert!((2..=self.horizon).contains(&t));
        self.dd[unit * (self.horizon - 1) + t - 2]
    }

    /// Column `ΔY_t` for all units.
    pub fn dy_col(&self, t: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.dy(i, t)).collect()
    }

    pub fn dd_col(&self, t: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.dd(i, t)).collect()
    }
}

pub fn first_difference(panel: &ObservedPanel) -> Result<Differenced, PanelError> {
    let horizon = panel.horizon();
    if horizon < 2 {
        return Err(PanelError::Horizon(format!("first differences need T >= 2, got {horizon}")));
    }
    let n = panel.n();
    let mut dy = Vec::with_capacity(n * horizon);
    let mut dd = Vec::with_capacity(n * (horizon - 1));
    for i in 0..n {
        for t in 1..=horizon {
            dy.push(panel.y(i, t) - panel.y(i, t - 1));
        }
        for t in 2..=horizon {
            dd.push(panel.d(i, t) as f64 - panel.d(i, t - 1) as f64);
        }
    }
    Ok(Differenced { horizon, dy, dd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Latent, DEFAULT_MAX_HORIZON};

    fn world_with(po: Vec<f64>, y0: Vec<f64>, paths: &[&str]) -> PotentialOutcomeWorld {
        let n = y0.len();
        PotentialOutcomeWorld::from_parts(
            2,
            y0,
            po,
            paths.iter().map(|p| p.parse().unwrap()).collect(),
            vec![0.5; 2 * n],
            Latent::empty(),
            DEFAULT_MAX_HORIZON,
        )
        .unwrap()
    }

    #[test]
    fn all_zero_world_gives_zero_panel() {
        let w = world_with(vec![0.0; 12], vec![0.0, 0.0], &["00", "11"]);
        let p = realize_observed(&w).unwrap();
        assert!((0..2).all(|i| p.outcomes(i).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn realized_outcomes_follow_the_assigned_prefix() {
        // Y1(0)=1 Y1(1)=2 Y2(00)=3 Y2(01)=4 Y2(10)=5 Y2(11)=6
        let w = world_with(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.5], &["10"]);
        let p = realize_observed(&w).unwrap();
        assert_eq!(p.outcomes(0), &[0.5, 2.0, 5.0]);
        assert_eq!((p.d(0, 0), p.d(0, 1), p.d(0, 2)), (0, 1, 0));
    }

    #[test]
    fn nan_on_realized_path_is_malformed() {
        let w = world_with(vec![1.0, 2.0, 3.0, 4.0, f64::NAN, 6.0], vec![0.5], &["10"]);
        assert!(matches!(realize_observed(&w), Err(PanelError::MalformedWorld { unit: 0, .. })));
    }

    #[test]
    fn first_difference_arithmetic() {
        let p = ObservedPanel::new(2, vec![1.0, 3.0, 2.0, 5.0, 5.0, 5.0], vec![1, 1, 0, 1]).unwrap();
        let fd = first_difference(&p).unwrap();
        assert_eq!((fd.dy(0, 1), fd.dy(0, 2)), (2.0, -1.0));
        assert_eq!(fd.dd(0, 2), 0.0);
        assert_eq!((fd.dy(1, 1), fd.dy(1, 2)), (0.0, 0.0));
        assert_eq!(fd.dd(1, 2), 1.0);
    }

    #[test]
    fn first_difference_needs_two_periods() {
        let p = ObservedPanel::new(1, vec![0.0, 1.0], vec![1]).unwrap();
        assert!(matches!(first_difference(&p), Err(PanelError::Horizon(_))));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let p = ObservedPanel::new(2, vec![0.1, 1.0 / 3.0, -2e-300, 7.0, 0.0, -0.0], vec![1, 0, 0, 1]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("unit,t,y,d\n"));
        let back = ObservedPanel::read_csv(&buf[..]).unwrap();
        assert_eq!(back.digest(), p.digest());
    }

    #[test]
    fn csv_rejects_nonzero_d0_and_bad_header() {
        let bad = "unit,t,y,d\n0,0,1.0,1\n0,1,2.0,0\n";
        assert!(ObservedPanel::read_csv(bad.as_bytes()).is_err());
        let bad = "id,t,y,d\n0,0,1.0,0\n";
        assert!(ObservedPanel::read_csv(bad.as_bytes()).is_err());
    }
}
