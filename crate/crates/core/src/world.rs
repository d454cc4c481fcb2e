use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::panel::PanelError;
use crate::path::TreatmentPath;

/// Default upper bound on the horizon of a world. Storage grows as `2^(T+1)`
/// per unit, so the bound protects against accidental blow-ups; pass a larger
/// value to [`PotentialOutcomeWorld::from_parts`] to lift it.
pub const DEFAULT_MAX_HORIZON: usize = 12;

/// Number of stored potential outcomes per unit for horizon `t`:
/// `2 + 4 + … + 2^T = 2^(T+1) − 2`.
pub fn outcomes_per_unit(horizon: usize) -> usize {
    (1usize << (horizon + 1)) - 2
}

fn offset(path: TreatmentPath) -> usize {
    (1usize << path.horizon()) - 2 + path.code() as usize
}

/// Per-unit record of selection-relevant unobservables, stored as named real
/// columns. Each generator documents the names it writes (`alpha`, `eps1_0`,
/// `xi0`, …); checkers look columns up by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Latent {
    names: Vec<String>,
    values: Vec<f64>,
}

impl Latent {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(names: Vec<String>, values: Vec<f64>) -> Self {
        assert!(
            names.is_empty() && values.is_empty() || !names.is_empty() && values.len() % names.len() == 0,
            "latent values do not tile the column names"
        );
        Self { names, values }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.column_index(name).is_some()
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        let k = self.width();
        &self.values[unit * k..(unit + 1) * k]
    }

    pub fn get(&self, unit: usize, name: &str) -> Option<f64> {
        self.column_index(name).map(|c| self.values[unit * self.width() + c])
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        let k = self.width();
        Some(self.values.iter().skip(c).step_by(k).copied().collect())
    }

    fn rows(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.values.len() / self.names.len()
        }
    }
}

/// The complete counterfactual record of a simulated population.
///
/// For every unit the world stores `Y_0` and `Y_t(d^t)` for every period
/// `t = 1..=T` and every one of the `2^t` histories, together with the
/// realised (assigned) path, the probability with which each realised
/// treatment was drawn, and the generator's latent record. Immutable after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeWorld {
    horizon: usize,
    y0: Vec<f64>,
    po: Vec<f64>,
    assigned: Vec<TreatmentPath>,
    propensity: Vec<f64>,
    latent: Latent,
}

impl PotentialOutcomeWorld {
    /// Assemble a world from flat buffers.
    ///
    /// `po` is unit-major with `outcomes_per_unit(horizon)` entries per unit,
    /// ordered by period and then by path code. `propensity` holds
    /// `Pr{D_t = 1 | ·}` for `t = 1..=T`, unit-major.
    pub fn from_parts(
        horizon: usize,
        y0: Vec<f64>,
        po: Vec<f64>,
        assigned: Vec<TreatmentPath>,
        propensity: Vec<f64>,
        latent: Latent,
        max_horizon: usize,
    ) -> Result<Self, PanelError> {
        if horizon == 0 || horizon > max_horizon || horizon > crate::path::MAX_ENCODABLE_HORIZON {
            return Err(PanelError::Horizon(format!("world horizon {horizon} outside 1..={max_horizon}")));
        }
        let n = y0.len();
        let stride = outcomes_per_unit(horizon);
        if po.len() != n * stride {
            return Err(PanelError::Dimension(format!(
                "expected {} potential outcomes for {n} units, got {}",
                n * stride,
                po.len()
            )));
        }
        if assigned.len() != n || propensity.len() != n * horizon {
            return Err(PanelError::Dimension("assigned paths / propensities do not match unit count".into()));
        }
        if let Some(i) = assigned.iter().position(|p| p.horizon() != horizon) {
            return Err(PanelError::Dimension(format!("unit {i}: assigned path has wrong horizon")));
        }
        if latent.width() > 0 && latent.rows() != n {
            return Err(PanelError::Dimension("latent record does not match unit count".into()));
        }
        Ok(Self { horizon, y0, po, assigned, propensity, latent })
    }

    pub fn n(&self) -> usize {
        self.y0.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn y0(&self, unit: usize) -> f64 {
        self.y0[unit]
    }

    pub fn y0_all(&self) -> &[f64] {
        &self.y0
    }

    /// `Y_t(d^t)` with `t = path.horizon()`; the empty path returns `Y_0`.
    #[inline]
    pub fn outcome(&self, unit: usize, path: TreatmentPath) -> f64 {
        if path.horizon() == 0 {
            return self.y0[unit];
        }
        debug_assert!(path.horizon() <= self.horizon);
        self.po[unit * outcomes_per_unit(self.horizon) + offset(path)]
    }

    /// Outcome in period `t` along the first `t` entries of a longer path.
    #[inline]
    pub fn outcome_along(&self, unit: usize, path: TreatmentPath, t: usize) -> f64 {
        self.outcome(unit, path.prefix(t))
    }

    pub fn assigned(&self, unit: usize) -> TreatmentPath {
        self.assigned[unit]
    }

    /// Probability with which the generator drew `D_t = 1` for this unit.
    pub fn propensity(&self, unit: usize, t: usize) -> f64 {
        assert!((1..=self.horizon).contains(&t));
        self.propensity[unit * self.horizon + t - 1]
    }

    pub fn latent(&self) -> &Latent {
        &self.latent
    }

    pub fn to_json(&self) -> WorldDocument {
        let units = (0..self.n())
            .map(|i| {
                let mut po = BTreeMap::new();
                for t in 1..=self.horizon {
                    for p in TreatmentPath::all(t) {
                        po.insert(p.to_string(), self.outcome(i, p));
                    }
                }
                let latent = self
                    .latent
                    .names()
                    .iter()
                    .zip(if self.latent.width() > 0 { self.latent.row(i) } else { &[] })
                    .map(|(k, v)| (k.clone(), *v))
                    .collect();
                UnitRecord {
                    y0: self.y0[i],
                    po,
                    assigned: self.assigned[i],
                    propensity: self.propensity[i * self.horizon..(i + 1) * self.horizon].to_vec(),
                    latent,
                }
            })
            .collect();
        WorldDocument { schema: 1, horizon: self.horizon, units }
    }

    pub fn from_json(doc: &WorldDocument) -> Result<Self, PanelError> {
        if doc.schema != 1 {
            return Err(PanelError::Format(format!("unsupported world schema {}", doc.schema)));
        }
        let horizon = doc.horizon;
        if horizon == 0 || horizon > crate::path::MAX_ENCODABLE_HORIZON {
            return Err(PanelError::Horizon(format!("world horizon {horizon}")));
        }
        let n = doc.units.len();
        let stride = outcomes_per_unit(horizon);
        let names: Vec<String> = doc.units.first().map(|u| u.latent.keys().cloned().collect()).unwrap_or_default();
        let mut y0 = Vec::with_capacity(n);
        let mut po = vec![f64::NAN; n * stride];
        let mut assigned = Vec::with_capacity(n);
        let mut propensity = Vec::with_capacity(n * horizon);
        let mut latent = Vec::with_capacity(n * names.len());
        for (i, u) in doc.units.iter().enumerate() {
            y0.push(u.y0);
            for t in 1..=horizon {
                for p in TreatmentPath::all(t) {
                    let v = u
                        .po
                        .get(&p.to_string())
                        .ok_or_else(|| PanelError::MalformedWorld { unit: i, path: p.to_string() })?;
                    po[i * stride + offset(p)] = *v;
                }
            }
            if u.assigned.horizon() != horizon {
                return Err(PanelError::Dimension(format!("unit {i}: assigned path {} has wrong length", u.assigned)));
            }
            assigned.push(u.assigned);
            if u.propensity.len() != horizon {
                return Err(PanelError::Dimension(format!("unit {i}: expected {horizon} propensities")));
            }
            propensity.extend_from_slice(&u.propensity);
            if u.latent.len() != names.len() {
                return Err(PanelError::Dimension(format!("unit {i}: latent record has different fields")));
            }
            for name in &names {
                let v = u
                    .latent
                    .get(name)
                    .ok_or_else(|| PanelError::Dimension(format!("unit {i}: latent field {name} missing")))?;
                latent.push(*v);
            }
        }
        let latent = if names.is_empty() { Latent::empty() } else { Latent::new(names, latent) };
        Self::from_parts(horizon, y0, po, assigned, propensity, latent, crate::path::MAX_ENCODABLE_HORIZON)
    }
}

/// On-disk form of a world: one record per unit with a path-keyed outcome map
/// (`"0"`, `"1"`, `"00"`, …).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldDocument {
    pub schema: u32,
    pub horizon: usize,
    pub units: Vec<UnitRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitRecord {
    pub y0: f64,
    pub po: BTreeMap<String, f64>,
    pub assigned: TreatmentPath,
    pub propensity: Vec<f64>,
    #[serde(default)]
    pub latent: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_world() -> PotentialOutcomeWorld {
        // T = 2: Y1(0), Y1(1), Y2(00), Y2(01), Y2(10), Y2(11)
        let po = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, -1.0, -2.0, -3.0, -4.0, -5.0, -6.0];
        PotentialOutcomeWorld::from_parts(
            2,
            vec![0.0, 1.0],
            po,
            vec!["10".parse().unwrap(), "01".parse().unwrap()],
            vec![0.5, 0.5, 0.4, 0.6],
            Latent::new(vec!["alpha".into()], vec![0.25, -0.25]),
            DEFAULT_MAX_HORIZON,
        )
        .unwrap()
    }

    #[test]
    fn t2_world_stores_six_outcomes_per_unit() {
        assert_eq!(outcomes_per_unit(2), 6);
        let w = tiny_world();
        assert_eq!(w.outcome(0, "1".parse().unwrap()), 2.0);
        assert_eq!(w.outcome(0, "10".parse().unwrap()), 5.0);
        assert_eq!(w.outcome(1, "01".parse().unwrap()), -4.0);
        assert_eq!(w.outcome(1, TreatmentPath::EMPTY), 1.0);
    }

    #[test]
    fn prefix_lookup_is_path_consistent() {
        let w = tiny_world();
        for full in TreatmentPath::all(2) {
            let via_prefix = w.outcome_along(0, full, 1);
            assert_eq!(via_prefix, w.outcome(0, full.prefix(1)));
        }
        assert_eq!(w.outcome_along(0, "10".parse().unwrap(), 1), w.outcome_along(0, "11".parse().unwrap(), 1));
    }

    #[test]
    fn json_round_trip_preserves_every_bit() {
        let w = tiny_world();
        let text = serde_json::to_string(&w.to_json()).unwrap();
        assert!(text.contains("\"10\""));
        let back = PotentialOutcomeWorld::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn missing_path_is_malformed() {
        let w = tiny_world();
        let mut doc = w.to_json();
        doc.units[1].po.remove("11");
        match PotentialOutcomeWorld::from_json(&doc) {
            Err(PanelError::MalformedWorld { unit: 1, path }) => assert_eq!(path, "11"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn horizon_bound_is_enforced() {
        let err = PotentialOutcomeWorld::from_parts(3, vec![], vec![], vec![], vec![], Latent::empty(), 2);
        assert!(matches!(err, Err(PanelError::Horizon(_))));
    }
}
