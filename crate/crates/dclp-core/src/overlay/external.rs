//! External data providers: in-process stand-ins for web APIs. Each
//! provider is a deterministic seeded function of its parameters, so runs
//! reproduce exactly.

use sha2::{Digest, Sha256};

use crate::doc::{FieldTree, FieldValue};

pub trait ExternalProvider: Send + Sync {
    fn name(&self) -> &str;
    fn serves(&self, kind: &str) -> bool;
    fn respond(&self, params: &FieldTree) -> FieldTree;
}

fn param_hash(seed: u64, kind: &str, params: &FieldTree) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(kind.as_bytes());
    h.update(
        serde_json::to_string(&FieldValue::Tree(params.clone()))
            .expect("params serialize")
            .as_bytes(),
    );
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest is long enough"))
}

/// Road congestion by grid cell: a delay multiplier in hundredths,
/// 100 (free flow) to 200 (doubled travel time).
pub struct RoadTrafficStub {
    pub seed: u64,
}

impl ExternalProvider for RoadTrafficStub {
    fn name(&self) -> &str {
        "road_traffic"
    }

    fn serves(&self, kind: &str) -> bool {
        kind == "road_traffic"
    }

    fn respond(&self, params: &FieldTree) -> FieldTree {
        let h = param_hash(self.seed, "road_traffic", params);
        let mut t = FieldTree::new();
        t.insert("factor_pct".into(), FieldValue::Int(100 + (h % 101) as i64));
        t
    }
}

/// Weather by grid cell.
pub struct WeatherStub {
    pub seed: u64,
}

impl ExternalProvider for WeatherStub {
    fn name(&self) -> &str {
        "weather"
    }

    fn serves(&self, kind: &str) -> bool {
        kind == "weather"
    }

    fn respond(&self, params: &FieldTree) -> FieldTree {
        let h = param_hash(self.seed, "weather", params);
        let condition = ["clear", "rain", "snow", "fog"][(h % 4) as usize];
        let mut t = FieldTree::new();
        t.insert("condition".into(), FieldValue::Str(condition.into()));
        t.insert("temperature_c".into(), FieldValue::Int(-10 + (h / 7 % 40) as i64));
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::set_path;

    #[test]
    fn stubs_are_reproducible_and_seed_sensitive() {
        let mut params = FieldTree::new();
        set_path(&mut params, "cell_x", FieldValue::Int(3));
        set_path(&mut params, "cell_y", FieldValue::Int(7));
        let a = WeatherStub { seed: 9 }.respond(&params);
        let b = WeatherStub { seed: 9 }.respond(&params);
        assert_eq!(a, b);
        let traffic = RoadTrafficStub { seed: 9 }.respond(&params);
        let f = traffic.get("factor_pct").unwrap().as_int().unwrap();
        assert!((100..=200).contains(&f));
    }
}
