//! Hospital-supply-chain domain model: the collections the platform stores,
//! the seeded stream generator that feeds actors' local stores, and the
//! scenario query logic the frontend aggregates with.
//!
//! Domain objects are plain documents in conventional collections:
//!
//! - `orders` (hospital-owned): supplier, lines of (product_id, qty),
//!   placed_at, needed_by, status, delivered_at once delivered.
//! - `shipments` (carrier-owned): order_id, truck_id, departed_at, eta,
//!   eta_halfwidth.
//! - `positions` (carrier-owned): per-truck position fixes; precise x/y stay
//!   confidential, coarse cell_x/cell_y are the shared form.
//! - `offers` (carrier-owned): the carrier's current price/duration quote.
//! - `stock` (supplier-owned): per-product quantity, location and optional
//!   lot expiry.
//! - `products` (supplier-owned): catalog rows with family, subfamily and
//!   lead time.

pub mod gen;
pub mod scenario;

pub use gen::{
    generate_stream, ledger, load_static_profile, Event, EventOp, GeneratorConfig, ProfileError,
    ProfileRow, StreamGenerator,
};
pub use scenario::{evaluate, QueryError, QueryKind, ScenarioOutcome};

use crate::doc::Document;
use crate::Tick;

/// Bucket width of the demand-forecast time series, in ticks.
pub const FORECAST_BUCKET_TICKS: Tick = 100;

/// Freshness verdict of a document at a point in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Obsolete,
}

/// A document is obsolete once its declared expiry has passed (the boundary
/// tick itself counts as expired) or once it has gone unrefreshed longer
/// than `obsolete_ttl`.
pub fn expire_check(doc: &Document, now: Tick, obsolete_ttl: Tick) -> Freshness {
    if let Some(expiry) = doc.fields.get("expiry").and_then(|v| v.as_int()) {
        if expiry >= 0 && (expiry as Tick) <= now {
            return Freshness::Obsolete;
        }
    }
    if doc.updated_at + obsolete_ttl <= now {
        return Freshness::Obsolete;
    }
    Freshness::Fresh
}

/// Supply-chain roles an actor can register as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Hospital,
    Supplier,
    Carrier,
    Manufacturer,
    Distributor,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Hospital => "hospital",
            Role::Supplier => "supplier",
            Role::Carrier => "carrier",
            Role::Manufacturer => "manufacturer",
            Role::Distributor => "distributor",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hospital" => Ok(Role::Hospital),
            "supplier" => Ok(Role::Supplier),
            "carrier" => Ok(Role::Carrier),
            "manufacturer" => Ok(Role::Manufacturer),
            "distributor" => Ok(Role::Distributor),
            other => Err(format!("unknown role {other}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expiry_boundary_is_inclusive_obsolete() {
        let doc = Document::new("lot", "supplier-1", 100).with("expiry", 200i64);
        assert_eq!(expire_check(&doc, 199, 500), Freshness::Fresh);
        assert_eq!(expire_check(&doc, 200, 500), Freshness::Obsolete);
    }

    #[test]
    fn unrefreshed_docs_go_obsolete_at_ttl_boundary() {
        let doc = Document::new("d", "a", 100);
        assert_eq!(expire_check(&doc, 599, 500), Freshness::Fresh);
        assert_eq!(expire_check(&doc, 600, 500), Freshness::Obsolete);
    }
}
