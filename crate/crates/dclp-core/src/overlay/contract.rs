//! Sharing contracts: the field-path-level declaration of what an actor
//! volunteers to the platform. Registering with a non-empty contract is the
//! condition of membership; everything outside the contract stays invisible
//! to other actors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::workload::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedCollection {
    pub collection: String,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingContract {
    pub actor_id: String,
    pub share: Vec<SharedCollection>,
}

impl SharingContract {
    pub fn new(actor_id: impl Into<String>) -> Self {
        SharingContract {
            actor_id: actor_id.into(),
            share: Vec::new(),
        }
    }

    pub fn with(mut self, collection: &str, fields: &[&str]) -> Self {
        self.share.push(SharedCollection {
            collection: collection.to_string(),
            fields: fields.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.share.is_empty()
    }

    /// Shared field paths of one collection, if the collection is shared at
    /// all.
    pub fn paths_for(&self, collection: &str) -> Option<&[String]> {
        self.share
            .iter()
            .find(|s| s.collection == collection)
            .map(|s| s.fields.as_slice())
    }

    /// The stock contracts each role enters with. These are one concrete
    /// choice of the minimum data needed to run the scenario queries:
    /// hospitals share order headers, suppliers share stock and catalog,
    /// carriers share offers, shipment ETAs and coarse truck positions.
    pub fn default_for_role(actor_id: &str, role: Role) -> SharingContract {
        let c = SharingContract::new(actor_id);
        match role {
            Role::Hospital => c.with(
                "orders",
                &["hospital", "supplier", "lines", "placed_at", "needed_by", "status"],
            ),
            Role::Supplier => c
                .with(
                    "stock",
                    &["supplier", "product_id", "qty_available", "location", "expiry"],
                )
                .with("products", &["product_id", "family", "subfamily", "lead_time"]),
            Role::Carrier => c
                .with("offers", &["carrier", "price", "duration"])
                .with(
                    "shipments",
                    &["order_id", "carrier", "truck_id", "departed_at", "eta", "eta_halfwidth"],
                )
                .with("positions", &["truck_id", "cell_x", "cell_y", "at"]),
            Role::Manufacturer | Role::Distributor => {
                c.with("products", &["product_id", "family", "subfamily"])
            }
        }
    }

    pub fn load(path: &Path) -> Result<SharingContract, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        toml::from_str(&text).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<(), String> {
        let text = toml::to_string_pretty(self).map_err(|e| e.to_string())?;
        std::fs::write(path, text).map_err(|e| e.to_string())
    }
}
