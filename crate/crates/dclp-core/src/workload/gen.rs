//! The seeded stream generator. Static annual order profiles become
//! per-tick arrival rates; the generator then emits order placements, status
//! transitions, truck movement, stock changes and carrier offers as a fully
//! deterministic event stream: same config, byte-identical ledger.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{Document, FieldTree, FieldValue};
use crate::Tick;

/// One static profile row: annual ordered quantity of a subfamily.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub family: String,
    pub subfamily: String,
    pub annual_qty: u64,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile parse error: {0}")]
    Parse(String),
    #[error("negative annual volume in row {row}")]
    NegativeVolume { row: usize },
}

/// Everything that determines the event stream. Identical configs produce
/// byte-identical ledgers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub hospitals: u32,
    pub suppliers: u32,
    pub carriers: u32,
    pub rows: Vec<ProfileRow>,
    pub ticks_per_year: u64,
    pub products_per_subfamily: u32,
    pub trucks_per_carrier: u32,
    pub truck_update_period: Tick,
    pub offer_refresh_period: Tick,
    pub stock_refresh_period: Tick,
    /// Lot expiry horizon drawn uniformly from this range; (0, 0) disables
    /// expiries.
    pub expiry_horizon: (Tick, Tick),
    pub accept_delay: (Tick, Tick),
    pub ship_delay: (Tick, Tick),
    pub ship_duration: (Tick, Tick),
    pub base_eta_halfwidth: Tick,
    /// Fraction of orders marked confidential, in percent.
    pub confidential_order_pct: u32,
    /// Plant one stock lot that is already expired at tick 1.
    pub plant_expired_lot: bool,
    /// Draw arrivals from a seeded Poisson process instead of the exact
    /// fractional accumulator.
    pub poisson: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            hospitals: 2,
            suppliers: 2,
            carriers: 1,
            rows: Vec::new(),
            ticks_per_year: 10_000,
            products_per_subfamily: 2,
            trucks_per_carrier: 3,
            truck_update_period: 25,
            offer_refresh_period: 250,
            stock_refresh_period: 200,
            expiry_horizon: (1_000, 5_000),
            accept_delay: (10, 50),
            ship_delay: (10, 50),
            ship_duration: (20, 200),
            base_eta_halfwidth: 5,
            confidential_order_pct: 5,
            plant_expired_lot: false,
            poisson: false,
        }
    }
}

impl GeneratorConfig {
    pub fn hospital_ids(&self) -> Vec<String> {
        (1..=self.hospitals).map(|i| format!("hospital-{i}")).collect()
    }

    pub fn supplier_ids(&self) -> Vec<String> {
        (1..=self.suppliers).map(|i| format!("supplier-{i}")).collect()
    }

    pub fn carrier_ids(&self) -> Vec<String> {
        (1..=self.carriers).map(|i| format!("carrier-{i}")).collect()
    }

    pub fn actor_ids(&self) -> Vec<String> {
        let mut ids = self.hospital_ids();
        ids.extend(self.supplier_ids());
        ids.extend(self.carrier_ids());
        ids
    }

    pub fn product_ids_of_row(&self, row_idx: usize) -> Vec<String> {
        (0..self.products_per_subfamily)
            .map(|p| format!("prod-{row_idx:02}-{p}"))
            .collect()
    }

    /// Per-tick arrival rate of one row.
    pub fn rate_per_tick(&self, row: &ProfileRow) -> f64 {
        row.annual_qty as f64 / self.ticks_per_year as f64
    }

    /// The deterministically planted expired stock lot, when enabled:
    /// (owner, collection, doc id).
    pub fn planted_lot(&self) -> Option<(String, String, String)> {
        if self.plant_expired_lot && self.suppliers > 0 && !self.rows.is_empty() {
            Some((
                "supplier-1".into(),
                "stock".into(),
                "supplier-1/prod-00-0".into(),
            ))
        } else {
            None
        }
    }
}

/// Parse a static profile CSV with columns family, subfamily, annual_qty
/// into a generator config carrying default rates and populations.
pub fn load_static_profile(path: &Path) -> Result<GeneratorConfig, ProfileError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ProfileError::Parse(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| ProfileError::Parse(e.to_string()))?
        .clone();
    let expected = ["family", "subfamily", "annual_qty"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(ProfileError::Parse(format!(
            "expected header family,subfamily,annual_qty, got {headers:?}"
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| ProfileError::Parse(e.to_string()))?;
        let qty: i64 = rec[2]
            .parse()
            .map_err(|e| ProfileError::Parse(format!("row {i}: {e}")))?;
        if qty < 0 {
            return Err(ProfileError::NegativeVolume { row: i });
        }
        rows.push(ProfileRow {
            family: rec[0].to_string(),
            subfamily: rec[1].to_string(),
            annual_qty: qty as u64,
        });
    }
    Ok(GeneratorConfig {
        rows,
        ..GeneratorConfig::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOp {
    Insert,
    Update,
}

/// One generated event: a document landing in its owner's local store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub tick: Tick,
    pub collection: String,
    pub op: EventOp,
    pub doc: Document,
}

impl Event {
    /// Canonical single-line serialization for the event ledger.
    pub fn ledger_line(&self) -> String {
        let mut t = FieldTree::new();
        t.insert("collection".into(), FieldValue::Str(self.collection.clone()));
        t.insert("doc".into(), self.doc.canonical_value());
        t.insert(
            "op".into(),
            FieldValue::Str(
                match self.op {
                    EventOp::Insert => "insert",
                    EventOp::Update => "update",
                }
                .into(),
            ),
        );
        t.insert("tick".into(), FieldValue::Int(self.tick as i64));
        serde_json::to_string(&FieldValue::Tree(t)).expect("events always serialize")
    }
}

/// Render a whole stream as the line-oriented ledger text.
pub fn ledger(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.ledger_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
enum Transition {
    Accept { order_id: String },
    Ship { order_id: String },
    Deliver { order_id: String },
}

/// The stateful generator. Drive it one tick at a time (the harness does)
/// or all at once via [`generate_stream`].
pub struct StreamGenerator {
    cfg: GeneratorConfig,
    rng: ChaCha8Rng,
    /// Integer arrival accumulators, one per profile row, in units of
    /// 1/ticks_per_year.
    acc: Vec<u64>,
    next_order: u64,
    next_shipment: u64,
    pending: BTreeMap<Tick, Vec<Transition>>,
    truck_pos: BTreeMap<String, (i64, i64)>,
    order_state: BTreeMap<String, OrderState>,
    started: bool,
}

#[derive(Debug, Clone)]
struct OrderState {
    doc: Document,
}

impl StreamGenerator {
    pub fn new(cfg: GeneratorConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let acc = vec![0u64; cfg.rows.len()];
        StreamGenerator {
            cfg,
            rng,
            acc,
            next_order: 0,
            next_shipment: 0,
            pending: BTreeMap::new(),
            truck_pos: BTreeMap::new(),
            order_state: BTreeMap::new(),
            started: false,
        }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Everything the generator emits at `tick`, in deterministic order:
    /// bootstrap documents first (tick 0 only), then due status
    /// transitions, then order arrivals, then periodic refreshes.
    pub fn events_for_tick(&mut self, tick: Tick) -> Vec<Event> {
        let mut out = Vec::new();
        if !self.started {
            self.bootstrap(&mut out);
            self.started = true;
        }
        self.fire_transitions(tick, &mut out);
        self.arrivals(tick, &mut out);
        self.periodic(tick, &mut out);
        out
    }

    fn bootstrap(&mut self, out: &mut Vec<Event>) {
        // Product catalogs and stock, per supplier.
        for supplier in self.cfg.supplier_ids() {
            for (r, row) in self.cfg.rows.clone().iter().enumerate() {
                for product in self.cfg.product_ids_of_row(r) {
                    let lead_time = self.rng.gen_range(5..50i64);
                    let doc = Document::new(format!("{supplier}/{product}"), &supplier, 0)
                        .with("product_id", product.as_str())
                        .with("family", row.family.as_str())
                        .with("subfamily", row.subfamily.as_str())
                        .with("lead_time", lead_time);
                    out.push(Event {
                        tick: 0,
                        collection: "products".into(),
                        op: EventOp::Insert,
                        doc,
                    });

                    let qty = self.rng.gen_range(0..500i64);
                    let loc = self.rng.gen_range(1..9u32);
                    let mut stock = Document::new(format!("{supplier}/{product}"), &supplier, 0)
                        .with("supplier", supplier.as_str())
                        .with("product_id", product.as_str())
                        .with("qty_available", qty)
                        .with("location", format!("loc-{loc}"));
                    stock = self.with_expiry(stock, 0);
                    out.push(Event {
                        tick: 0,
                        collection: "stock".into(),
                        op: EventOp::Insert,
                        doc: stock,
                    });
                }
            }
        }
        if let Some((owner, collection, id)) = self.cfg.planted_lot() {
            // Rewrite the planted lot as already expired.
            if let Some(e) = out
                .iter_mut()
                .find(|e| e.collection == collection && e.doc.id == id && e.doc.owner == owner)
            {
                crate::doc::set_path(&mut e.doc.fields, "expiry", FieldValue::Int(1));
            }
        }

        // Trucks and opening offers, per carrier.
        for carrier in self.cfg.carrier_ids() {
            for t in 0..self.cfg.trucks_per_carrier {
                let truck = format!("trk-{carrier}-{t}");
                let x = self.rng.gen_range(0..100i64);
                let y = self.rng.gen_range(0..100i64);
                self.truck_pos.insert(truck.clone(), (x, y));
                out.push(Event {
                    tick: 0,
                    collection: "positions".into(),
                    op: EventOp::Insert,
                    doc: position_doc(&carrier, &truck, x, y, 0),
                });
            }
            let offer = self.offer_doc(&carrier, 0);
            out.push(Event {
                tick: 0,
                collection: "offers".into(),
                op: EventOp::Insert,
                doc: offer,
            });
        }
    }

    fn with_expiry(&mut self, doc: Document, now: Tick) -> Document {
        let (lo, hi) = self.cfg.expiry_horizon;
        if hi == 0 {
            return doc;
        }
        let horizon = self.rng.gen_range(lo..=hi);
        doc.with("expiry", (now + horizon) as i64)
    }

    fn offer_doc(&mut self, carrier: &str, now: Tick) -> Document {
        let price = self.rng.gen_range(50..500i64);
        let duration = self.rng.gen_range(20..200i64);
        Document::new(format!("{carrier}/offer"), carrier, now)
            .with("carrier", carrier)
            .with("price", price)
            .with("duration", duration)
    }

    fn fire_transitions(&mut self, tick: Tick, out: &mut Vec<Event>) {
        let Some(due) = self.pending.remove(&tick) else {
            return;
        };
        for tr in due {
            match tr {
                Transition::Accept { order_id } => {
                    if let Some(st) = self.order_state.get_mut(&order_id) {
                        st.doc.updated_at = tick;
                        crate::doc::set_path(&mut st.doc.fields, "status", "accepted".into());
                        out.push(Event {
                            tick,
                            collection: "orders".into(),
                            op: EventOp::Update,
                            doc: st.doc.clone(),
                        });
                        let delay = self.rng.gen_range(self.cfg.ship_delay.0..=self.cfg.ship_delay.1);
                        self.pending
                            .entry(tick + delay.max(1))
                            .or_default()
                            .push(Transition::Ship { order_id });
                    }
                }
                Transition::Ship { order_id } => {
                    let carriers = self.cfg.carrier_ids();
                    if carriers.is_empty() {
                        continue;
                    }
                    let carrier = carriers[self.rng.gen_range(0..carriers.len())].clone();
                    let trucks = self.cfg.trucks_per_carrier.max(1);
                    let truck = format!("trk-{carrier}-{}", self.rng.gen_range(0..trucks));
                    let duration = self
                        .rng
                        .gen_range(self.cfg.ship_duration.0..=self.cfg.ship_duration.1);
                    let eta = tick + duration;
                    self.next_shipment += 1;
                    let shipment_id = format!("shp-{:06}", self.next_shipment);
                    let shipment = Document::new(&shipment_id, &carrier, tick)
                        .with("order_id", order_id.as_str())
                        .with("carrier", carrier.as_str())
                        .with("truck_id", truck.as_str())
                        .with("departed_at", tick as i64)
                        .with("eta", eta as i64)
                        .with("eta_halfwidth", self.cfg.base_eta_halfwidth as i64);
                    out.push(Event {
                        tick,
                        collection: "shipments".into(),
                        op: EventOp::Insert,
                        doc: shipment,
                    });
                    if let Some(st) = self.order_state.get_mut(&order_id) {
                        st.doc.updated_at = tick;
                        crate::doc::set_path(&mut st.doc.fields, "status", "shipped".into());
                        crate::doc::set_path(
                            &mut st.doc.fields,
                            "shipment_id",
                            shipment_id.as_str().into(),
                        );
                        out.push(Event {
                            tick,
                            collection: "orders".into(),
                            op: EventOp::Update,
                            doc: st.doc.clone(),
                        });
                    }
                    self.pending
                        .entry(eta.max(tick + 1))
                        .or_default()
                        .push(Transition::Deliver { order_id });
                }
                Transition::Deliver { order_id } => {
                    if let Some(st) = self.order_state.get_mut(&order_id) {
                        st.doc.updated_at = tick;
                        crate::doc::set_path(&mut st.doc.fields, "status", "delivered".into());
                        crate::doc::set_path(
                            &mut st.doc.fields,
                            "delivered_at",
                            FieldValue::Int(tick as i64),
                        );
                        out.push(Event {
                            tick,
                            collection: "orders".into(),
                            op: EventOp::Update,
                            doc: st.doc.clone(),
                        });
                    }
                }
            }
        }
    }

    fn arrivals(&mut self, tick: Tick, out: &mut Vec<Event>) {
        let rows = self.cfg.rows.clone();
        for (r, row) in rows.iter().enumerate() {
            let n = if self.cfg.poisson {
                let rate = self.cfg.rate_per_tick(row);
                if rate <= 0.0 {
                    0
                } else {
                    let dist = rand_distr::Poisson::new(rate).expect("positive rate");
                    self.rng.sample(dist) as u64
                }
            } else {
                self.acc[r] += row.annual_qty;
                let mut n = 0;
                while self.acc[r] >= self.cfg.ticks_per_year {
                    self.acc[r] -= self.cfg.ticks_per_year;
                    n += 1;
                }
                n
            };
            for _ in 0..n {
                self.place_order(tick, r, out);
            }
        }
    }

    fn place_order(&mut self, tick: Tick, row_idx: usize, out: &mut Vec<Event>) {
        let hospitals = self.cfg.hospital_ids();
        let suppliers = self.cfg.supplier_ids();
        if hospitals.is_empty() || suppliers.is_empty() {
            return;
        }
        let hospital = hospitals[self.rng.gen_range(0..hospitals.len())].clone();
        let supplier = suppliers[self.rng.gen_range(0..suppliers.len())].clone();
        let products = self.cfg.product_ids_of_row(row_idx);
        self.next_order += 1;
        let order_id = format!("ord-{:06}", self.next_order);

        let n_lines = self.rng.gen_range(1..=2.min(products.len()));
        let mut lines = Vec::new();
        for l in 0..n_lines {
            let product = &products[(self.rng.gen_range(0..products.len()) + l) % products.len()];
            let qty = self.rng.gen_range(1..50i64);
            let mut line = FieldTree::new();
            line.insert("product_id".into(), FieldValue::Str(product.clone()));
            line.insert("qty".into(), FieldValue::Int(qty));
            lines.push(FieldValue::Tree(line));
        }
        let needed_by = tick + self.rng.gen_range(100..1_000);
        let confidential = self.rng.gen_range(0..100) < self.cfg.confidential_order_pct;

        let mut doc = Document::new(&order_id, &hospital, tick)
            .with("hospital", hospital.as_str())
            .with("supplier", supplier.as_str())
            .with("placed_at", tick as i64)
            .with("needed_by", needed_by as i64)
            .with("status", "placed");
        doc.fields.insert("lines".into(), FieldValue::List(lines));
        if confidential {
            doc = doc.confidential();
        }
        out.push(Event {
            tick,
            collection: "orders".into(),
            op: EventOp::Insert,
            doc: doc.clone(),
        });
        self.order_state.insert(order_id.clone(), OrderState { doc });
        let delay = self
            .rng
            .gen_range(self.cfg.accept_delay.0..=self.cfg.accept_delay.1);
        self.pending
            .entry(tick + delay.max(1))
            .or_default()
            .push(Transition::Accept { order_id });
    }

    fn periodic(&mut self, tick: Tick, out: &mut Vec<Event>) {
        if tick == 0 {
            return;
        }
        if tick % self.cfg.truck_update_period == 0 {
            let trucks: Vec<String> = self.truck_pos.keys().cloned().collect();
            for truck in trucks {
                let (x, y) = self.truck_pos[&truck];
                let nx = (x + self.rng.gen_range(-5..=5)).clamp(0, 99);
                let ny = (y + self.rng.gen_range(-5..=5)).clamp(0, 99);
                self.truck_pos.insert(truck.clone(), (nx, ny));
                // trk-<carrier>-<n>
                let carrier = truck
                    .strip_prefix("trk-")
                    .and_then(|s| s.rsplit_once('-'))
                    .map(|(c, _)| c.to_string())
                    .expect("truck ids carry their carrier");
                out.push(Event {
                    tick,
                    collection: "positions".into(),
                    op: EventOp::Insert,
                    doc: position_doc(&carrier, &truck, nx, ny, tick),
                });
            }
        }
        if tick % self.cfg.offer_refresh_period == 0 {
            for carrier in self.cfg.carrier_ids() {
                let doc = self.offer_doc(&carrier, tick);
                out.push(Event {
                    tick,
                    collection: "offers".into(),
                    op: EventOp::Update,
                    doc,
                });
            }
        }
        if tick % self.cfg.stock_refresh_period == 0 {
            let planted = self.cfg.planted_lot().map(|(_, _, id)| id);
            for supplier in self.cfg.supplier_ids() {
                if self.cfg.rows.is_empty() {
                    continue;
                }
                let r = self.rng.gen_range(0..self.cfg.rows.len());
                let products = self.cfg.product_ids_of_row(r);
                let product = products[self.rng.gen_range(0..products.len())].clone();
                let id = format!("{supplier}/{product}");
                if Some(&id) == planted.as_ref() {
                    continue;
                }
                let qty = self.rng.gen_range(0..500i64);
                let loc = self.rng.gen_range(1..9u32);
                let mut stock = Document::new(&id, &supplier, tick)
                    .with("supplier", supplier.as_str())
                    .with("product_id", product.as_str())
                    .with("qty_available", qty)
                    .with("location", format!("loc-{loc}"));
                stock = self.with_expiry(stock, tick);
                out.push(Event {
                    tick,
                    collection: "stock".into(),
                    op: EventOp::Update,
                    doc: stock,
                });
            }
        }
    }
}

fn position_doc(carrier: &str, truck: &str, x: i64, y: i64, at: Tick) -> Document {
    Document::new(format!("{truck}/{at:06}"), carrier, at)
        .with("truck_id", truck)
        .with("x", x)
        .with("y", y)
        .with("cell_x", x / 10)
        .with("cell_y", y / 10)
        .with("at", at as i64)
}

/// Generate the full ordered event list for `ticks` ticks.
pub fn generate_stream(cfg: &GeneratorConfig, ticks: Tick) -> Vec<Event> {
    let mut g = StreamGenerator::new(cfg.clone());
    let mut out = Vec::new();
    for t in 0..ticks {
        out.extend(g.events_for_tick(t));
    }
    out
}
