//! Scenario query evaluation. The frontend fetches and redacts shard
//! documents, then hands them here; everything below works purely on that
//! redacted view plus external provider data, so the privacy guarantees of
//! the redaction layer extend to every scenario answer.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::doc::{get_path, set_path, Document, FieldTree, FieldValue};
use crate::workload::{Role, FORECAST_BUCKET_TICKS};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown order {0}")]
    UnknownOrder(String),
    #[error("order {0} belongs to another actor")]
    NotYourOrder(String),
    #[error("order {0} has no shipment yet")]
    NoShipmentYet(String),
    #[error("no carrier offers available")]
    NoOffers,
    #[error("query requires role {0}")]
    RoleMismatch(&'static str),
    #[error("bad query params: {0}")]
    BadParams(String),
    #[error("no provider serves external kind {0}")]
    NoProvider(String),
}

/// The scenario query kinds, plus the raw filtered listing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    DeliveryEta,
    TruckStatus,
    BestCarrier,
    SupplierWithStock,
    DemandForecastInput,
    GenericFilter,
}

impl QueryKind {
    pub fn parse(s: &str) -> Option<QueryKind> {
        Some(match s {
            "delivery_eta" => QueryKind::DeliveryEta,
            "truck_status" => QueryKind::TruckStatus,
            "best_carrier" => QueryKind::BestCarrier,
            "supplier_with_stock" => QueryKind::SupplierWithStock,
            "demand_forecast_input" => QueryKind::DemandForecastInput,
            "generic_filter" => QueryKind::GenericFilter,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            QueryKind::DeliveryEta => "delivery_eta",
            QueryKind::TruckStatus => "truck_status",
            QueryKind::BestCarrier => "best_carrier",
            QueryKind::SupplierWithStock => "supplier_with_stock",
            QueryKind::DemandForecastInput => "demand_forecast_input",
            QueryKind::GenericFilter => "generic_filter",
        }
    }

    /// Collections this kind aggregates over.
    pub fn collections(&self) -> &'static [&'static str] {
        match self {
            QueryKind::DeliveryEta => &["orders", "shipments", "positions"],
            QueryKind::TruckStatus => &["positions"],
            QueryKind::BestCarrier => &["offers"],
            QueryKind::SupplierWithStock => &["stock", "products", "offers"],
            QueryKind::DemandForecastInput => &["orders", "products"],
            QueryKind::GenericFilter => &[],
        }
    }
}

/// A scenario answer: the payload tree plus the documents it was derived
/// from (drives staleness and obsolescence annotation).
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub payload: FieldTree,
    pub used: Vec<Document>,
}

/// External data access handed in by the frontend (cached, accounted).
pub type ExternalFetch<'a> = dyn FnMut(&str, &FieldTree) -> Result<FieldTree, QueryError> + 'a;

/// Evaluate one scenario query over the redacted document view.
pub fn evaluate(
    kind: QueryKind,
    requester: &str,
    role: Role,
    params: &FieldTree,
    docs: &BTreeMap<String, Vec<Document>>,
    external: &mut ExternalFetch,
    now: Tick,
) -> Result<ScenarioOutcome, QueryError> {
    match kind {
        QueryKind::DeliveryEta => delivery_eta(requester, params, docs, external, now),
        QueryKind::TruckStatus => truck_status(requester, role, docs, external, now),
        QueryKind::BestCarrier => best_carrier(docs),
        QueryKind::SupplierWithStock => supplier_with_stock(params, docs),
        QueryKind::DemandForecastInput => demand_forecast_input(requester, role, docs),
        QueryKind::GenericFilter => Err(QueryError::BadParams(
            "generic_filter is handled by the frontend".into(),
        )),
    }
}

fn str_param<'a>(params: &'a FieldTree, key: &str) -> Result<&'a str, QueryError> {
    get_path(params, key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| QueryError::BadParams(format!("missing string param {key}")))
}

fn int_field(doc: &Document, path: &str) -> Option<i64> {
    get_path(&doc.fields, path).and_then(|v| v.as_int())
}

fn str_field<'a>(doc: &'a Document, path: &str) -> Option<&'a str> {
    get_path(&doc.fields, path).and_then(|v| v.as_str())
}

fn delivery_eta(
    requester: &str,
    params: &FieldTree,
    docs: &BTreeMap<String, Vec<Document>>,
    external: &mut ExternalFetch,
    now: Tick,
) -> Result<ScenarioOutcome, QueryError> {
    let order_id = str_param(params, "order_id")?;
    let empty = Vec::new();
    let orders = docs.get("orders").unwrap_or(&empty);
    let order = orders
        .iter()
        .find(|d| d.id == order_id)
        .ok_or_else(|| QueryError::UnknownOrder(order_id.to_string()))?;
    if order.owner != requester {
        return Err(QueryError::NotYourOrder(order_id.to_string()));
    }

    let status = str_field(order, "status").unwrap_or("placed");
    if status == "delivered" {
        let delivered_at = int_field(order, "delivered_at").unwrap_or(order.updated_at as i64);
        let mut payload = FieldTree::new();
        set_path(&mut payload, "eta", FieldValue::Int(delivered_at));
        set_path(&mut payload, "halfwidth", FieldValue::Int(0));
        set_path(
            &mut payload,
            "staleness",
            FieldValue::Int(now.saturating_sub(order.updated_at) as i64),
        );
        return Ok(ScenarioOutcome {
            payload,
            used: vec![order.clone()],
        });
    }
    if status == "placed" || status == "accepted" {
        return Err(QueryError::NoShipmentYet(order_id.to_string()));
    }

    let shipments = docs.get("shipments").unwrap_or(&empty);
    let shipment = shipments
        .iter()
        .filter(|d| str_field(d, "order_id") == Some(order_id))
        .max_by_key(|d| d.updated_at)
        .ok_or_else(|| QueryError::NoShipmentYet(order_id.to_string()))?;

    let departed = int_field(shipment, "departed_at").unwrap_or(0);
    let published_eta = int_field(shipment, "eta").unwrap_or(departed);
    let base_halfwidth = int_field(shipment, "eta_halfwidth").unwrap_or(5);
    let truck_id = str_field(shipment, "truck_id");

    // Latest shared fix of the shipment's truck, if any.
    let positions = docs.get("positions").unwrap_or(&empty);
    let fix = truck_id.and_then(|t| {
        positions
            .iter()
            .filter(|d| str_field(d, "truck_id") == Some(t))
            .max_by_key(|d| int_field(d, "at").unwrap_or(0))
    });

    let (staleness, factor_pct, used_fix) = match fix {
        Some(p) => {
            let at = int_field(p, "at").unwrap_or(0).max(0) as Tick;
            let staleness = now.saturating_sub(at);
            let mut ext_params = FieldTree::new();
            set_path(
                &mut ext_params,
                "cell_x",
                FieldValue::Int(int_field(p, "cell_x").unwrap_or(0)),
            );
            set_path(
                &mut ext_params,
                "cell_y",
                FieldValue::Int(int_field(p, "cell_y").unwrap_or(0)),
            );
            let traffic = external("road_traffic", &ext_params)?;
            let factor = get_path(&traffic, "factor_pct")
                .and_then(|v| v.as_int())
                .unwrap_or(100)
                .clamp(100, 200);
            (staleness, factor, Some(p.clone()))
        }
        None => (now.saturating_sub(shipment.updated_at), 100, None),
    };

    // Travel time scales with the congestion factor; the confidence
    // interval widens with how old the position fix is.
    let eta = departed + (published_eta - departed) * factor_pct / 100;
    let halfwidth = base_halfwidth + staleness as i64 / 2;

    let mut payload = FieldTree::new();
    set_path(&mut payload, "eta", FieldValue::Int(eta));
    set_path(&mut payload, "halfwidth", FieldValue::Int(halfwidth));
    set_path(&mut payload, "staleness", FieldValue::Int(staleness as i64));
    set_path(&mut payload, "traffic_factor_pct", FieldValue::Int(factor_pct));
    if let Some(t) = truck_id {
        set_path(&mut payload, "truck_id", FieldValue::Str(t.to_string()));
    }
    let mut used = vec![order.clone(), shipment.clone()];
    used.extend(used_fix);
    Ok(ScenarioOutcome { payload, used })
}

fn truck_status(
    requester: &str,
    role: Role,
    docs: &BTreeMap<String, Vec<Document>>,
    external: &mut ExternalFetch,
    now: Tick,
) -> Result<ScenarioOutcome, QueryError> {
    if role != Role::Carrier {
        return Err(QueryError::RoleMismatch("carrier"));
    }
    let _ = now;
    let empty = Vec::new();
    let positions = docs.get("positions").unwrap_or(&empty);
    // Latest fix per own truck.
    let mut latest: BTreeMap<String, &Document> = BTreeMap::new();
    for p in positions.iter().filter(|d| d.owner == requester) {
        let Some(truck) = str_field(p, "truck_id") else {
            continue;
        };
        let at = int_field(p, "at").unwrap_or(0);
        match latest.get(truck) {
            Some(prev) if int_field(prev, "at").unwrap_or(0) >= at => {}
            _ => {
                latest.insert(truck.to_string(), p);
            }
        }
    }
    let mut trucks = Vec::new();
    let mut used = Vec::new();
    for (truck, p) in &latest {
        let mut ext_params = FieldTree::new();
        set_path(
            &mut ext_params,
            "cell_x",
            FieldValue::Int(int_field(p, "cell_x").unwrap_or(0)),
        );
        set_path(
            &mut ext_params,
            "cell_y",
            FieldValue::Int(int_field(p, "cell_y").unwrap_or(0)),
        );
        let traffic = external("road_traffic", &ext_params)?;
        let factor = get_path(&traffic, "factor_pct")
            .and_then(|v| v.as_int())
            .unwrap_or(100);
        let mut entry = FieldTree::new();
        set_path(&mut entry, "truck_id", FieldValue::Str(truck.clone()));
        set_path(&mut entry, "x", FieldValue::Int(int_field(p, "x").unwrap_or(0)));
        set_path(&mut entry, "y", FieldValue::Int(int_field(p, "y").unwrap_or(0)));
        set_path(&mut entry, "at", FieldValue::Int(int_field(p, "at").unwrap_or(0)));
        set_path(&mut entry, "traffic_factor_pct", FieldValue::Int(factor));
        trucks.push(FieldValue::Tree(entry));
        used.push((*p).clone());
    }
    let mut payload = FieldTree::new();
    payload.insert("trucks".into(), FieldValue::List(trucks));
    Ok(ScenarioOutcome { payload, used })
}

/// One offer per carrier: price and duration, latest document wins.
fn current_offers(docs: &BTreeMap<String, Vec<Document>>) -> Vec<(String, i64, i64, Document)> {
    let empty = Vec::new();
    let mut per_carrier: BTreeMap<String, &Document> = BTreeMap::new();
    for d in docs.get("offers").unwrap_or(&empty) {
        let Some(carrier) = str_field(d, "carrier") else {
            continue;
        };
        if int_field(d, "price").is_none() || int_field(d, "duration").is_none() {
            continue;
        }
        match per_carrier.get(carrier) {
            Some(prev) if prev.updated_at >= d.updated_at => {}
            _ => {
                per_carrier.insert(carrier.to_string(), d);
            }
        }
    }
    per_carrier
        .into_iter()
        .map(|(c, d)| {
            (
                c,
                int_field(d, "price").unwrap(),
                int_field(d, "duration").unwrap(),
                d.clone(),
            )
        })
        .collect()
}

fn best_carrier(docs: &BTreeMap<String, Vec<Document>>) -> Result<ScenarioOutcome, QueryError> {
    let offers = current_offers(docs);
    if offers.is_empty() {
        return Err(QueryError::NoOffers);
    }
    let price_max = offers.iter().map(|o| o.1).max().unwrap().max(1);
    let duration_max = offers.iter().map(|o| o.2).max().unwrap().max(1);

    // Pareto frontier by sort-and-scan: order by price, keep strictly
    // improving durations. Offers at an identical (price, duration) point
    // do not dominate each other, so duplicates of an accepted point stay.
    let mut sorted: Vec<&(String, i64, i64, Document)> = offers.iter().collect();
    sorted.sort_by(|a, b| a.1.cmp(&b.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    let mut frontier: Vec<&(String, i64, i64, Document)> = Vec::new();
    let mut best_duration = i64::MAX;
    let mut last_point: Option<(i64, i64)> = None;
    for o in sorted {
        if o.2 < best_duration || last_point == Some((o.1, o.2)) {
            best_duration = o.2;
            last_point = Some((o.1, o.2));
            frontier.push(o);
        }
    }

    // score = price/price_max + duration/duration_max, compared exactly on
    // the common denominator.
    let score = |o: &(String, i64, i64, Document)| -> i128 {
        o.1 as i128 * duration_max as i128 + o.2 as i128 * price_max as i128
    };
    frontier.sort_by(|a, b| {
        score(a)
            .cmp(&score(b))
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });

    let mut ranking = Vec::new();
    let mut used = Vec::new();
    for o in &frontier {
        let mut entry = FieldTree::new();
        set_path(&mut entry, "carrier", FieldValue::Str(o.0.clone()));
        set_path(&mut entry, "price", FieldValue::Int(o.1));
        set_path(&mut entry, "duration", FieldValue::Int(o.2));
        ranking.push(FieldValue::Tree(entry));
    }
    for o in &offers {
        used.push(o.3.clone());
    }
    let mut payload = FieldTree::new();
    payload.insert("ranking".into(), FieldValue::List(ranking));
    Ok(ScenarioOutcome { payload, used })
}

fn supplier_with_stock(
    params: &FieldTree,
    docs: &BTreeMap<String, Vec<Document>>,
) -> Result<ScenarioOutcome, QueryError> {
    let product_id = str_param(params, "product_id")?;
    let empty = Vec::new();
    let offers = current_offers(docs);
    let min_duration = offers.iter().map(|o| o.2).min().unwrap_or(0);

    let mut best: Option<(i64, String)> = None;
    let mut used = Vec::new();
    for stock in docs.get("stock").unwrap_or(&empty) {
        if str_field(stock, "product_id") != Some(product_id) {
            continue;
        }
        let qty = int_field(stock, "qty_available").unwrap_or(0);
        if qty <= 0 {
            continue;
        }
        let supplier = stock.owner.clone();
        let lead_time = docs
            .get("products")
            .unwrap_or(&empty)
            .iter()
            .filter(|p| p.owner == supplier && str_field(p, "product_id") == Some(product_id))
            .filter_map(|p| int_field(p, "lead_time"))
            .min()
            .unwrap_or(0);
        let deliverable_in = lead_time + min_duration;
        used.push(stock.clone());
        let candidate = (deliverable_in, supplier);
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                if candidate.0 < cur.0 || (candidate.0 == cur.0 && candidate.1 < cur.1) {
                    candidate
                } else {
                    cur
                }
            }
        });
    }
    for o in &offers {
        used.push(o.3.clone());
    }

    let mut payload = FieldTree::new();
    match best {
        Some((deliverable_in, supplier)) => {
            set_path(&mut payload, "found", FieldValue::Bool(true));
            set_path(&mut payload, "supplier", FieldValue::Str(supplier));
            set_path(&mut payload, "deliverable_in", FieldValue::Int(deliverable_in));
        }
        None => {
            set_path(&mut payload, "found", FieldValue::Bool(false));
        }
    }
    Ok(ScenarioOutcome { payload, used })
}

fn demand_forecast_input(
    requester: &str,
    role: Role,
    docs: &BTreeMap<String, Vec<Document>>,
) -> Result<ScenarioOutcome, QueryError> {
    if role != Role::Supplier {
        return Err(QueryError::RoleMismatch("supplier"));
    }
    let empty = Vec::new();
    // Own catalog: product -> family/subfamily.
    let mut catalog: BTreeMap<String, String> = BTreeMap::new();
    for p in docs.get("products").unwrap_or(&empty) {
        if p.owner != requester {
            continue;
        }
        if let (Some(pid), Some(fam), Some(sub)) = (
            str_field(p, "product_id"),
            str_field(p, "family"),
            str_field(p, "subfamily"),
        ) {
            catalog.insert(pid.to_string(), format!("{fam}/{sub}"));
        }
    }

    let mut series: BTreeMap<String, BTreeMap<String, i64>> = BTreeMap::new();
    let mut used = Vec::new();
    for order in docs.get("orders").unwrap_or(&empty) {
        if str_field(order, "supplier") != Some(requester) {
            continue;
        }
        let Some(placed_at) = int_field(order, "placed_at") else {
            continue;
        };
        let bucket = format!("{:06}", placed_at.max(0) as Tick / FORECAST_BUCKET_TICKS);
        let Some(FieldValue::List(lines)) = order.fields.get("lines") else {
            continue;
        };
        let mut contributed = false;
        for line in lines {
            let Some(t) = line.as_tree() else { continue };
            let (Some(pid), Some(qty)) = (
                t.get("product_id").and_then(|v| v.as_str()),
                t.get("qty").and_then(|v| v.as_int()),
            ) else {
                continue;
            };
            let Some(group) = catalog.get(pid) else {
                continue;
            };
            *series
                .entry(group.clone())
                .or_default()
                .entry(bucket.clone())
                .or_insert(0) += qty;
            contributed = true;
        }
        if contributed {
            used.push(order.clone());
        }
    }

    let mut series_tree = FieldTree::new();
    for (group, buckets) in series {
        let mut bt = FieldTree::new();
        for (bucket, qty) in buckets {
            bt.insert(bucket, FieldValue::Int(qty));
        }
        series_tree.insert(group, FieldValue::Tree(bt));
    }
    let mut payload = FieldTree::new();
    set_path(
        &mut payload,
        "bucket_ticks",
        FieldValue::Int(FORECAST_BUCKET_TICKS as i64),
    );
    payload.insert("series".into(), FieldValue::Tree(series_tree));
    Ok(ScenarioOutcome { payload, used })
}
