//! Tabular text and JSON interchange for every module's file formats.
//!
//! All tabular files are comma-separated UTF-8. Taxonomy files may omit the
//! header; every other format requires one. Parse errors carry the offending
//! line number.

use std::collections::HashMap;

use crate::coherence::{Action, ActionVector, AuditReport, Contract, ContractKind};
use crate::decode::RiskTable;
use crate::error::{Error, Result};
use crate::eval::{SweepResult, SystemMetrics};
use crate::propagation::PrimitiveTable;
use crate::taxonomy::{parse_taxonomy, LabelVector, Taxonomy, SENTINEL};

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Taxonomy
// ---------------------------------------------------------------------------

/// Parse a taxonomy from text: `child,parent` rows (header optional) or a
/// JSON document with the same child→parent semantics.
pub fn taxonomy_from_text(text: &str) -> Result<Taxonomy> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        taxonomy_from_json(text)
    } else {
        taxonomy_from_csv(text)
    }
}

fn taxonomy_from_csv(text: &str) -> Result<Taxonomy> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut pairs: Vec<(String, String)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected `child,parent`, got {} field(s)", record.len()),
            ));
        }
        let child = record[0].trim().to_string();
        let parent = record[1].trim().to_string();
        if child == "child" && parent == "parent" && pairs.is_empty() {
            continue; // optional header
        }
        pairs.push((child, parent));
    }
    parse_taxonomy(&pairs)
}

fn taxonomy_from_json(text: &str) -> Result<Taxonomy> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_err(e.line() as u64, e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| parse_err(1, "taxonomy JSON must be an object"))?;
    let mut pairs: Vec<(String, String)> = Vec::new();
    let flat = object.values().all(|v| v.is_string());
    if flat {
        for (child, parent) in object {
            let parent = parent.as_str().unwrap().to_string();
            pairs.push((child.clone(), parent));
        }
    } else {
        fn walk(
            node: &str,
            children: &serde_json::Value,
            parent: &str,
            pairs: &mut Vec<(String, String)>,
        ) -> Result<()> {
            pairs.push((node.to_string(), parent.to_string()));
            let object = children.as_object().ok_or_else(|| {
                parse_err(1, format!("node `{node}` must map to an object of children"))
            })?;
            for (child, grandchildren) in object {
                walk(child, grandchildren, node, pairs)?;
            }
            Ok(())
        }
        for (root, children) in object {
            walk(root, children, SENTINEL, &mut pairs)?;
        }
    }
    parse_taxonomy(&pairs)
}

/// Render a taxonomy as `child,parent` rows with a header, one row per edge
/// plus one per root, in node order. Byte-stable across round trips.
pub fn taxonomy_to_csv(t: &Taxonomy) -> String {
    let mut out = String::from("child,parent\n");
    for v in 0..t.len() {
        if t.is_root(v) {
            out.push_str(&format!("{},{}\n", t.name(v), SENTINEL));
        }
        for &p in t.parents(v) {
            out.push_str(&format!("{},{}\n", t.name(v), t.name(p)));
        }
    }
    out
}

fn csv_error(e: csv::Error) -> Error {
    let line = match e.position() {
        Some(p) => p.line(),
        None => 0,
    };
    parse_err(line, e.to_string())
}

// ---------------------------------------------------------------------------
// Shared grouped-record reader
// ---------------------------------------------------------------------------

/// Rows grouped by instance id in first-appearance order, each instance
/// covering every node exactly once.
struct InstanceRows {
    ids: Vec<String>,
    /// per instance: node → (line, field values beyond `instance_id,node`)
    rows: Vec<Vec<Option<(u64, Vec<f64>)>>>,
}

fn read_instance_rows(
    text: &str,
    t: &Taxonomy,
    header: &[&str],
    value_fields: usize,
) -> Result<InstanceRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    {
        let got = reader.headers().map_err(csv_error)?;
        let want: Vec<&str> = header.to_vec();
        let got_fields: Vec<&str> = got.iter().map(str::trim).collect();
        if got_fields != want {
            return Err(parse_err(
                1,
                format!(
                    "expected header `{}`, got `{}`",
                    want.join(","),
                    got_fields.join(",")
                ),
            ));
        }
    }
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<Option<(u64, Vec<f64>)>>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 + value_fields {
            return Err(parse_err(
                line,
                format!(
                    "expected {} field(s), got {}",
                    2 + value_fields,
                    record.len()
                ),
            ));
        }
        let id = record[0].trim().to_string();
        let node_name = record[1].trim();
        let node = t
            .node_index(node_name)
            .ok_or_else(|| parse_err(line, format!("unknown node `{node_name}`")))?;
        let mut values = Vec::with_capacity(value_fields);
        for f in 0..value_fields {
            let raw = record[2 + f].trim();
            let value: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("`{raw}` is not a number")))?;
            values.push(value);
        }
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            ids.push(id.clone());
            rows.push(vec![None; t.len()]);
            rows.len() - 1
        });
        if rows[slot][node].is_some() {
            return Err(parse_err(
                line,
                format!("duplicate row for instance `{id}`, node `{node_name}`"),
            ));
        }
        rows[slot][node] = Some((line, values));
    }
    for (slot, id) in ids.iter().enumerate() {
        for v in 0..t.len() {
            if rows[slot][v].is_none() {
                return Err(parse_err(
                    0,
                    format!("instance `{id}` is missing node `{}`", t.name(v)),
                ));
            }
        }
    }
    Ok(InstanceRows { ids, rows })
}

fn defer_headers(prefix: &str, experts: u32) -> Vec<String> {
    if experts == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=experts).map(|e| format!("{prefix}{e}")).collect()
    }
}

// ---------------------------------------------------------------------------
// Primitive and risk tables
// ---------------------------------------------------------------------------

/// Parse `instance_id,node,p0,p1,pd` rows (multi-expert: `pd1..pdE`) into
/// per-instance primitive tables. Row sums are validated at intake.
pub fn primitives_from_csv(
    text: &str,
    t: &Taxonomy,
    contract: &Contract,
) -> Result<Vec<(String, PrimitiveTable)>> {
    let defer = defer_headers("pd", contract.expert_count());
    let mut header = vec!["instance_id".to_string(), "node".to_string()];
    header.push("p0".to_string());
    header.push("p1".to_string());
    header.extend(defer);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let parsed = read_instance_rows(text, t, &header_refs, contract.arity())?;
    let mut out = Vec::with_capacity(parsed.ids.len());
    for (slot, id) in parsed.ids.iter().enumerate() {
        let mut rows = Vec::with_capacity(t.len());
        let mut first_line = 0;
        for v in 0..t.len() {
            let (line, values) = parsed.rows[slot][v].clone().unwrap();
            if first_line == 0 {
                first_line = line;
            }
            rows.push(values);
        }
        let table = PrimitiveTable::new(rows).map_err(|e| match e {
            Error::InvalidDistribution { node, reason } => parse_err(
                parsed.rows[slot][node].as_ref().map(|r| r.0).unwrap_or(0),
                format!("instance `{id}`: {reason}"),
            ),
            other => other,
        })?;
        out.push((id.clone(), table));
    }
    Ok(out)
}

/// Render one primitive table per instance in the same format parsed by
/// [`primitives_from_csv`].
pub fn primitives_to_csv(
    t: &Taxonomy,
    contract: &Contract,
    items: &[(String, PrimitiveTable)],
) -> String {
    let defer = defer_headers("pd", contract.expert_count());
    let mut out = format!("instance_id,node,p0,p1,{}\n", defer.join(","));
    for (id, table) in items {
        for v in 0..t.len() {
            let values: Vec<String> = table.row(v).iter().map(|p| format!("{p}")).collect();
            out.push_str(&format!("{id},{},{}\n", t.name(v), values.join(",")));
        }
    }
    out
}

/// Parse `instance_id,node,r0,r1,rd` rows (multi-expert: `rd1..rdE`) into
/// per-instance risk tables.
pub fn risks_from_csv(
    text: &str,
    t: &Taxonomy,
    contract: &Contract,
) -> Result<Vec<(String, RiskTable)>> {
    let defer = defer_headers("rd", contract.expert_count());
    let mut header = vec!["instance_id".to_string(), "node".to_string()];
    header.push("r0".to_string());
    header.push("r1".to_string());
    header.extend(defer);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let parsed = read_instance_rows(text, t, &header_refs, contract.arity())?;
    let mut out = Vec::with_capacity(parsed.ids.len());
    for (slot, id) in parsed.ids.iter().enumerate() {
        let rows: Vec<Vec<f64>> = (0..t.len())
            .map(|v| parsed.rows[slot][v].clone().unwrap().1)
            .collect();
        out.push((id.clone(), RiskTable::new(rows)?));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

fn action_label(a: Action, experts: u32) -> String {
    match a {
        Action::Assert0 => "0".to_string(),
        Action::Assert1 => "1".to_string(),
        Action::Defer(e) => {
            if experts == 1 {
                "D".to_string()
            } else {
                format!("D{e}")
            }
        }
    }
}

fn action_from_label(raw: &str, contract: &Contract, line: u64) -> Result<Action> {
    let action = match raw {
        "0" => Action::Assert0,
        "1" => Action::Assert1,
        "D" => Action::Defer(1),
        other => {
            let index: u32 = other
                .strip_prefix('D')
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| parse_err(line, format!("`{other}` is not an action")))?;
            Action::Defer(index)
        }
    };
    contract.validate_action(action).map_err(|_| {
        parse_err(
            line,
            format!(
                "action `{raw}` is outside the contract's {} expert(s)",
                contract.expert_count()
            ),
        )
    })?;
    Ok(action)
}

/// Parse `instance_id,node,action` rows with actions in `{0,1,D}` (or
/// `D1..DE` in multi-expert mode).
pub fn actions_from_csv(
    text: &str,
    t: &Taxonomy,
    contract: &Contract,
) -> Result<Vec<(String, ActionVector)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    {
        let got = reader.headers().map_err(csv_error)?;
        let got_fields: Vec<&str> = got.iter().map(str::trim).collect();
        if got_fields != ["instance_id", "node", "action"] {
            return Err(parse_err(
                1,
                format!(
                    "expected header `instance_id,node,action`, got `{}`",
                    got_fields.join(",")
                ),
            ));
        }
    }
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<Option<Action>>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 field(s), got {}", record.len()),
            ));
        }
        let id = record[0].trim().to_string();
        let node_name = record[1].trim();
        let node = t
            .node_index(node_name)
            .ok_or_else(|| parse_err(line, format!("unknown node `{node_name}`")))?;
        let action = action_from_label(record[2].trim(), contract, line)?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            ids.push(id.clone());
            rows.push(vec![None; t.len()]);
            rows.len() - 1
        });
        if rows[slot][node].is_some() {
            return Err(parse_err(
                line,
                format!("duplicate action for instance `{id}`, node `{node_name}`"),
            ));
        }
        rows[slot][node] = Some(action);
    }
    let mut out = Vec::with_capacity(ids.len());
    for (slot, id) in ids.iter().enumerate() {
        let mut actions = Vec::with_capacity(t.len());
        for v in 0..t.len() {
            match rows[slot][v] {
                Some(a) => actions.push(a),
                None => {
                    return Err(parse_err(
                        0,
                        format!("instance `{id}` is missing node `{}`", t.name(v)),
                    ))
                }
            }
        }
        out.push((id.clone(), ActionVector::new(actions)));
    }
    Ok(out)
}

/// Render decoded actions as `instance_id,node,action` rows.
pub fn actions_to_csv(
    t: &Taxonomy,
    contract: &Contract,
    items: &[(String, ActionVector)],
) -> String {
    let mut out = String::from("instance_id,node,action\n");
    for (id, a) in items {
        for v in 0..t.len() {
            out.push_str(&format!(
                "{id},{},{}\n",
                t.name(v),
                action_label(a.get(v), contract.expert_count())
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

fn bit_from(value: f64, line: u64) -> Result<bool> {
    if value == 0.0 {
        Ok(false)
    } else if value == 1.0 {
        Ok(true)
    } else {
        Err(parse_err(line, format!("`{value}` is not a binary label")))
    }
}

/// Parse `instance_id,node,y` truth labels.
pub fn labels_from_csv(text: &str, t: &Taxonomy) -> Result<Vec<(String, LabelVector)>> {
    let parsed = read_instance_rows(text, t, &["instance_id", "node", "y"], 1)?;
    let mut out = Vec::with_capacity(parsed.ids.len());
    for (slot, id) in parsed.ids.iter().enumerate() {
        let mut values = Vec::with_capacity(t.len());
        for v in 0..t.len() {
            let (line, fields) = parsed.rows[slot][v].clone().unwrap();
            values.push(bit_from(fields[0], line)?);
        }
        out.push((id.clone(), LabelVector::new(values)));
    }
    Ok(out)
}

/// Parse `instance_id,node,m` expert labels (multi-expert: `m1..mE`).
pub fn expert_labels_from_csv(
    text: &str,
    t: &Taxonomy,
    experts: u32,
) -> Result<Vec<(String, Vec<LabelVector>)>> {
    let defer = defer_headers("m", experts);
    let mut header = vec!["instance_id".to_string(), "node".to_string()];
    header.extend(defer);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let parsed = read_instance_rows(text, t, &header_refs, experts as usize)?;
    let mut out = Vec::with_capacity(parsed.ids.len());
    for (slot, id) in parsed.ids.iter().enumerate() {
        let mut per_expert = vec![Vec::with_capacity(t.len()); experts as usize];
        for v in 0..t.len() {
            let (line, fields) = parsed.rows[slot][v].clone().unwrap();
            for (e, &f) in fields.iter().enumerate() {
                per_expert[e].push(bit_from(f, line)?);
            }
        }
        out.push((
            id.clone(),
            per_expert.into_iter().map(LabelVector::new).collect(),
        ));
    }
    Ok(out)
}

/// Render truth labels in the format parsed by [`labels_from_csv`].
pub fn labels_to_csv(t: &Taxonomy, items: &[(String, LabelVector)]) -> String {
    let mut out = String::from("instance_id,node,y\n");
    for (id, y) in items {
        for v in 0..t.len() {
            out.push_str(&format!("{id},{},{}\n", t.name(v), y.get(v) as u8));
        }
    }
    out
}

/// Render expert labels in the format parsed by [`expert_labels_from_csv`].
pub fn expert_labels_to_csv(t: &Taxonomy, items: &[(String, Vec<LabelVector>)]) -> String {
    let experts = items.first().map(|(_, m)| m.len()).unwrap_or(1) as u32;
    let defer = defer_headers("m", experts);
    let mut out = format!("instance_id,node,{}\n", defer.join(","));
    for (id, ms) in items {
        for v in 0..t.len() {
            let bits: Vec<String> = ms.iter().map(|m| (m.get(v) as u8).to_string()).collect();
            out.push_str(&format!("{id},{},{}\n", t.name(v), bits.join(",")));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Audit and sweep rendering
// ---------------------------------------------------------------------------

/// One row per edge plus per-class summary counts for both views. A metadata
/// line flags contracts whose neighbourhood partition extends the published
/// template.
pub fn audit_to_text(
    t: &Taxonomy,
    contract: &Contract,
    items: &[(String, AuditReport)],
) -> String {
    let mut out = String::from("instance_id,parent,child,class\n");
    for (id, report) in items {
        for edge in &report.edges {
            let tag = if edge.contract_escape { ":escape" } else { "" };
            out.push_str(&format!(
                "{id},{},{},{}{tag}\n",
                t.name(edge.parent),
                t.name(edge.child),
                edge.class.as_str()
            ));
        }
    }
    out.push_str("# summary\n");
    for (id, report) in items {
        let e = report.edge_counts;
        let n = report.neighbourhood_counts;
        out.push_str(&format!(
            "# {id} edges: coherent={} taxonomic={} deductive={} delegation={}\n",
            e.coherent, e.taxonomic, e.deductive, e.delegation
        ));
        out.push_str(&format!(
            "# {id} neighbourhoods: coherent={} taxonomic={} deductive={} delegation={}\n",
            n.coherent, n.taxonomic, n.deductive, n.delegation
        ));
        out.push_str(&format!("# {id} any_incoherent={}\n", report.any_incoherent));
    }
    if contract.kind() != ContractKind::SelectiveExclusion {
        out.push_str(
            "# note: neighbourhood classes extend the selective-exclusion template to this contract\n",
        );
    }
    out
}

const POINT_METRICS: &[&str] = &[
    "bal_acc",
    "f1_instance",
    "f1_pooled",
    "f1_macro",
    "edge_tax",
    "edge_ded",
    "edge_del",
    "edge_any",
    "neigh_tax",
    "neigh_ded",
    "neigh_del",
    "neigh_any",
    "defer_raw",
    "defer_realised",
];

/// Long-format sweep table: one row per `(threshold, metric)`, one `auc` row
/// per curve, and closure diagnostics. Column order is stable:
/// `kind,threshold,budget_fraction,metric,value`.
pub fn sweep_to_csv(result: &SweepResult) -> String {
    let mut out = String::from("kind,threshold,budget_fraction,metric,value\n");
    for p in &result.points {
        let m = &p.metrics;
        let r = &p.rates;
        let values: Vec<f64> = vec![
            m.balanced_accuracy,
            m.instance_f1,
            m.pooled_f1,
            m.macro_f1,
            r.edge_taxonomic,
            r.edge_deductive,
            r.edge_delegation,
            r.edge_any,
            r.neigh_taxonomic,
            r.neigh_deductive,
            r.neigh_delegation,
            r.neigh_any,
            p.raw_defers as f64,
            p.realised_defers as f64,
        ];
        for (name, value) in POINT_METRICS.iter().zip(values) {
            out.push_str(&format!(
                "point,{},{},{name},{value}\n",
                p.threshold, p.budget_fraction
            ));
        }
    }
    let auc = &result.auc;
    let aucs = [
        ("bal_acc", auc.balanced_accuracy),
        ("f1_instance", auc.instance_f1),
        ("f1_pooled", auc.pooled_f1),
        ("f1_macro", auc.macro_f1),
        ("edge_tax", auc.edge_taxonomic),
        ("edge_ded", auc.edge_deductive),
        ("edge_del", auc.edge_delegation),
        ("edge_any", auc.edge_any),
        ("neigh_tax", auc.neigh_taxonomic),
        ("neigh_ded", auc.neigh_deductive),
        ("neigh_del", auc.neigh_delegation),
        ("neigh_any", auc.neigh_any),
    ];
    for (name, value) in aucs {
        out.push_str(&format!("auc,,,{name},{value}\n"));
    }
    let c = &result.closure;
    out.push_str(&format!(
        "closure,,,activation_rate,{}\n",
        c.activation_rate()
    ));
    out.push_str(&format!("closure,,,mean_added,{}\n", c.mean_added()));
    out.push_str(&format!("closure,,,max_added,{}\n", c.added_max));
    out.push_str(&format!(
        "closure,,,realised_raw_ratio,{}\n",
        c.realised_raw_ratio()
    ));
    out
}

/// Human-readable decode sidecar: scores, defer counts, audit counts.
pub fn decode_summary(
    t: &Taxonomy,
    items: &[(String, ActionVector, Option<f64>, AuditReport)],
) -> String {
    let mut out = String::new();
    for (id, a, score, report) in items {
        let defers = a.actions.iter().filter(|x| x.is_defer()).count();
        out.push_str(&format!(
            "{id}: nodes={} defers={defers} any_incoherent={}",
            t.len(),
            report.any_incoherent
        ));
        if let Some(s) = score {
            out.push_str(&format!(" score={s}"));
        }
        out.push('\n');
    }
    out
}

/// One-line metric rendering used by the CLI.
pub fn metrics_line(m: &SystemMetrics) -> String {
    format!(
        "bal_acc={} f1_instance={} f1_pooled={} f1_macro={}",
        m.balanced_accuracy, m.instance_f1, m.pooled_f1, m.macro_f1
    )
}
