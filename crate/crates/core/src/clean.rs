//! Event cleaning: range collapse, lenient numeric parsing, unit
//! harmonization, and same-timestamp aggregation. The result holds at most
//! one finite value per `(admission, item, charttime)`.
//!
//! Unit shares are computed over the whole ingested cohort, so cleaning is
//! split into a census pass ([`UnitCensus`]), a planning step ([`CleanPlan`])
//! and a per-admission pass ([`clean_admission`]). [`clean_events`] runs
//! all three over an in-memory event list.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::ingest::{EventRecord, SourceTable, Value};
use crate::types::{AdmissionId, ItemId, ItemIdRepr, Timestamp};

pub const BUNDLED_CLEAN_CONFIG: &str = include_str!("../config/clean.toml");

#[derive(Debug, thiserror::Error)]
pub enum CleanConfigError {
    #[error("clean config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("clean config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggMode {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConversionRule {
    pub from: String,
    pub to: String,
    pub scale: f64,
    pub shift: f64,
    pub items: Option<Vec<ItemId>>,
}

impl ConversionRule {
    pub fn apply(&self, v: f64) -> f64 {
        (v + self.shift) * self.scale
    }

    fn applies_to(&self, item: &ItemId) -> bool {
        self.items.as_ref().is_none_or(|items| items.contains(item))
    }
}

#[derive(Deserialize)]
struct RawRule {
    from: String,
    to: String,
    scale: f64,
    #[serde(default)]
    shift: f64,
    items: Option<Vec<ItemIdRepr>>,
}

#[derive(Deserialize)]
struct RawCleanConfig {
    version: u32,
    #[serde(default = "default_threshold")]
    majority_threshold: f64,
    #[serde(default)]
    conversion: Vec<RawRule>,
    #[serde(default)]
    aggregation: BTreeMap<String, AggMode>,
}

fn default_threshold() -> f64 {
    0.9
}

/// Declarative cleaning configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CleanConfig {
    pub version: u32,
    pub majority_threshold: f64,
    pub conversions: Vec<ConversionRule>,
    pub aggregation_overrides: BTreeMap<ItemId, AggMode>,
}

pub fn normalize_unit(u: Option<&str>) -> String {
    u.map(|s| s.trim().to_ascii_lowercase()).unwrap_or_default()
}

impl CleanConfig {
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_CLEAN_CONFIG).expect("bundled clean config is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, CleanConfigError> {
        let raw: RawCleanConfig = toml::from_str(s)?;
        if !(raw.majority_threshold > 0.5 && raw.majority_threshold <= 1.0) {
            return Err(CleanConfigError::Invalid(format!("majority_threshold {} outside (0.5, 1]", raw.majority_threshold)));
        }
        let mut conversions = Vec::new();
        for r in raw.conversion {
            if !(r.scale.is_finite() && r.scale != 0.0 && r.shift.is_finite()) {
                return Err(CleanConfigError::Invalid(format!("bad conversion {} -> {}", r.from, r.to)));
            }
            conversions.push(ConversionRule {
                from: normalize_unit(Some(&r.from)),
                to: normalize_unit(Some(&r.to)),
                scale: r.scale,
                shift: r.shift,
                items: r.items.map(|v| v.into_iter().map(|i| i.0).collect()),
            });
        }
        let mut aggregation_overrides = BTreeMap::new();
        for (k, mode) in raw.aggregation {
            let item: ItemId = k.parse().map_err(CleanConfigError::Invalid)?;
            aggregation_overrides.insert(item, mode);
        }
        Ok(CleanConfig { version: raw.version, majority_threshold: raw.majority_threshold, conversions, aggregation_overrides })
    }

    pub fn rule(&self, item: &ItemId, from: &str, to: &str) -> Option<&ConversionRule> {
        // Item-specific rules take precedence over generic ones.
        let matching = self.conversions.iter().filter(|r| r.from == from && r.to == to && r.applies_to(item));
        let mut generic = None;
        for r in matching {
            if r.items.is_some() {
                return Some(r);
            }
            generic.get_or_insert(r);
        }
        generic
    }

    pub fn default_mode(source: SourceTable) -> AggMode {
        match source {
            SourceTable::Chartevents | SourceTable::Labevents => AggMode::Mean,
            SourceTable::Inputevents | SourceTable::Outputevents | SourceTable::Prescriptions => AggMode::Sum,
        }
    }
}

/// How an item's units were reconciled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitResolution {
    SingleUnit(String),
    KeepMajor(String),
    Convert { canonical: String, from_units: Vec<String> },
    DropItem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPolicy {
    pub item_id: ItemId,
    /// Share of the item's records per normalized unit ("" = no unit).
    pub unit_fractions: BTreeMap<String, f64>,
    pub resolution: UnitResolution,
}

impl UnitPolicy {
    pub fn canonical_unit(&self) -> Option<&str> {
        match &self.resolution {
            UnitResolution::SingleUnit(u) | UnitResolution::KeepMajor(u) => Some(u),
            UnitResolution::Convert { canonical, .. } => Some(canonical),
            UnitResolution::DropItem => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationPolicy {
    pub mode: AggMode,
}

/// One numeric value per `(admission, item, charttime)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanEvent {
    pub admission_id: AdmissionId,
    pub item_id: ItemId,
    pub charttime: Timestamp,
    pub value: f64,
    pub canonical_unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CleanRejectReason {
    UnparseableText(String),
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanReject {
    pub admission_id: AdmissionId,
    pub item_id: ItemId,
    pub charttime: Timestamp,
    pub reason: CleanRejectReason,
}

fn numeric_text_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z%°/µ][A-Za-z0-9%°/µ.^\-]*)?$").unwrap())
}

/// Lenient parse of a text cell: surrounding whitespace and one trailing
/// unit token (e.g. `"84 bpm"`) are tolerated.
pub fn parse_lenient(text: &str) -> Option<f64> {
    let s = text.trim();
    let caps = numeric_text_pattern().captures(s)?;
    caps[1].parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Replaces each range by its midpoint. Numeric and text values pass through.
pub fn collapse_ranges(events: Vec<EventRecord>) -> Vec<EventRecord> {
    events
        .into_iter()
        .map(|mut e| {
            if let Value::Range { lo, hi } = e.value {
                e.value = Value::Numeric(midpoint(lo, hi));
            }
            e
        })
        .collect()
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    (lo + hi) / 2.0
}

/// An event after range collapse and text parsing, before unit resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericEvent {
    pub admission_id: AdmissionId,
    pub item_id: ItemId,
    pub charttime: Timestamp,
    pub value: f64,
    pub unit: String,
    pub source: SourceTable,
}

pub fn to_numeric(e: &EventRecord) -> Result<NumericEvent, CleanReject> {
    let reject = |reason| CleanReject { admission_id: e.admission_id, item_id: e.item_id.clone(), charttime: e.charttime, reason };
    let value = match &e.value {
        Value::Numeric(v) => *v,
        Value::Range { lo, hi } => midpoint(*lo, *hi),
        Value::Text(t) => parse_lenient(t).ok_or_else(|| reject(CleanRejectReason::UnparseableText(t.clone())))?,
    };
    if !value.is_finite() {
        return Err(reject(CleanRejectReason::NonFinite));
    }
    Ok(NumericEvent {
        admission_id: e.admission_id,
        item_id: e.item_id.clone(),
        charttime: e.charttime,
        value,
        unit: normalize_unit(e.unit.as_deref()),
        source: e.source_table,
    })
}

/// Record counts per item, unit and source table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitCensus {
    units: BTreeMap<ItemId, BTreeMap<String, u64>>,
    sources: BTreeMap<ItemId, BTreeMap<SourceTable, u64>>,
}

impl UnitCensus {
    pub fn observe(&mut self, e: &NumericEvent) {
        *self.units.entry(e.item_id.clone()).or_default().entry(e.unit.clone()).or_default() += 1;
        *self.sources.entry(e.item_id.clone()).or_default().entry(e.source).or_default() += 1;
    }

    pub fn merge(&mut self, other: &UnitCensus) {
        for (item, m) in &other.units {
            let dst = self.units.entry(item.clone()).or_default();
            for (u, c) in m {
                *dst.entry(u.clone()).or_default() += c;
            }
        }
        for (item, m) in &other.sources {
            let dst = self.sources.entry(item.clone()).or_default();
            for (s, c) in m {
                *dst.entry(*s).or_default() += c;
            }
        }
    }
}

/// Decides one item's unit resolution from its unit counts.
pub fn decide_units(item: &ItemId, counts: &BTreeMap<String, u64>, config: &CleanConfig) -> UnitPolicy {
    let total: u64 = counts.values().sum();
    let unit_fractions: BTreeMap<String, f64> = counts.iter().map(|(u, c)| (u.clone(), *c as f64 / total.max(1) as f64)).collect();
    // Highest share first; ties broken by unit name.
    let mut ranked: Vec<(&String, u64)> = counts.iter().map(|(u, c)| (u, *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let resolution = if ranked.len() <= 1 {
        UnitResolution::SingleUnit(ranked.first().map(|(u, _)| (*u).clone()).unwrap_or_default())
    } else if unit_fractions[ranked[0].0] >= config.majority_threshold {
        UnitResolution::KeepMajor(ranked[0].0.clone())
    } else {
        ranked
            .iter()
            .map(|(u, _)| *u)
            .find(|cand| !cand.is_empty() && counts.keys().filter(|u| u != cand).all(|u| config.rule(item, u, cand).is_some()))
            .map(|canonical| UnitResolution::Convert { canonical: canonical.clone(), from_units: counts.keys().filter(|u| *u != canonical).cloned().collect() })
            .unwrap_or(UnitResolution::DropItem)
    };
    UnitPolicy { item_id: item.clone(), unit_fractions, resolution }
}

/// Per-item unit policies and aggregation modes for one cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanPlan {
    pub units: BTreeMap<ItemId, UnitPolicy>,
    pub modes: BTreeMap<ItemId, AggMode>,
    rules: Vec<(ItemId, String, String, f64, f64)>,
}

impl CleanPlan {
    pub fn from_census(census: &UnitCensus, config: &CleanConfig) -> Self {
        let mut units = BTreeMap::new();
        let mut rules = Vec::new();
        for (item, counts) in &census.units {
            let policy = decide_units(item, counts, config);
            if let UnitResolution::Convert { canonical, from_units } = &policy.resolution {
                for u in from_units {
                    let r = config.rule(item, u, canonical).expect("rule existence checked in decide_units");
                    rules.push((item.clone(), u.clone(), canonical.clone(), r.shift, r.scale));
                }
            }
            units.insert(item.clone(), policy);
        }
        let modes = census
            .sources
            .iter()
            .map(|(item, srcs)| {
                let mode = config.aggregation_overrides.get(item).copied().unwrap_or_else(|| {
                    let dominant = srcs.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0))).map(|(s, _)| *s);
                    CleanConfig::default_mode(dominant.unwrap_or(SourceTable::Chartevents))
                });
                (item.clone(), mode)
            })
            .collect();
        CleanPlan { units, modes, rules }
    }

    pub fn mode(&self, item: &ItemId) -> AggMode {
        self.modes.get(item).copied().unwrap_or(AggMode::Mean)
    }

    pub fn aggregation_policy(&self, item: &ItemId) -> AggregationPolicy {
        AggregationPolicy { mode: self.mode(item) }
    }

    /// Maps a value into the item's canonical unit; `None` means the record
    /// is dropped (minority unit under keep-major, or a dropped item).
    fn harmonize(&self, e: &NumericEvent) -> Option<(f64, Option<String>)> {
        let policy = self.units.get(&e.item_id)?;
        let canon = |u: &str| if u.is_empty() { None } else { Some(u.to_string()) };
        match &policy.resolution {
            UnitResolution::SingleUnit(u) | UnitResolution::KeepMajor(u) => (e.unit == *u).then(|| (e.value, canon(u))),
            UnitResolution::Convert { canonical, .. } => {
                if e.unit == *canonical {
                    return Some((e.value, canon(canonical)));
                }
                let (_, _, _, shift, scale) = self.rules.iter().find(|(i, f, t, _, _)| *i == e.item_id && *f == e.unit && t == canonical)?;
                Some(((e.value + shift) * scale, canon(canonical)))
            }
            UnitResolution::DropItem => None,
        }
    }
}

/// Resolves the units of one item's events (all events must share an item).
pub fn resolve_units(events: &[NumericEvent], config: &CleanConfig) -> (Vec<NumericEvent>, UnitPolicy) {
    let mut census = UnitCensus::default();
    events.iter().for_each(|e| census.observe(e));
    let item = events.first().map(|e| e.item_id.clone()).unwrap_or(ItemId::Code(0));
    debug_assert!(events.iter().all(|e| e.item_id == item), "resolve_units expects a single item");
    let plan = CleanPlan::from_census(&census, config);
    let kept =
        events.iter().filter_map(|e| plan.harmonize(e).map(|(value, unit)| NumericEvent { value, unit: unit.unwrap_or_default(), ..e.clone() })).collect();
    let policy = plan.units.get(&item).cloned().unwrap_or_else(|| decide_units(&item, &BTreeMap::new(), config));
    (kept, policy)
}

/// Combines several recordings of one item at one timestamp.
pub fn aggregate_same_time(values: &[f64], policy: AggregationPolicy) -> f64 {
    assert!(!values.is_empty(), "aggregate_same_time needs at least one value");
    let sum: f64 = values.iter().sum();
    match policy.mode {
        AggMode::Sum => sum,
        AggMode::Mean => sum / values.len() as f64,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanStats {
    pub input_events: u64,
    pub rejected: u64,
    pub dropped_minority_unit: u64,
    pub dropped_item_events: u64,
    pub converted: u64,
    pub merged_duplicates: u64,
    pub output_events: u64,
}

impl CleanStats {
    pub fn merge(&mut self, o: &CleanStats) {
        self.input_events += o.input_events;
        self.rejected += o.rejected;
        self.dropped_minority_unit += o.dropped_minority_unit;
        self.dropped_item_events += o.dropped_item_events;
        self.converted += o.converted;
        self.merged_duplicates += o.merged_duplicates;
        self.output_events += o.output_events;
    }
}

/// Cleans one admission's events under a cohort-wide plan. Output is
/// sorted by `(item_id, charttime)`.
pub fn clean_admission(events: &[EventRecord], plan: &CleanPlan) -> (Vec<CleanEvent>, Vec<CleanReject>, CleanStats) {
    let mut stats = CleanStats { input_events: events.len() as u64, ..Default::default() };
    let mut rejects = Vec::new();
    // Same-timestamp values per item and the first unit seen.
    type Key = (AdmissionId, ItemId, Timestamp);
    let mut groups: BTreeMap<Key, (Vec<f64>, Option<String>)> = BTreeMap::new();
    for e in events {
        let n = match to_numeric(e) {
            Ok(n) => n,
            Err(r) => {
                stats.rejected += 1;
                rejects.push(r);
                continue;
            }
        };
        let Some((value, unit)) = plan.harmonize(&n) else {
            match plan.units.get(&n.item_id).map(|p| &p.resolution) {
                Some(UnitResolution::DropItem) | None => stats.dropped_item_events += 1,
                _ => stats.dropped_minority_unit += 1,
            }
            continue;
        };
        if value != n.value || (!n.unit.is_empty() && unit.as_deref() != Some(n.unit.as_str())) {
            stats.converted += 1;
        }
        let slot = groups.entry((n.admission_id, n.item_id, n.charttime)).or_insert_with(|| (Vec::new(), unit));
        slot.0.push(value);
    }
    let out: Vec<CleanEvent> = groups
        .into_iter()
        .map(|((admission_id, item_id, charttime), (values, canonical_unit))| {
            stats.merged_duplicates += values.len() as u64 - 1;
            let value = aggregate_same_time(&values, plan.aggregation_policy(&item_id));
            CleanEvent { admission_id, item_id, charttime, value, canonical_unit }
        })
        .collect();
    stats.output_events = out.len() as u64;
    (out, rejects, stats)
}

/// Census over a batch of raw events; rejected text values are skipped.
pub fn census_of<'a, I: IntoIterator<Item = &'a EventRecord>>(events: I) -> UnitCensus {
    let mut census = UnitCensus::default();
    for e in events {
        if let Ok(n) = to_numeric(e) {
            census.observe(&n);
        }
    }
    census
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleanOutcome {
    /// Sorted by `(admission_id, item_id, charttime)`.
    pub events: Vec<CleanEvent>,
    pub plan: Option<CleanPlan>,
    pub rejects: Vec<CleanReject>,
    pub stats: CleanStats,
}

/// Census, plan and per-admission cleaning over an in-memory event list.
pub fn clean_events(events: &[EventRecord], config: &CleanConfig) -> CleanOutcome {
    let plan = CleanPlan::from_census(&census_of(events), config);
    let mut by_adm: BTreeMap<AdmissionId, Vec<EventRecord>> = BTreeMap::new();
    for e in events {
        by_adm.entry(e.admission_id).or_default().push(e.clone());
    }
    let mut out = CleanOutcome { plan: None, ..Default::default() };
    for evs in by_adm.values() {
        let (clean, rejects, stats) = clean_admission(evs, &plan);
        out.events.extend(clean);
        out.rejects.extend(rejects);
        out.stats.merge(&stats);
    }
    out.plan = Some(plan);
    out
}

/// Groups clean events by admission.
pub fn group_by_admission(events: Vec<CleanEvent>) -> HashMap<AdmissionId, Vec<CleanEvent>> {
    let mut m: HashMap<AdmissionId, Vec<CleanEvent>> = HashMap::new();
    for e in events {
        m.entry(e.admission_id).or_default().push(e);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(item: u64, t: i64, value: Value, unit: Option<&str>, source: SourceTable) -> EventRecord {
        EventRecord {
            admission_id: AdmissionId(1),
            item_id: ItemId::Code(item),
            charttime: Timestamp(t),
            value,
            unit: unit.map(str::to_string),
            source_table: source,
        }
    }

    fn num(item: u64, t: i64, v: f64, unit: &str) -> NumericEvent {
        NumericEvent {
            admission_id: AdmissionId(1),
            item_id: ItemId::Code(item),
            charttime: Timestamp(t),
            value: v,
            unit: unit.into(),
            source: SourceTable::Prescriptions,
        }
    }

    #[test]
    fn bundled_config_loads() {
        let c = CleanConfig::bundled();
        assert_eq!(c.majority_threshold, 0.9);
        assert!(c.rule(&ItemId::Code(1), "mg", "grams").is_some());
        assert!(c.rule(&ItemId::drug("aspirin"), "dose", "mg").is_some());
        assert!(c.rule(&ItemId::drug("heparin"), "dose", "mg").is_none());
    }

    #[test]
    fn majority_unit_is_kept() {
        let mut evs: Vec<_> = (0..95).map(|t| num(7, t, 1.0, "mg")).collect();
        evs.extend((95..100).map(|t| num(7, t, 1.0, "dose")));
        let (kept, policy) = resolve_units(&evs, &CleanConfig::bundled());
        assert_eq!(policy.resolution, UnitResolution::KeepMajor("mg".into()));
        assert_eq!(kept.len(), 95);
        assert!(kept.iter().all(|e| e.unit == "mg"));
        assert!((policy.unit_fractions.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exactly_ninety_percent_counts_as_major() {
        let mut evs: Vec<_> = (0..9).map(|t| num(7, t, 1.0, "mg")).collect();
        evs.push(num(7, 9, 1.0, "dose"));
        let (_, policy) = resolve_units(&evs, &CleanConfig::bundled());
        assert_eq!(policy.resolution, UnitResolution::KeepMajor("mg".into()));
    }

    #[test]
    fn minority_units_are_converted() {
        let mut evs: Vec<_> = (0..6).map(|t| num(7, t, 500.0, "mg")).collect();
        evs.extend((6..10).map(|t| num(7, t, 2.0, "grams")));
        let cfg = CleanConfig::from_toml_str("version = 1\n[[conversion]]\nfrom = \"mg\"\nto = \"grams\"\nscale = 0.001\n").unwrap();
        let (kept, policy) = resolve_units(&evs, &cfg);
        assert_eq!(policy.resolution, UnitResolution::Convert { canonical: "grams".into(), from_units: vec!["mg".into()] });
        assert_eq!(kept.len(), 10);
        assert_eq!(kept[0].value, 0.5);
        assert_eq!(kept[0].unit, "grams");
    }

    #[test]
    fn item_without_rule_is_dropped() {
        let mut evs: Vec<_> = (0..5).map(|t| num(7, t, 1.0, "dose")).collect();
        evs.extend((5..10).map(|t| num(7, t, 1.0, "ml")));
        let (kept, policy) = resolve_units(&evs, &CleanConfig::bundled());
        assert_eq!(policy.resolution, UnitResolution::DropItem);
        assert!(kept.is_empty());
    }

    #[test]
    fn ranges_collapse_to_midpoint() {
        let evs = vec![
            ev(1, 0, Value::Range { lo: 60.0, hi: 80.0 }, None, SourceTable::Chartevents),
            ev(1, 1, Value::Range { lo: 5.0, hi: 5.0 }, None, SourceTable::Chartevents),
            ev(1, 2, Value::Numeric(42.0), None, SourceTable::Chartevents),
        ];
        let out: Vec<_> = collapse_ranges(evs).into_iter().map(|e| e.value).collect();
        assert_eq!(out, [Value::Numeric(70.0), Value::Numeric(5.0), Value::Numeric(42.0)]);
    }

    #[test]
    fn aggregation_modes() {
        let mean = AggregationPolicy { mode: AggMode::Mean };
        let sum = AggregationPolicy { mode: AggMode::Sum };
        assert_eq!(aggregate_same_time(&[80.0, 90.0], mean), 85.0);
        assert_eq!(aggregate_same_time(&[100.0, 50.0], sum), 150.0);
        assert_eq!(aggregate_same_time(&[7.4], mean), 7.4);
        assert_eq!(aggregate_same_time(&[7.4], sum), 7.4);
    }

    #[test]
    fn lenient_text_parse() {
        assert_eq!(parse_lenient(" 84 bpm "), Some(84.0));
        assert_eq!(parse_lenient("7.4"), Some(7.4));
        assert_eq!(parse_lenient("98.6°F"), Some(98.6));
        assert_eq!(parse_lenient("<0.1"), None);
        assert_eq!(parse_lenient("ERROR"), None);
    }

    #[test]
    fn clean_pipeline_defaults_by_source() {
        let evs = vec![
            ev(10, 0, Value::Numeric(80.0), Some("bpm"), SourceTable::Chartevents),
            ev(10, 0, Value::Numeric(90.0), Some("bpm"), SourceTable::Chartevents),
            ev(20, 0, Value::Numeric(100.0), Some("mL"), SourceTable::Outputevents),
            ev(20, 0, Value::Text("50 mL".into()), Some("ml"), SourceTable::Outputevents),
            ev(30, 0, Value::Text("garbage".into()), None, SourceTable::Labevents),
        ];
        let out = clean_events(&evs, &CleanConfig::bundled());
        let vals: Vec<_> = out.events.iter().map(|e| (e.item_id.clone(), e.value)).collect();
        assert_eq!(vals, [(ItemId::Code(10), 85.0), (ItemId::Code(20), 150.0)]);
        assert_eq!(out.rejects.len(), 1);
        assert_eq!(out.stats.merged_duplicates, 2);
        assert_eq!(out.events[1].canonical_unit.as_deref(), Some("ml"));
    }

    fn to_records(clean: &[CleanEvent]) -> Vec<EventRecord> {
        clean
            .iter()
            .map(|c| EventRecord {
                admission_id: c.admission_id,
                item_id: c.item_id.clone(),
                charttime: c.charttime,
                value: Value::Numeric(c.value),
                unit: c.canonical_unit.clone(),
                source_table: SourceTable::Chartevents,
            })
            .collect()
    }

    proptest! {
        #[test]
        fn at_most_one_value_per_key_and_idempotent(
            raw in prop::collection::vec((1u64..4, 0i64..6, 0.0f64..100.0, 0usize..3), 1..60)
        ) {
            let units = ["mg", "g", "dose"];
            let evs: Vec<_> = raw
                .iter()
                .map(|(item, t, v, u)| ev(*item, *t, Value::Numeric(*v), Some(units[*u]), SourceTable::Inputevents))
                .collect();
            let cfg = CleanConfig::bundled();
            let once = clean_events(&evs, &cfg);
            let mut keys: Vec<_> = once.events.iter().map(|e| (e.admission_id, e.item_id.clone(), e.charttime)).collect();
            let n = keys.len();
            keys.dedup();
            prop_assert_eq!(keys.len(), n);
            prop_assert!(once.events.iter().all(|e| e.value.is_finite()));

            let twice = clean_events(&to_records(&once.events), &cfg);
            prop_assert_eq!(&twice.events, &once.events);
        }

        // Collapsing equal-width ranges and then averaging equals averaging
        // the endpoints directly (brute-force oracle over the raw bounds).
        #[test]
        fn collapse_then_aggregate_commutes(
            los in prop::collection::vec(0.0f64..1000.0, 1..8),
            width in 0.0f64..50.0,
        ) {
            let evs: Vec<_> = los
                .iter()
                .map(|lo| ev(5, 0, Value::Range { lo: *lo, hi: lo + width }, None, SourceTable::Chartevents))
                .collect();
            let out = clean_events(&evs, &CleanConfig::bundled());
            prop_assert_eq!(out.events.len(), 1);
            let oracle_lo: f64 = los.iter().sum::<f64>() / los.len() as f64;
            let oracle = oracle_lo + width / 2.0;
            prop_assert!((out.events[0].value - oracle).abs() <= 1e-9 * oracle.abs().max(1.0));
        }
    }
}
