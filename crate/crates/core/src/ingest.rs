//! Parsing of MIMIC-style relational CSV exports into typed records.
//!
//! Malformed rows never abort a parse: each one is routed to a reject ledger
//! with its line number and a reason, and the caller gets a partial-success
//! summary alongside the accepted records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::types::{AdmissionId, IcuStayId, ItemId, PatientId, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("table {table}: missing required column {column}")]
    MissingColumn { table: String, column: String },
    #[error("table {table}: {source}")]
    Io {
        table: String,
        #[source]
        source: io::Error,
    },
    #[error("table {table}: unreadable csv header: {message}")]
    Header { table: String, message: String },
}

/// Event table an observation came from. `inputevents_cv` and
/// `inputevents_mv` both map to [`SourceTable::Inputevents`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTable {
    Chartevents,
    Labevents,
    Inputevents,
    Outputevents,
    Prescriptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Numeric(f64),
    Text(String),
    Range { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub admission_id: AdmissionId,
    pub item_id: ItemId,
    pub charttime: Timestamp,
    pub value: Value,
    pub unit: Option<String>,
    pub source_table: SourceTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub admission_id: AdmissionId,
    pub patient_id: PatientId,
    pub admittime: Timestamp,
    pub dischtime: Timestamp,
    pub deathtime: Option<Timestamp>,
    pub admission_type: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    pub dob: Timestamp,
    pub dod: Option<Timestamp>,
    pub gender: Gender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CareSource {
    Carevue,
    Metavision,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcuStayRecord {
    pub icustay_id: IcuStayId,
    pub admission_id: AdmissionId,
    pub intime: Timestamp,
    pub outtime: Timestamp,
    pub care_source: CareSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub admission_id: AdmissionId,
    pub icd9_code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub admission_id: AdmissionId,
    pub transfertime: Timestamp,
    pub curr_service: String,
}

/// Why a row was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    BadTimestamp(String),
    BadId(String),
    MissingField(String),
    BadRange,
    BadCode,
    Inconsistent(String),
    Malformed(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::BadTimestamp(c) => write!(f, "BadTimestamp({c})"),
            RejectReason::BadId(c) => write!(f, "BadId({c})"),
            RejectReason::MissingField(c) => write!(f, "MissingField({c})"),
            RejectReason::BadRange => write!(f, "BadRange"),
            RejectReason::BadCode => write!(f, "BadCode"),
            RejectReason::Inconsistent(m) => write!(f, "Inconsistent({m})"),
            RejectReason::Malformed(m) => write!(f, "Malformed({m})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub table: String,
    /// 1-based line number in the source file (the header is line 1).
    pub row: u64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome<T> {
    pub records: Vec<T>,
    pub rejects: Vec<Reject>,
}

impl<T> ParseOutcome<T> {
    pub fn parsed(&self) -> usize {
        self.records.len()
    }

    pub fn rejected(&self) -> usize {
        self.rejects.len()
    }
}

/// The tables this toolkit reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Chartevents,
    Labevents,
    InputeventsCv,
    InputeventsMv,
    Outputevents,
    Prescriptions,
    Admissions,
    Patients,
    Icustays,
    DiagnosesIcd,
    Services,
}

impl TableKind {
    pub const ALL: [TableKind; 11] = [
        TableKind::Chartevents,
        TableKind::Labevents,
        TableKind::InputeventsCv,
        TableKind::InputeventsMv,
        TableKind::Outputevents,
        TableKind::Prescriptions,
        TableKind::Admissions,
        TableKind::Patients,
        TableKind::Icustays,
        TableKind::DiagnosesIcd,
        TableKind::Services,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TableKind::Chartevents => "chartevents",
            TableKind::Labevents => "labevents",
            TableKind::InputeventsCv => "inputevents_cv",
            TableKind::InputeventsMv => "inputevents_mv",
            TableKind::Outputevents => "outputevents",
            TableKind::Prescriptions => "prescriptions",
            TableKind::Admissions => "admissions",
            TableKind::Patients => "patients",
            TableKind::Icustays => "icustays",
            TableKind::DiagnosesIcd => "diagnoses_icd",
            TableKind::Services => "services",
        }
    }

    /// Header written by the synthetic generator and expected by the parser.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            TableKind::Chartevents | TableKind::Labevents | TableKind::Outputevents => &["HADM_ID", "ITEMID", "CHARTTIME", "VALUE", "VALUEUOM"],
            TableKind::InputeventsCv => &["HADM_ID", "ITEMID", "CHARTTIME", "AMOUNT", "AMOUNTUOM"],
            TableKind::InputeventsMv => &["HADM_ID", "ITEMID", "STARTTIME", "AMOUNT", "AMOUNTUOM"],
            TableKind::Prescriptions => &["HADM_ID", "STARTDATE", "DRUG", "DOSE_VAL_RX", "DOSE_UNIT_RX"],
            TableKind::Admissions => &["SUBJECT_ID", "HADM_ID", "ADMITTIME", "DISCHTIME", "DEATHTIME", "ADMISSION_TYPE"],
            TableKind::Patients => &["SUBJECT_ID", "GENDER", "DOB", "DOD"],
            TableKind::Icustays => &["HADM_ID", "ICUSTAY_ID", "DBSOURCE", "INTIME", "OUTTIME"],
            TableKind::DiagnosesIcd => &["HADM_ID", "ICD9_CODE"],
            TableKind::Services => &["HADM_ID", "TRANSFERTIME", "CURR_SERVICE"],
        }
    }

    pub fn event_schema(self) -> Option<EventSchema> {
        let (source, time, value, unit, item) = match self {
            TableKind::Chartevents => (SourceTable::Chartevents, "CHARTTIME", "VALUE", "VALUEUOM", ItemColumn::ItemId),
            TableKind::Labevents => (SourceTable::Labevents, "CHARTTIME", "VALUE", "VALUEUOM", ItemColumn::ItemId),
            TableKind::Outputevents => (SourceTable::Outputevents, "CHARTTIME", "VALUE", "VALUEUOM", ItemColumn::ItemId),
            TableKind::InputeventsCv => (SourceTable::Inputevents, "CHARTTIME", "AMOUNT", "AMOUNTUOM", ItemColumn::ItemId),
            TableKind::InputeventsMv => (SourceTable::Inputevents, "STARTTIME", "AMOUNT", "AMOUNTUOM", ItemColumn::ItemId),
            TableKind::Prescriptions => (SourceTable::Prescriptions, "STARTDATE", "DOSE_VAL_RX", "DOSE_UNIT_RX", ItemColumn::Drug),
            _ => return None,
        };
        Some(EventSchema { table: self, source, time_col: time, value_col: value, unit_col: unit, item })
    }

    /// Locates `name.csv` or `NAME.csv` in a directory.
    pub fn locate(self, dir: &Path) -> Option<PathBuf> {
        [self.name().to_string(), self.name().to_uppercase()].into_iter().map(|n| dir.join(format!("{n}.csv"))).find(|p| p.is_file())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemColumn {
    ItemId,
    Drug,
}

/// Column mapping for one event table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventSchema {
    pub table: TableKind,
    pub source: SourceTable,
    pub time_col: &'static str,
    pub value_col: &'static str,
    pub unit_col: &'static str,
    pub item: ItemColumn,
}

/// A parsed CSV row addressed by (upper-cased) column name.
pub struct Row<'a> {
    record: &'a csv::StringRecord,
    columns: &'a HashMap<String, usize>,
}

impl<'a> Row<'a> {
    pub fn get(&self, col: &str) -> Option<&'a str> {
        self.columns.get(col).and_then(|&i| self.record.get(i)).map(str::trim).filter(|s| !s.is_empty())
    }

    fn require(&self, col: &str) -> Result<&'a str, RejectReason> {
        self.get(col).ok_or_else(|| RejectReason::MissingField(col.to_string()))
    }

    fn id(&self, col: &str) -> Result<u64, RejectReason> {
        let raw = self.require(col)?;
        raw.parse::<u64>()
            .or_else(|_| raw.parse::<f64>().ok().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64).ok_or(()))
            .map_err(|_| RejectReason::BadId(col.to_string()))
    }

    fn time(&self, col: &str) -> Result<Timestamp, RejectReason> {
        Timestamp::parse(self.require(col)?).ok_or_else(|| RejectReason::BadTimestamp(col.to_string()))
    }

    fn opt_time(&self, col: &str) -> Result<Option<Timestamp>, RejectReason> {
        match self.get(col) {
            None => Ok(None),
            Some(s) => Timestamp::parse(s).map(Some).ok_or_else(|| RejectReason::BadTimestamp(col.to_string())),
        }
    }
}

/// Turns one CSV row into a typed record.
pub trait RowParser {
    type Record;
    fn table(&self) -> &str;
    fn required(&self) -> Vec<&'static str>;
    fn parse_row(&self, row: &Row<'_>) -> Result<Self::Record, RejectReason>;
}

fn range_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*-\s*(\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*$").unwrap())
}

/// Classifies a raw value cell: `a-b` ranges, finite numbers, or free text.
pub fn parse_value(raw: &str) -> Result<Value, RejectReason> {
    let s = raw.trim();
    if let Some(c) = range_pattern().captures(s) {
        let lo: f64 = c[1].parse().map_err(|_| RejectReason::BadRange)?;
        let hi: f64 = c[2].parse().map_err(|_| RejectReason::BadRange)?;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(RejectReason::BadRange);
        }
        return Ok(Value::Range { lo, hi });
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Value::Numeric(v)),
        _ => Ok(Value::Text(s.to_string())),
    }
}

impl RowParser for EventSchema {
    type Record = EventRecord;

    fn table(&self) -> &str {
        self.table.name()
    }

    fn required(&self) -> Vec<&'static str> {
        let item = match self.item {
            ItemColumn::ItemId => "ITEMID",
            ItemColumn::Drug => "DRUG",
        };
        vec!["HADM_ID", item, self.time_col, self.value_col, self.unit_col]
    }

    fn parse_row(&self, row: &Row<'_>) -> Result<EventRecord, RejectReason> {
        let admission_id = AdmissionId(row.id("HADM_ID")?);
        let item_id = match self.item {
            ItemColumn::ItemId => ItemId::Code(row.id("ITEMID")?),
            ItemColumn::Drug => ItemId::drug(row.require("DRUG")?),
        };
        let charttime = row.time(self.time_col)?;
        let value = parse_value(row.require(self.value_col)?)?;
        let unit = row.get(self.unit_col).map(str::to_string);
        Ok(EventRecord { admission_id, item_id, charttime, value, unit, source_table: self.source })
    }
}

pub struct AdmissionsParser;
pub struct PatientsParser;
pub struct IcustaysParser;
pub struct DiagnosesParser;
pub struct ServicesParser;

impl RowParser for AdmissionsParser {
    type Record = AdmissionRecord;

    fn table(&self) -> &str {
        "admissions"
    }

    fn required(&self) -> Vec<&'static str> {
        TableKind::Admissions.columns().to_vec()
    }

    fn parse_row(&self, row: &Row<'_>) -> Result<AdmissionRecord, RejectReason> {
        let rec = AdmissionRecord {
            patient_id: PatientId(row.id("SUBJECT_ID")?),
            admission_id: AdmissionId(row.id("HADM_ID")?),
            admittime: row.time("ADMITTIME")?,
            dischtime: row.time("DISCHTIME")?,
            deathtime: row.opt_time("DEATHTIME")?,
            admission_type: row.get("ADMISSION_TYPE").unwrap_or("").to_string(),
        };
        if rec.dischtime < rec.admittime {
            return Err(RejectReason::Inconsistent("DISCHTIME before ADMITTIME".into()));
        }
        if rec.deathtime.is_some_and(|d| d < rec.admittime) {
            return Err(RejectReason::Inconsistent("DEATHTIME before ADMITTIME".into()));
        }
        Ok(rec)
    }
}

impl RowParser for PatientsParser {
    type Record = PatientRecord;

    fn table(&self) -> &str {
        "patients"
    }

    fn required(&self) -> Vec<&'static str> {
        TableKind::Patients.columns().to_vec()
    }

    fn parse_row(&self, row: &Row<'_>) -> Result<PatientRecord, RejectReason> {
        let gender = match row.get("GENDER").map(|g| g.to_ascii_uppercase()) {
            Some(g) if g == "F" => Gender::Female,
            Some(g) if g == "M" => Gender::Male,
            _ => Gender::Unknown,
        };
        let rec = PatientRecord { patient_id: PatientId(row.id("SUBJECT_ID")?), dob: row.time("DOB")?, dod: row.opt_time("DOD")?, gender };
        if rec.dod.is_some_and(|d| d < rec.dob) {
            return Err(RejectReason::Inconsistent("DOD before DOB".into()));
        }
        Ok(rec)
    }
}

impl RowParser for IcustaysParser {
    type Record = IcuStayRecord;

    fn table(&self) -> &str {
        "icustays"
    }

    fn required(&self) -> Vec<&'static str> {
        TableKind::Icustays.columns().to_vec()
    }

    fn parse_row(&self, row: &Row<'_>) -> Result<IcuStayRecord, RejectReason> {
        let care_source = match row.get("DBSOURCE").map(|s| s.to_ascii_lowercase()).as_deref() {
            Some("carevue") => CareSource::Carevue,
            Some("metavision") => CareSource::Metavision,
            Some("both") => CareSource::Both,
            _ => return Err(RejectReason::MissingField("DBSOURCE".into())),
        };
        let rec = IcuStayRecord {
            icustay_id: IcuStayId(row.id("ICUSTAY_ID")?),
            admission_id: AdmissionId(row.id("HADM_ID")?),
            intime: row.time("INTIME")?,
            outtime: row.time("OUTTIME")?,
            care_source,
        };
        if rec.outtime < rec.intime {
            return Err(RejectReason::Inconsistent("OUTTIME before INTIME".into()));
        }
        Ok(rec)
    }
}

impl RowParser for DiagnosesParser {
    type Record = DiagnosisRecord;

    fn table(&self) -> &str {
        "diagnoses_icd"
    }

    fn required(&self) -> Vec<&'static str> {
        TableKind::DiagnosesIcd.columns().to_vec()
    }

    fn parse_row(&self, row: &Row<'_>) -> Result<DiagnosisRecord, RejectReason> {
        let admission_id = AdmissionId(row.id("HADM_ID")?);
        let code = row.require("ICD9_CODE")?.to_ascii_uppercase();
        match code.chars().next() {
            Some(c) if c.is_ascii_digit() || c == 'V' || c == 'E' => {}
            _ => return Err(RejectReason::BadCode),
        }
        Ok(DiagnosisRecord { admission_id, icd9_code: code })
    }
}

impl RowParser for ServicesParser {
    type Record = ServiceRecord;

    fn table(&self) -> &str {
        "services"
    }

    fn required(&self) -> Vec<&'static str> {
        TableKind::Services.columns().to_vec()
    }

    fn parse_row(&self, row: &Row<'_>) -> Result<ServiceRecord, RejectReason> {
        Ok(ServiceRecord {
            admission_id: AdmissionId(row.id("HADM_ID")?),
            transfertime: row.time("TRANSFERTIME")?,
            curr_service: row.require("CURR_SERVICE")?.to_ascii_uppercase(),
        })
    }
}

/// Parses delimited text from any reader. Header names are matched
/// case-insensitively; extra columns are ignored.
pub fn parse_reader<R: Read, P: RowParser>(reader: R, parser: &P) -> Result<ParseOutcome<P::Record>, IngestError> {
    let table = parser.table().to_string();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| IngestError::Header { table: table.clone(), message: e.to_string() })?;
    let columns: HashMap<String, usize> = header.iter().enumerate().map(|(i, h)| (h.trim().to_ascii_uppercase(), i)).collect();
    for col in parser.required() {
        if !columns.contains_key(col) {
            return Err(IngestError::MissingColumn { table, column: col.to_string() });
        }
    }

    let mut out = ParseOutcome { records: Vec::new(), rejects: Vec::new() };
    let mut record = csv::StringRecord::new();
    let mut line = 1u64;
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                line = record.position().map(|p| p.line()).unwrap_or(line + 1);
                match parser.parse_row(&Row { record: &record, columns: &columns }) {
                    Ok(r) => out.records.push(r),
                    Err(reason) => out.rejects.push(Reject { table: table.clone(), row: line, reason }),
                }
            }
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    let csv::ErrorKind::Io(io) = e.into_kind() else { unreachable!() };
                    return Err(IngestError::Io { table, source: io });
                }
                line += 1;
                let row = e.position().map(|p| p.line()).unwrap_or(line);
                out.rejects.push(Reject { table: table.clone(), row, reason: RejectReason::Malformed(e.to_string()) });
            }
        }
    }
    Ok(out)
}

/// Parses one table file.
pub fn parse_table<P: RowParser>(path: &Path, parser: &P) -> Result<ParseOutcome<P::Record>, IngestError> {
    let f = File::open(path).map_err(|e| IngestError::Io { table: parser.table().to_string(), source: e })?;
    parse_reader(io::BufReader::new(f), parser)
}

/// Per-admission event lists sorted by `(charttime, item_id)` with ties kept
/// in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmissionEventIndex {
    events: BTreeMap<AdmissionId, Vec<EventRecord>>,
}

impl AdmissionEventIndex {
    pub fn build<I: IntoIterator<Item = EventRecord>>(events: I) -> Self {
        let mut map: BTreeMap<AdmissionId, Vec<EventRecord>> = BTreeMap::new();
        for e in events {
            map.entry(e.admission_id).or_default().push(e);
        }
        for list in map.values_mut() {
            // sort_by is stable: equal keys keep insertion order.
            list.sort_by(|a, b| a.charttime.cmp(&b.charttime).then_with(|| a.item_id.cmp(&b.item_id)));
        }
        AdmissionEventIndex { events: map }
    }

    pub fn get(&self, id: AdmissionId) -> &[EventRecord] {
        self.events.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn admissions(&self) -> impl Iterator<Item = AdmissionId> + '_ {
        self.events.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (AdmissionId, &[EventRecord])> + '_ {
        self.events.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn total_events(&self) -> usize {
        self.events.values().map(Vec::len).sum()
    }

    /// Admissions that have events but no admissions-table record.
    pub fn unknown_admissions(&self, known: &HashSet<AdmissionId>) -> Vec<AdmissionId> {
        self.events.keys().filter(|a| !known.contains(a)).copied().collect()
    }

    pub fn flatten(&self) -> impl Iterator<Item = &EventRecord> + '_ {
        self.events.values().flatten()
    }

    pub fn into_inner(self) -> BTreeMap<AdmissionId, Vec<EventRecord>> {
        self.events
    }
}

/// Every table of one dataset, parsed.
#[derive(Debug, Clone, Default)]
pub struct RawTables {
    pub events: Vec<EventRecord>,
    /// Admissions with at least one `inputevents_cv` row.
    pub carevue_input_admissions: HashSet<AdmissionId>,
    pub admissions: Vec<AdmissionRecord>,
    pub patients: Vec<PatientRecord>,
    pub icustays: Vec<IcuStayRecord>,
    pub diagnoses: Vec<DiagnosisRecord>,
    pub services: Vec<ServiceRecord>,
    pub rejects: Vec<Reject>,
    /// Tables that were absent from the directory.
    pub missing_tables: Vec<TableKind>,
}

enum Parsed {
    Events(TableKind, ParseOutcome<EventRecord>),
    Admissions(ParseOutcome<AdmissionRecord>),
    Patients(ParseOutcome<PatientRecord>),
    Icustays(ParseOutcome<IcuStayRecord>),
    Diagnoses(ParseOutcome<DiagnosisRecord>),
    Services(ParseOutcome<ServiceRecord>),
}

fn parse_kind(kind: TableKind, path: &Path) -> Result<Parsed, IngestError> {
    Ok(match kind {
        TableKind::Admissions => Parsed::Admissions(parse_table(path, &AdmissionsParser)?),
        TableKind::Patients => Parsed::Patients(parse_table(path, &PatientsParser)?),
        TableKind::Icustays => Parsed::Icustays(parse_table(path, &IcustaysParser)?),
        TableKind::DiagnosesIcd => Parsed::Diagnoses(parse_table(path, &DiagnosesParser)?),
        TableKind::Services => Parsed::Services(parse_table(path, &ServicesParser)?),
        k => Parsed::Events(k, parse_table(path, &k.event_schema().expect("event table"))?),
    })
}

/// Parses every known table present in `dir`. Tables are parsed on
/// separate threads and merged in the fixed [`TableKind::ALL`] order, so
/// the result does not depend on scheduling. The admissions, patients and
/// icustays tables are mandatory.
pub fn ingest_dir(dir: &Path) -> Result<RawTables, IngestError> {
    let located: Vec<(TableKind, Option<PathBuf>)> = TableKind::ALL.iter().map(|&k| (k, k.locate(dir))).collect();
    for k in [TableKind::Admissions, TableKind::Patients, TableKind::Icustays] {
        if located.iter().any(|(kk, p)| *kk == k && p.is_none()) {
            return Err(IngestError::Io {
                table: k.name().into(),
                source: io::Error::new(io::ErrorKind::NotFound, format!("{}.csv not found in {}", k.name(), dir.display())),
            });
        }
    }

    let results: Vec<Result<Option<Parsed>, IngestError>> = std::thread::scope(|s| {
        let handles: Vec<_> = located.iter().map(|(k, p)| s.spawn(move || p.as_ref().map(|p| parse_kind(*k, p)).transpose())).collect();
        handles.into_iter().map(|h| h.join().expect("parser thread panicked")).collect()
    });

    let mut out = RawTables::default();
    for ((kind, _), res) in located.iter().zip(results) {
        match res? {
            None => out.missing_tables.push(*kind),
            Some(Parsed::Events(k, o)) => {
                if k == TableKind::InputeventsCv {
                    out.carevue_input_admissions.extend(o.records.iter().map(|e| e.admission_id));
                }
                out.events.extend(o.records);
                out.rejects.extend(o.rejects);
            }
            Some(Parsed::Admissions(o)) => {
                out.admissions = o.records;
                out.rejects.extend(o.rejects);
            }
            Some(Parsed::Patients(o)) => {
                out.patients = o.records;
                out.rejects.extend(o.rejects);
            }
            Some(Parsed::Icustays(o)) => {
                out.icustays = o.records;
                out.rejects.extend(o.rejects);
            }
            Some(Parsed::Diagnoses(o)) => {
                out.diagnoses = o.records;
                out.rejects.extend(o.rejects);
            }
            Some(Parsed::Services(o)) => {
                out.services = o.records;
                out.rejects.extend(o.rejects);
            }
        }
    }
    Ok(out)
}

/// Writes the reject ledger as CSV `(table, row, reason)`.
pub fn write_reject_ledger<W: Write>(w: W, rejects: &[Reject]) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["table", "row", "reason"])?;
    for r in rejects {
        wtr.write_record([r.table.as_str(), &r.row.to_string(), &r.reason.to_string()])?;
    }
    wtr.flush()
}
