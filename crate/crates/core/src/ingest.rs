//! Readers and writers for the three input tables: interaction events,
//! buyer assignments (plus the JSON design sidecar) and seller outcomes.
//!
//! All files are headed CSV without quoting. Identifiers are opaque
//! strings and are never interpreted as numbers.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENTS_HEADER: &str = "buyer_id,seller_id,event_kind,timestamp_ms";
pub const ASSIGNMENTS_HEADER: &str = "buyer_id,variant";
pub const OUTCOMES_HEADER: &str = "seller_id,y_in";
pub const OUTCOMES_HEADER_PRE: &str = "seller_id,y_in,y_pre";

/// Interaction kinds accepted unless a custom whitelist is configured.
pub const DEFAULT_EVENT_KINDS: &[&str] = &[
    "view",
    "favorite",
    "message",
    "offer",
    "purchase",
    "profile_visit",
];

const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InteractionEvent {
    pub buyer_id: String,
    pub seller_id: String,
    pub event_kind: String,
    pub timestamp_ms: i64,
}

/// Which rows of an events file are kept.
#[derive(Debug, Clone)]
pub struct EventFilter {
    whitelist: BTreeSet<String>,
    kinds: BTreeSet<String>,
    window: (i64, i64),
}

impl EventFilter {
    /// Keeps events whose kind is in `kinds`, over all time.
    pub fn new<I, S>(kinds: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let whitelist = DEFAULT_EVENT_KINDS.iter().map(|s| s.to_string()).collect();
        Self::with_whitelist(kinds, whitelist)
    }

    pub fn with_whitelist<I, S>(kinds: I, whitelist: BTreeSet<String>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let kinds: BTreeSet<String> = kinds.into_iter().map(Into::into).collect();
        if kinds.is_empty() {
            return Err(Error::InvalidArgument("event kind filter is empty".into()));
        }
        if let Some(k) = kinds.iter().find(|k| !whitelist.contains(*k)) {
            return Err(Error::InvalidArgument(format!(
                "event kind `{k}` is not in the kind whitelist"
            )));
        }
        Ok(Self {
            whitelist,
            kinds,
            window: (i64::MIN, i64::MAX),
        })
    }

    /// Restricts to `t0 <= timestamp_ms <= t1` (both ends inclusive).
    pub fn window(mut self, t0: i64, t1: i64) -> Result<Self> {
        if t0 > t1 {
            return Err(Error::InvalidArgument(format!(
                "empty time window [{t0}, {t1}]"
            )));
        }
        self.window = (t0, t1);
        Ok(self)
    }

    pub fn kinds(&self) -> &BTreeSet<String> {
        &self.kinds
    }

    pub fn whitelist(&self) -> &BTreeSet<String> {
        &self.whitelist
    }

    pub fn time_window(&self) -> (i64, i64) {
        self.window
    }
}

/// Per-reason tallies of rows that were read but not returned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub out_of_window: u64,
    pub kind_not_selected: u64,
    pub unknown_kind: u64,
}

impl DropCounts {
    pub fn total(&self) -> u64 {
        self.out_of_window + self.kind_not_selected + self.unknown_kind
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedEvents {
    pub events: Vec<InteractionEvent>,
    pub dropped: DropCounts,
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(false)
        .quoting(false)
        .flexible(true)
        .from_reader(reader)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::malformed(line, e.to_string())
}

/// Reads the header record and checks it against the accepted forms,
/// returning the index of the form that matched.
fn read_header<R: Read>(rdr: &mut csv::Reader<R>, accepted: &[&str]) -> Result<usize> {
    let mut record = StringRecord::new();
    let found = if rdr.read_record(&mut record).map_err(csv_error)? {
        record.iter().collect::<Vec<_>>().join(",")
    } else {
        String::new()
    };
    // tolerate a UTF-8 byte order mark on the first field
    let found = found.strip_prefix('\u{feff}').unwrap_or(&found).to_string();
    accepted
        .iter()
        .position(|h| *h == found)
        .ok_or_else(|| Error::Header {
            expected: accepted.join("` or `"),
            found,
        })
}

fn line_of(record: &StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn non_empty<'a>(record: &'a StringRecord, idx: usize, name: &str) -> Result<&'a str> {
    let value = &record[idx];
    if value.is_empty() {
        return Err(Error::malformed(line_of(record), format!("empty {name}")));
    }
    Ok(value)
}

fn expect_fields(record: &StringRecord, n: usize) -> Result<()> {
    if record.len() != n {
        return Err(Error::malformed(
            line_of(record),
            format!("expected {n} fields, found {}", record.len()),
        ));
    }
    Ok(())
}

pub fn parse_events(path: impl AsRef<Path>, filter: &EventFilter) -> Result<ParsedEvents> {
    read_events(open(path.as_ref())?, filter)
}

/// Parses an events table, keeping rows that pass `filter` in file order.
pub fn read_events<R: Read>(reader: R, filter: &EventFilter) -> Result<ParsedEvents> {
    let mut rdr = csv_reader(reader);
    read_header(&mut rdr, &[EVENTS_HEADER])?;

    let mut out = ParsedEvents::default();
    let mut record = StringRecord::new();
    while rdr.read_record(&mut record).map_err(csv_error)? {
        expect_fields(&record, 4)?;
        let buyer = non_empty(&record, 0, "buyer_id")?;
        let seller = non_empty(&record, 1, "seller_id")?;
        let kind = non_empty(&record, 2, "event_kind")?;
        let ts: i64 = record[3].parse().map_err(|_| {
            Error::malformed(
                line_of(&record),
                format!("timestamp_ms `{}` is not an integer", &record[3]),
            )
        })?;

        if !filter.whitelist.contains(kind) {
            log::warn!(
                "line {}: skipping unknown event kind `{kind}`",
                line_of(&record)
            );
            out.dropped.unknown_kind += 1;
            continue;
        }
        if !filter.kinds.contains(kind) {
            out.dropped.kind_not_selected += 1;
            continue;
        }
        if ts < filter.window.0 || ts > filter.window.1 {
            out.dropped.out_of_window += 1;
            continue;
        }
        out.events.push(InteractionEvent {
            buyer_id: buyer.to_string(),
            seller_id: seller.to_string(),
            event_kind: kind.to_string(),
            timestamp_ms: ts,
        });
    }
    Ok(out)
}

pub fn write_events<W: Write>(mut w: W, events: &[InteractionEvent]) -> io::Result<()> {
    writeln!(w, "{EVENTS_HEADER}")?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{}",
            e.buyer_id, e.seller_id, e.event_kind, e.timestamp_ms
        )?;
    }
    w.flush()
}

/// One arm of the randomization design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub label: String,
    pub probability: f64,
    #[serde(default)]
    pub control: bool,
}

/// The JSON sidecar describing the randomization design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub variants: Vec<VariantSpec>,
}

impl DesignFile {
    pub fn validate(&self) -> Result<()> {
        if self.variants.len() < 2 {
            return Err(Error::Design("need at least two variants".into()));
        }
        let mut seen = BTreeSet::new();
        for v in &self.variants {
            if v.label.is_empty() {
                return Err(Error::Design("empty variant label".into()));
            }
            if v.label.contains(',') {
                return Err(Error::Design(format!("variant label `{}` contains a comma", v.label)));
            }
            if !seen.insert(v.label.as_str()) {
                return Err(Error::Design(format!("variant `{}` declared twice", v.label)));
            }
            if !(v.probability > 0.0 && v.probability < 1.0) {
                return Err(Error::Design(format!(
                    "probability of `{}` must lie in (0,1), got {}",
                    v.label, v.probability
                )));
            }
        }
        let total: f64 = crate::numeric::sum(self.variants.iter().map(|v| v.probability));
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::Design(format!(
                "variant probabilities sum to {total}, not 1"
            )));
        }
        let controls = self.variants.iter().filter(|v| v.control).count();
        if controls != 1 {
            return Err(Error::Design(format!(
                "exactly one control variant required, found {controls}"
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let design: DesignFile = serde_json::from_str(text)?;
        design.validate()?;
        Ok(design)
    }
}

/// Buyer to variant mapping together with the design it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentTable {
    variants: Vec<VariantSpec>,
    control: usize,
    entries: HashMap<String, usize>,
}

impl AssignmentTable {
    pub fn new(design: DesignFile) -> Result<Self> {
        design.validate()?;
        let control = design.variants.iter().position(|v| v.control).unwrap();
        Ok(Self {
            variants: design.variants,
            control,
            entries: HashMap::new(),
        })
    }

    pub fn assign(&mut self, buyer: &str, variant: &str) -> Result<()> {
        if buyer.is_empty() {
            return Err(Error::InvalidArgument("empty buyer_id".into()));
        }
        let idx = self.variant_index(variant)?;
        if let Some(&prev) = self.entries.get(buyer) {
            return Err(Error::DuplicateBuyer {
                buyer: buyer.to_string(),
                first: self.variants[prev].label.clone(),
                second: variant.to_string(),
            });
        }
        self.entries.insert(buyer.to_string(), idx);
        Ok(())
    }

    pub fn variants(&self) -> &[VariantSpec] {
        &self.variants
    }

    pub fn variant_labels(&self) -> impl Iterator<Item = &str> {
        self.variants.iter().map(|v| v.label.as_str())
    }

    pub fn control_label(&self) -> &str {
        &self.variants[self.control].label
    }

    pub fn control_index(&self) -> usize {
        self.control
    }

    pub fn variant_index(&self, label: &str) -> Result<usize> {
        self.variants
            .iter()
            .position(|v| v.label == label)
            .ok_or_else(|| Error::UnknownVariant(label.to_string()))
    }

    pub fn probability(&self, label: &str) -> Result<f64> {
        Ok(self.variants[self.variant_index(label)?].probability)
    }

    pub fn variant_of(&self, buyer: &str) -> Option<usize> {
        self.entries.get(buyer).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn design(&self) -> DesignFile {
        DesignFile {
            variants: self.variants.clone(),
        }
    }

    /// Entries sorted by buyer id.
    pub fn sorted_entries(&self) -> Vec<(&str, &str)> {
        let mut v: Vec<_> = self
            .entries
            .iter()
            .map(|(b, &i)| (b.as_str(), self.variants[i].label.as_str()))
            .collect();
        v.sort_unstable();
        v
    }
}

/// Default location of the design sidecar: `assignments.csv` pairs with
/// `assignments.design.json` in the same directory.
pub fn design_sidecar_path(assignments: &Path) -> PathBuf {
    assignments.with_extension("design.json")
}

pub fn parse_assignments(path: impl AsRef<Path>) -> Result<AssignmentTable> {
    let path = path.as_ref();
    parse_assignments_with_design(path, design_sidecar_path(path))
}

pub fn parse_assignments_with_design(
    path: impl AsRef<Path>,
    design: impl AsRef<Path>,
) -> Result<AssignmentTable> {
    let design = design.as_ref();
    let text = std::fs::read_to_string(design).map_err(|e| Error::io(design, e))?;
    read_assignments(open(path.as_ref())?, DesignFile::parse(&text)?)
}

pub fn read_assignments<R: Read>(reader: R, design: DesignFile) -> Result<AssignmentTable> {
    let mut table = AssignmentTable::new(design)?;
    let mut rdr = csv_reader(reader);
    read_header(&mut rdr, &[ASSIGNMENTS_HEADER])?;
    let mut record = StringRecord::new();
    while rdr.read_record(&mut record).map_err(csv_error)? {
        expect_fields(&record, 2)?;
        let buyer = non_empty(&record, 0, "buyer_id")?;
        let variant = non_empty(&record, 1, "variant")?;
        match table.assign(buyer, variant) {
            Ok(()) => {}
            Err(Error::UnknownVariant(v)) => {
                return Err(Error::malformed(
                    line_of(&record),
                    format!("variant `{v}` is not declared in the design"),
                ))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(table)
}

pub fn write_assignments<W: Write>(mut w: W, table: &AssignmentTable) -> io::Result<()> {
    writeln!(w, "{ASSIGNMENTS_HEADER}")?;
    for (buyer, variant) in table.sorted_entries() {
        writeln!(w, "{buyer},{variant}")?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Continuous,
    Conversion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub y_in: f64,
    pub y_pre: Option<f64>,
}

/// Seller outcomes, kept in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutcomeTable {
    has_pre: bool,
    order: Vec<String>,
    entries: HashMap<String, Outcome>,
}

impl OutcomeTable {
    pub fn new(has_pre: bool) -> Self {
        Self {
            has_pre,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, seller: &str, outcome: Outcome) -> Result<()> {
        if seller.is_empty() {
            return Err(Error::InvalidArgument("empty seller_id".into()));
        }
        if outcome.y_pre.is_some() != self.has_pre {
            return Err(Error::InvalidArgument(format!(
                "seller `{seller}`: y_pre presence does not match the table"
            )));
        }
        if !outcome.y_in.is_finite() || outcome.y_pre.is_some_and(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "seller `{seller}`: outcomes must be finite"
            )));
        }
        if self.entries.insert(seller.to_string(), outcome).is_some() {
            return Err(Error::InvalidArgument(format!(
                "seller `{seller}` has more than one outcome row"
            )));
        }
        self.order.push(seller.to_string());
        Ok(())
    }

    pub fn has_pre(&self) -> bool {
        self.has_pre
    }

    pub fn get(&self, seller: &str) -> Option<Outcome> {
        self.entries.get(seller).copied()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Rows in insertion (file) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Outcome)> {
        self.order
            .iter()
            .map(move |s| (s.as_str(), self.entries[s]))
    }

    /// Checks the value domain implied by the metric type.
    pub fn check_metric(&self, kind: MetricKind) -> Result<()> {
        if kind == MetricKind::Continuous {
            return Ok(());
        }
        let binary = |v: f64| v == 0.0 || v == 1.0;
        for (seller, o) in self.iter() {
            if !binary(o.y_in) || o.y_pre.is_some_and(|v| !binary(v)) {
                return Err(Error::InvalidArgument(format!(
                    "conversion metric requires 0/1 outcomes; seller `{seller}` violates it"
                )));
            }
        }
        Ok(())
    }
}

pub fn parse_outcomes(path: impl AsRef<Path>) -> Result<OutcomeTable> {
    read_outcomes(open(path.as_ref())?)
}

fn parse_finite(record: &StringRecord, idx: usize, name: &str) -> Result<f64> {
    let raw = &record[idx];
    let v: f64 = raw.parse().map_err(|_| {
        Error::malformed(line_of(record), format!("{name} `{raw}` is not a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::malformed(
            line_of(record),
            format!("{name} `{raw}` is not finite"),
        ));
    }
    Ok(v)
}

pub fn read_outcomes<R: Read>(reader: R) -> Result<OutcomeTable> {
    let mut rdr = csv_reader(reader);
    let has_pre = read_header(&mut rdr, &[OUTCOMES_HEADER, OUTCOMES_HEADER_PRE])? == 1;
    let width = if has_pre { 3 } else { 2 };
    let mut table = OutcomeTable::new(has_pre);
    let mut record = StringRecord::new();
    while rdr.read_record(&mut record).map_err(csv_error)? {
        expect_fields(&record, width)?;
        let seller = non_empty(&record, 0, "seller_id")?;
        let y_in = parse_finite(&record, 1, "y_in")?;
        let y_pre = if has_pre {
            Some(parse_finite(&record, 2, "y_pre")?)
        } else {
            None
        };
        table
            .insert(seller, Outcome { y_in, y_pre })
            .map_err(|e| Error::malformed(line_of(&record), e.to_string()))?;
    }
    Ok(table)
}

/// Writes outcomes in table order; floats use the shortest representation
/// that parses back to the same value.
pub fn write_outcomes<W: Write>(mut w: W, table: &OutcomeTable) -> io::Result<()> {
    if table.has_pre {
        writeln!(w, "{OUTCOMES_HEADER_PRE}")?;
    } else {
        writeln!(w, "{OUTCOMES_HEADER}")?;
    }
    for (seller, o) in table.iter() {
        match o.y_pre {
            Some(pre) => writeln!(w, "{seller},{},{pre}", o.y_in)?,
            None => writeln!(w, "{seller},{}", o.y_in)?,
        }
    }
    w.flush()
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}
