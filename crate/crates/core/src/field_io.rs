//! Tecplot ASCII structured-zone files.
//!
//! Only ordered zones with POINT packing are supported. A file holds a single
//! `VARIABLES` list shared by every zone; each zone stores `I*J` rows with the
//! `I` index varying fastest.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column layout of the nozzle field files.
pub const NOZZLE_COLUMNS: [&str; 12] = [
    "X", "Y", "Density", "QX", "QY", "T", "U", "V", "Txy", "Mach", "Pressure", "Knudsen",
];

/// Column layout of generated Burgers datasets (time stored in the second slot).
pub const BURGERS_COLUMNS: [&str; 3] = ["X", "T", "U"];

/// Default lower bound on estimated grid spacing.
pub const DX_MIN_DEFAULT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// One `I x J` structured block.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneGrid {
    pub title: Option<String>,
    pub i_count: usize,
    pub j_count: usize,
    pub columns: Vec<Column>,
}

impl ZoneGrid {
    pub fn new(i_count: usize, j_count: usize, columns: Vec<Column>) -> Result<Self> {
        let zone = ZoneGrid {
            title: None,
            i_count,
            j_count,
            columns,
        };
        zone.validate()?;
        Ok(zone)
    }

    pub fn validate(&self) -> Result<()> {
        if self.i_count == 0 || self.j_count == 0 {
            return Err(Error::MalformedHeader(format!(
                "zone dimensions must be positive, got I={} J={}",
                self.i_count, self.j_count
            )));
        }
        let n = self.n_points();
        for (k, col) in self.columns.iter().enumerate() {
            if col.values.len() != n {
                return Err(Error::LengthMismatch {
                    what: format!("column `{}`", col.name),
                    expected: n,
                    found: col.values.len(),
                });
            }
            if self.columns[..k].iter().any(|c| c.name == col.name) {
                return Err(Error::MalformedHeader(format!(
                    "duplicate column `{}`",
                    col.name
                )));
            }
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.i_count * self.j_count
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.column_index(name)
            .map(|k| self.columns[k].values.as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// First coordinate column (streamwise `X`).
    pub fn x(&self) -> &[f64] {
        &self.columns[0].values
    }

    /// Second coordinate column (`Y`, or time for Burgers data).
    pub fn y(&self) -> &[f64] {
        &self.columns[1].values
    }

    pub fn coordinate(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => self.x(),
            Axis::Y => self.y(),
        }
    }

    #[inline]
    pub fn point_index(&self, i: usize, j: usize) -> usize {
        j * self.i_count + i
    }
}

/// Coordinate axis of a zone: `X` is the first column, `Y` the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

/// Parsed file contents before a condition has been attached.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub title: Option<String>,
    pub zones: Vec<ZoneGrid>,
}

impl FieldFile {
    pub fn variables(&self) -> Vec<&str> {
        self.zones
            .first()
            .map(|z| z.column_names())
            .unwrap_or_default()
    }

    pub fn n_points(&self) -> usize {
        self.zones.iter().map(ZoneGrid::n_points).sum()
    }

    pub fn to_tecplot(&self) -> String {
        write_tecplot(self.title.as_deref(), &self.zones)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    BackPressure,
    Viscosity,
    ThroatRatio,
}

/// A multi-zone field file together with its scalar branch condition.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub title: Option<String>,
    pub zones: Vec<ZoneGrid>,
    pub condition: f64,
    pub condition_kind: ConditionKind,
    pub source_path: String,
}

impl CaseRecord {
    pub fn new(
        file: FieldFile,
        condition: f64,
        condition_kind: ConditionKind,
        source_path: impl Into<String>,
    ) -> Result<Self> {
        if !condition.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "condition must be finite, got {condition}"
            )));
        }
        if file.zones.is_empty() {
            return Err(Error::MalformedHeader("no zones".into()));
        }
        Ok(CaseRecord {
            title: file.title,
            zones: file.zones,
            condition,
            condition_kind,
            source_path: source_path.into(),
        })
    }

    pub fn n_points(&self) -> usize {
        self.zones.iter().map(ZoneGrid::n_points).sum()
    }

    /// Concatenation of a named column over all zones.
    pub fn gather(&self, name: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_points());
        for z in &self.zones {
            out.extend_from_slice(z.column(name)?);
        }
        Ok(out)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.zones.iter().all(|z| z.column_index(name).is_some())
    }

    pub fn to_tecplot(&self) -> String {
        write_tecplot(self.title.as_deref(), &self.zones)
    }

    pub fn to_field_file(&self) -> FieldFile {
        FieldFile {
            title: self.title.clone(),
            zones: self.zones.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

fn is_data_line(line: &str) -> bool {
    matches!(
        line.trim_start().chars().next(),
        Some(c) if c.is_ascii_digit() || matches!(c, '-' | '+' | '.')
    )
}

fn keyword(line: &str) -> Option<String> {
    let t = line.trim_start();
    let end = t
        .find(|c: char| !c.is_ascii_alphabetic())
        .unwrap_or(t.len());
    if end == 0 {
        None
    } else {
        Some(t[..end].to_ascii_uppercase())
    }
}

fn after_equals(line: &str) -> &str {
    line.find('=').map(|p| &line[p + 1..]).unwrap_or("")
}

fn parse_variable_names(spec: &str, out: &mut Vec<String>) {
    let mut chars = spec.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c == '"' {
            chars.next();
            let name: String = chars.by_ref().take_while(|&c| c != '"').collect();
            out.push(name);
        } else if c.is_whitespace() || c == ',' {
            chars.next();
        } else {
            let mut name = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() || c == ',' {
                    break;
                }
                name.push(c);
                chars.next();
            }
            out.push(name);
        }
    }
}

#[derive(Default)]
struct ZoneHeader {
    title: Option<String>,
    i: Option<usize>,
    j: Option<usize>,
    k: Option<usize>,
    packing: Option<String>,
}

/// Splits `KEY=VALUE` pairs; values may be quoted and pairs are separated by
/// commas and/or whitespace.
fn zone_pairs(text: &str) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == ',');
        let Some(eq) = rest.find('=') else { break };
        let key = rest[..eq].trim().to_ascii_uppercase();
        let mut value_part = rest[eq + 1..].trim_start();
        let value;
        if let Some(stripped) = value_part.strip_prefix('"') {
            let close = stripped.find('"').unwrap_or(stripped.len());
            value = stripped[..close].to_string();
            value_part = stripped.get(close + 1..).unwrap_or("");
        } else if value_part.starts_with('(') {
            let close = value_part.find(')').map(|p| p + 1).unwrap_or(value_part.len());
            value = value_part[..close].to_string();
            value_part = &value_part[close..];
        } else {
            let end = value_part
                .find(|c: char| c.is_whitespace() || c == ',')
                .unwrap_or(value_part.len());
            value = value_part[..end].to_string();
            value_part = &value_part[end..];
        }
        pairs.push((key, value));
        rest = value_part;
    }
    pairs
}

fn apply_zone_pairs(header: &mut ZoneHeader, text: &str, line_no: usize) -> Result<()> {
    let dim = |v: &str| {
        v.trim().parse::<usize>().map_err(|_| {
            Error::MalformedHeader(format!("line {line_no}: bad zone dimension `{v}`"))
        })
    };
    for (key, value) in zone_pairs(text) {
        match key.as_str() {
            "T" => header.title = Some(value),
            "I" => header.i = Some(dim(&value)?),
            "J" => header.j = Some(dim(&value)?),
            "K" => header.k = Some(dim(&value)?),
            "F" | "DATAPACKING" => header.packing = Some(value.to_ascii_uppercase()),
            _ => {}
        }
    }
    Ok(())
}

fn parse_number(token: &str) -> Option<f64> {
    token.parse::<f64>().ok().or_else(|| {
        // Fortran-style exponents: 1.0D+00
        if token.contains(['D', 'd']) {
            token.replace(['D', 'd'], "E").parse::<f64>().ok()
        } else {
            None
        }
    })
}

/// Parses a Tecplot ASCII POINT file.
pub fn parse_tecplot(text: &str) -> Result<FieldFile> {
    let lines: Vec<&str> = text.lines().collect();
    let mut title = None;
    let mut variables: Option<Vec<String>> = None;
    let mut zones = Vec::new();
    let mut idx = 0;

    while idx < lines.len() {
        let line = lines[idx];
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            idx += 1;
            continue;
        }
        match keyword(trimmed).as_deref() {
            Some("TITLE") => {
                let v = after_equals(trimmed).trim().trim_matches('"');
                title = Some(v.to_string());
                idx += 1;
            }
            Some("VARIABLES") => {
                let mut names = Vec::new();
                parse_variable_names(after_equals(trimmed), &mut names);
                idx += 1;
                // Quoted names may continue on following lines.
                while idx < lines.len() && lines[idx].trim_start().starts_with('"') {
                    parse_variable_names(lines[idx], &mut names);
                    idx += 1;
                }
                if names.is_empty() {
                    return Err(Error::MalformedHeader("empty VARIABLES list".into()));
                }
                variables = Some(names);
            }
            Some("ZONE") => {
                let vars = variables.as_ref().ok_or_else(|| {
                    Error::MalformedHeader(format!("line {}: ZONE before VARIABLES", idx + 1))
                })?;
                let mut header = ZoneHeader::default();
                apply_zone_pairs(&mut header, &trimmed[4..], idx + 1)?;
                idx += 1;
                while idx < lines.len() {
                    let l = lines[idx].trim();
                    if l.is_empty() || is_data_line(l) || keyword(l).as_deref() == Some("ZONE") {
                        break;
                    }
                    if l.contains('=') {
                        apply_zone_pairs(&mut header, l, idx + 1)?;
                    }
                    idx += 1;
                }
                let zone_no = zones.len();
                let (Some(i_count), j) = (header.i, header.j) else {
                    return Err(Error::MalformedHeader(format!(
                        "zone {zone_no}: missing I dimension"
                    )));
                };
                let j_count = j.unwrap_or(1);
                if header.k.is_some_and(|k| k > 1) {
                    return Err(Error::MalformedHeader(format!(
                        "zone {zone_no}: K > 1 is not supported"
                    )));
                }
                match header.packing.as_deref() {
                    Some("POINT") => {}
                    Some(other) => {
                        return Err(Error::MalformedHeader(format!(
                            "zone {zone_no}: unsupported packing `{other}`"
                        )))
                    }
                    None => {
                        return Err(Error::MalformedHeader(format!(
                            "zone {zone_no}: missing F=POINT / DATAPACKING=POINT"
                        )))
                    }
                }

                let nvars = vars.len();
                let expected = i_count * j_count;
                let mut values = Vec::with_capacity(expected * nvars);
                while idx < lines.len() {
                    let l = lines[idx].trim();
                    if keyword(l).is_some_and(|k| k == "ZONE" || k == "TEXT" || k == "GEOMETRY")
                    {
                        break;
                    }
                    if !l.is_empty() && !l.starts_with('#') {
                        for token in l.split(|c: char| c.is_whitespace() || c == ',') {
                            if token.is_empty() {
                                continue;
                            }
                            let v = parse_number(token).ok_or_else(|| Error::NonNumericToken {
                                line: idx + 1,
                                token: token.to_string(),
                            })?;
                            values.push(v);
                        }
                    }
                    idx += 1;
                }
                if values.len() != expected * nvars {
                    return Err(Error::CountMismatch {
                        zone: zone_no,
                        expected,
                        found: values.len() / nvars,
                    });
                }
                let mut columns: Vec<Column> = vars
                    .iter()
                    .map(|name| Column {
                        name: name.clone(),
                        values: Vec::with_capacity(expected),
                    })
                    .collect();
                for row in values.chunks_exact(nvars) {
                    for (col, &v) in columns.iter_mut().zip(row) {
                        col.values.push(v);
                    }
                }
                let mut zone = ZoneGrid::new(i_count, j_count, columns)?;
                zone.title = header.title;
                zones.push(zone);
            }
            _ => {
                if variables.is_none() {
                    return Err(Error::MalformedHeader(format!(
                        "line {}: expected TITLE, VARIABLES or ZONE",
                        idx + 1
                    )));
                }
                return Err(Error::MalformedHeader(format!(
                    "line {}: data outside of a ZONE",
                    idx + 1
                )));
            }
        }
    }

    if variables.is_none() {
        return Err(Error::MalformedHeader("missing VARIABLES declaration".into()));
    }
    if zones.is_empty() {
        return Err(Error::MalformedHeader("no ZONE header".into()));
    }
    Ok(FieldFile { title, zones })
}

pub fn read_tecplot(path: &Path) -> Result<FieldFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tecplot(&text)
}

// ---------------------------------------------------------------------------
// Writing

/// Shortest decimal that parses back to the same `f64`.
pub fn format_number(v: f64, out: &mut String) {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        let _ = write!(out, "{v}");
    } else {
        let _ = write!(out, "{v:e}");
    }
}

/// Serializes zones as Tecplot ASCII with `F=POINT` headers.
pub fn write_tecplot(title: Option<&str>, zones: &[ZoneGrid]) -> String {
    let mut out = String::new();
    if let Some(t) = title {
        let _ = writeln!(out, "TITLE = \"{t}\"");
    }
    if let Some(first) = zones.first() {
        out.push_str("VARIABLES =");
        for name in first.column_names() {
            let _ = write!(out, " \"{name}\"");
        }
        out.push('\n');
    }
    for zone in zones {
        out.push_str("ZONE ");
        if let Some(t) = &zone.title {
            let _ = write!(out, "T=\"{t}\", ");
        }
        let _ = writeln!(out, "I={}, J={}, F=POINT", zone.i_count, zone.j_count);
        for p in 0..zone.n_points() {
            for (k, col) in zone.columns.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                format_number(col.values[p], &mut out);
            }
            out.push('\n');
        }
    }
    out
}

/// A predicted channel paired with the name of the truth column it replaces.
#[derive(Debug, Clone, Copy)]
pub struct PredictedChannel<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

fn check_len(what: &str, values: &[f64], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(Error::LengthMismatch {
            what: what.to_string(),
            expected,
            found: values.len(),
        });
    }
    Ok(())
}

/// Replaces truth columns by predictions and appends pointwise error columns.
///
/// For every predicted channel `C` the columns `Error_C = |t - p| / max(|t|, eps)`
/// are appended first, followed by `ErrorC_L2 = (t - p)^2 / max(t^2, eps^2)`.
/// Additional columns (for example MC-dropout standard deviations) are
/// appended last. All arrays run over the concatenated zone points.
pub fn prediction_zones(
    case: &CaseRecord,
    predictions: &[PredictedChannel<'_>],
    extra: &[PredictedChannel<'_>],
    epsilon: f64,
) -> Result<Vec<ZoneGrid>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let total = case.n_points();
    for p in predictions.iter().chain(extra) {
        check_len(&format!("prediction `{}`", p.name), p.values, total)?;
    }
    let eps_sq = epsilon * epsilon;
    let mut zones = Vec::with_capacity(case.zones.len());
    let mut offset = 0;
    for zone in &case.zones {
        let n = zone.n_points();
        let mut out = zone.clone();
        let mut abs_cols = Vec::new();
        let mut sq_cols = Vec::new();
        for p in predictions {
            let k = zone
                .column_index(p.name)
                .ok_or_else(|| Error::MissingColumn(p.name.to_string()))?;
            let truth = &zone.columns[k].values;
            let pred = &p.values[offset..offset + n];
            let mut abs_err = Vec::with_capacity(n);
            let mut sq_err = Vec::with_capacity(n);
            for (&t, &q) in truth.iter().zip(pred) {
                let r = t - q;
                abs_err.push(r.abs() / t.abs().max(epsilon));
                sq_err.push(r * r / (t * t).max(eps_sq));
            }
            out.columns[k].values = pred.to_vec();
            abs_cols.push(Column {
                name: format!("Error_{}", p.name),
                values: abs_err,
            });
            sq_cols.push(Column {
                name: format!("Error{}_L2", p.name),
                values: sq_err,
            });
        }
        out.columns.extend(abs_cols);
        out.columns.extend(sq_cols);
        for e in extra {
            out.columns.push(Column {
                name: e.name.to_string(),
                values: e.values[offset..offset + n].to_vec(),
            });
        }
        out.validate()?;
        zones.push(out);
        offset += n;
    }
    Ok(zones)
}

/// Prediction file for a `(U, V)` case.
pub fn write_prediction_file(
    case: &CaseRecord,
    pred_u: &[f64],
    pred_v: &[f64],
    epsilon: f64,
) -> Result<String> {
    let zones = prediction_zones(
        case,
        &[
            PredictedChannel {
                name: "U",
                values: pred_u,
            },
            PredictedChannel {
                name: "V",
                values: pred_v,
            },
        ],
        &[],
        epsilon,
    )?;
    Ok(write_tecplot(case.title.as_deref(), &zones))
}

// ---------------------------------------------------------------------------
// Grid spacing

fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median spacing along `axis`, taken over rows of constant other-axis
/// coordinate. Each row contributes the diffs of its sorted unique
/// coordinates; the result is floored at `min_spacing`.
pub fn median_spacing(zones: &[&ZoneGrid], axis: Axis, min_spacing: f64) -> Result<f64> {
    let mut rows: HashMap<u64, Vec<f64>> = HashMap::new();
    for zone in zones {
        let along = zone.coordinate(axis);
        let across = zone.coordinate(axis.other());
        for (&a, &c) in along.iter().zip(across) {
            // -0.0 and 0.0 share a row
            let key = if c == 0.0 { 0 } else { c.to_bits() };
            rows.entry(key).or_default().push(a);
        }
    }
    let mut diffs = Vec::new();
    for row in rows.values_mut() {
        row.sort_by(f64::total_cmp);
        row.dedup();
        diffs.extend(row.windows(2).map(|w| w[1] - w[0]));
    }
    if diffs.is_empty() {
        return Err(Error::DegenerateGrid(axis.label()));
    }
    Ok(median_in_place(&mut diffs).max(min_spacing))
}

/// Median streamwise spacing of a zone, floored at [`DX_MIN_DEFAULT`].
pub fn median_row_spacing(zone: &ZoneGrid) -> Result<f64> {
    median_spacing(&[zone], Axis::X, DX_MIN_DEFAULT)
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub condition: f64,
    pub condition_kind: ConditionKind,
    #[serde(default, skip_serializing_if = "is_train")]
    pub split: Split,
}

fn is_train(s: &Split) -> bool {
    *s == Split::Train
}

/// File path to condition map. Relative paths resolve against the manifest's
/// own directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn resolve(manifest_path: &Path, entry_path: &str) -> PathBuf {
        let p = Path::new(entry_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(p)
        }
    }

    /// Loads every case of the given split, ordered by manifest key.
    pub fn load_cases(&self, manifest_path: &Path, split: Split) -> Result<Vec<CaseRecord>> {
        self.entries
            .iter()
            .filter(|(_, e)| e.split == split)
            .map(|(key, entry)| {
                let path = Self::resolve(manifest_path, key);
                let file = read_tecplot(&path)?;
                CaseRecord::new(
                    file,
                    entry.condition,
                    entry.condition_kind,
                    path.to_string_lossy(),
                )
            })
            .collect()
    }
}

/// Extracts a condition from a file name using a `{}` placeholder pattern,
/// e.g. `nozzle_PR{}.dat` matches `nozzle_PR25.dat` and yields `25`.
pub fn condition_from_filename(path: &Path, pattern: &str) -> Option<f64> {
    let name = path.file_name()?.to_str()?;
    let (prefix, suffix) = pattern.split_once("{}")?;
    let middle = name.strip_prefix(prefix)?.strip_suffix(suffix)?;
    middle.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Condition for a file: the manifest entry when present, otherwise the
/// filename pattern.
pub fn resolve_condition(
    path: &Path,
    manifest_entry: Option<&ManifestEntry>,
    pattern: Option<&str>,
) -> Option<f64> {
    manifest_entry
        .map(|e| e.condition)
        .or_else(|| pattern.and_then(|p| condition_from_filename(path, p)))
}
