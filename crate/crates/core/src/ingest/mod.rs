//! ESS-style respondent microdata: CSV ingestion with missing-code policy,
//! left-right rescaling, wave filtering, stratification and macroregion
//! mapping.
//!
//! Ingestion is single-pass streaming with constant memory per row. CSV is
//! the sole input format; native survey files are converted externally.

pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::questionnaire::Questionnaire;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {err}")]
    Io { path: String, err: String },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("left-right value {0} outside 0..10")]
    LrOutOfRange(i64),
    #[error("empty wave set")]
    EmptyWaveSet,
    #[error("country \"{0}\" absent from region map")]
    UnmappedCountry(String),
    #[error("macroregion stratification requested without a region map")]
    MissingRegionMap,
    #[error("invalid synthetic population spec: {0}")]
    BadPopulationSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    Missing,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
            Gender::Missing => "",
        }
    }
}

/// One survey respondent. Sentinel answer codes are already converted to
/// missing: every code present in `answers` lies within its item's scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentRecord {
    pub respondent_id: String,
    /// ISO 3166 alpha-2.
    pub country: String,
    pub wave: u8,
    pub gender: Gender,
    /// ISCED level 1..7 when known.
    pub educ_isced: Option<u8>,
    /// Raw left-right self-placement, 0..10.
    pub lr_raw: Option<u8>,
    pub answers: BTreeMap<String, i32>,
}

impl RespondentRecord {
    /// Graduate means ISCED VI or VII (tertiary education).
    pub fn graduate(&self) -> Option<bool> {
        self.educ_isced.map(|e| e >= 6)
    }
}

/// Row accounting for one ingestion pass: raw rows = kept + dropped + skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub raw_rows: usize,
    pub kept: usize,
    pub dropped_no_usable_fields: usize,
    pub skipped_unparseable: usize,
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn conserves(&self) -> bool {
        self.raw_rows == self.kept + self.dropped_no_usable_fields + self.skipped_unparseable
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<RespondentRecord>,
    pub provenance: Provenance,
}

pub const MACROREGIONS: [Macroregion; 4] = [
    Macroregion::EasternEurope,
    Macroregion::MedSouth,
    Macroregion::CentralNorthern,
    Macroregion::ScandinaviaIceland,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Macroregion {
    EasternEurope,
    MedSouth,
    CentralNorthern,
    ScandinaviaIceland,
}

impl Macroregion {
    pub fn as_str(self) -> &'static str {
        match self {
            Macroregion::EasternEurope => "EasternEurope",
            Macroregion::MedSouth => "MedSouth",
            Macroregion::CentralNorthern => "CentralNorthern",
            Macroregion::ScandinaviaIceland => "ScandinaviaIceland",
        }
    }

    pub fn parse(s: &str) -> Option<Macroregion> {
        MACROREGIONS.iter().copied().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for Macroregion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Total mapping country -> macroregion over the dataset's countries.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    map: BTreeMap<String, Macroregion>,
}

impl RegionMap {
    pub fn new(map: BTreeMap<String, Macroregion>) -> RegionMap {
        RegionMap { map }
    }

    /// Default assignment covering the 32 ESS countries. Editable via the
    /// region-map config for users who prefer a different grouping.
    pub fn default_ess32() -> RegionMap {
        use Macroregion::*;
        let entries: [(&str, Macroregion); 32] = [
            ("BG", EasternEurope),
            ("CZ", EasternEurope),
            ("EE", EasternEurope),
            ("HR", EasternEurope),
            ("HU", EasternEurope),
            ("LT", EasternEurope),
            ("LV", EasternEurope),
            ("ME", EasternEurope),
            ("MK", EasternEurope),
            ("PL", EasternEurope),
            ("RO", EasternEurope),
            ("SI", EasternEurope),
            ("SK", EasternEurope),
            ("CY", MedSouth),
            ("ES", MedSouth),
            ("GR", MedSouth),
            ("IL", MedSouth),
            ("IT", MedSouth),
            ("PT", MedSouth),
            ("AT", CentralNorthern),
            ("BE", CentralNorthern),
            ("CH", CentralNorthern),
            ("DE", CentralNorthern),
            ("FR", CentralNorthern),
            ("GB", CentralNorthern),
            ("IE", CentralNorthern),
            ("NL", CentralNorthern),
            ("DK", ScandinaviaIceland),
            ("FI", ScandinaviaIceland),
            ("IS", ScandinaviaIceland),
            ("NO", ScandinaviaIceland),
            ("SE", ScandinaviaIceland),
        ];
        RegionMap {
            map: entries
                .iter()
                .map(|(c, m)| (c.to_string(), *m))
                .collect(),
        }
    }

    pub fn lookup(&self, country: &str) -> Result<Macroregion, IngestError> {
        self.map
            .get(country)
            .copied()
            .ok_or_else(|| IngestError::UnmappedCountry(country.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<RegionMap, IngestError> {
        #[derive(Deserialize)]
        struct Doc {
            regions: BTreeMap<String, String>,
        }
        let doc: Doc = toml::from_str(text)
            .map_err(|e| IngestError::HeaderMismatch(format!("region map: {e}")))?;
        let mut map = BTreeMap::new();
        for (country, region) in doc.regions {
            let m = Macroregion::parse(&region).ok_or_else(|| {
                IngestError::HeaderMismatch(format!("region map: unknown macroregion \"{region}\""))
            })?;
            map.insert(country, m);
        }
        Ok(RegionMap { map })
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::from("[regions]\n");
        for (c, m) in &self.map {
            out.push_str(&format!("{c} = \"{m}\"\n"));
        }
        out
    }
}

/// Fixed leading columns of the respondent CSV schema; item columns follow,
/// one per item id, plus an optional unused `weight` hook.
pub const FIXED_COLUMNS: [&str; 7] = [
    "respondent_id",
    "country",
    "wave",
    "year",
    "gender",
    "educ_isced",
    "lrscale",
];

/// Streams a respondent CSV, applying the missing-code policy: per-item
/// sentinels from each scale (7/8/9 on short scales, 77/88/99 on 0-10
/// scales) and empty/"NA" cells become missing; rows with no usable fields
/// (left-right missing and every answer missing) are dropped and counted;
/// unparseable rows are skipped and counted.
pub fn load_dataset(path: &Path, questionnaire: &Questionnaire) -> Result<Dataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            err: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            err: e.to_string(),
        })?
        .clone();

    let mut col_idx: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        col_idx.insert(h, i);
    }
    for col in FIXED_COLUMNS {
        if !col_idx.contains_key(col) {
            return Err(IngestError::HeaderMismatch(format!(
                "required column \"{col}\" missing"
            )));
        }
    }
    let known_items: BTreeSet<&str> = questionnaire.items.iter().map(|i| i.id.as_str()).collect();
    let mut item_cols: Vec<(String, usize)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if FIXED_COLUMNS.contains(&h) || h == "weight" {
            continue;
        }
        if known_items.contains(h) {
            item_cols.push((h.to_string(), i));
        } else {
            return Err(IngestError::HeaderMismatch(format!(
                "unknown column \"{h}\""
            )));
        }
    }

    let lr_missing = &questionnaire.lr_item.scale.missing_codes;
    let mut provenance = Provenance {
        source: path.display().to_string(),
        ..Provenance::default()
    };
    let mut records = Vec::new();

    let idx = |name: &str| col_idx[name];
    for row in reader.records() {
        provenance.raw_rows += 1;
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                provenance.skipped_unparseable += 1;
                continue;
            }
        };
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let wave: u8 = match field(idx("wave")).parse() {
            Ok(w) if (1..=10).contains(&w) => w,
            _ => {
                provenance.skipped_unparseable += 1;
                continue;
            }
        };
        let gender = match field(idx("gender")) {
            "M" | "m" => Gender::Male,
            "F" | "f" => Gender::Female,
            "" | "NA" => Gender::Missing,
            _ => {
                provenance.skipped_unparseable += 1;
                continue;
            }
        };
        let educ_isced = match parse_optional_int(field(idx("educ_isced"))) {
            Some(Some(v)) if (1..=7).contains(&v) => Some(v as u8),
            Some(Some(_)) | Some(None) => None,
            None => {
                provenance.skipped_unparseable += 1;
                continue;
            }
        };
        let lr_raw = match parse_optional_int(field(idx("lrscale"))) {
            Some(Some(v)) if (0..=10).contains(&v) && !lr_missing.contains(&(v as i32)) => {
                Some(v as u8)
            }
            Some(Some(_)) | Some(None) => None,
            None => {
                provenance.skipped_unparseable += 1;
                continue;
            }
        };

        let mut answers = BTreeMap::new();
        let mut row_ok = true;
        for (item_id, col) in &item_cols {
            match parse_optional_int(field(*col)) {
                Some(Some(v)) => {
                    let scale = &questionnaire.item(item_id).expect("known item").scale;
                    let v = v as i32;
                    if scale.contains(v) && !scale.missing_codes.contains(&v) {
                        answers.insert(item_id.clone(), v);
                    }
                    // sentinel or out-of-range codes become missing
                }
                Some(None) => {}
                None => {
                    row_ok = false;
                    break;
                }
            }
        }
        if !row_ok {
            provenance.skipped_unparseable += 1;
            continue;
        }
        if lr_raw.is_none() && answers.is_empty() {
            provenance.dropped_no_usable_fields += 1;
            continue;
        }
        provenance.kept += 1;
        records.push(RespondentRecord {
            respondent_id: field(idx("respondent_id")).to_string(),
            country: field(idx("country")).to_string(),
            wave,
            gender,
            educ_isced,
            lr_raw,
            answers,
        });
    }
    debug_assert!(provenance.conserves());
    Ok(Dataset {
        records,
        provenance,
    })
}

/// `Some(Some(v))` for an integer, `Some(None)` for empty/NA, `None` for garbage.
fn parse_optional_int(s: &str) -> Option<Option<i64>> {
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Some(None);
    }
    s.parse::<i64>().ok().map(Some)
}

/// Rescales the 0..10 left-right placement to 1..11 (center = 6).
pub fn rescale_lr(lr_raw: i64) -> Result<i64, IngestError> {
    if !(0..=10).contains(&lr_raw) {
        return Err(IngestError::LrOutOfRange(lr_raw));
    }
    Ok(lr_raw + 1)
}

/// Keeps only records whose wave is in the set. The wave set must be
/// non-empty and within 1..10.
pub fn filter_waves(dataset: &Dataset, waves: &BTreeSet<u8>) -> Result<Dataset, IngestError> {
    if waves.is_empty() {
        return Err(IngestError::EmptyWaveSet);
    }
    let records: Vec<RespondentRecord> = dataset
        .records
        .iter()
        .filter(|r| waves.contains(&r.wave))
        .cloned()
        .collect();
    let mut provenance = dataset.provenance.clone();
    provenance.notes.push(format!(
        "wave filter {:?}: {} of {} records retained",
        waves,
        records.len(),
        dataset.records.len()
    ));
    Ok(Dataset {
        records,
        provenance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StratumKey {
    Country,
    Gender,
    Graduate,
    Macroregion,
}

impl StratumKey {
    pub fn parse(s: &str) -> Option<StratumKey> {
        match s {
            "country" => Some(StratumKey::Country),
            "gender" => Some(StratumKey::Gender),
            "graduate" => Some(StratumKey::Graduate),
            "macroregion" => Some(StratumKey::Macroregion),
            _ => None,
        }
    }
}

/// Identifies one stratum; unset fields were not part of the requested keys.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct StratumLabel {
    pub country: Option<String>,
    pub gender: Option<Gender>,
    pub graduate: Option<bool>,
    pub macroregion: Option<Macroregion>,
}

impl fmt::Display for StratumLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(c) = &self.country {
            parts.push(format!("country={c}"));
        }
        if let Some(g) = self.gender {
            parts.push(format!("gender={}", g.as_str()));
        }
        if let Some(gr) = self.graduate {
            parts.push(format!("graduate={}", if gr { "yes" } else { "no" }));
        }
        if let Some(m) = self.macroregion {
            parts.push(format!("macroregion={m}"));
        }
        if parts.is_empty() {
            parts.push("overall".to_string());
        }
        f.write_str(&parts.join(";"))
    }
}

/// Partitions records having all requested keys present into disjoint
/// strata. Graduate means ISCED VI/VII. A region map is required iff
/// macroregion is among the keys.
pub fn stratify(
    dataset: &Dataset,
    keys: &BTreeSet<StratumKey>,
    region_map: Option<&RegionMap>,
) -> Result<Vec<(StratumLabel, Dataset)>, IngestError> {
    if keys.contains(&StratumKey::Macroregion) && region_map.is_none() {
        return Err(IngestError::MissingRegionMap);
    }
    let mut strata: BTreeMap<StratumLabel, Vec<RespondentRecord>> = BTreeMap::new();
    for rec in &dataset.records {
        let mut label = StratumLabel::default();
        let mut eligible = true;
        for key in keys {
            match key {
                StratumKey::Country => {
                    if rec.country.is_empty() {
                        eligible = false;
                    } else {
                        label.country = Some(rec.country.clone());
                    }
                }
                StratumKey::Gender => match rec.gender {
                    Gender::Missing => eligible = false,
                    g => label.gender = Some(g),
                },
                StratumKey::Graduate => match rec.graduate() {
                    None => eligible = false,
                    Some(gr) => label.graduate = Some(gr),
                },
                StratumKey::Macroregion => {
                    if rec.country.is_empty() {
                        eligible = false;
                    } else {
                        label.macroregion =
                            Some(region_map.expect("checked above").lookup(&rec.country)?);
                    }
                }
            }
            if !eligible {
                break;
            }
        }
        if eligible {
            strata.entry(label).or_default().push(rec.clone());
        }
    }
    Ok(strata
        .into_iter()
        .map(|(label, records)| {
            let mut provenance = dataset.provenance.clone();
            provenance
                .notes
                .push(format!("stratum {label}: {} records", records.len()));
            (
                label,
                Dataset {
                    records,
                    provenance,
                },
            )
        })
        .collect())
}
