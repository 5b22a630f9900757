//! Deterministic synthetic respondent populations with a ground-truth
//! sidecar, used for recovery checks and the `simulate` subcommand.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::questionnaire::Questionnaire;

use super::{Dataset, Gender, IngestError, Provenance, RespondentRecord};

/// Answer distribution for one item within one left-right group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnswerDist {
    /// Every respondent answers this code.
    PointMass(i32),
    /// A normal draw rounded to the nearest code and clamped to the scale.
    Discretized { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpecEntry {
    pub item_id: String,
    /// One distribution per raw left-right group 0..10, in order.
    pub per_group: Vec<AnswerDist>,
}

/// Declarative description of a synthetic population. The eleven raw
/// left-right groups 0..10 each get `group_sizes[g]` respondents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub items: Vec<ItemSpecEntry>,
    pub group_sizes: Vec<usize>,
    /// Countries assigned round-robin.
    pub countries: Vec<String>,
    /// Waves assigned round-robin.
    pub waves: Vec<u8>,
    /// When set, every respondent gets this gender; otherwise M/F alternate.
    pub fixed_gender: Option<Gender>,
    /// Prefix for respondent ids, so concatenated populations stay unique.
    pub id_prefix: String,
}

/// Analytic per-item, per-group answer means implied by a spec, written
/// alongside generated data so recovery checks need no re-derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// item id -> raw group 0..10 -> analytic mean of the emitted code.
    pub item_group_means: BTreeMap<String, Vec<f64>>,
    pub group_sizes: Vec<usize>,
}

fn validate_spec(spec: &PopulationSpec, questionnaire: &Questionnaire) -> Result<(), IngestError> {
    if spec.group_sizes.len() != 11 {
        return Err(IngestError::BadPopulationSpec(format!(
            "group_sizes must have 11 entries, got {}",
            spec.group_sizes.len()
        )));
    }
    if spec.countries.is_empty() || spec.waves.is_empty() {
        return Err(IngestError::BadPopulationSpec(
            "countries and waves must be non-empty".to_string(),
        ));
    }
    for entry in &spec.items {
        let item = questionnaire.item(&entry.item_id).ok_or_else(|| {
            IngestError::BadPopulationSpec(format!("unknown item \"{}\"", entry.item_id))
        })?;
        if entry.per_group.len() != 11 {
            return Err(IngestError::BadPopulationSpec(format!(
                "{}: per_group must have 11 entries",
                entry.item_id
            )));
        }
        for dist in &entry.per_group {
            match *dist {
                AnswerDist::PointMass(v) => {
                    if !item.scale.contains(v) || item.scale.missing_codes.contains(&v) {
                        return Err(IngestError::BadPopulationSpec(format!(
                            "{}: point mass {v} outside usable scale codes",
                            entry.item_id
                        )));
                    }
                }
                AnswerDist::Discretized { sd, .. } => {
                    if !(sd > 0.0) || !sd.is_finite() {
                        return Err(IngestError::BadPopulationSpec(format!(
                            "{}: discretized sd must be positive and finite",
                            entry.item_id
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Mean of round(N(mean, sd)) clamped to [min, max], computed analytically
/// from the interval masses of each integer code.
fn discretized_mean(mean: f64, sd: f64, min: i32, max: i32) -> f64 {
    let normal = Normal::new(mean, sd).expect("validated sd");
    let mut total = 0.0;
    for code in min..=max {
        let lo = if code == min {
            0.0
        } else {
            normal.cdf(code as f64 - 0.5)
        };
        let hi = if code == max {
            1.0
        } else {
            normal.cdf(code as f64 + 0.5)
        };
        total += code as f64 * (hi - lo);
    }
    total
}

fn sample_code<R: Rng>(dist: AnswerDist, min: i32, max: i32, rng: &mut R) -> i32 {
    match dist {
        AnswerDist::PointMass(v) => v,
        AnswerDist::Discretized { mean, sd } => {
            // Box-Muller on two uniform draws; ChaCha makes this reproducible
            // across platforms, unlike a library sampler whose algorithm may
            // change between releases.
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            let v = (mean + sd * z).round() as i32;
            v.clamp(min, max)
        }
    }
}

/// Generates a deterministic population: same spec and seed give identical
/// records. Returns the dataset and the analytic ground truth.
pub fn generate_synthetic_population(
    spec: &PopulationSpec,
    questionnaire: &Questionnaire,
    seed: u64,
) -> Result<(Dataset, GroundTruth), IngestError> {
    validate_spec(spec, questionnaire)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut serial = 0usize;
    for (group, &size) in spec.group_sizes.iter().enumerate() {
        for _ in 0..size {
            let gender = spec.fixed_gender.unwrap_or(if serial % 2 == 0 {
                Gender::Male
            } else {
                Gender::Female
            });
            let mut answers = BTreeMap::new();
            for entry in &spec.items {
                let scale = &questionnaire.item(&entry.item_id).expect("validated").scale;
                let code = sample_code(
                    entry.per_group[group],
                    scale.min_code,
                    scale.max_code,
                    &mut rng,
                );
                answers.insert(entry.item_id.clone(), code);
            }
            records.push(RespondentRecord {
                respondent_id: format!("{}{:07}", spec.id_prefix, serial),
                country: spec.countries[serial % spec.countries.len()].clone(),
                wave: spec.waves[serial % spec.waves.len()],
                gender,
                educ_isced: Some((serial % 7 + 1) as u8),
                lr_raw: Some(group as u8),
                answers,
            });
            serial += 1;
        }
    }
    let mut item_group_means = BTreeMap::new();
    for entry in &spec.items {
        let scale = &questionnaire.item(&entry.item_id).expect("validated").scale;
        let means = entry
            .per_group
            .iter()
            .map(|dist| match *dist {
                AnswerDist::PointMass(v) => v as f64,
                AnswerDist::Discretized { mean, sd } => {
                    discretized_mean(mean, sd, scale.min_code, scale.max_code)
                }
            })
            .collect();
        item_group_means.insert(entry.item_id.clone(), means);
    }
    let dataset = Dataset {
        records,
        provenance: Provenance {
            source: format!("synthetic(seed={seed})"),
            raw_rows: serial,
            kept: serial,
            ..Provenance::default()
        },
    };
    Ok((
        dataset,
        GroundTruth {
            item_group_means,
            group_sizes: spec.group_sizes.clone(),
        },
    ))
}

/// Writes a dataset back out in the ingestion CSV schema.
pub fn write_dataset_csv(
    dataset: &Dataset,
    questionnaire: &Questionnaire,
    path: &std::path::Path,
) -> Result<(), IngestError> {
    let io_err = |e: std::io::Error| IngestError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    })?;
    let mut header: Vec<String> = super::FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for item in &questionnaire.items {
        header.push(item.id.clone());
    }
    writer
        .write_record(&header)
        .map_err(|e| io_err(std::io::Error::other(e)))?;
    for rec in &dataset.records {
        let mut row = vec![
            rec.respondent_id.clone(),
            rec.country.clone(),
            rec.wave.to_string(),
            String::new(),
            rec.gender.as_str().to_string(),
            rec.educ_isced.map(|e| e.to_string()).unwrap_or_default(),
            rec.lr_raw.map(|v| v.to_string()).unwrap_or_default(),
        ];
        for item in &questionnaire.items {
            row.push(
                rec.answers
                    .get(&item.id)
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        writer
            .write_record(&row)
            .map_err(|e| io_err(std::io::Error::other(e)))?;
    }
    writer.flush().map_err(io_err)?;
    Ok(())
}
