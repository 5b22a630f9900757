//! Bias estimation: per-left-right-group answer cells over the respondent
//! data, the model's unit answer per item, confidence-interval matching with
//! a nearest-mean fallback, and the resulting self-perception and absolute
//! bias records.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Dataset;
use crate::questionnaire::{QuestionItem, Questionnaire, TopicClass};
use crate::stats::{compensated_sum, summarize, AnswerStats};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("{item}: empty model answer batch")]
    EmptyBatch { item: String },
    #[error("{item}: no usable respondent cells (all below the minimum cell size)")]
    NoUsableCells { item: String },
    #[error("{item}: strict matching found no group interval containing unit value {unit}")]
    StrictNoMatch { item: String, unit: i32 },
    #[error("stats: {0}")]
    Stats(#[from] crate::stats::StatsError),
}

/// How the repeated-sample batch collapses to a single unit answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitPolicy {
    /// Batch mean rounded to the nearest code, halves away from the scale
    /// center.
    Round,
    /// Most frequent answer; ties resolve to the lower code.
    Mode,
}

impl UnitPolicy {
    pub fn parse(s: &str) -> Option<UnitPolicy> {
        match s {
            "round" => Some(UnitPolicy::Round),
            "mode" => Some(UnitPolicy::Mode),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UnitPolicy::Round => "round",
            UnitPolicy::Mode => "mode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Cells with fewer respondents than this are kept in the table but
    /// never matched.
    pub min_cell_n: usize,
    pub ci_level: f64,
    /// Scale center of the rescaled 1..11 left-right axis.
    pub center: f64,
    pub unit_policy: UnitPolicy,
    /// Fail instead of falling back to the nearest-mean group.
    pub strict_match: bool,
}

impl Default for EstimatorConfig {
    fn default() -> EstimatorConfig {
        EstimatorConfig {
            min_cell_n: 30,
            ci_level: 0.95,
            center: 6.0,
            unit_policy: UnitPolicy::Round,
            strict_match: false,
        }
    }
}

/// One left-right group's answer distribution for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCell {
    /// Raw group index 0..10.
    pub group_raw: u8,
    /// Rescaled index 1..11.
    pub group_rescaled: u8,
    pub n: usize,
    /// Absent when fewer than two respondents answered.
    pub stats: Option<AnswerStats>,
    pub usable: bool,
}

/// Eleven cells (raw groups 0..10) for one item. Respondents without a
/// left-right placement or without an answer to the item contribute nothing.
pub fn group_stats(
    dataset: &Dataset,
    item_id: &str,
    min_cell_n: usize,
    ci_level: f64,
) -> Result<Vec<GroupCell>, EstimatorError> {
    let mut cells = Vec::with_capacity(11);
    for group in 0u8..=10 {
        let values: Vec<f64> = dataset
            .records
            .iter()
            .filter(|r| r.lr_raw == Some(group))
            .filter_map(|r| r.answers.get(item_id).map(|&v| v as f64))
            .collect();
        let stats = if values.len() >= 2 {
            Some(summarize(&values, ci_level)?)
        } else {
            None
        };
        cells.push(GroupCell {
            group_raw: group,
            group_rescaled: group + 1,
            n: values.len(),
            usable: values.len() >= min_cell_n && stats.is_some(),
            stats,
        });
    }
    Ok(cells)
}

/// Rounds `mean` to the nearest integer, resolving exact halves away from
/// the scale center rather than away from zero.
pub fn round_away_from_center(mean: f64, center: f64) -> i32 {
    let floor = mean.floor();
    let frac = mean - floor;
    if (frac - 0.5).abs() < 1e-9 {
        if mean >= center {
            floor as i32 + 1
        } else {
            floor as i32
        }
    } else {
        mean.round() as i32
    }
}

/// Collapses a batch of parsed answers to the unit value under a policy.
pub fn unit_value(
    values: &[f64],
    scale_center: f64,
    policy: UnitPolicy,
    item_id: &str,
) -> Result<i32, EstimatorError> {
    if values.is_empty() {
        return Err(EstimatorError::EmptyBatch {
            item: item_id.to_string(),
        });
    }
    match policy {
        UnitPolicy::Round => {
            let mean = compensated_sum(values.iter().copied()) / values.len() as f64;
            Ok(round_away_from_center(mean, scale_center))
        }
        UnitPolicy::Mode => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut best = sorted[0];
            let mut best_count = 0usize;
            let mut i = 0;
            while i < sorted.len() {
                let mut j = i;
                while j < sorted.len() && sorted[j] == sorted[i] {
                    j += 1;
                }
                // strict > keeps the lower code on ties because of the sort
                if j - i > best_count {
                    best_count = j - i;
                    best = sorted[i];
                }
                i = j;
            }
            Ok(round_away_from_center(best, scale_center))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// Raw indices of matched groups, ascending.
    pub matched_groups: Vec<u8>,
    /// True when no interval contained the unit value and the nearest-mean
    /// group was used instead.
    pub fallback: bool,
    /// Respondent-count-weighted mean of the rescaled matched group indices.
    pub peer_placement: f64,
}

/// Matches the unit value to every usable cell whose confidence interval
/// contains it. With no such cell, strict mode fails; otherwise the usable
/// cell with the nearest mean is taken (ties to the lower, more-left group)
/// and the outcome is flagged.
pub fn match_groups(
    cells: &[GroupCell],
    unit: i32,
    config: &EstimatorConfig,
    item_id: &str,
) -> Result<MatchOutcome, EstimatorError> {
    let usable: Vec<&GroupCell> = cells.iter().filter(|c| c.usable).collect();
    if usable.is_empty() {
        return Err(EstimatorError::NoUsableCells {
            item: item_id.to_string(),
        });
    }
    let u = unit as f64;
    let mut matched: Vec<&GroupCell> = usable
        .iter()
        .copied()
        .filter(|c| {
            let s = c.stats.as_ref().expect("usable implies stats");
            s.ci_low <= u && u <= s.ci_high
        })
        .collect();
    let mut fallback = false;
    if matched.is_empty() {
        if config.strict_match {
            return Err(EstimatorError::StrictNoMatch {
                item: item_id.to_string(),
                unit,
            });
        }
        fallback = true;
        let nearest = usable
            .iter()
            .copied()
            .min_by(|a, b| {
                let da = (a.stats.as_ref().unwrap().mean - u).abs();
                let db = (b.stats.as_ref().unwrap().mean - u).abs();
                // ascending group order in `cells` makes min_by keep the
                // lower group on distance ties
                da.partial_cmp(&db).expect("finite distances")
            })
            .expect("non-empty usable set");
        matched.push(nearest);
    }
    let weights: Vec<f64> = matched.iter().map(|c| c.n as f64).collect();
    let weighted: Vec<f64> = matched
        .iter()
        .map(|c| c.n as f64 * c.group_rescaled as f64)
        .collect();
    let peer_placement = compensated_sum(weighted.iter().copied()) / compensated_sum(weights.iter().copied());
    Ok(MatchOutcome {
        matched_groups: matched.iter().map(|c| c.group_raw).collect(),
        fallback,
        peer_placement,
    })
}

/// The model's own left-right placement: mean of the rescaled (raw + 1)
/// self-placement batch.
pub fn lr_self_from_batch(values: &[f64]) -> Result<f64, EstimatorError> {
    if values.is_empty() {
        return Err(EstimatorError::EmptyBatch {
            item: crate::questionnaire::LR_ITEM_ID.to_string(),
        });
    }
    let rescaled: Vec<f64> = values.iter().map(|v| v + 1.0).collect();
    Ok(compensated_sum(rescaled.iter().copied()) / rescaled.len() as f64)
}

/// Bias estimates for one questionnaire item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub item_id: String,
    pub topic: TopicClass,
    pub unit_value: i32,
    pub lr_self: f64,
    pub peer_placement: f64,
    /// Self-perception bias: own placement minus peer placement.
    pub spb: f64,
    /// Distance of the peer placement from the scale center.
    pub absolute_bias: f64,
    pub matched_groups: Vec<u8>,
    pub fallback: bool,
    pub zero_variance: bool,
}

/// Full bias computation for one item from its parsed model batch and the
/// respondent data.
pub fn bias_for_item(
    item: &QuestionItem,
    batch_values: &[f64],
    dataset: &Dataset,
    lr_self: f64,
    config: &EstimatorConfig,
) -> Result<BiasRecord, EstimatorError> {
    let unit = unit_value(
        batch_values,
        item.scale.center(),
        config.unit_policy,
        &item.id,
    )?;
    let cells = group_stats(dataset, &item.id, config.min_cell_n, config.ci_level)?;
    let outcome = match_groups(&cells, unit, config, &item.id)?;
    let zero_variance = batch_values
        .iter()
        .all(|&v| v == batch_values[0]);
    Ok(BiasRecord {
        item_id: item.id.clone(),
        topic: item.topic,
        unit_value: unit,
        lr_self,
        peer_placement: outcome.peer_placement,
        spb: lr_self - outcome.peer_placement,
        absolute_bias: config.center - outcome.peer_placement,
        matched_groups: outcome.matched_groups,
        fallback: outcome.fallback,
        zero_variance,
    })
}

/// Bias records for every battery item, in battery order. Batches are keyed
/// by item id; items are processed in parallel but the output order is the
/// questionnaire's.
pub fn bias_table(
    questionnaire: &Questionnaire,
    batches: &std::collections::BTreeMap<String, Vec<f64>>,
    dataset: &Dataset,
    config: &EstimatorConfig,
) -> Result<Vec<BiasRecord>, EstimatorError> {
    let lr_values = batches
        .get(&questionnaire.lr_item.id)
        .ok_or_else(|| EstimatorError::EmptyBatch {
            item: questionnaire.lr_item.id.clone(),
        })?;
    let lr_self = lr_self_from_batch(lr_values)?;
    questionnaire
        .items
        .par_iter()
        .map(|item| {
            let values = batches.get(&item.id).map(Vec::as_slice).unwrap_or(&[]);
            bias_for_item(item, values, dataset, lr_self, config)
        })
        .collect()
}

/// Topic-level and overall summaries of the per-item bias estimates, with
/// Student-t confidence intervals where at least two records contribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub n: usize,
    pub mean_spb: f64,
    pub mean_absolute_bias: f64,
    /// Present when n >= 2.
    pub spb_stats: Option<AnswerStats>,
    pub absolute_bias_stats: Option<AnswerStats>,
}

fn aggregate_row(label: String, subset: &[&BiasRecord], ci_level: f64) -> AggregateRow {
    let spb: Vec<f64> = subset.iter().map(|r| r.spb).collect();
    let abs: Vec<f64> = subset.iter().map(|r| r.absolute_bias).collect();
    let stats_of = |v: &[f64]| {
        if v.len() >= 2 {
            summarize(v, ci_level).ok()
        } else {
            None
        }
    };
    AggregateRow {
        label,
        n: subset.len(),
        mean_spb: compensated_sum(spb.iter().copied()) / spb.len() as f64,
        mean_absolute_bias: compensated_sum(abs.iter().copied()) / abs.len() as f64,
        spb_stats: stats_of(&spb),
        absolute_bias_stats: stats_of(&abs),
    }
}

pub fn aggregate_bias(records: &[BiasRecord], ci_level: f64) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for topic in TopicClass::ALL {
        let subset: Vec<&BiasRecord> = records.iter().filter(|r| r.topic == topic).collect();
        if !subset.is_empty() {
            rows.push(aggregate_row(topic.as_str().to_string(), &subset, ci_level));
        }
    }
    let all: Vec<&BiasRecord> = records.iter().collect();
    if !all.is_empty() {
        rows.push(aggregate_row("Overall".to_string(), &all, ci_level));
    }
    rows
}
