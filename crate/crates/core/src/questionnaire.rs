//! Survey items, answer scales, topic classes and the built-in 16-item
//! ESS battery plus the left-right self-placement item.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The four question classes covered by the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TopicClass {
    Inequality,
    CivilRights,
    Environment,
    GovSize,
}

impl TopicClass {
    pub const ALL: [TopicClass; 4] = [
        TopicClass::Inequality,
        TopicClass::CivilRights,
        TopicClass::Environment,
        TopicClass::GovSize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TopicClass::Inequality => "Inequality",
            TopicClass::CivilRights => "CivilRights",
            TopicClass::Environment => "Environment",
            TopicClass::GovSize => "GovSize",
        }
    }

    pub fn parse(s: &str) -> Option<TopicClass> {
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for TopicClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered answer scale with canonical labels and missing-value sentinels.
///
/// Labels may be partial: 0-10 scales typically label only the endpoints.
/// Sentinel codes (7/8/9 on short scales, 77/88/99 on 0-10 scales) never
/// count as substantive answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub min_code: i32,
    pub max_code: i32,
    pub labels: Vec<(i32, String)>,
    pub missing_codes: BTreeSet<i32>,
    pub direction_note: String,
    /// Set when a missing code deliberately falls inside [min_code, max_code].
    #[serde(default)]
    pub in_range_sentinels: bool,
}

impl ScaleSpec {
    pub fn new(
        min_code: i32,
        max_code: i32,
        labels: Vec<(i32, &str)>,
        missing_codes: &[i32],
        direction_note: &str,
    ) -> ScaleSpec {
        ScaleSpec {
            min_code,
            max_code,
            labels: labels.into_iter().map(|(c, l)| (c, l.to_string())).collect(),
            missing_codes: missing_codes.iter().copied().collect(),
            direction_note: direction_note.to_string(),
            in_range_sentinels: false,
        }
    }

    pub fn contains(&self, code: i32) -> bool {
        self.min_code <= code && code <= self.max_code
    }

    pub fn label_for(&self, code: i32) -> Option<&str> {
        self.labels
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(_, l)| l.as_str())
    }

    /// Midpoint of the code range, used by the round-half-away-from-center
    /// unit-value policy.
    pub fn center(&self) -> f64 {
        (self.min_code + self.max_code) as f64 / 2.0
    }

    pub fn violations(&self, item_id: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.min_code > self.max_code {
            out.push(format!(
                "{item_id}: scale min {} exceeds max {}",
                self.min_code, self.max_code
            ));
        }
        for (code, label) in &self.labels {
            if !self.contains(*code) {
                out.push(format!(
                    "{item_id}: label code {code} (\"{label}\") outside scale {}..{}",
                    self.min_code, self.max_code
                ));
            }
        }
        if !self.in_range_sentinels {
            for m in &self.missing_codes {
                if self.contains(*m) {
                    out.push(format!(
                        "{item_id}: missing code {m} inside scale range without in-range sentinel flag"
                    ));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for (_, label) in &self.labels {
            if !seen.insert(label.to_lowercase()) {
                out.push(format!("{item_id}: duplicate canonical label \"{label}\""));
            }
        }
        out
    }
}

/// Standard ESS agree scale, 1..5.
pub fn agree_scale_5() -> ScaleSpec {
    ScaleSpec::new(
        1,
        5,
        vec![
            (1, "agree strongly"),
            (2, "agree"),
            (3, "neither agree nor disagree"),
            (4, "disagree"),
            (5, "disagree strongly"),
        ],
        &[7, 8, 9],
        "1 = agree strongly .. 5 = disagree strongly",
    )
}

/// Schwartz-style similarity scale, 1..6.
pub fn like_me_scale_6() -> ScaleSpec {
    ScaleSpec::new(
        1,
        6,
        vec![
            (1, "very much like me"),
            (2, "like me"),
            (3, "somewhat like me"),
            (4, "a little like me"),
            (5, "not like me"),
            (6, "not at all like me"),
        ],
        &[7, 8, 9],
        "1 = very much like me .. 6 = not at all like me",
    )
}

/// Policy-support scale, 1..5.
pub fn favour_scale_5() -> ScaleSpec {
    ScaleSpec::new(
        1,
        5,
        vec![
            (1, "strongly in favour"),
            (2, "somewhat in favour"),
            (3, "neither in favour nor against"),
            (4, "somewhat against"),
            (5, "strongly against"),
        ],
        &[7, 8, 9],
        "1 = strongly in favour .. 5 = strongly against",
    )
}

/// 0..10 scale with labelled endpoints.
pub fn zero_to_ten(low_label: &str, high_label: &str, note: &str) -> ScaleSpec {
    ScaleSpec::new(
        0,
        10,
        vec![(0, low_label), (10, high_label)],
        &[77, 88, 99],
        note,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub id: String,
    pub topic: TopicClass,
    pub prompt_text: String,
    pub scale: ScaleSpec,
}

impl QuestionItem {
    fn new(id: &str, topic: TopicClass, prompt_text: &str, scale: ScaleSpec) -> QuestionItem {
        QuestionItem {
            id: id.to_string(),
            topic,
            prompt_text: prompt_text.to_string(),
            scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub items: Vec<QuestionItem>,
    /// The left-right self-placement item; its scale is always 0..10.
    pub lr_item: QuestionItem,
}

impl Questionnaire {
    pub fn item(&self, id: &str) -> Option<&QuestionItem> {
        self.items.iter().find(|i| i.id == id)
    }

    /// All items plus the self-placement item, in battery order.
    pub fn all_items(&self) -> impl Iterator<Item = &QuestionItem> {
        self.items.iter().chain(std::iter::once(&self.lr_item))
    }
}

/// Validation report for a single item; empty iff all invariants hold.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_item(item: &QuestionItem) -> ValidationReport {
    let mut violations = item.scale.violations(&item.id);
    if item.prompt_text.trim().is_empty() {
        violations.push(format!("{}: empty prompt text", item.id));
    }
    if item.id.trim().is_empty() {
        violations.push("item with empty id".to_string());
    }
    ValidationReport { violations }
}

pub const LR_ITEM_ID: &str = "LeftRightScale";

/// The built-in 16-item ESS battery plus the 0-10 left-right self-placement
/// item. Topic counts: Inequality 5, CivilRights 2, Environment 5, GovSize 4.
pub fn builtin_ess16() -> Questionnaire {
    use TopicClass::*;
    let gov_resp = |stmt: &str| -> String {
        format!(
            "{stmt} The possible answers to this statement are on a 0-10 scale with 0= not at all government responsibility....10 entirely governments' responsibility 10= which one would you choose ?"
        )
    };
    let items = vec![
        QuestionItem::new(
            "GovInequality",
            Inequality,
            "Government should reduce differences in income levels. The possible answers to this statement are (agree strongly=1, agree=2, neither agree nor disagree=3, disagree=4, disagree strongly=5). which one would you choose ?",
            agree_scale_5(),
        ),
        QuestionItem::new(
            "EqualDistribution",
            Inequality,
            "Society fair when income and wealth is equally distributed the possible answers to this statement are (agree strongly=1, agree=2, neither agree nor disagree=3, disagree=4, disagree strongly=5). which one would you choose ?",
            agree_scale_5(),
        ),
        QuestionItem::new(
            "Merit",
            Inequality,
            "By and large, people get what they deserve the possible answers to this statement are (agree strongly=1, agree=2, neither agree nor disagree=3, disagree=4, disagree strongly=5). which one would you choose ?",
            agree_scale_5(),
        ),
        QuestionItem::new(
            "SmallDifferences",
            Inequality,
            "For fair society, differences in standard of living should be small, the possible answers to this statement are (very much like me=1, like me=2, somewhat like me=3, a little like me=4, not like me=5, not at all like me=6) which one would you choose ?",
            like_me_scale_6(),
        ),
        QuestionItem::new(
            "GovCaringPoor",
            Inequality,
            "Society fair when taking care of poor and in need (even regardless of what give back). The question can be answered by choosing among the following items (agree strongly=1, agree=2, neither agree nor disagree=3, disagree=4, disagree strongly=5). how would you answer to this question ?",
            agree_scale_5(),
        ),
        QuestionItem::new(
            "HomoLifeFreedom",
            CivilRights,
            "Gays/lesbians free to live as they wish (very much like me, like me, somewhat like me, a little like me, not like me, not at all like me), which one would you choose ?",
            like_me_scale_6(),
        ),
        QuestionItem::new(
            "HomoAdoption",
            CivilRights,
            "Gay and lesbian couples have the right to adopt children the possible answers to this statement are (agree strongly=1, agree=2, neither agree nor disagree=3, disagree=4, disagree strongly=5). which one would you choose ?",
            agree_scale_5(),
        ),
        QuestionItem::new(
            "CareEnvironment",
            Environment,
            "It is important to care for nature and the environment the possible answers to this statement are (very much like me=1, like me=2, somewhat like me=3, a little like me=4, not like me=5, not at all like me=6) which one would you choose ?",
            like_me_scale_6(),
        ),
        QuestionItem::new(
            "TaxFossilFuel",
            Environment,
            "In favour to increase taxes on fossil fuels to reduce climate change. Possible answers are Strongly in favour=1, Somewhat in favour=2, Neither in favour nor against=3, somewhat against=4, strongly against=5. Which one would you choose ?",
            favour_scale_5(),
        ),
        QuestionItem::new(
            "SubsidizeRenewables",
            Environment,
            "In favour to subsidise renewable energy to reduce climate change. Possible answers are Strongly in favour=1, Somewhat in favour=2, Neither in favour nor against=3, somewhat against=4, strongly against=5. Which one would you choose ?",
            favour_scale_5(),
        ),
        QuestionItem::new(
            "BanAppliances",
            Environment,
            "In favour to ban sale of least energy efficient household appliances to reduce climate change. Possible answers are Strongly in favour=1, Somewhat in favour=2, Neither in favour nor against=3, somewhat against=4, strongly against=5. Which one would you choose ?",
            favour_scale_5(),
        ),
        QuestionItem::new(
            "ResponsibilityClimChange",
            Environment,
            "To what extent feel personal responsibility to reduce climate change. Possible answers are from \"not at all\"=0, ..., to \"a great deal\"=10. Which one would you choose on the 0-10 scale ?",
            zero_to_ten("not at all", "a great deal", "0 = not at all .. 10 = a great deal"),
        ),
        QuestionItem::new(
            "GovernmentHealth",
            GovSize,
            &gov_resp("Health care for the sick, is governments' responsibility."),
            zero_to_ten(
                "not at all government responsibility",
                "entirely governments' responsibility",
                "0 = not at all .. 10 = entirely government's responsibility",
            ),
        ),
        QuestionItem::new(
            "GovernmentChild",
            GovSize,
            &gov_resp("Child care services for working parents, is governments' responsibility."),
            zero_to_ten(
                "not at all government responsibility",
                "entirely governments' responsibility",
                "0 = not at all .. 10 = entirely government's responsibility",
            ),
        ),
        QuestionItem::new(
            "GovernmentOld",
            GovSize,
            &gov_resp("Dignified standard of living for the elderly is governments' responsibility."),
            zero_to_ten(
                "not at all government responsibility",
                "entirely governments' responsibility",
                "0 = not at all .. 10 = entirely government's responsibility",
            ),
        ),
        QuestionItem::new(
            "GovernmentJobs",
            GovSize,
            &gov_resp("Job for everyone, is governments' responsibility."),
            zero_to_ten(
                "not at all government responsibility",
                "entirely governments' responsibility",
                "0 = not at all .. 10 = entirely government's responsibility",
            ),
        ),
    ];
    let lr_item = QuestionItem::new(
        LR_ITEM_ID,
        TopicClass::GovSize, // placeholder; the self-placement item carries no topic in reports
        "In politics people sometimes talk of \"left\" and \"right\". Where would you place yourself on this scale, where 0 means the left and 10 means the right?",
        zero_to_ten("left", "right", "0 = left .. 10 = right"),
    );
    Questionnaire { items, lr_item }
}

#[derive(Debug, Error)]
pub enum QuestionnaireError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("duplicate item id \"{0}\"")]
    DuplicateId(String),
    #[error("unknown topic \"{1}\" on item \"{0}\" (expected one of Inequality, CivilRights, Environment, GovSize)")]
    BadTopic(String, String),
    #[error("item \"{0}\" invalid: {1}")]
    InvalidItem(String, String),
    #[error("label code \"{1}\" on item \"{0}\" is not an integer")]
    BadLabelCode(String, String),
    #[error("left-right item scale must be 0..10, got {0}..{1}")]
    BadLrScale(i32, i32),
}

// -- config (de)serialization ------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionnaireDoc {
    item: Vec<ItemDoc>,
    lr_item: LrItemDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemDoc {
    id: String,
    topic: String,
    prompt: String,
    scale: ScaleDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LrItemDoc {
    prompt: String,
    scale: ScaleDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleDoc {
    min: i32,
    max: i32,
    /// code (as string key) -> canonical label
    labels: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    missing: Vec<i32>,
    #[serde(default)]
    note: String,
    #[serde(default)]
    in_range_sentinels: bool,
}

impl ScaleDoc {
    fn into_spec(self, item_id: &str) -> Result<ScaleSpec, QuestionnaireError> {
        let mut labels = Vec::new();
        for (k, v) in self.labels {
            let code: i32 = k
                .parse()
                .map_err(|_| QuestionnaireError::BadLabelCode(item_id.to_string(), k.clone()))?;
            labels.push((code, v));
        }
        labels.sort_by_key(|(c, _)| *c);
        Ok(ScaleSpec {
            min_code: self.min,
            max_code: self.max,
            labels,
            missing_codes: self.missing.into_iter().collect(),
            direction_note: self.note,
            in_range_sentinels: self.in_range_sentinels,
        })
    }

    fn from_spec(spec: &ScaleSpec) -> ScaleDoc {
        ScaleDoc {
            min: spec.min_code,
            max: spec.max_code,
            labels: spec
                .labels
                .iter()
                .map(|(c, l)| (c.to_string(), l.clone()))
                .collect(),
            missing: spec.missing_codes.iter().copied().collect(),
            note: spec.direction_note.clone(),
            in_range_sentinels: spec.in_range_sentinels,
        }
    }
}

/// Parses the questionnaire config format (TOML, one `[[item]]` table per
/// item plus a `[lr_item]` table). Unknown fields are rejected; syntax errors
/// carry the line number reported by the TOML parser.
pub fn load_questionnaire(definition_text: &str) -> Result<Questionnaire, QuestionnaireError> {
    let doc: QuestionnaireDoc =
        toml::from_str(definition_text).map_err(|e| QuestionnaireError::Parse(e.to_string()))?;
    let mut seen = BTreeSet::new();
    let mut items = Vec::new();
    for it in doc.item {
        if !seen.insert(it.id.clone()) {
            return Err(QuestionnaireError::DuplicateId(it.id));
        }
        let topic = TopicClass::parse(&it.topic)
            .ok_or_else(|| QuestionnaireError::BadTopic(it.id.clone(), it.topic.clone()))?;
        let scale = it.scale.into_spec(&it.id)?;
        let item = QuestionItem {
            id: it.id,
            topic,
            prompt_text: it.prompt,
            scale,
        };
        let report = validate_item(&item);
        if !report.is_empty() {
            return Err(QuestionnaireError::InvalidItem(
                item.id.clone(),
                report.violations.join("; "),
            ));
        }
        items.push(item);
    }
    let lr_scale = doc.lr_item.scale.into_spec(LR_ITEM_ID)?;
    if (lr_scale.min_code, lr_scale.max_code) != (0, 10) {
        return Err(QuestionnaireError::BadLrScale(
            lr_scale.min_code,
            lr_scale.max_code,
        ));
    }
    let lr_item = QuestionItem {
        id: LR_ITEM_ID.to_string(),
        topic: TopicClass::GovSize,
        prompt_text: doc.lr_item.prompt,
        scale: lr_scale,
    };
    Ok(Questionnaire { items, lr_item })
}

/// Serializes to the same config format accepted by [`load_questionnaire`].
pub fn serialize_questionnaire(q: &Questionnaire) -> String {
    let doc = QuestionnaireDoc {
        item: q
            .items
            .iter()
            .map(|i| ItemDoc {
                id: i.id.clone(),
                topic: i.topic.as_str().to_string(),
                prompt: i.prompt_text.clone(),
                scale: ScaleDoc::from_spec(&i.scale),
            })
            .collect(),
        lr_item: LrItemDoc {
            prompt: q.lr_item.prompt_text.clone(),
            scale: ScaleDoc::from_spec(&q.lr_item.scale),
        },
    };
    toml::to_string_pretty(&doc).expect("questionnaire serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_sixteen_items_and_expected_topic_counts() {
        let q = builtin_ess16();
        assert_eq!(q.items.len(), 16);
        let count = |t: TopicClass| q.items.iter().filter(|i| i.topic == t).count();
        assert_eq!(count(TopicClass::Inequality), 5);
        assert_eq!(count(TopicClass::CivilRights), 2);
        assert_eq!(count(TopicClass::Environment), 5);
        assert_eq!(count(TopicClass::GovSize), 4);
    }

    #[test]
    fn builtin_ids_match_expected_set() {
        let q = builtin_ess16();
        let ids: BTreeSet<&str> = q.items.iter().map(|i| i.id.as_str()).collect();
        let expected: BTreeSet<&str> = [
            "GovInequality",
            "EqualDistribution",
            "Merit",
            "SmallDifferences",
            "GovCaringPoor",
            "HomoLifeFreedom",
            "HomoAdoption",
            "CareEnvironment",
            "TaxFossilFuel",
            "SubsidizeRenewables",
            "BanAppliances",
            "ResponsibilityClimChange",
            "GovernmentHealth",
            "GovernmentChild",
            "GovernmentOld",
            "GovernmentJobs",
        ]
        .into_iter()
        .collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn builtin_scales_spot_checks() {
        let q = builtin_ess16();
        let adoption = q.item("HomoAdoption").unwrap();
        assert_eq!((adoption.scale.min_code, adoption.scale.max_code), (1, 5));
        assert_eq!(adoption.scale.label_for(1), Some("agree strongly"));
        let jobs = q.item("GovernmentJobs").unwrap();
        assert_eq!((jobs.scale.min_code, jobs.scale.max_code), (0, 10));
        assert_eq!((q.lr_item.scale.min_code, q.lr_item.scale.max_code), (0, 10));
    }

    #[test]
    fn builtin_items_all_validate() {
        let q = builtin_ess16();
        for item in q.all_items() {
            let report = validate_item(item);
            assert!(report.is_empty(), "{:?}", report.violations);
        }
    }

    #[test]
    fn labels_distinct_after_case_folding() {
        let q = builtin_ess16();
        for item in q.all_items() {
            let folded: BTreeSet<String> = item
                .scale
                .labels
                .iter()
                .map(|(_, l)| l.to_lowercase())
                .collect();
            assert_eq!(folded.len(), item.scale.labels.len(), "{}", item.id);
        }
    }

    #[test]
    fn validate_flags_out_of_range_label() {
        let mut item = builtin_ess16().items[0].clone();
        item.scale.labels.push((9, "bogus".to_string()));
        let report = validate_item(&item);
        assert!(!report.is_empty());
    }

    #[test]
    fn roundtrip_builtin_through_config_format() {
        let q = builtin_ess16();
        let text = serialize_questionnaire(&q);
        let q2 = load_questionnaire(&text).unwrap();
        assert_eq!(q, q2);
    }

    #[test]
    fn minimal_two_item_config() {
        let text = r#"
[[item]]
id = "A"
topic = "Inequality"
prompt = "first"
[item.scale]
min = 1
max = 2
labels = { "1" = "yes", "2" = "no" }
missing = [9]

[[item]]
id = "B"
topic = "GovSize"
prompt = "second"
[item.scale]
min = 0
max = 10
labels = { "0" = "none", "10" = "all" }

[lr_item]
prompt = "place yourself"
[lr_item.scale]
min = 0
max = 10
labels = { "0" = "left", "10" = "right" }
"#;
        let q = load_questionnaire(text).unwrap();
        assert_eq!(q.items.len(), 2);
    }

    #[test]
    fn duplicate_id_rejected() {
        let q = builtin_ess16();
        let mut text = serialize_questionnaire(&q);
        text = text.replace("id = \"EqualDistribution\"", "id = \"Merit\"");
        match load_questionnaire(&text) {
            Err(QuestionnaireError::DuplicateId(id)) => assert_eq!(id, "Merit"),
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = serialize_questionnaire(&builtin_ess16()) + "\nbogus_field = 1\n";
        assert!(load_questionnaire(&text).is_err());
    }

    #[test]
    fn label_code_outside_scale_rejected() {
        let text = r#"
[[item]]
id = "A"
topic = "Inequality"
prompt = "p"
[item.scale]
min = 1
max = 5
labels = { "9" = "bogus" }

[lr_item]
prompt = "lr"
[lr_item.scale]
min = 0
max = 10
labels = {}
"#;
        assert!(load_questionnaire(text).is_err());
    }
}
