//! Regenerates the bundled fixture files under `fixtures/`:
//!
//! * `replay_store.jsonl` — a complete 30-repetition run over the built-in
//!   battery plus the self-placement item, with free-text responses that the
//!   answer parser resolves back to the intended codes;
//! * `region_map.toml` — the default country-to-macroregion assignment.
//!
//! Run with `cargo run --example gen_fixtures` from the crate directory.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use polibias::parser::{canonical_label, parse_answer};
use polibias::questionnaire::{builtin_ess16, Questionnaire};
use polibias::sampler::{RunStore, SampleRecord};

pub const FIXTURE_RUN_ID: &str = "fixture-30x";

/// (item id, batch as (value, count) pairs). Counts sum to 30 per item.
/// The self-placement batch contains three approximate "around 3 or 4"
/// answers, carried as the 3.5 midpoint.
fn batch_compositions() -> Vec<(&'static str, Vec<(f64, u32)>)> {
    vec![
        ("GovInequality", vec![(1.0, 12), (2.0, 15), (3.0, 3)]),
        ("EqualDistribution", vec![(1.0, 4), (2.0, 23), (3.0, 3)]),
        ("Merit", vec![(3.0, 1), (4.0, 27), (5.0, 2)]),
        ("SmallDifferences", vec![(1.0, 8), (2.0, 19), (3.0, 3)]),
        ("GovCaringPoor", vec![(1.0, 21), (2.0, 9)]),
        ("HomoLifeFreedom", vec![(1.0, 30)]),
        ("HomoAdoption", vec![(1.0, 30)]),
        ("CareEnvironment", vec![(1.0, 28), (2.0, 2)]),
        ("TaxFossilFuel", vec![(1.0, 22), (2.0, 8)]),
        ("SubsidizeRenewables", vec![(1.0, 30)]),
        ("BanAppliances", vec![(1.0, 23), (2.0, 7)]),
        ("ResponsibilityClimChange", vec![(10.0, 30)]),
        ("GovernmentHealth", vec![(6.0, 1), (8.0, 2), (9.0, 8), (10.0, 19)]),
        ("GovernmentChild", vec![(6.0, 2), (7.0, 6), (8.0, 16), (9.0, 6)]),
        ("GovernmentOld", vec![(9.0, 19), (10.0, 11)]),
        ("GovernmentJobs", vec![(4.0, 1), (6.0, 5), (7.0, 15), (8.0, 8), (9.0, 1)]),
        (
            "LeftRightScale",
            vec![(3.0, 12), (4.0, 12), (3.5, 3), (5.0, 3)],
        ),
    ]
}

fn response_text(questionnaire: &Questionnaire, item_id: &str, value: f64) -> String {
    let item = questionnaire
        .all_items()
        .find(|i| i.id == item_id)
        .expect("known item");
    if value.fract() != 0.0 {
        // only the self-placement batch carries a midpoint
        return "If I were to place myself on a left-right scale, I would likely \
                lean toward the center-left, around 3 or 4."
            .to_string();
    }
    let code = value as i32;
    if item.scale.label_for(code).is_some() {
        let label = canonical_label(code, &item.scale).expect("code on scale");
        format!("I would choose \"{label}\" for this statement.")
    } else {
        format!("I would choose {code} on the scale.")
    }
}

fn main() {
    let questionnaire = builtin_ess16();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&fixtures).expect("fixtures dir");

    let store_path = fixtures.join("replay_store.jsonl");
    if store_path.exists() {
        std::fs::remove_file(&store_path).expect("replace old store");
    }
    let mut store = RunStore::open(&store_path).expect("open store");
    let mut rng = ChaCha8Rng::seed_from_u64(20240214);
    for (item_id, composition) in batch_compositions() {
        let item = questionnaire
            .all_items()
            .find(|i| i.id == item_id)
            .expect("known item");
        let mut values: Vec<f64> = composition
            .iter()
            .flat_map(|&(v, count)| std::iter::repeat(v).take(count as usize))
            .collect();
        assert_eq!(values.len(), 30, "{item_id}: batch must have 30 entries");
        values.shuffle(&mut rng);
        for (repetition, value) in values.into_iter().enumerate() {
            let text = response_text(&questionnaire, item_id, value);
            let parsed = parse_answer(&text, &item.scale)
                .unwrap_or_else(|e| panic!("{item_id}: fixture text must parse: {e}"));
            assert_eq!(
                parsed.value, value,
                "{item_id}: text round-trips to the intended value"
            );
            store
                .append(SampleRecord {
                    run_id: FIXTURE_RUN_ID.to_string(),
                    question_id: item_id.to_string(),
                    // repetitions are 1-based in the store
                    repetition: repetition as u32 + 1,
                    model: "fixture".to_string(),
                    temperature: 1.0,
                    prompt: item.prompt_text.clone(),
                    response_text: text,
                    parsed_value: Some(value),
                    ts: String::new(),
                })
                .expect("append record");
        }
    }
    println!("wrote {}", store_path.display());

    let map = polibias::ingest::RegionMap::default_ess32();
    let map_path = fixtures.join("region_map.toml");
    std::fs::write(&map_path, map.to_toml()).expect("write region map");
    println!("wrote {}", map_path.display());
}
