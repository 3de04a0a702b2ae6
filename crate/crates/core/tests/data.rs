use std::path::PathBuf;

use emonext::data::{
    augment, batches, eval_batches, parse_csv, parse_reader, prepare, Sample, Split, IMAGE_PIXELS,
};
use emonext::{StreamRng, NUM_CLASSES};
use proptest::prelude::*;
use rand::Rng;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/fer_mini.csv")
}

#[test]
fn fixture_has_its_constructed_counts() {
    let (samples, summary) = parse_csv(fixture_path()).unwrap();
    assert_eq!(samples.len(), 70);
    assert_eq!(summary.total(), 70);
    assert_eq!(summary.split_total(Split::Training), 70);
    assert_eq!(summary.split_total(Split::PublicTest), 0);
    assert_eq!(summary.split_total(Split::PrivateTest), 0);
    for c in 0..NUM_CLASSES {
        assert_eq!(summary.class_total(c), 10, "class {c}");
    }
}

#[test]
fn eval_batches_are_clean_and_repeatable() {
    let (samples, _) = parse_csv(fixture_path()).unwrap();
    let collect = || {
        eval_batches(&samples, 16, 64)
            .unwrap()
            .flat_map(|b| b.images.to_vec())
            .map(f32::to_bits)
            .collect::<Vec<u32>>()
    };
    let a = collect();
    assert_eq!(a, collect());
    let clean: Vec<u32> = samples.iter().flat_map(|s| prepare(&s.image, 64)).map(f32::to_bits).collect();
    assert_eq!(a, clean);
}

#[test]
fn training_batches_are_bounded() {
    let (samples, _) = parse_csv(fixture_path()).unwrap();
    for batch in batches(&samples, 16, 9, 0, 64).unwrap() {
        assert!(batch.images.to_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

fn csv_body(rows: &[(usize, Split, u8)]) -> String {
    let mut s = String::from("emotion,pixels,Usage\n");
    for (label, split, px) in rows {
        let pixels = vec![px.to_string(); IMAGE_PIXELS].join(" ");
        s += &format!("{label},{pixels},{}\n", split.as_str());
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn summary_totals_agree(rows in proptest::collection::vec((0usize..7, 0usize..3, any::<u8>()), 1..20)) {
        let rows: Vec<(usize, Split, u8)> = rows.into_iter().map(|(l, s, p)| (l, Split::ALL[s], p)).collect();
        let (samples, summary) = parse_reader(csv_body(&rows).as_bytes()).unwrap();
        prop_assert_eq!(samples.len(), rows.len());
        prop_assert_eq!(summary.total(), rows.len());
        let by_class: usize = (0..NUM_CLASSES).map(|c| summary.class_total(c)).sum();
        let by_split: usize = Split::ALL.iter().map(|&s| summary.split_total(s)).sum();
        prop_assert_eq!(by_class, rows.len());
        prop_assert_eq!(by_split, rows.len());
        for (s, (l, sp, _)) in samples.iter().zip(&rows) {
            prop_assert_eq!((s.label, s.split), (*l, *sp));
        }
    }

    #[test]
    fn prepared_pixels_stay_in_range(seed in any::<u64>(), size in prop::sample::select(vec![48usize, 64, 96, 224])) {
        let mut r = StreamRng::new(seed);
        let image: Vec<f32> = (0..IMAGE_PIXELS).map(|_| r.random_range(0.0f32..=1.0)).collect();
        let sample = Sample { image, label: 0, split: Split::Training };
        let aug = augment(&sample.image, &mut r);
        prop_assert_eq!(aug.len(), IMAGE_PIXELS);
        for v in prepare(&aug, size).into_iter().chain(prepare(&sample.image, size)) {
            prop_assert!((-1.0..=1.0).contains(&v), "{}", v);
        }
    }
}
