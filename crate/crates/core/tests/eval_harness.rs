use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylevox_core::audio::read_wav;
use stylevox_core::dataset::ManifestEntry;
use stylevox_core::eval::*;
use stylevox_core::factors::{Gender, Level, StyleFactors};
use stylevox_core::Error;

fn small_corpus(dir: &std::path::Path, seed: u64) -> Vec<ManifestEntry> {
    let opts = CorpusOptions {
        n_per_group: 1,
        seed,
        prompts_per_group: 3,
        valid_n: 20,
        test_n: 20,
        ..CorpusOptions::default()
    };
    make_synthetic_corpus(dir, &opts).unwrap()
}

#[test]
fn generator_round_trip_recovers_every_group() {
    let dir = tempfile::tempdir().unwrap();
    let entries = small_corpus(dir.path(), 1);
    assert_eq!(entries.len(), 432);
    let meter = FactorMeter::from_manifest(&entries, GeneratorParams::default()).unwrap();
    let mut targets = Vec::new();
    let mut outputs = BTreeMap::new();
    for e in &entries {
        let samples = read_wav(&e.audio_path(dir.path())).unwrap().samples;
        let (m, _) = meter.measure(&samples, &e.text).unwrap();
        assert_eq!(m, MeasuredFactors::from_factors(&e.factors()), "{} {}", e.id, e.factors());
        targets.push((e.id.clone(), e.factors()));
        outputs.insert(e.id.clone(), m);
    }
    let report = accuracy_report(&targets, &outputs).unwrap();
    assert!(report.per_factor.values().all(|&v| v == 1.0));
    assert_eq!(report.mean, 1.0);
}

fn reference_meter() -> (tempfile::TempDir, Vec<ManifestEntry>, FactorMeter) {
    let dir = tempfile::tempdir().unwrap();
    let entries = small_corpus(dir.path(), 2);
    let meter = FactorMeter::from_manifest(&entries, GeneratorParams::default()).unwrap();
    (dir, entries, meter)
}

#[test]
fn corpus_is_reproducible_from_its_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ea = small_corpus(a.path(), 5);
    let eb = small_corpus(b.path(), 5);
    assert_eq!(ea, eb);
    for e in ea.iter().step_by(37) {
        let bytes = |d: &std::path::Path| std::fs::read(e.audio_path(d)).unwrap();
        assert_eq!(bytes(a.path()), bytes(b.path()));
    }
}

#[test]
fn silence_reads_as_low_volume_without_pitch() {
    let (_dir, _, meter) = reference_meter();
    for samples in [Vec::new(), vec![0f32; 24_000]] {
        let (m, _) = meter.measure(&samples, "one two three").unwrap();
        assert_eq!(m.volume, Level::Low);
        assert_eq!(m.pitch, None);
        assert_eq!(m.gender, None);
    }
}

#[test]
fn louder_copies_never_read_quieter() {
    let (dir, entries, meter) = reference_meter();
    for e in entries.iter().filter(|e| e.factors().volume == Level::Normal).take(12) {
        let samples = read_wav(&e.audio_path(dir.path())).unwrap().samples;
        let (base, _) = meter.measure(&samples, &e.text).unwrap();
        let doubled: Vec<f32> = samples.iter().map(|x| (2.0 * x).clamp(-1.0, 1.0)).collect();
        let (loud, _) = meter.measure(&doubled, &e.text).unwrap();
        assert!(loud.volume.index() >= base.volume.index(), "{}", e.id);
    }
}

fn perfect(entries: &[ManifestEntry]) -> (Vec<(String, StyleFactors)>, BTreeMap<String, MeasuredFactors>) {
    let targets: Vec<_> = entries.iter().map(|e| (e.id.clone(), e.factors())).collect();
    let outputs = targets.iter().map(|(id, f)| (id.clone(), MeasuredFactors::from_factors(f))).collect();
    (targets, outputs)
}

#[test]
fn flipped_gender_only_costs_gender() {
    let dir = tempfile::tempdir().unwrap();
    let entries = small_corpus(dir.path(), 3);
    let (targets, mut outputs) = perfect(&entries);
    for m in outputs.values_mut() {
        m.gender = m.gender.map(|g| if g == Gender::Male { Gender::Female } else { Gender::Male });
    }
    let r = accuracy_report(&targets, &outputs).unwrap();
    assert_eq!(r.per_factor["gender"], 0.0);
    for k in ["pitch", "speed", "volume", "emotion"] {
        assert_eq!(r.per_factor[k], 1.0, "{k}");
    }
    assert_eq!(r.mean, 0.8);
    assert_eq!(r.n, 432);
}

#[test]
fn random_outputs_score_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = small_corpus(dir.path(), 4);
    let copies: Vec<ManifestEntry> = (0..9)
        .flat_map(|k| entries.iter().map(move |e| ManifestEntry { id: format!("{}-{k}", e.id), ..e.clone() }))
        .collect();
    entries.extend(copies);
    let targets: Vec<_> = entries.iter().map(|e| (e.id.clone(), e.factors())).collect();
    let groups = StyleFactors::all();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let outputs: BTreeMap<_, _> = targets
        .iter()
        .map(|(id, _)| {
            let f = groups[rng.gen_range(0..groups.len())];
            (id.clone(), MeasuredFactors::from_factors(&f))
        })
        .collect();
    let r = accuracy_report(&targets, &outputs).unwrap();
    let n = r.n as f64;
    for (name, chance) in FACTOR_NAMES.iter().zip(CHANCE_LEVELS) {
        let sd = (chance * (1.0 - chance) / n).sqrt();
        let acc = r.per_factor[*name];
        assert!((acc - chance).abs() < 4.0 * sd, "{name}: {acc} vs {chance}");
    }
}

#[test]
fn missing_outputs_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let entries = small_corpus(dir.path(), 3);
    let (targets, mut outputs) = perfect(&entries);
    let gone = targets[5].0.clone();
    outputs.remove(&gone);
    match accuracy_report(&targets, &outputs) {
        Err(Error::MissingOutput(ids)) => assert_eq!(ids, gone),
        other => panic!("{other:?}"),
    }
    assert!(matches!(accuracy_report(&[], &BTreeMap::new()), Err(Error::EmptyInput(_))));
}

proptest::proptest! {
    #[test]
    fn mean_is_the_average_of_the_five(seeds in proptest::collection::vec((0usize..432, 0usize..432), 1..60)) {
        let groups = StyleFactors::all();
        let targets: Vec<_> = seeds.iter().enumerate().map(|(i, (t, _))| (i.to_string(), groups[*t])).collect();
        let outputs: BTreeMap<_, _> = seeds
            .iter()
            .enumerate()
            .map(|(i, (_, o))| (i.to_string(), MeasuredFactors::from_factors(&groups[*o])))
            .collect();
        let r = accuracy_report(&targets, &outputs).unwrap();
        let values: Vec<f64> = FACTOR_NAMES.iter().map(|k| r.per_factor[*k]).collect();
        proptest::prop_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        proptest::prop_assert_eq!(r.mean, values.iter().sum::<f64>() / 5.0);
    }
}
