use super::*;
use crate::datagen::synth_clip;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const RATE: u32 = 16_000;

fn sine(freq: f64, secs: f64, amp: f32) -> Waveform {
    let n = (secs * RATE as f64) as usize;
    Waveform::new((0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / RATE as f64).sin() as f32).collect(), RATE).unwrap()
}

fn white(secs: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..(secs * RATE as f64) as usize).map(|_| rng.gen_range(-0.5f32..0.5)).collect(), RATE).unwrap()
}

fn result(labels: &[&str]) -> ClassifierResult {
    let n = labels.len() as f32;
    ClassifierResult::new(labels.iter().enumerate().map(|(i, l)| (l.to_string(), (n - i as f32) / (n + 1.0))).collect(), 0.0).unwrap()
}

fn mapping() -> LabelMapping {
    let mut m = LabelMapping::new();
    m.insert("Vacuum cleaner", "vacuum_cleaner");
    m.insert("Dog", "dog");
    m.insert("Typing", "keyboard_typing");
    m
}

fn full_buffer(secs: f64) -> RollingBuffer {
    let mut b = RollingBuffer::with_duration(SNAPSHOT_SECS, RATE);
    b.write(&(0..(secs * RATE as f64) as usize).map(|i| i as f32).collect::<Vec<_>>());
    b
}

#[test]
fn results_are_ranked_and_bounded() {
    let r = ClassifierResult::new(vec![("a".into(), 0.1), ("b".into(), 0.7), ("c".into(), 0.2)], 3.0).unwrap();
    assert_eq!(r.labels.iter().map(|l| l.0.as_str()).collect::<Vec<_>>(), vec!["b", "c", "a"]);
    assert!(ClassifierResult::new(vec![("a".into(), 1.2)], 0.0).is_err());
}

#[test]
fn known_class_rules() {
    let m = mapping();
    let mut s = Suggester::default();
    let got = s.suggest_known(&result(&["Vacuum cleaner", "Speech"]), &m, &[] as &[&str], 0.0).unwrap();
    assert_eq!(got.kind, SuggestionKind::KnownClass { class_id: "vacuum_cleaner".into() });
    assert!(got.expires > got.created);
    let mut s = Suggester::default();
    assert!(s.suggest_known(&result(&["Vacuum cleaner"]), &m, &["vacuum_cleaner"], 0.0).is_none());
    assert!(s.suggest_known(&result(&["Speech", "Music"]), &m, &[] as &[&str], 0.0).is_none());
    // the next mapped label is used when the top one is active
    let got = s.suggest_known(&result(&["Vacuum cleaner", "Speech", "Dog"]), &m, &["vacuum_cleaner"], 0.0).unwrap();
    assert_eq!(got.kind, SuggestionKind::KnownClass { class_id: "dog".into() });
}

#[test]
fn expiry_and_cooldown_on_a_simulated_clock() {
    let m = mapping();
    let r = result(&["Dog"]);
    let none: &[&str] = &[];
    let mut s = Suggester::default();
    let first = s.suggest_known(&r, &m, none, 0.0).unwrap();
    // pending: not duplicated
    assert!(s.suggest_known(&r, &m, none, 1.0).is_none());
    // expires at 8 s, cooldown runs until 68 s
    assert!(s.suggest_known(&r, &m, none, 8.0).is_none());
    assert!(s.pending().is_empty());
    assert!(s.suggest_known(&r, &m, none, 67.9).is_none());
    let second = s.suggest_known(&r, &m, none, 68.0).unwrap();
    assert_ne!(first.id, second.id);
    s.dismiss(second.id, 70.0).unwrap();
    for t in [70.0, 100.0, 129.99] {
        assert!(s.suggest_known(&r, &m, none, t).is_none(), "t={t}");
    }
    assert!(s.suggest_known(&r, &m, none, 130.0).is_some());
    assert!(s.dismiss(999, 0.0).is_err());
}

#[test]
fn accepted_suggestions_leave_the_pending_list() {
    let mut s = Suggester::default();
    let g = s.suggest_known(&result(&["Dog"]), &mapping(), &[] as &[&str], 0.0).unwrap();
    assert_eq!(s.accept(g.id).unwrap(), g);
    assert!(s.pending().is_empty());
}

#[test]
fn gate_truth_table_is_exhaustive() {
    let m = mapping();
    let buf = full_buffer(12.0);
    let tops: [[&str; 4]; 5] = [
        ["Speech", "Music", "Wind", "Dog"],
        ["Dog", "Music", "Wind", "Speech"],
        ["Speech", "Dog", "Wind", "Music"],
        ["Speech", "Music", "Dog", "Wind"],
        ["Dog", "Typing", "Vacuum cleaner", "Wind"],
    ];
    for (ti, top) in tops.iter().enumerate() {
        let unmapped = ti == 0;
        for level in [30.0, 44.9, 45.0, 50.0, 74.9, 75.0, 90.0] {
            for mode in [ListeningMode::Quiet, ListeningMode::Loud] {
                let expect = unmapped && level >= if mode == ListeningMode::Quiet { 45.0 } else { 75.0 };
                let mut s = Suggester::default();
                let fired = s.gate_unknown(&result(top), &m, level, mode, &buf, 0.0);
                assert_eq!(fired.is_some(), expect, "{top:?} {level} {mode:?}");
                assert_eq!(unknown_gate_fires(&result(top), &m, level, mode), expect);
                if let Some((sug, snap)) = fired {
                    assert!(matches!(sug.kind, SuggestionKind::SaveUnknown { .. }));
                    assert_eq!(snap.len(), 10 * RATE as usize);
                }
            }
        }
    }
}

#[test]
fn snapshot_is_the_final_ten_seconds() {
    let buf = full_buffer(13.5);
    let total = (13.5 * RATE as f64) as usize;
    let (_, snap) = Suggester::default().gate_unknown(&result(&["Speech"]), &mapping(), 50.0, ListeningMode::Quiet, &buf, 0.0).unwrap();
    let expect: Vec<f32> = (total - 160_000..total).map(|i| i as f32).collect();
    assert_eq!(snap.samples, expect);
}

#[test]
fn short_buffers_and_empty_results_never_fire() {
    let small = RollingBuffer::with_duration(5.0, RATE);
    let mut s = Suggester::default();
    assert!(s.gate_unknown(&result(&["Speech"]), &mapping(), 90.0, ListeningMode::Quiet, &small, 0.0).is_none());
    assert!(s.gate_unknown(&ClassifierResult::empty(0.0), &mapping(), 90.0, ListeningMode::Quiet, &full_buffer(10.0), 0.0).is_none());
}

proptest! {
    #[test]
    fn any_mapped_leading_label_blocks_the_gate(
        labels in proptest::collection::vec(0usize..8, 1..8),
        mapped_slot in 0usize..3,
        level in 0.0f64..130.0,
        loud in any::<bool>(),
    ) {
        let names = ["Speech", "Music", "Wind", "Rain", "Engine", "Siren", "Bird", "Crowd"];
        let mut ls: Vec<&str> = labels.iter().map(|&i| names[i]).collect();
        let slot = mapped_slot.min(ls.len() - 1);
        ls[slot] = "Dog";
        let mode = if loud { ListeningMode::Loud } else { ListeningMode::Quiet };
        prop_assert!(!unknown_gate_fires(&result(&ls), &mapping(), level, mode));
    }
}

#[test]
fn mode_follows_the_trailing_median() {
    let mut e = ModeEstimator::new(30);
    assert_eq!(e.mode(), ListeningMode::Quiet);
    for _ in 0..16 {
        e.push(70.0);
    }
    assert_eq!(e.mode(), ListeningMode::Loud);
    for _ in 0..16 {
        e.push(40.0);
    }
    assert_eq!(e.mode(), ListeningMode::Quiet);
}

#[test]
fn mapping_text_round_trip_and_restriction() {
    let m = mapping();
    let back = LabelMapping::from_text(&m.to_text()).unwrap();
    assert_eq!(back, m);
    assert!(LabelMapping::from_text("no tab here").is_err());
    let r = m.restricted(|c| c != "dog");
    assert_eq!(r.get("Dog"), None);
    assert_eq!(r.get("Typing"), Some("keyboard_typing"));
}

#[test]
fn describer_templates() {
    let d = StubDescriber;
    let s = d.describe(&sine(4000.0, 2.0, 0.5)).unwrap();
    assert!(s.contains("high-frequency") && s.contains("tonal"), "{s}");
    let w = d.describe(&white(2.0, 1)).unwrap();
    assert!(w.contains("broadband"), "{w}");
    assert!(matches!(d.describe(&Waveform::silence(32_000, RATE)), Err(Error::DescriptionUnavailable(_))));
    assert!(d.describe(&sine(440.0, 0.5, 0.5)).is_err());
    assert_eq!(describe_sound(&Waveform::silence(32_000, RATE), &d), None);
}

#[test]
fn feature_oracle_for_a_sine() {
    // dominant bin and centroid of a bin-centred sine
    let f = SpectralFeatures::compute(&sine(1000.0, 1.0, 0.5)).unwrap();
    assert!((f.dominant_hz - 1000.0).abs() <= 16_000.0 / 512.0, "{f:?}");
    assert!((f.centroid_hz - 1000.0).abs() < 50.0, "{f:?}");
    assert!(f.flatness < 0.01);
    assert!((f.rms_dbfs - 10.0 * (0.125f64).log10()).abs() < 0.05);
}

#[test]
fn profile_matching_rules() {
    let j = LexicalJudge;
    let beeps = SensitivityProfile::new(1, "high-pitched, sharp beeps").unwrap();
    let whirr = SensitivityProfile::new(2, "mechanical whirring from machines or appliances").unwrap();
    assert_eq!(match_profile("high-pitched sharp beeps from a device", &[whirr.clone(), beeps.clone()], &j), Some(1));
    assert_eq!(match_profile("gentle rainfall outdoors", &[whirr.clone(), beeps.clone()], &j), None);
    let twin = SensitivityProfile::new(5, "high-pitched, sharp beeps").unwrap();
    let twin_low = SensitivityProfile::new(3, "high-pitched, sharp beeps").unwrap();
    assert_eq!(match_profile("sharp beeps", &[twin, twin_low], &j), Some(3));
    assert!(SensitivityProfile::new(4, "   ").is_err());
    // score oracle: {high, pitch, sharp, beep} vs {sharp, beep} = 2/4
    assert_eq!(j.score("sharp beeps", &beeps), 0.5);
}

#[test]
fn stemming_conflates_inflections() {
    assert_eq!(stem("beeps"), "beep");
    assert_eq!(stem("pitched"), "pitch");
    assert_eq!(stem("whirring"), "whirr");
    assert_eq!(stem("machines"), "machine");
    assert_eq!(stem("buzzes"), "buzz");
    assert_eq!(stem("class"), "class");
    assert_eq!(keywords("The Dogs and THE cats"), ["cat", "dog"].iter().map(|s| s.to_string()).collect());
}

#[test]
fn profile_set_crud_and_persistence() {
    let mut p = ProfileSet::new();
    let a = p.create("mechanical whirring from machines or appliances").unwrap();
    let b = p.create("high-pitched, sharp beeps").unwrap();
    assert!(p.create("").is_err());
    assert_eq!(p.list().len(), 2);
    p.edit(b, "deep rumbling trucks").unwrap();
    assert!(p.get(b).unwrap().keywords.contains("truck"));
    assert_eq!(match_profile("sharp beeps", p.list(), &LexicalJudge), None);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profiles.tsv");
    p.save(&path).unwrap();
    assert_eq!(ProfileSet::load(&path).unwrap(), p);
    p.delete(a).unwrap();
    assert!(p.get(a).is_err());
    assert_eq!(match_profile("mechanical whirring machines", p.list(), &LexicalJudge), None);
    assert_eq!(p.create("x").unwrap(), b + 1);
    assert_eq!(ProfileSet::load(dir.path().join("absent")).unwrap().list().len(), 0);
}

#[test]
fn stub_classifier_recognises_toy_classes() {
    let c = StubClassifier::toy(6, 11).unwrap();
    let r = classify_tick(&sine(440.0, 1.0, 0.3), &c, 0.0);
    assert_eq!(r.labels[0].0, "tone", "{r:?}");
    assert!(r.labels.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(classify_tick(&Waveform::silence(16_000, RATE), &c, 0.0).labels.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut correct = 0;
    for class in crate::datagen::TOY_CLASSES {
        for _ in 0..4 {
            let r = classify_tick(&synth_clip(class, 1.0, &mut rng).unwrap(), &c, 0.0);
            correct += (r.labels[0].0 == class) as usize;
        }
    }
    assert!(correct >= 20, "{correct}/24");
}

#[test]
fn engine_ticks_once_per_second_of_audio() {
    let mut e = ContextEngine::stub(RATE).unwrap();
    let x = sine(440.0, 3.5, 0.3);
    let mut ticks = Vec::new();
    for chunk in x.samples.chunks(777) {
        for ev in e.feed(chunk, &[] as &[&str]) {
            if let ContextEvent::Detection(r) = ev {
                ticks.push(r.timestamp);
            }
        }
    }
    assert_eq!(ticks, vec![1.0, 2.0, 3.0]);
}

#[test]
fn engine_suggests_an_inactive_detected_class() {
    let mut e = ContextEngine::stub(RATE).unwrap();
    let x = sine(440.0, 1.0, 0.3);
    let evs = e.feed(&x.samples, &[] as &[&str]);
    assert!(evs.iter().any(|ev| matches!(ev, ContextEvent::Suggestion(Suggestion { kind: SuggestionKind::KnownClass { class_id }, .. }) if class_id == "tone")));
    let mut e = ContextEngine::stub(RATE).unwrap();
    let evs = e.feed(&x.samples, &["tone"]);
    assert!(!evs.iter().any(|ev| matches!(ev, ContextEvent::Suggestion(Suggestion { kind: SuggestionKind::KnownClass { class_id }, .. }) if class_id == "tone")));
}

#[test]
fn engine_surfaces_unknown_sounds_that_match_a_profile() {
    let mut e = ContextEngine::stub(RATE).unwrap();
    e.mapping = LabelMapping::new();
    e.mode = ModeSetting::Fixed(ListeningMode::Quiet);
    e.profiles.create("high-frequency tonal whine").unwrap();
    let evs = e.feed(&sine(4000.0, 2.0, 0.3).samples, &[] as &[&str]);
    let hit = evs.iter().find_map(|ev| match ev {
        ContextEvent::UnknownMatched { suggestion, profile_id, .. } => Some((suggestion.id, *profile_id)),
        _ => None,
    });
    let (sid, pid) = hit.expect("no match");
    assert_eq!(pid, 1);
    assert_eq!(e.take_snapshot(sid).unwrap().len(), 16_000);
    // silence: nothing fires
    let mut quiet = ContextEngine::stub(RATE).unwrap();
    quiet.mapping = LabelMapping::new();
    quiet.profiles.create("high-frequency tonal whine").unwrap();
    let evs = quiet.feed(&vec![0.0; 32_000], &[] as &[&str]);
    assert!(evs.iter().all(|ev| matches!(ev, ContextEvent::Detection(_))));
}

