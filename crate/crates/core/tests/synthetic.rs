use cdn_core::metrics::{recall_at_k, Group};
use cdn_core::synthetic::{bag_of_tokens_scores, marker_bag_scores, tie_averaged_r1, Split, SyntheticSpec, SyntheticTask, MARKER};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn groups(spec: &SyntheticSpec, score: impl Fn(&cdn_core::data::DialogueExample) -> Vec<f64>) -> Vec<Group> {
    spec.examples(Split::Train)
        .unwrap()
        .iter()
        .map(|ex| Group::new(score(ex), ex.candidates.iter().map(|c| c.label).collect()).unwrap())
        .collect()
}

#[test]
fn positive_slot_is_uniform() {
    for task in [SyntheticTask::SpeakerEcho, SyntheticTask::UtteranceOrder] {
        let spec = SyntheticSpec { task, n_train: 10_000, seed: 3, ..SyntheticSpec::default() };
        let mut counts = vec![0f64; spec.n_candidates];
        for ex in spec.examples(Split::Train).unwrap() {
            counts[ex.candidates.iter().position(|c| c.label == 1).unwrap()] += 1.0;
        }
        let expected = 10_000.0 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.01, "{task}: counts {counts:?}, p = {p}");
    }
}

#[test]
fn speaker_blind_baseline_is_chance() {
    let spec = SyntheticSpec { n_candidates: 2, n_train: 2000, ..SyntheticSpec::default() };
    let g = groups(&spec, bag_of_tokens_scores);
    // Both candidates occur in the context once, so every group is a tie.
    assert!(g.iter().all(|g| g.scores[0] == g.scores[1] && g.scores[0] > 0.0));
    assert_eq!(tie_averaged_r1(&g), 0.5);
}

#[test]
fn position_blind_baseline_is_chance() {
    let spec = SyntheticSpec { task: SyntheticTask::UtteranceOrder, n_candidates: 2, n_train: 2000, ..SyntheticSpec::default() };
    let marker = spec.vocab().id(MARKER).unwrap();
    let g = groups(&spec, |ex| marker_bag_scores(ex, marker));
    assert_eq!(tie_averaged_r1(&g), 0.5);
    // Breaking the ties by slot still gives chance, since slots are shuffled.
    let r1 = g.iter().map(|g| recall_at_k(g, 1).unwrap()).sum::<f64>() / g.len() as f64;
    assert!((r1 - 0.5).abs() <= 0.05, "{r1}");
}

#[test]
fn candidates_share_length_and_speaker() {
    for task in [SyntheticTask::SpeakerEcho, SyntheticTask::UtteranceOrder] {
        let spec = SyntheticSpec { task, n_train: 500, ..SyntheticSpec::default() };
        for ex in spec.examples(Split::Train).unwrap() {
            let c0 = &ex.candidates[0];
            assert!(ex.candidates.iter().all(|c| c.tokens.len() == c0.tokens.len() && c.speaker == c0.speaker));
            assert_eq!(ex.context.len(), spec.n_utts);
        }
    }
}

#[test]
fn seeds_change_data_and_splits_differ() {
    let a = SyntheticSpec { seed: 1, n_train: 50, n_dev: 50, ..SyntheticSpec::default() };
    let b = SyntheticSpec { seed: 2, ..a.clone() };
    assert_ne!(a.jsonl(Split::Train).unwrap(), b.jsonl(Split::Train).unwrap());
    assert_ne!(a.jsonl(Split::Train).unwrap(), a.jsonl(Split::Dev).unwrap());
    assert_eq!(a.jsonl(Split::Dev).unwrap(), a.clone().jsonl(Split::Dev).unwrap());
}
