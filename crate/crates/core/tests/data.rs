use std::collections::BTreeSet;

use dart_core::data::{read_dataset, split, synth_dataset, write_dataset, SynthSpec};
use dart_core::Dataset;
use proptest::prelude::*;

fn spec() -> impl Strategy<Value = SynthSpec> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..5, 1usize..6, 0.0f64..2.0, 0.0f64..2.0, any::<u64>()).prop_map(
        |(a, s, u, t, f, scale, noise, seed)| SynthSpec {
            n_accents: a,
            speakers_per_accent: s,
            utterances_per_speaker: u,
            frames: t,
            feature_dim: f,
            accent_scale: scale,
            speaker_scale: 2.0 - scale,
            noise_scale: noise,
            seed,
            ..SynthSpec::default()
        },
    )
}

fn bits(d: &Dataset) -> Vec<u64> {
    d.utterances.iter().flat_map(|u| u.flat_features()).map(f64::to_bits).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn synthetic_sets_are_well_formed(spec in spec()) {
        let d = synth_dataset(&spec).unwrap();
        d.validate().unwrap();
        prop_assert_eq!(d.len(), spec.n_accents * spec.speakers_per_accent * spec.utterances_per_speaker);
        let ids: BTreeSet<&str> = d.utterances.iter().map(|u| u.utterance_id.as_str()).collect();
        prop_assert_eq!(ids.len(), d.len());
        let accents: BTreeSet<&str> = d.accent_labels().into_iter().collect();
        prop_assert_eq!(accents.len(), spec.n_accents);
        let pairs: BTreeSet<(&str, &str)> =
            d.utterances.iter().map(|u| (u.speaker_id.as_str(), u.accent_id.as_str())).collect();
        let speakers: BTreeSet<&str> = pairs.iter().map(|p| p.0).collect();
        prop_assert_eq!(speakers.len(), pairs.len());
        prop_assert_eq!(speakers.len(), spec.n_accents * spec.speakers_per_accent);
        for u in &d.utterances {
            prop_assert_eq!(u.frames(), spec.frames);
            prop_assert_eq!(u.feature_dim(), spec.feature_dim);
        }
        prop_assert_eq!(bits(&synth_dataset(&spec).unwrap()), bits(&d));
    }

    #[test]
    fn dataset_files_round_trip(spec in spec()) {
        let d = synth_dataset(&spec).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(bits(&back), bits(&d));
    }

    #[test]
    fn split_partitions_each_stratum(spec in spec(), fraction in 0.0f64..0.99, seed in any::<u64>()) {
        let d = synth_dataset(&spec).unwrap();
        let (train, valid) = split(&d, fraction, seed).unwrap();
        prop_assert_eq!(train.len() + valid.len(), d.len());
        let ids = |x: &Dataset| x.utterances.iter().map(|u| u.utterance_id.clone()).collect::<BTreeSet<_>>();
        prop_assert!(ids(&train).is_disjoint(&ids(&valid)));
        let all: BTreeSet<String> = ids(&train).union(&ids(&valid)).cloned().collect();
        prop_assert_eq!(all, ids(&d));
        let per_stratum = (fraction * spec.utterances_per_speaker as f64).floor() as usize;
        prop_assert_eq!(valid.len(), per_stratum * spec.n_accents * spec.speakers_per_accent);
        prop_assert_eq!(split(&d, fraction, seed).unwrap().1, valid);
    }
}

#[test]
fn default_split_holds_out_one_utterance_per_speaker() {
    let d = synth_dataset(&SynthSpec::default()).unwrap();
    let (train, valid) = split(&d, 0.1, 42).unwrap();
    assert_eq!(valid.len(), 24);
    assert_eq!(train.len(), 216);
    let speakers: BTreeSet<&str> = valid.utterances.iter().map(|u| u.speaker_id.as_str()).collect();
    assert_eq!(speakers.len(), 24);
    assert!(split(&d, 0.0, 42).unwrap().1.is_empty());
    assert!(split(&d, 1.0, 42).is_err());
}

#[test]
fn mixed_frame_counts_load() {
    let text = concat!(
        r#"{"utterance_id":"u1","speaker_id":"s","accent_id":"a","features":[[1.0,2.0]]}"#,
        "\n",
        r#"{"utterance_id":"u2","speaker_id":"s","accent_id":"a","features":[[1.0,2.0],[3.0,4.0],[5.0,6.0]]}"#,
        "\n"
    );
    let d = read_dataset(text.as_bytes()).unwrap();
    assert_eq!(d.utterances.iter().map(|u| u.frames()).collect::<Vec<_>>(), vec![1, 3]);
}
