//! Episode sampling: shapes, disjointness and reproducibility.

use std::collections::HashSet;

use lcn4_core::data::{sample_episode, synth_generate, DatasetSplits, EpisodeSpec, Split, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset() -> DatasetSplits {
    synth_generate(&SynthSpec {
        base: 8,
        val: 4,
        novel: 6,
        per_class: 20,
        resolution: 16,
        seed: 3,
    })
    .unwrap()
}

pub fn run() -> String {
    let data = dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    for (shot, support) in [(1, 5), (5, 25)] {
        let spec = EpisodeSpec {
            way: 5,
            shot,
            query: 15,
        };
        let ep = sample_episode(&data, Split::Novel, spec, &mut rng).unwrap();
        assert_eq!(ep.support.len(), support);
        assert_eq!(ep.support_labels.len(), support);
        assert_eq!(ep.query.len(), 75);
        assert_eq!(ep.query_labels.len(), 75);
        let images = ep.support_images(&data);
        assert_eq!(images.shape(), &[support, 3, 16, 16]);
        assert_eq!(ep.query_images(&data).shape()[0], 75);
    }

    // Support and query never share an image, all classes come from the
    // split, and labels follow the class draw.
    let novel: HashSet<usize> = data.classes_in(Split::Novel).into_iter().collect();
    let episodes = 1000;
    for i in 0..episodes {
        let spec = EpisodeSpec {
            way: 5,
            shot: 1 + i % 5,
            query: 15,
        };
        let ep = sample_episode(&data, Split::Novel, spec, &mut rng).unwrap();
        let support: HashSet<_> = ep.support.iter().collect();
        let query: HashSet<_> = ep.query.iter().collect();
        assert_eq!(support.len(), ep.support.len(), "repeated support image");
        assert_eq!(query.len(), ep.query.len(), "repeated query image");
        assert!(support.is_disjoint(&query), "episode {i} reuses an image");
        assert_eq!(ep.classes.iter().collect::<HashSet<_>>().len(), 5);
        assert!(ep.classes.iter().all(|c| novel.contains(c)));
        for (&(class, _), &label) in ep.support.iter().zip(&ep.support_labels) {
            assert_eq!(ep.classes[label], class);
        }
        for (&(class, _), &label) in ep.query.iter().zip(&ep.query_labels) {
            assert_eq!(ep.classes[label], class);
        }
    }

    // The same seed draws the same episodes; another seed does not.
    let draw = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20)
            .map(|_| {
                let spec = EpisodeSpec {
                    way: 5,
                    shot: 1,
                    query: 15,
                };
                sample_episode(&data, Split::Novel, spec, &mut rng).unwrap()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(42), draw(42));
    assert_ne!(draw(42), draw(43));

    // Six-way episodes use every novel class.
    let spec = EpisodeSpec {
        way: 6,
        shot: 5,
        query: 15,
    };
    let ep = sample_episode(&data, Split::Novel, spec, &mut rng).unwrap();
    assert_eq!((ep.support.len(), ep.query.len()), (30, 90));
    assert_eq!(ep.classes.iter().collect::<HashSet<_>>(), novel.iter().collect());
    let seven = EpisodeSpec { way: 7, ..spec };
    assert!(sample_episode(&data, Split::Novel, seven, &mut rng).is_err());

    format!("5/25 support and 75 query, {episodes} episodes disjoint, seeded draws repeat, 6-way supported")
}
