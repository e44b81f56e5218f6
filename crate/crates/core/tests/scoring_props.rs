use nprompt_core::pipeline::KeywordTaxonomy;
use nprompt_core::scoring::{
    pick_score, preference_probability, reward, EmbeddingPair, ImageBackend, ImageRef, Scorer,
    ScoringError, StubImageBackend, StubPreferenceScorer,
};
use proptest::prelude::*;

/// Scores each image by an inner product with its own embedding.
struct Embedded {
    text: Vec<f64>,
    images: Vec<(String, Vec<f64>)>,
}

impl Scorer for Embedded {
    fn score(&self, _: &str, image: &ImageRef) -> Result<f64, ScoringError> {
        let v = &self.images.iter().find(|(id, _)| *id == image.id).unwrap().1;
        pick_score(&EmbeddingPair::new(self.text.clone(), v.clone())?)
    }
}

fn vecs(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, d)
}

fn img(id: &str) -> ImageRef {
    ImageRef { id: id.into(), url: None, source_prompt: None }
}

proptest! {
    #[test]
    fn reward_is_antisymmetric((t, a, b) in (1usize..16).prop_flat_map(|d| (vecs(d), vecs(d), vecs(d)))) {
        let s = Embedded { text: t, images: vec![("a".into(), a), ("b".into(), b)] };
        let ab = reward("x", &img("a"), &img("b"), &s).unwrap();
        let ba = reward("x", &img("b"), &img("a"), &s).unwrap();
        prop_assert!((ab + ba).abs() <= 1e-12);
        prop_assert_eq!(reward("x", &img("a"), &img("a"), &s).unwrap(), 0.0);
    }

    #[test]
    fn pick_score_is_linear_in_the_image((t, v) in (1usize..16).prop_flat_map(|d| (vecs(d), vecs(d))), c in -5.0f64..5.0) {
        let base = pick_score(&EmbeddingPair::new(t.clone(), v.clone()).unwrap()).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let s = pick_score(&EmbeddingPair::new(t, scaled).unwrap()).unwrap();
        prop_assert!((s - c * base).abs() <= 1e-9);
    }

    #[test]
    fn preferences_are_complementary(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let p = preference_probability(a, b);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p + preference_probability(b, a) - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn preference_of_one_over_half() {
    // independent closed form: e^1 / (e^1 + e^0.5)
    let want = 1f64.exp() / (1f64.exp() + 0.5f64.exp());
    assert!((want - 0.6225).abs() < 1e-4);
    assert!((preference_probability(1.0, 0.5) - want).abs() < 1e-15);
}

#[test]
fn stub_preference_of_six_keywords_over_none() {
    let tax = KeywordTaxonomy::bundled();
    let scorer = StubPreferenceScorer::new(&tax, 3);
    let x = "a boy on a horse";
    let u = StubImageBackend.generate(x, 9).unwrap();
    let o = StubImageBackend
        .generate("a boy on a horse, anime, pablo picasso, pixel art, octane render, cute, long shot", 9)
        .unwrap();
    let p = preference_probability(scorer.score(x, &o).unwrap(), scorer.score(x, &u).unwrap());
    let want = 1.0 / (1.0 + (-0.6f64).exp());
    assert!((p - want).abs() < 1e-12);
    assert_eq!((p * 1000.0).round() / 10.0, 64.6);
}
