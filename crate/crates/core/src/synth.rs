//! Templated contrastive corpus.
//!
//! Each record states a property of a subject. The correct candidate
//! restates it with a synonym, possibly in another template; the incorrect
//! candidate keeps the reference wording and either negates it or swaps in
//! an antonym, so it shares more words with the reference than the correct
//! candidate does.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Record;

const SUBJECTS: &[&str] = &[
    "the man", "the woman", "the child", "the dog", "the teacher", "my neighbor", "the old farmer",
    "the cat", "our guest", "the driver", "the singer", "the doctor", "her brother", "the baker",
    "the student", "his aunt",
];

/// Two synonym groups with opposite meanings.
const ADJECTIVES: &[(&[&str], &[&str])] = &[
    (&["happy", "glad", "cheerful"], &["sad", "unhappy", "gloomy"]),
    (&["big", "large", "huge"], &["small", "little", "tiny"]),
    (&["fast", "quick", "speedy"], &["slow", "sluggish", "unhurried"]),
    (&["hot", "warm"], &["cold", "chilly"]),
    (&["rich", "wealthy"], &["poor", "broke"]),
    (&["loud", "noisy"], &["quiet", "silent"]),
    (&["clean", "tidy"], &["dirty", "messy"]),
    (&["strong", "powerful"], &["weak", "feeble"]),
    (&["calm", "relaxed"], &["nervous", "anxious"]),
    (&["kind", "friendly"], &["cruel", "hostile"]),
    (&["tired", "exhausted"], &["energetic", "lively"]),
    (&["honest", "truthful"], &["dishonest", "deceitful"]),
];

const VERBS: &[(&[&str], &[&str])] = &[
    (&["likes", "loves", "enjoys"], &["hates", "dislikes", "detests"]),
    (&["accepted", "approved"], &["rejected", "refused"]),
    (&["found", "located"], &["lost", "misplaced"]),
    (&["built", "assembled"], &["destroyed", "demolished"]),
];

const OBJECTS: &[&str] = &[
    "the plan", "the new house", "the red car", "the music", "the old bridge", "the letter",
    "the garden", "the idea", "the book", "the gift",
];

/// Copular templates; the negated form inserts `not` after the verb.
const ADJ_TEMPLATES: &[(&str, &str)] = &[
    ("{s} is {a}", "{s} is not {a}"),
    ("{s} was {a} yesterday", "{s} was not {a} yesterday"),
    ("{s} is very {a}", "{s} is not very {a}"),
    ("{s} seems {a} today", "{s} does not seem {a} today"),
];

const VERB_TEMPLATES: &[(&str, &str)] = &[
    ("{s} {v} {o}", "{s} never {v} {o}"),
    ("everyone knows {s} {v} {o}", "everyone knows {s} never {v} {o}"),
];

fn fill(template: &str, s: &str, word_slot: &str, word: &str, o: &str) -> String {
    let text = template
        .replace("{s}", s)
        .replace(word_slot, word)
        .replace("{o}", o);
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect::<String>() + ".",
        None => text,
    }
}

/// Picks a member of `group` other than `word` when one exists.
fn other<'a, R: Rng + ?Sized>(group: &[&'a str], word: &str, rng: &mut R) -> &'a str {
    let rest: Vec<&str> = group.iter().copied().filter(|w| *w != word).collect();
    rest.choose(rng).copied().unwrap_or(group[0])
}

/// One (reference, correct, incorrect) triple.
pub fn synth_triplet<R: Rng + ?Sized>(rng: &mut R) -> (String, String, String) {
    let s = *SUBJECTS.choose(rng).expect("subjects");
    let o = *OBJECTS.choose(rng).expect("objects");
    let (lexicon, templates, slot) = if rng.random_bool(0.7) {
        (ADJECTIVES, ADJ_TEMPLATES, "{a}")
    } else {
        (VERBS, VERB_TEMPLATES, "{v}")
    };
    let &(pos, neg) = lexicon.choose(rng).expect("lexicon");
    let (same, opposite) = if rng.random_bool(0.5) { (pos, neg) } else { (neg, pos) };
    let word = *same.choose(rng).expect("group");
    let synonym = other(same, word, rng);
    let ref_t = rng.random_range(0..templates.len());
    let cand_t = rng.random_range(0..templates.len());
    let reference = fill(templates[ref_t].0, s, slot, word, o);
    let correct = fill(templates[cand_t].0, s, slot, synonym, o);
    let incorrect = if rng.random_bool(0.5) {
        fill(templates[ref_t].1, s, slot, word, o)
    } else {
        let antonym = *opposite.choose(rng).expect("group");
        fill(templates[ref_t].0, s, slot, antonym, o)
    };
    (reference, correct, incorrect)
}

/// `count` contrastive records of dataset `dataset`, reproducible from `seed`.
pub fn synth_records(count: usize, seed: u64, dataset: &str) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (reference, correct, incorrect) = synth_triplet(&mut rng);
            Record {
                id: format!("{dataset}:{}", i + 1),
                dataset: dataset.to_string(),
                reference,
                correct,
                incorrect: Some(incorrect),
                human_score: None,
            }
        })
        .collect()
}
