//! Fixed subject–verb–object–modifier phrase grammar for synthetic corpora.
//!
//! The subject phrase is the sample context; the reference and generation are
//! continuations of the form `verb object modifier` (8 tokens).

use std::sync::OnceLock;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::perturb::{perturb, PerturbationKind, PerturbationSpec};
use super::{Corpus, CorpusKind, Sample};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

const SUBJECTS: [&str; 20] = [
    "the old farmer",
    "the young sailor",
    "my little sister",
    "the tired doctor",
    "our new teacher",
    "the quiet baker",
    "his best friend",
    "the brave soldier",
    "that clever student",
    "the shy painter",
    "her older brother",
    "the local mayor",
    "the hungry traveler",
    "this grumpy neighbor",
    "the famous singer",
    "the careful pilot",
    "your kind uncle",
    "the busy nurse",
    "one lonely poet",
    "the proud captain",
];

const VERBS: [&str; 20] = [
    "quietly painted",
    "slowly repaired",
    "proudly carried",
    "carefully cleaned",
    "happily bought",
    "finally found",
    "secretly hid",
    "gently lifted",
    "quickly sold",
    "nervously opened",
    "patiently built",
    "suddenly dropped",
    "gladly borrowed",
    "barely noticed",
    "eagerly watched",
    "calmly measured",
    "boldly climbed",
    "softly touched",
    "angrily kicked",
    "silently guarded",
];

const OBJECTS: [&str; 20] = [
    "the wooden fence",
    "some fresh bread",
    "an empty basket",
    "the broken clock",
    "that shiny bicycle",
    "the heavy box",
    "every golden coin",
    "the blue kite",
    "one rusty key",
    "the tall ladder",
    "their small boat",
    "the paper lantern",
    "some ripe apples",
    "the silver bell",
    "an ancient map",
    "the green umbrella",
    "this leather bag",
    "the stone statue",
    "her favorite hat",
    "the cracked mirror",
];

const MODIFIERS: [&str; 20] = [
    "near the river",
    "after the storm",
    "before the sunrise",
    "behind the barn",
    "during the festival",
    "inside the castle",
    "beside the lake",
    "under the bridge",
    "across the valley",
    "through the forest",
    "within the hour",
    "along the coast",
    "outside the station",
    "beyond the hills",
    "at the market",
    "on the rooftop",
    "by the fireplace",
    "over the weekend",
    "around the corner",
    "despite the rain",
];

/// The four template slots, in sentence order.
pub const GRAMMAR_SLOTS: [&[&str]; 4] = [&SUBJECTS, &VERBS, &OBJECTS, &MODIFIERS];

/// Sorted, de-duplicated set of grammar terminals.
pub fn vocabulary() -> &'static [&'static str] {
    static VOCAB: OnceLock<Vec<&'static str>> = OnceLock::new();
    VOCAB.get_or_init(|| {
        let mut words: Vec<&'static str> = GRAMMAR_SLOTS
            .iter()
            .flat_map(|slot| slot.iter().flat_map(|p| p.split_whitespace()))
            .collect();
        words.sort_unstable();
        words.dedup();
        words
    })
}

/// Which generation column a synthetic corpus carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "grammar")]
pub enum Grammar {
    /// Generation is a copy of the reference.
    RefGrammar,
    /// Generation is an independent draw from the reference grammar.
    NearGrammar,
    /// Generation is the reference passed through a fixed perturbation.
    CorruptGrammar { kind: PerturbationKind, level: f64 },
}

impl Grammar {
    pub fn corrupt(level: f64) -> Self {
        Grammar::CorruptGrammar {
            kind: PerturbationKind::WordSubstitute,
            level,
        }
    }
}

fn continuation(rng: &mut rng::Rng) -> String {
    let v = VERBS[rng.gen_range(0..VERBS.len())];
    let o = OBJECTS[rng.gen_range(0..OBJECTS.len())];
    let m = MODIFIERS[rng.gen_range(0..MODIFIERS.len())];
    format!("{v} {o} {m}")
}

/// Deterministic synthetic conditional corpus of `n` samples.
///
/// Contexts and references come from one sub-stream and the generation column
/// from others, so every grammar shares identical contexts and references for
/// the same seed.
pub fn make_synthetic(grammar: Grammar, n: usize, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::validation("synthetic corpus size must be at least 1"));
    }
    if let Grammar::CorruptGrammar { kind, level } = grammar {
        PerturbationSpec { kind, level, seed }.validate()?;
    }
    let base = rng::derive(seed, stream::SYNTH);
    let mut ref_rng = rng::rng_from(rng::derive_indexed(base, 0));
    let mut gen_rng = rng::rng_from(rng::derive_indexed(base, 1));
    let perturb_base = rng::derive(seed, stream::PERTURB);

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let context = SUBJECTS[ref_rng.gen_range(0..SUBJECTS.len())].to_string();
        let reference = continuation(&mut ref_rng);
        let generation = match grammar {
            Grammar::RefGrammar => reference.clone(),
            Grammar::NearGrammar => continuation(&mut gen_rng),
            Grammar::CorruptGrammar { kind, level } => perturb(
                &reference,
                &PerturbationSpec {
                    kind,
                    level,
                    seed: rng::derive_indexed(perturb_base, i as u64),
                },
            )?,
        };
        samples.push(Sample {
            id: format!("s{i:06}"),
            context,
            reference,
            generation,
        });
    }
    Corpus::new(samples, CorpusKind::Conditional)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn slots_have_twenty_terminals_and_fixed_lengths() {
        for (slot, len) in GRAMMAR_SLOTS.iter().zip([3, 2, 3, 3]) {
            assert_eq!(slot.len(), 20);
            assert!(slot.iter().all(|p| p.split_whitespace().count() == len));
            let distinct: BTreeSet<_> = slot.iter().collect();
            assert_eq!(distinct.len(), 20);
        }
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = make_synthetic(Grammar::RefGrammar, 5, 1).unwrap();
        let b = make_synthetic(Grammar::RefGrammar, 5, 1).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_ne!(a.to_jsonl(), make_synthetic(Grammar::RefGrammar, 5, 2).unwrap().to_jsonl());
    }

    #[test]
    fn near_grammar_vocabulary_is_a_subset() {
        // Enumerate terminals straight from the slot tables.
        let mut terminals = BTreeSet::new();
        for slot in GRAMMAR_SLOTS {
            for phrase in slot {
                for w in phrase.split_whitespace() {
                    terminals.insert(w);
                }
            }
        }
        let c = make_synthetic(Grammar::NearGrammar, 200, 4).unwrap();
        for s in c.samples() {
            for text in [&s.context, &s.reference, &s.generation] {
                for w in text.split_whitespace() {
                    assert!(terminals.contains(w), "{w} not a terminal");
                }
            }
        }
        assert!(c.samples().iter().any(|s| s.reference != s.generation));
    }

    #[test]
    fn corrupt_at_level_zero_equals_ref_grammar() {
        let a = make_synthetic(Grammar::RefGrammar, 50, 8).unwrap();
        let b = make_synthetic(Grammar::corrupt(0.0), 50, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn references_do_not_depend_on_grammar() {
        let a = make_synthetic(Grammar::NearGrammar, 30, 5).unwrap();
        let b = make_synthetic(Grammar::corrupt(0.3), 30, 5).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!((&x.context, &x.reference), (&y.context, &y.reference));
        }
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(make_synthetic(Grammar::RefGrammar, 0, 1).is_err());
    }
}
