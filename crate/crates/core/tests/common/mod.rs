//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sttune::builder::{InMemoryCorpora, LanguageSelection, MixtureEntry, MixtureSpec};
use sttune::schema::{Example, FieldMap};

const LATIN: [&str; 14] = ["ka", "lo", "mi", "ne", "ru", "ta", "vo", "si", "pe", "da", "go", "fu", "bi", "ze"];
const CYRILLIC: [&str; 14] = ["ка", "ло", "ми", "не", "ру", "та", "во", "си", "пе", "да", "го", "фу", "би", "зе"];

/// Pseudo-words of three syllables in Latin or Cyrillic script.
pub fn vocab(rng: &mut ChaCha8Rng, cyrillic: bool, n: usize) -> Vec<String> {
    let syl = if cyrillic { &CYRILLIC } else { &LATIN };
    (0..n)
        .map(|_| (0..3).map(|_| *syl.choose(rng).unwrap()).collect::<String>())
        .collect()
}

pub fn words(rng: &mut ChaCha8Rng, v: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| v.choose(rng).unwrap().clone()).collect()
}

pub fn fields(pairs: &[(&str, String)]) -> FieldMap {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

pub const LEARNING_LANGS: [(&str, bool); 2] = [("en", false), ("ru", true)];

/// Training corpora for two tasks in two languages. In both tasks a
/// statement is true when its parts share words: an xquad answer is a span
/// of its context, a pawsx positive is its first text with two words swapped.
pub fn learning_corpora(seed: u64, rows: usize) -> InMemoryCorpora {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xq = Vec::new();
    let mut px = Vec::new();
    for (lang, cyr) in LEARNING_LANGS {
        let v = vocab(&mut rng, cyr, 3000);
        for i in 0..rows {
            let ctx = words(&mut rng, &v, 12);
            let s = rng.gen_range(0..10);
            let ans = ctx[s..s + 2].join(" ");
            let f = fields(&[
                ("context", ctx.join(" ")),
                ("question", words(&mut rng, &v, 3).join(" ")),
                ("answer", ans.clone()),
            ]);
            xq.push(Example::new(format!("q-{lang}-{i}"), lang, f).with_gold(ans));
            let t1 = words(&mut rng, &v, 8);
            let pos = i % 2 == 0;
            let t2 = if pos {
                let mut t = t1.clone();
                t.swap(1, 5);
                t
            } else {
                words(&mut rng, &v, 8)
            };
            let f = fields(&[("text1", t1.join(" ")), ("text2", t2.join(" "))]);
            px.push(Example::new(format!("p-{lang}-{i}"), lang, f).with_gold(if pos { "1" } else { "0" }));
        }
    }
    let mut c = InMemoryCorpora::default();
    c.insert("xquad", xq);
    c.insert("pawsx", px);
    c
}

/// Two-task, two-language spec; `quota` true and `quota` false statements
/// per (dataset, language).
pub fn learning_spec(quota: usize, seed: u64) -> MixtureSpec {
    let entry = |id: &str| MixtureEntry {
        dataset_id: id.into(),
        task_id: id.into(),
        manifest: None,
        languages: None,
    };
    MixtureSpec {
        entries: vec![entry("xquad"), entry("pawsx")],
        languages: LanguageSelection::Explicit(LEARNING_LANGS.iter().map(|(l, _)| l.to_string()).collect()),
        per_truth_quota: quota,
        seed: Some(seed),
        ..MixtureSpec::default()
    }
}

/// Held-out xcopa examples: the right choice reuses premise words, the
/// wrong one does not. Choice order alternates.
pub fn heldout_xcopa(seed: u64, per_language: usize) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (lang, cyr) in LEARNING_LANGS {
        let v = vocab(&mut rng, cyr, 3000);
        for i in 0..per_language {
            let prem = words(&mut rng, &v, 8);
            let mut good: Vec<String> = prem.choose_multiple(&mut rng, 3).cloned().collect();
            good.extend(words(&mut rng, &v, 1));
            good.shuffle(&mut rng);
            let (good, bad) = (good.join(" "), words(&mut rng, &v, 4).join(" "));
            let (c1, c2) = if i % 2 == 0 { (bad, good.clone()) } else { (good.clone(), bad) };
            let f = fields(&[("premise", prem.join(" ")), ("choice1", c1), ("choice2", c2)]);
            out.push(Example::new(format!("c-{lang}-{i}"), lang, f).with_gold(good));
        }
    }
    out
}

/// sib200-shaped topic rows with labels cycling over the seven topics.
pub fn topic_rows(rng: &mut ChaCha8Rng, lang: &str, n: usize) -> Vec<Example> {
    const TOPICS: [&str; 7] = ["science/technology", "travel", "politics", "sports", "health", "entertainment", "geography"];
    let v = vocab(rng, lang == "ru", 500);
    (0..n)
        .map(|i| {
            let f = fields(&[("text", words(rng, &v, 10).join(" "))]);
            Example::new(format!("{lang}-{i}"), lang, f).with_gold(TOPICS[i % TOPICS.len()])
        })
        .collect()
}

/// pawsx-shaped rows alternating positive and negative.
pub fn pair_rows(rng: &mut ChaCha8Rng, lang: &str, n: usize) -> Vec<Example> {
    let v = vocab(rng, false, 500);
    (0..n)
        .map(|i| {
            let f = fields(&[("text1", words(rng, &v, 6).join(" ")), ("text2", words(rng, &v, 6).join(" "))]);
            Example::new(format!("{lang}-{i}"), lang, f).with_gold(if i % 2 == 0 { "1" } else { "0" })
        })
        .collect()
}
