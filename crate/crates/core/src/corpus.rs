//! Seeded generator of synthetic biography QA data in the shape of SQuAD 2.0.
//!
//! Every paragraph describes one invented person through a subset of eight
//! attributes. Questions ask about one attribute; when the paragraph omits
//! it the question is unanswerable. Entity names are drawn from large
//! invented vocabularies shared by all splits, so a model trained on a small
//! split has seen only part of each vocabulary.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{Aspect, Topic, TopicPool};
use crate::error::{Error, Result};
use crate::types::{AnnotatedExample, Context, Question, Reference};

const VOCAB_SEED: u64 = 0x5eed_b10;
/// First names, last names, cities, countries, organizations, illnesses, instruments.
const VOCAB_SIZES: [usize; 7] = [40, 80, 80, 50, 60, 40, 30];
const YEARS: std::ops::Range<u32> = 1800..1900;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Attr {
    City,
    Year,
    Occupation,
    Employer,
    Cause,
    Instrument,
    Country,
    Spouse,
}

const ATTRS: [Attr; 8] = [
    Attr::City,
    Attr::Year,
    Attr::Occupation,
    Attr::Employer,
    Attr::Cause,
    Attr::Instrument,
    Attr::Country,
    Attr::Spouse,
];

const OCCUPATIONS: &[&str] = &[
    "painter", "chemist", "sculptor", "architect", "poet", "astronomer", "botanist", "surgeon", "engraver",
    "cartographer", "composer", "lawyer", "merchant", "weaver", "geologist", "physician", "novelist", "diplomat",
    "printer", "jeweller", "mathematician", "playwright", "shipwright", "clockmaker", "historian", "economist",
    "philosopher", "photographer", "glassblower", "bookbinder", "navigator", "pharmacist", "zoologist", "banker",
    "brewer", "tailor", "potter", "locksmith", "librarian", "translator",
];

const ORG_KINDS: &[&str] = &["academy", "institute", "society", "company", "observatory", "conservatory"];
const CAUSE_KINDS: &[&str] = &["fever", "disease", "syndrome", "plague", "palsy"];
const INSTRUMENT_KINDS: &[&str] = &["harp", "horn", "lute", "flute", "drum", "fiddle", "pipe", "organ", "zither"];

const FILLER: &[&str] = &[
    "{F} was widely admired by contemporaries.",
    "Little is known about the early years of {F}.",
    "Several letters written by {F} survive in private collections.",
    "{F} travelled often and kept detailed journals.",
    "A portrait of {F} hangs in a regional gallery.",
    "Historians have debated the legacy of {F} for decades.",
    "{F} rarely spoke about personal matters in public.",
    "In later life {F} took an interest in gardening.",
    "Friends described {F} as patient and generous.",
    "{F} corresponded with many scholars of the period.",
];

/// Vocabularies of invented names, identical for every split.
#[derive(Debug, Clone)]
struct Vocab {
    first: Vec<String>,
    last: Vec<String>,
    cities: Vec<String>,
    countries: Vec<String>,
    orgs: Vec<String>,
    causes: Vec<String>,
    instruments: Vec<String>,
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    const ONSETS: &[&str] = &[
        "b", "br", "c", "d", "dr", "f", "g", "gr", "h", "k", "kl", "l", "m", "n", "p", "pr", "r", "s", "st", "t",
        "tr", "v", "z", "th", "sh",
    ];
    const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ae", "ei", "ou", "ia"];
    const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "m", "th", "x"];
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(NUCLEI.choose(rng).unwrap());
        w.push_str(CODAS.choose(rng).unwrap());
    }
    let mut chars = w.chars();
    let first = chars.next().unwrap().to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

impl Vocab {
    fn build() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(VOCAB_SEED);
        let mut used = BTreeSet::new();
        let mut words = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let syl = if rng.random::<f64>() < 0.5 { 2 } else { 3 };
                let w = pseudo_word(rng, syl);
                if used.insert(w.to_lowercase()) {
                    out.push(w);
                }
            }
            out
        };
        let [first, last, cities, countries, org_roots, cause_roots, instrument_roots] =
            VOCAB_SIZES.map(|n| words(&mut rng, n));
        let orgs = org_roots
            .iter()
            .map(|r| format!("{r} {}", ORG_KINDS.choose(&mut rng).unwrap()))
            .collect();
        let causes = cause_roots
            .iter()
            .map(|r| format!("{r} {}", CAUSE_KINDS.choose(&mut rng).unwrap()))
            .collect();
        let instruments = instrument_roots
            .iter()
            .map(|r| format!("{} {}", r.to_lowercase(), INSTRUMENT_KINDS.choose(&mut rng).unwrap()))
            .collect();
        Vocab { first, last, cities, countries, orgs, causes, instruments }
    }
}

struct Person {
    first: String,
    last: String,
    values: Vec<(Attr, String)>,
}

impl Person {
    fn sample(v: &Vocab, rng: &mut ChaCha8Rng) -> Self {
        let pick = |xs: &[String], rng: &mut ChaCha8Rng| xs.choose(rng).unwrap().clone();
        let values = ATTRS
            .iter()
            .map(|&a| {
                let value = match a {
                    Attr::City => pick(&v.cities, rng),
                    Attr::Year => rng.random_range(YEARS).to_string(),
                    Attr::Occupation => OCCUPATIONS.choose(rng).unwrap().to_string(),
                    Attr::Employer => format!("the {}", pick(&v.orgs, rng)),
                    Attr::Cause => pick(&v.causes, rng).to_lowercase(),
                    Attr::Instrument => pick(&v.instruments, rng),
                    Attr::Country => pick(&v.countries, rng),
                    Attr::Spouse => format!("{} {}", pick(&v.first, rng), pick(&v.last, rng)),
                };
                (a, value)
            })
            .collect();
        Person { first: pick(&v.first, rng), last: pick(&v.last, rng), values }
    }

    fn full(&self) -> String {
        format!("{} {}", self.first, self.last)
    }

    fn value(&self, a: Attr) -> &str {
        &self.values.iter().find(|(b, _)| *b == a).expect("all attributes sampled").1
    }
}

/// Sentence templates; `{F}` is the person's name, `{X}` the attribute value.
fn statements(a: Attr) -> &'static [&'static str] {
    match a {
        Attr::City => &["{F} was born in {X}.", "Born in {X}, {F} grew up near the harbour.", "{F} came from {X}."],
        Attr::Year => &["{F} was born in {X}.", "The year {X} saw the birth of {F}.", "{F}, born in {X}, was the eldest child."],
        Attr::Occupation => &["{F} worked as a {X}.", "By trade {F} was a {X}.", "{F} became a respected {X}."],
        Attr::Employer => &["{F} was employed by {X}.", "For many years {F} worked for {X}.", "{F} joined {X} as a young adult."],
        Attr::Cause => &["{F} died of {X}.", "{F} eventually succumbed to {X}.", "The cause of death of {F} was {X}."],
        Attr::Instrument => &["{F} played the {X}.", "{F} was an accomplished player of the {X}.", "{F} learned the {X} as a child."],
        Attr::Country => &["{F} was a citizen of {X}.", "{F} held the nationality of {X}.", "{F} later settled in {X} and became a citizen."],
        Attr::Spouse => &["{F} married {X}.", "{F} was the spouse of {X}.", "In adulthood {F} wed {X}."],
    }
}

fn questions(a: Attr) -> &'static [&'static str] {
    match a {
        Attr::City => &["Where was {F} born?", "In which city was {F} born?", "What is the birthplace of {F}?"],
        Attr::Year => &["When was {F} born?", "In what year was {F} born?", "What is the birth year of {F}?"],
        Attr::Occupation => &["What was the profession of {F}?", "What did {F} do for a living?", "What was {F}'s occupation?"],
        Attr::Employer => &["Which organization employed {F}?", "Who did {F} work for?", "What institution was {F} employed by?"],
        Attr::Cause => &["What did {F} die of?", "What was the cause of {F}'s death?", "What illness killed {F}?"],
        Attr::Instrument => &["What instrument did {F} play?", "Which instrument was {F} known for?", "What did {F} play?"],
        Attr::Country => &["What country was {F} a citizen of?", "What was the nationality of {F}?", "Which country did {F} belong to?"],
        Attr::Spouse => &["Who did {F} marry?", "Who was the spouse of {F}?", "To whom was {F} married?"],
    }
}

fn aspect_name(a: Attr) -> &'static str {
    match a {
        Attr::City | Attr::Year => "Early life",
        Attr::Occupation | Attr::Employer => "Career",
        Attr::Cause => "Death",
        Attr::Instrument => "Music",
        Attr::Country => "Citizenship",
        Attr::Spouse => "Family",
    }
}

/// Builds text while remembering where one marked value lands (in chars).
#[derive(Default)]
struct Writer {
    text: String,
    chars: usize,
}

impl Writer {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    /// Append a filled template and return the char range of `{X}` if present.
    fn sentence(&mut self, template: &str, name: &str, value: &str) -> Option<(usize, usize)> {
        if !self.text.is_empty() {
            self.push(" ");
        }
        let filled_prefix;
        let mut range = None;
        match template.split_once("{X}") {
            Some((pre, post)) => {
                filled_prefix = pre.replace("{F}", name);
                self.push(&filled_prefix);
                let start = self.chars;
                self.push(value);
                range = Some((start, self.chars));
                self.push(&post.replace("{F}", name));
            }
            None => self.push(&template.replace("{F}", name)),
        }
        range
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub examples: usize,
    /// Fraction of questions about an attribute the paragraph omits.
    pub unanswerable_rate: f64,
    /// Share of unanswerable questions that name a person absent from the paragraph.
    pub other_person_rate: f64,
    /// References per example (1 for training splits, 3 for test splits).
    pub references: usize,
    /// Attributes mentioned per paragraph, inclusive range.
    pub min_attrs: usize,
    pub max_attrs: usize,
    pub id_prefix: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            examples: 100,
            unanswerable_rate: 1.0 / 3.0,
            other_person_rate: 1.0,
            references: 1,
            min_attrs: 3,
            max_attrs: 6,
            id_prefix: "syn".into(),
        }
    }
}

struct Paragraph {
    text: String,
    mentioned: Vec<(Attr, (usize, usize))>,
}

fn paragraph(person: &Person, attrs: &[Attr], rng: &mut ChaCha8Rng) -> Paragraph {
    let mut w = Writer::default();
    let mut mentioned = Vec::new();
    let name = person.full();
    let mut order: Vec<Option<Attr>> = attrs.iter().copied().map(Some).collect();
    order.extend(std::iter::repeat_n(None, rng.random_range(0..=2)));
    order.shuffle(rng);
    // open with the full name so the subject is introduced
    let intro = format!("{name} is remembered in local histories.");
    w.push(&intro);
    for slot in order {
        match slot {
            Some(a) => {
                let t = statements(a).choose(rng).unwrap();
                let who = if rng.random::<f64>() < 0.5 { person.first.as_str() } else { name.as_str() };
                let r = w.sentence(t, who, person.value(a)).expect("statement mentions the value");
                mentioned.push((a, r));
            }
            None => {
                w.sentence(FILLER.choose(rng).unwrap(), &person.first, "");
            }
        }
    }
    Paragraph { text: w.text, mentioned }
}

fn example(
    v: &Vocab,
    cfg: &CorpusConfig,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<AnnotatedExample> {
    let person = Person::sample(v, rng);
    let k = rng.random_range(cfg.min_attrs..=cfg.max_attrs);
    let mut attrs = ATTRS.to_vec();
    attrs.shuffle(rng);
    let (present, absent) = attrs.split_at(k);
    let para = paragraph(&person, present, rng);
    let unanswerable = rng.random::<f64>() < cfg.unanswerable_rate;
    // unanswerable questions either ask about someone else or about an omitted attribute
    let other_person = unanswerable && (absent.is_empty() || rng.random::<f64>() < cfg.other_person_rate);
    let asked = if unanswerable && !other_person { *absent.choose(rng).unwrap() } else { *present.choose(rng).unwrap() };
    let q = questions(asked).choose(rng).unwrap();
    let who = if other_person {
        let mut other = Person::sample(v, rng);
        while other.last == person.last || other.first == person.first {
            other = Person::sample(v, rng);
        }
        other.full()
    } else if rng.random::<f64>() < 0.7 {
        person.full()
    } else {
        person.first.clone()
    };
    let question = Question::new(&q.replace("{F}", &who))?;
    let context = Context::new(&para.text)?;
    let mention = para.mentioned.iter().find(|(a, _)| *a == asked).filter(|_| !other_person);
    let reference = match mention {
        None => Reference::Unanswerable,
        Some(&(_, (s, e))) => {
            let span = context
                .span_for_chars(s, e)
                .ok_or_else(|| Error::Internal("generated value is not token aligned".into()))?;
            Reference::Answer { text: context.span_text(span)?, span: Some(span) }
        }
    };
    let ex = AnnotatedExample { id, question, context, references: vec![reference; cfg.references] };
    ex.validate()?;
    Ok(ex)
}

/// Generate `cfg.examples` examples. Identical configs give identical output.
pub fn generate(cfg: &CorpusConfig) -> Result<Vec<AnnotatedExample>> {
    if cfg.min_attrs == 0 || cfg.min_attrs > cfg.max_attrs || cfg.max_attrs > ATTRS.len() {
        return Err(Error::Config(format!("attribute range must satisfy 1 <= min <= max <= {}", ATTRS.len())));
    }
    if !(0.0..=1.0).contains(&cfg.unanswerable_rate) || !(0.0..=1.0).contains(&cfg.other_person_rate) || !(1..=3).contains(&cfg.references) {
        return Err(Error::Config("unanswerable_rate must lie in [0, 1] and references in 1..=3".into()));
    }
    let vocab = Vocab::build();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.examples).map(|k| example(&vocab, cfg, &mut rng, format!("{}-{k:05}", cfg.id_prefix))).collect()
}

/// Topic pool for the live service: each topic is a person, each aspect a
/// paragraph about one facet of their life.
pub fn generate_topics(seed: u64, n_topics: usize) -> Result<TopicPool> {
    let vocab = Vocab::build();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: [(&str, &[Attr]); 5] = [
        ("Early life", &[Attr::City, Attr::Year]),
        ("Career", &[Attr::Occupation, Attr::Employer]),
        ("Family", &[Attr::Spouse, Attr::Country]),
        ("Music", &[Attr::Instrument]),
        ("Death", &[Attr::Cause]),
    ];
    let mut topics = Vec::with_capacity(n_topics);
    for _ in 0..n_topics {
        let person = Person::sample(&vocab, &mut rng);
        let aspects = groups
            .iter()
            .map(|(name, attrs)| {
                debug_assert!(attrs.iter().all(|a| aspect_name(*a) == *name || *name == "Family"));
                let para = paragraph(&person, attrs, &mut rng);
                Ok(Aspect { name: name.to_string(), context: Context::new(&para.text)? })
            })
            .collect::<Result<Vec<_>>>()?;
        topics.push(Topic {
            name: person.full(),
            intro: format!("{} is an invented figure from the synthetic biography corpus.", person.full()),
            aspects,
        });
    }
    let pool = TopicPool { topics };
    pool.validate()?;
    Ok(pool)
}

/// The standard bundled splits.
pub struct Bundle {
    pub init: Vec<AnnotatedExample>,
    pub pool: Vec<AnnotatedExample>,
    pub test: Vec<AnnotatedExample>,
    pub topics: TopicPool,
}

pub const BUNDLE_INIT: usize = 512;
pub const BUNDLE_POOL: usize = 2400;
pub const BUNDLE_TEST: usize = 300;

pub fn bundle(seed: u64) -> Result<Bundle> {
    let split = |offset: u64, examples: usize, references: usize, prefix: &str| {
        generate(&CorpusConfig {
            seed: seed.wrapping_mul(31).wrapping_add(offset),
            examples,
            references,
            id_prefix: prefix.into(),
            ..CorpusConfig::default()
        })
    };
    Ok(Bundle {
        init: split(1, BUNDLE_INIT, 1, "init")?,
        pool: split(2, BUNDLE_POOL, 1, "pool")?,
        test: split(3, BUNDLE_TEST, 3, "test")?,
        topics: generate_topics(seed.wrapping_add(4), 20)?,
    })
}
