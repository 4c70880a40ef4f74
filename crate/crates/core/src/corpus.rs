//! Synthetic agreement grammar: lexicon, training corpus and templated
//! number-agreement evaluation datasets.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

const DETERMINER_POOL: &[&str] = &["the", "my", "your", "our", "their", "his", "her"];

const NOUN_POOL: &[(&str, &str)] = &[
    ("boy", "boys"),
    ("girl", "girls"),
    ("tree", "trees"),
    ("dog", "dogs"),
    ("cat", "cats"),
    ("farmer", "farmers"),
    ("teacher", "teachers"),
    ("doctor", "doctors"),
    ("student", "students"),
    ("house", "houses"),
    ("car", "cars"),
    ("friend", "friends"),
    ("pilot", "pilots"),
    ("singer", "singers"),
    ("lawyer", "lawyers"),
    ("child", "children"),
    ("man", "men"),
    ("woman", "women"),
    ("mouse", "mice"),
    ("actor", "actors"),
    ("painter", "painters"),
    ("baker", "bakers"),
    ("author", "authors"),
    ("window", "windows"),
];

const VERB_POOL: &[(&str, &str)] = &[
    ("runs", "run"),
    ("sees", "see"),
    ("knows", "know"),
    ("likes", "like"),
    ("smiles", "smile"),
    ("laughs", "laugh"),
    ("writes", "write"),
    ("waits", "wait"),
    ("sings", "sing"),
    ("eats", "eat"),
    ("sleeps", "sleep"),
    ("walks", "walk"),
    ("talks", "talk"),
    ("plays", "play"),
    ("reads", "read"),
    ("swims", "swim"),
    ("jumps", "jump"),
    ("works", "work"),
    ("stays", "stay"),
    ("cries", "cry"),
    ("is", "are"),
    ("was", "were"),
    ("has", "have"),
    ("goes", "go"),
];

const PREPOSITION_POOL: &[&str] = &[
    "behind", "near", "beside", "above", "below", "under", "with", "from", "across", "around",
];

const ADVERB_POOL: &[&str] = &[
    "certainly",
    "probably",
    "surely",
    "really",
    "often",
    "never",
    "always",
    "clearly",
    "quickly",
    "rarely",
];

const FILLER_POOL: &[&str] = &[
    "and", "so", "then", "well", "yes", "indeed", "today", "here", "there", "now", "also", "too", "again", "still",
];

/// Grammatical number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Number {
    Singular,
    Plural,
}

impl Number {
    pub fn flip(self) -> Self {
        match self {
            Number::Singular => Number::Plural,
            Number::Plural => Number::Singular,
        }
    }

    fn letter(self) -> char {
        match self {
            Number::Singular => 'S',
            Number::Plural => 'P',
        }
    }
}

/// Part-of-speech tag of a vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Special,
    Determiner,
    Noun(Number),
    Verb(Number),
    Preposition,
    Adverb,
    Filler,
}

/// Sizes of each lexical category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconConfig {
    pub determiners: usize,
    pub noun_pairs: usize,
    pub verb_pairs: usize,
    pub prepositions: usize,
    pub adverbs: usize,
    pub fillers: usize,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            determiners: 2,
            noun_pairs: 20,
            verb_pairs: 20,
            prepositions: 8,
            adverbs: 8,
            fillers: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub bos: String,
    pub eos: String,
    pub unk: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            bos: "<bos>".into(),
            eos: "<eos>".into(),
            unk: "<unk>".into(),
        }
    }
}

/// On-disk layout of a lexicon: category arrays plus the explicit vocab order.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconFile {
    determiners: Vec<String>,
    noun_pairs: Vec<(String, String)>,
    verb_pairs: Vec<(String, String)>,
    prepositions: Vec<String>,
    adverbs: Vec<String>,
    fillers: Vec<String>,
    special: SpecialTokens,
    vocab: Vec<String>,
}

/// Vocabulary of the synthetic grammar with the singular/plural bijection on
/// nouns and verbs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LexiconFile", into = "LexiconFile")]
pub struct Lexicon {
    pub determiners: Vec<String>,
    pub noun_pairs: Vec<(String, String)>,
    pub verb_pairs: Vec<(String, String)>,
    pub prepositions: Vec<String>,
    pub adverbs: Vec<String>,
    pub fillers: Vec<String>,
    pub special: SpecialTokens,
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    categories: Vec<Category>,
    swap: Vec<Option<TokenId>>,
}

impl From<Lexicon> for LexiconFile {
    fn from(lex: Lexicon) -> Self {
        LexiconFile {
            determiners: lex.determiners,
            noun_pairs: lex.noun_pairs,
            verb_pairs: lex.verb_pairs,
            prepositions: lex.prepositions,
            adverbs: lex.adverbs,
            fillers: lex.fillers,
            special: lex.special,
            vocab: lex.vocab,
        }
    }
}

impl TryFrom<LexiconFile> for Lexicon {
    type Error = Error;

    fn try_from(file: LexiconFile) -> Result<Self> {
        Lexicon::from_parts(
            file.determiners,
            file.noun_pairs,
            file.verb_pairs,
            file.prepositions,
            file.adverbs,
            file.fillers,
            file.special,
            Some(file.vocab),
        )
    }
}

fn pick<T: Clone>(pool: &[T], n: usize, rng: &mut ChaCha8Rng, synth: impl Fn(usize) -> T) -> Vec<T> {
    let mut items: Vec<T> = pool.to_vec();
    items.extend((pool.len()..n).map(synth));
    items.shuffle(rng);
    items.truncate(n);
    items
}

/// Builds a deterministic lexicon for `seed`.
pub fn build_lexicon(config: &LexiconConfig, seed: u64) -> Result<Lexicon> {
    let sizes = [
        ("determiners", config.determiners),
        ("noun_pairs", config.noun_pairs),
        ("verb_pairs", config.verb_pairs),
        ("prepositions", config.prepositions),
        ("adverbs", config.adverbs),
        ("fillers", config.fillers),
    ];
    for (name, size) in sizes {
        if size < 2 {
            return Err(Error::LexiconConfig(format!(
                "category {name} needs at least 2 entries, got {size}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let owned = |p: &[&str]| p.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let owned_pairs = |p: &[(&str, &str)]| {
        p.iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect::<Vec<_>>()
    };
    let determiners = pick(&owned(DETERMINER_POOL), config.determiners, &mut rng, |k| {
        format!("det{k}")
    });
    let noun_pairs = pick(&owned_pairs(NOUN_POOL), config.noun_pairs, &mut rng, |k| {
        (format!("noun{k}"), format!("noun{k}s"))
    });
    let verb_pairs = pick(&owned_pairs(VERB_POOL), config.verb_pairs, &mut rng, |k| {
        (format!("verb{k}s"), format!("verb{k}"))
    });
    let prepositions = pick(&owned(PREPOSITION_POOL), config.prepositions, &mut rng, |k| {
        format!("prep{k}")
    });
    let adverbs = pick(&owned(ADVERB_POOL), config.adverbs, &mut rng, |k| format!("adv{k}"));
    let fillers = pick(&owned(FILLER_POOL), config.fillers, &mut rng, |k| format!("filler{k}"));
    Lexicon::from_parts(
        determiners,
        noun_pairs,
        verb_pairs,
        prepositions,
        adverbs,
        fillers,
        SpecialTokens::default(),
        None,
    )
}

impl Lexicon {
    /// Assembles a lexicon from its categories. When `vocab` is `None` the
    /// canonical order is used: specials, determiners, noun pairs, verb
    /// pairs, prepositions, adverbs, fillers.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        determiners: Vec<String>,
        noun_pairs: Vec<(String, String)>,
        verb_pairs: Vec<(String, String)>,
        prepositions: Vec<String>,
        adverbs: Vec<String>,
        fillers: Vec<String>,
        special: SpecialTokens,
        vocab: Option<Vec<String>>,
    ) -> Result<Self> {
        let mut tagged: Vec<(String, Category)> = vec![
            (special.bos.clone(), Category::Special),
            (special.eos.clone(), Category::Special),
            (special.unk.clone(), Category::Special),
        ];
        tagged.extend(determiners.iter().map(|w| (w.clone(), Category::Determiner)));
        for (s, p) in &noun_pairs {
            tagged.push((s.clone(), Category::Noun(Number::Singular)));
            tagged.push((p.clone(), Category::Noun(Number::Plural)));
        }
        for (s, p) in &verb_pairs {
            tagged.push((s.clone(), Category::Verb(Number::Singular)));
            tagged.push((p.clone(), Category::Verb(Number::Plural)));
        }
        tagged.extend(prepositions.iter().map(|w| (w.clone(), Category::Preposition)));
        tagged.extend(adverbs.iter().map(|w| (w.clone(), Category::Adverb)));
        tagged.extend(fillers.iter().map(|w| (w.clone(), Category::Filler)));

        let mut category_of: HashMap<String, Category> = HashMap::new();
        for (word, cat) in &tagged {
            if category_of.insert(word.clone(), *cat).is_some() {
                return Err(Error::LexiconConfig(format!(
                    "token {word:?} appears in more than one slot"
                )));
            }
        }
        let vocab = match vocab {
            Some(v) => {
                if v.len() != tagged.len() {
                    return Err(Error::LexiconConfig(format!(
                        "vocab has {} entries, categories define {}",
                        v.len(),
                        tagged.len()
                    )));
                }
                v
            }
            None => tagged.iter().map(|(w, _)| w.clone()).collect(),
        };
        let mut index = HashMap::with_capacity(vocab.len());
        let mut categories = Vec::with_capacity(vocab.len());
        for (id, word) in vocab.iter().enumerate() {
            let cat = *category_of
                .get(word)
                .ok_or_else(|| Error::LexiconConfig(format!("vocab token {word:?} has no category")))?;
            if index.insert(word.clone(), id).is_some() {
                return Err(Error::LexiconConfig(format!("duplicate vocab token {word:?}")));
            }
            categories.push(cat);
        }
        let mut swap = vec![None; vocab.len()];
        for (s, p) in noun_pairs.iter().chain(verb_pairs.iter()) {
            let (si, pi) = (index[s], index[p]);
            swap[si] = Some(pi);
            swap[pi] = Some(si);
        }
        Ok(Self {
            determiners,
            noun_pairs,
            verb_pairs,
            prepositions,
            adverbs,
            fillers,
            special,
            vocab,
            index,
            categories,
            swap,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.vocab[id]
    }

    pub fn bos(&self) -> TokenId {
        self.index[&self.special.bos]
    }

    pub fn eos(&self) -> TokenId {
        self.index[&self.special.eos]
    }

    pub fn unk(&self) -> TokenId {
        self.index[&self.special.unk]
    }

    pub fn category(&self, id: TokenId) -> Category {
        self.categories[id]
    }

    /// Number of a noun or verb token.
    pub fn number(&self, id: TokenId) -> Option<Number> {
        match self.categories[id] {
            Category::Noun(n) | Category::Verb(n) => Some(n),
            _ => None,
        }
    }

    /// The same lemma with the opposite grammatical number (w ↔ w⁻).
    pub fn number_swap(&self, id: TokenId) -> Option<TokenId> {
        self.swap.get(id).copied().flatten()
    }

    pub fn noun(&self, lemma: usize, number: Number) -> TokenId {
        let (s, p) = &self.noun_pairs[lemma];
        self.index[match number {
            Number::Singular => s,
            Number::Plural => p,
        }]
    }

    pub fn verb(&self, lemma: usize, number: Number) -> TokenId {
        let (s, p) = &self.verb_pairs[lemma];
        self.index[match number {
            Number::Singular => s,
            Number::Plural => p,
        }]
    }

    fn word_id(&self, word: &str) -> TokenId {
        self.index[word]
    }

    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|&t| self.token(t)).collect::<Vec<_>>().join(" ")
    }

    /// Maps surface tokens to ids; unknown words become the unknown token.
    pub fn encode(&self, line: &str) -> Vec<TokenId> {
        line.split_whitespace()
            .map(|w| self.id(w).unwrap_or_else(|| self.unk()))
            .collect()
    }
}

/// Evaluation template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    Simple,
    #[serde(rename = "nounPP")]
    NounPP,
    #[serde(rename = "nounPPAdv")]
    NounPPAdv,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Simple, TaskKind::NounPP, TaskKind::NounPPAdv];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Simple => "Simple",
            TaskKind::NounPP => "nounPP",
            TaskKind::NounPPAdv => "nounPPAdv",
        }
    }

    /// Number of tokens in the template, verb included.
    pub fn template_len(self) -> usize {
        match self {
            TaskKind::Simple => 3,
            TaskKind::NounPP => 6,
            TaskKind::NounPPAdv => 7,
        }
    }

    pub fn t_sub(self) -> usize {
        1
    }

    pub fn t_int(self) -> Option<usize> {
        match self {
            TaskKind::Simple => None,
            TaskKind::NounPP | TaskKind::NounPPAdv => Some(4),
        }
    }

    pub fn t_verb(self) -> usize {
        self.template_len() - 1
    }

    pub fn has_intervening_noun(self) -> bool {
        self.t_int().is_some()
    }

    pub fn conditions(self) -> &'static [Condition] {
        match self {
            TaskKind::Simple => &[Condition::S, Condition::P],
            _ => &[Condition::SS, Condition::SP, Condition::PS, Condition::PP],
        }
    }

    fn slots(self) -> &'static [Slot] {
        use Slot::*;
        match self {
            TaskKind::Simple => &[Det, Subject, Verb],
            TaskKind::NounPP => &[Det, Subject, Prep, Det, Intervening, Verb],
            TaskKind::NounPPAdv => &[Det, Subject, Prep, Det, Intervening, Adv, Verb],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Simple" | "simple" => Ok(TaskKind::Simple),
            "nounPP" | "nounpp" => Ok(TaskKind::NounPP),
            "nounPPAdv" | "nounppadv" => Ok(TaskKind::NounPPAdv),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Det,
    Subject,
    Prep,
    Intervening,
    Adv,
    Verb,
}

/// Subject number, followed by intervening-noun number when present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    S,
    P,
    SS,
    SP,
    PS,
    PP,
}

impl Condition {
    pub fn subject(self) -> Number {
        match self {
            Condition::S | Condition::SS | Condition::SP => Number::Singular,
            Condition::P | Condition::PS | Condition::PP => Number::Plural,
        }
    }

    pub fn intervening(self) -> Option<Number> {
        match self {
            Condition::S | Condition::P => None,
            Condition::SS | Condition::PS => Some(Number::Singular),
            Condition::SP | Condition::PP => Some(Number::Plural),
        }
    }

    pub fn arity(self) -> usize {
        if self.intervening().is_some() {
            2
        } else {
            1
        }
    }

    /// Intervening noun disagrees with the subject.
    pub fn is_attractor(self) -> bool {
        matches!(self, Condition::SP | Condition::PS)
    }

    pub fn from_numbers(subject: Number, intervening: Option<Number>) -> Self {
        use Number::*;
        match (subject, intervening) {
            (Singular, None) => Condition::S,
            (Plural, None) => Condition::P,
            (Singular, Some(Singular)) => Condition::SS,
            (Singular, Some(Plural)) => Condition::SP,
            (Plural, Some(Singular)) => Condition::PS,
            (Plural, Some(Plural)) => Condition::PP,
        }
    }

    pub fn name(self) -> String {
        let mut s = String::new();
        s.push(self.subject().letter());
        if let Some(n) = self.intervening() {
            s.push(n.letter());
        }
        s
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "S" => Ok(Condition::S),
            "P" => Ok(Condition::P),
            "SS" => Ok(Condition::SS),
            "SP" => Ok(Condition::SP),
            "PS" => Ok(Condition::PS),
            "PP" => Ok(Condition::PP),
            other => Err(format!("unknown condition {other:?}")),
        }
    }
}

/// One evaluation sentence. Positions index `tokens`; the model itself is fed
/// a begin-of-sentence token first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub tokens: Vec<TokenId>,
    pub t_sub: usize,
    pub t_int: Option<usize>,
    pub t_verb: usize,
    pub condition: Condition,
    pub verb_correct: TokenId,
    pub verb_wrong: TokenId,
    pub task: TaskKind,
}

impl TaskInstance {
    /// Verb distance n = t_verb − t_sub.
    pub fn verb_distance(&self) -> usize {
        self.t_verb - self.t_sub
    }

    /// The instance with correct and wrong verb forms exchanged.
    pub fn with_swapped_verbs(&self) -> Self {
        let mut out = self.clone();
        std::mem::swap(&mut out.verb_correct, &mut out.verb_wrong);
        out
    }
}

fn task_salt(task: TaskKind) -> u64 {
    match task {
        TaskKind::Simple => 0x5149_0001,
        TaskKind::NounPP => 0x5149_0002,
        TaskKind::NounPPAdv => 0x5149_0003,
    }
}

/// Generates `count` instances of `task` under `condition`.
///
/// The random stream depends on `(seed, task)` only, so datasets of the same
/// task and seed share lemmas, determiners and prepositions position by
/// position across conditions and differ only in grammatical number.
pub fn generate_task_dataset(
    lex: &Lexicon,
    task: TaskKind,
    condition: Condition,
    count: usize,
    seed: u64,
) -> Result<Vec<TaskInstance>> {
    let expected_arity = if task.has_intervening_noun() { 2 } else { 1 };
    if condition.arity() != expected_arity {
        return Err(Error::ConditionArity {
            task: task.to_string(),
            condition: condition.to_string(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ task_salt(task).rotate_left(17));
    let sub_num = condition.subject();
    let int_num = condition.intervening();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let nouns = rand::seq::index::sample(&mut rng, lex.noun_pairs.len(), 2);
        let (sub_lemma, int_lemma) = (nouns.index(0), nouns.index(1));
        let verb_lemma = rng.gen_range(0..lex.verb_pairs.len());
        let mut tokens = Vec::with_capacity(task.template_len());
        for slot in task.slots() {
            let tok = match slot {
                Slot::Det => lex.word_id(&lex.determiners[rng.gen_range(0..lex.determiners.len())]),
                Slot::Prep => lex.word_id(&lex.prepositions[rng.gen_range(0..lex.prepositions.len())]),
                Slot::Adv => lex.word_id(&lex.adverbs[rng.gen_range(0..lex.adverbs.len())]),
                Slot::Subject => lex.noun(sub_lemma, sub_num),
                Slot::Intervening => lex.noun(int_lemma, int_num.unwrap_or(sub_num)),
                Slot::Verb => lex.verb(verb_lemma, sub_num),
            };
            tokens.push(tok);
        }
        out.push(TaskInstance {
            tokens,
            t_sub: task.t_sub(),
            t_int: task.t_int(),
            t_verb: task.t_verb(),
            condition,
            verb_correct: lex.verb(verb_lemma, sub_num),
            verb_wrong: lex.verb(verb_lemma, sub_num.flip()),
            task,
        });
    }
    Ok(out)
}

/// Recovers the template of a token sequence from its category tags.
pub fn template_of(lex: &Lexicon, tokens: &[TokenId]) -> Option<TaskKind> {
    TaskKind::ALL.into_iter().find(|task| {
        let slots = task.slots();
        slots.len() == tokens.len()
            && slots.iter().zip(tokens).all(|(slot, &tok)| {
                matches!(
                    (slot, lex.category(tok)),
                    (Slot::Det, Category::Determiner)
                        | (Slot::Prep, Category::Preposition)
                        | (Slot::Adv, Category::Adverb)
                        | (Slot::Subject | Slot::Intervening, Category::Noun(_))
                        | (Slot::Verb, Category::Verb(_))
                )
            })
    })
}

// Grammar weights for the training corpus.
const P_PREFIX_FILLER: f64 = 0.15;
const P_PP: f64 = 0.55;
const P_ADVERB: f64 = 0.3;
const P_OBJECT: f64 = 0.25;
const P_SUFFIX_FILLER: f64 = 0.25;

fn random_number(rng: &mut ChaCha8Rng) -> Number {
    if rng.gen_bool(0.5) {
        Number::Singular
    } else {
        Number::Plural
    }
}

/// Samples training sentences from the agreement grammar
///
/// ```text
/// S  -> [Filler{1,2}] NP [Adv] V [Det N | Filler{1,2}]
/// NP -> Det N | Det N Prep Det N
/// ```
///
/// The verb always agrees with the head noun of the subject NP; the number of
/// a prepositional-phrase noun is drawn independently.
pub fn generate_training_corpus(lex: &Lexicon, num_sentences: usize, seed: u64) -> Result<Vec<Vec<TokenId>>> {
    if num_sentences == 0 {
        return Err(Error::Empty("training corpus needs at least one sentence"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let det = |rng: &mut ChaCha8Rng| lex.word_id(&lex.determiners[rng.gen_range(0..lex.determiners.len())]);
    let filler = |rng: &mut ChaCha8Rng| lex.word_id(&lex.fillers[rng.gen_range(0..lex.fillers.len())]);
    let mut corpus = Vec::with_capacity(num_sentences);
    for _ in 0..num_sentences {
        let mut s = Vec::with_capacity(12);
        if rng.gen_bool(P_PREFIX_FILLER) {
            for _ in 0..rng.gen_range(1..=2) {
                s.push(filler(&mut rng));
            }
        }
        let sub_num = random_number(&mut rng);
        let nouns = rand::seq::index::sample(&mut rng, lex.noun_pairs.len(), 3);
        s.push(det(&mut rng));
        s.push(lex.noun(nouns.index(0), sub_num));
        if rng.gen_bool(P_PP) {
            s.push(lex.word_id(&lex.prepositions[rng.gen_range(0..lex.prepositions.len())]));
            s.push(det(&mut rng));
            let int_num = random_number(&mut rng);
            s.push(lex.noun(nouns.index(1), int_num));
        }
        if rng.gen_bool(P_ADVERB) {
            s.push(lex.word_id(&lex.adverbs[rng.gen_range(0..lex.adverbs.len())]));
        }
        s.push(lex.verb(rng.gen_range(0..lex.verb_pairs.len()), sub_num));
        let tail: f64 = rng.gen();
        if tail < P_OBJECT {
            s.push(det(&mut rng));
            let obj_num = random_number(&mut rng);
            s.push(lex.noun(nouns.index(2), obj_num));
        } else if tail < P_OBJECT + P_SUFFIX_FILLER {
            for _ in 0..rng.gen_range(1..=2) {
                s.push(filler(&mut rng));
            }
        }
        corpus.push(s);
    }
    Ok(corpus)
}

/// Writes one sentence per line as space-separated surface tokens.
pub fn write_corpus<W: Write>(lex: &Lexicon, corpus: &[Vec<TokenId>], mut out: W) -> Result<()> {
    for sentence in corpus {
        writeln!(out, "{}", lex.render(sentence))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus<R: BufRead>(lex: &Lexicon, input: R) -> Result<Vec<Vec<TokenId>>> {
    let mut corpus = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            corpus.push(lex.encode(&line));
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        build_lexicon(&LexiconConfig::default(), 7).unwrap()
    }

    #[test]
    fn default_vocab_size() {
        assert_eq!(lex().len(), 2 + 40 + 40 + 8 + 8 + 12 + 3);
    }

    #[test]
    fn same_seed_same_vocab() {
        assert_eq!(lex().vocab(), lex().vocab());
        let other = build_lexicon(&LexiconConfig::default(), 8).unwrap();
        assert_ne!(lex().vocab(), other.vocab());
    }

    #[test]
    fn rejects_empty_category() {
        let cfg = LexiconConfig {
            adverbs: 0,
            ..Default::default()
        };
        assert!(matches!(build_lexicon(&cfg, 1), Err(Error::LexiconConfig(_))));
    }

    #[test]
    fn oversized_config_synthesizes_words() {
        let cfg = LexiconConfig {
            noun_pairs: 30,
            ..Default::default()
        };
        let lex = build_lexicon(&cfg, 1).unwrap();
        assert_eq!(lex.noun_pairs.len(), 30);
    }

    #[test]
    fn noun_pair_swaps_to_plural() {
        let lex = lex();
        for (k, (s, p)) in lex.noun_pairs.iter().enumerate() {
            let si = lex.id(s).unwrap();
            assert_eq!(lex.number_swap(si), lex.id(p));
            assert_eq!(lex.noun(k, Number::Plural), lex.id(p).unwrap());
        }
    }

    #[test]
    fn categories_are_disjoint_and_ids_dense() {
        let lex = lex();
        for (id, word) in lex.vocab().iter().enumerate() {
            assert_eq!(lex.id(word), Some(id));
        }
    }

    #[test]
    fn lexicon_json_round_trip() {
        let lex = lex();
        let json = serde_json::to_string(&lex).unwrap();
        let back: Lexicon = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lex);
    }

    #[test]
    fn fig1_shaped_instance() {
        let lex = lex();
        let data = generate_task_dataset(&lex, TaskKind::NounPP, Condition::PS, 5, 1).unwrap();
        for inst in &data {
            assert_eq!((inst.t_sub, inst.t_int, inst.t_verb), (1, Some(4), 5));
            assert_eq!(lex.number(inst.tokens[1]), Some(Number::Plural));
            assert_eq!(lex.number(inst.tokens[4]), Some(Number::Singular));
            assert_eq!(lex.number(inst.verb_correct), Some(Number::Plural));
            assert_eq!(inst.tokens[5], inst.verb_correct);
        }
    }

    #[test]
    fn verb_distances() {
        let lex = lex();
        for (task, cond, n) in [
            (TaskKind::Simple, Condition::S, 1),
            (TaskKind::NounPP, Condition::SS, 4),
            (TaskKind::NounPPAdv, Condition::PP, 5),
            (TaskKind::NounPPAdv, Condition::SP, 5),
        ] {
            let data = generate_task_dataset(&lex, task, cond, 3, 2).unwrap();
            assert!(data.iter().all(|i| i.verb_distance() == n));
        }
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let lex = lex();
        assert!(generate_task_dataset(&lex, TaskKind::Simple, Condition::SS, 1, 0).is_err());
        assert!(generate_task_dataset(&lex, TaskKind::NounPP, Condition::S, 1, 0).is_err());
    }

    #[test]
    fn conditions_share_lemmas() {
        let lex = lex();
        let ss = generate_task_dataset(&lex, TaskKind::NounPP, Condition::SS, 20, 4).unwrap();
        let pp = generate_task_dataset(&lex, TaskKind::NounPP, Condition::PP, 20, 4).unwrap();
        for (a, b) in ss.iter().zip(&pp) {
            assert_eq!(lex.number_swap(a.verb_correct), Some(b.verb_correct));
            assert_eq!(lex.number_swap(a.tokens[1]), Some(b.tokens[1]));
            assert_eq!(a.tokens[2], b.tokens[2]);
        }
    }

    #[test]
    fn nouns_in_sentence_are_distinct() {
        let lex = lex();
        let data = generate_task_dataset(&lex, TaskKind::NounPPAdv, Condition::SS, 200, 9).unwrap();
        assert!(data.iter().all(|i| i.tokens[1] != i.tokens[4]));
    }

    #[test]
    fn task_data_has_no_fillers() {
        let lex = lex();
        for task in TaskKind::ALL {
            for &c in task.conditions() {
                let data = generate_task_dataset(&lex, task, c, 50, 3).unwrap();
                for inst in data {
                    assert!(inst.tokens.iter().all(|&t| lex.category(t) != Category::Filler));
                    assert_eq!(template_of(&lex, &inst.tokens), Some(task));
                }
            }
        }
    }

    #[test]
    fn corpus_is_deterministic_and_round_trips() {
        let lex = lex();
        let a = generate_training_corpus(&lex, 500, 3).unwrap();
        let b = generate_training_corpus(&lex, 500, 3).unwrap();
        let mut fa = Vec::new();
        let mut fb = Vec::new();
        write_corpus(&lex, &a, &mut fa).unwrap();
        write_corpus(&lex, &b, &mut fb).unwrap();
        assert_eq!(fa, fb);
        let back = read_corpus(&lex, fa.as_slice()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn corpus_rejects_zero_sentences() {
        assert!(generate_training_corpus(&lex(), 0, 1).is_err());
    }

    #[test]
    fn task_instance_json_field_names() {
        let lex = lex();
        let inst = &generate_task_dataset(&lex, TaskKind::NounPP, Condition::SP, 1, 0).unwrap()[0];
        let v: serde_json::Value = serde_json::to_value(inst).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "condition",
                "t_int",
                "t_sub",
                "t_verb",
                "task",
                "tokens",
                "verb_correct",
                "verb_wrong"
            ]
        );
        assert_eq!(v["task"], "nounPP");
        assert_eq!(v["condition"], "SP");
    }
}
