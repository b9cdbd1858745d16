//! Hierarchical linguistic input, its JSON form, and unrolling to frames.
//!
//! A [`ContextTree`] holds sentence, phrase, word, syllable and phone level
//! features together with the alignment counts that nest each level in the
//! one above, plus per-phone durations in frames. [`unroll_frames`] expands it
//! into a [`FrameFeatureTrack`] with one row per 12.5 ms frame.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::Rng;

/// Frames per second of audio (12.5 ms hop).
pub const FRAMES_PER_SECOND: f64 = 80.0;
pub const FRAME_SHIFT_MS: f64 = 12.5;

/// Output spectrum layout: 13 MFCC, f0, 5 periodicity values.
pub const MFCC_DIM: usize = 13;
pub const PERIODICITY_DIM: usize = 5;
pub const SPECTRUM_DIM: usize = MFCC_DIM + 1 + PERIODICITY_DIM;

/// Number of frame-level columns that follow the broadcast sentence and
/// phrase features. See [`FrameLayout`].
pub const FRAME_FIXED_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectrumFrame(pub [f32; SPECTRUM_DIM]);

impl SpectrumFrame {
    pub fn zero() -> Self {
        Self([0.0; SPECTRUM_DIM])
    }

    pub fn from_slice(v: &[f32]) -> Result<Self> {
        let arr: [f32; SPECTRUM_DIM] = v.try_into().map_err(|_| {
            Error::shape(
                "SpectrumFrame",
                format!("{} values, expected {SPECTRUM_DIM}", v.len()),
            )
        })?;
        Ok(Self(arr))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn mfcc(&self) -> &[f32] {
        &self.0[..MFCC_DIM]
    }

    pub fn f0(&self) -> f32 {
        self.0[MFCC_DIM]
    }

    pub fn periodicity(&self) -> &[f32] {
        &self.0[MFCC_DIM + 1..]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Which attention source a matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Word,
    Syllable,
    Phone,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Word, Level::Syllable, Level::Phone];

    pub fn name(self) -> &'static str {
        match self {
            Level::Word => "word",
            Level::Syllable => "syllable",
            Level::Phone => "phone",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phrase {
    pub features: Vec<f32>,
    /// Half-open range of word indices.
    pub words: Range<usize>,
}

/// Validated hierarchical input for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTree {
    sentence: Vec<f32>,
    phrases: Vec<Phrase>,
    words: Matrix,
    syllables: Matrix,
    phones: Matrix,
    word_syllable_counts: Vec<usize>,
    syllable_phone_counts: Vec<usize>,
    durations: Vec<usize>,
}

impl ContextTree {
    /// Validates the alignment invariants and builds a tree.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sentence: Vec<f32>,
        phrases: Vec<Phrase>,
        words: Matrix,
        syllables: Matrix,
        phones: Matrix,
        word_syllable_counts: Vec<usize>,
        syllable_phone_counts: Vec<usize>,
        durations: Vec<usize>,
    ) -> Result<Self> {
        let tree = Self {
            sentence,
            phrases,
            words,
            syllables,
            phones,
            word_syllable_counts,
            syllable_phone_counts,
            durations,
        };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |level: &'static str, message: String| Error::Validation { level, message };
        if self.words.rows() == 0 {
            return Err(invalid("word", "utterance has no words".into()));
        }
        check_counts(
            "word",
            "syllable",
            &self.word_syllable_counts,
            self.words.rows(),
            self.syllables.rows(),
        )?;
        check_counts(
            "syllable",
            "phone",
            &self.syllable_phone_counts,
            self.syllables.rows(),
            self.phones.rows(),
        )?;
        if self.durations.len() != self.phones.rows() {
            return Err(invalid(
                "phone",
                format!(
                    "{} durations for {} phones",
                    self.durations.len(),
                    self.phones.rows()
                ),
            ));
        }
        if let Some(i) = self.durations.iter().position(|&d| d == 0) {
            return Err(invalid("phone", format!("duration of phone {i} is 0")));
        }
        if self.phrases.is_empty() {
            return Err(invalid("phrase", "utterance has no phrases".into()));
        }
        let d_phrase = self.phrases[0].features.len();
        let mut next = 0;
        for (i, p) in self.phrases.iter().enumerate() {
            if p.features.len() != d_phrase {
                return Err(invalid(
                    "phrase",
                    format!("phrase {i} has {} features, expected {d_phrase}", p.features.len()),
                ));
            }
            if p.words.start != next || p.words.end <= p.words.start {
                return Err(invalid(
                    "phrase",
                    format!("phrase {i} span {:?} does not continue at word {next}", p.words),
                ));
            }
            next = p.words.end;
        }
        if next != self.words.rows() {
            return Err(invalid(
                "phrase",
                format!("phrases cover {next} of {} words", self.words.rows()),
            ));
        }
        let all_finite = self.sentence.iter().all(|v| v.is_finite())
            && self.phrases.iter().all(|p| p.features.iter().all(|v| v.is_finite()))
            && self.words.is_finite()
            && self.syllables.is_finite()
            && self.phones.is_finite();
        if !all_finite {
            return Err(invalid("sentence", "non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn sentence(&self) -> &[f32] {
        &self.sentence
    }

    pub fn phrases(&self) -> &[Phrase] {
        &self.phrases
    }

    pub fn level(&self, level: Level) -> &Matrix {
        match level {
            Level::Word => &self.words,
            Level::Syllable => &self.syllables,
            Level::Phone => &self.phones,
        }
    }

    pub fn words(&self) -> &Matrix {
        &self.words
    }

    pub fn syllables(&self) -> &Matrix {
        &self.syllables
    }

    pub fn phones(&self) -> &Matrix {
        &self.phones
    }

    pub fn word_syllable_counts(&self) -> &[usize] {
        &self.word_syllable_counts
    }

    pub fn syllable_phone_counts(&self) -> &[usize] {
        &self.syllable_phone_counts
    }

    pub fn durations(&self) -> &[usize] {
        &self.durations
    }

    /// Number of frames after unrolling (sum of phone durations).
    pub fn frame_count(&self) -> usize {
        self.durations.iter().sum()
    }

    pub fn audio_seconds(&self) -> f64 {
        self.frame_count() as f64 / FRAMES_PER_SECOND
    }

    pub fn dims(&self) -> TreeDims {
        TreeDims {
            sentence: self.sentence.len(),
            phrase: self.phrases[0].features.len(),
            word: self.words.cols(),
            syllable: self.syllables.cols(),
            phone: self.phones.cols(),
        }
    }

    pub fn frame_dim(&self) -> usize {
        FrameLayout::new(self.sentence.len(), self.phrases[0].features.len()).dim()
    }
}

fn check_counts(
    parent: &'static str,
    child: &'static str,
    counts: &[usize],
    parents: usize,
    children: usize,
) -> Result<()> {
    let invalid = |message: String| Error::Validation {
        level: parent,
        message,
    };
    if counts.len() != parents {
        return Err(invalid(format!(
            "{} {child} counts for {parents} {parent}s",
            counts.len()
        )));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(invalid(format!("{parent} {i} has no {child}s")));
    }
    let total: usize = counts.iter().sum();
    if total != children {
        return Err(invalid(format!(
            "{child} counts sum to {total} but there are {children} {child}s"
        )));
    }
    Ok(())
}

/// Feature dimensions of a tree's levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDims {
    pub sentence: usize,
    pub phrase: usize,
    pub word: usize,
    pub syllable: usize,
    pub phone: usize,
}

impl Default for TreeDims {
    fn default() -> Self {
        Self {
            sentence: 4,
            phrase: 4,
            word: 32,
            syllable: 16,
            phone: 24,
        }
    }
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDocument {
    sentence: Vec<f32>,
    phrases: Vec<PhraseDocument>,
    words: Vec<Vec<f32>>,
    syllables: Vec<Vec<f32>>,
    phones: Vec<Vec<f32>>,
    alignment: AlignmentDocument,
    durations: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhraseDocument {
    features: Vec<f32>,
    span: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlignmentDocument {
    word_syllable_counts: Vec<usize>,
    syllable_phone_counts: Vec<usize>,
}

fn rows_to_matrix(rows: &[Vec<f32>], path: &str) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::from_rows(rows, cols).map_err(|e| Error::Parse {
        path: path.to_string(),
        message: e.to_string(),
    })
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f32>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Parses and validates a context-tree JSON document.
pub fn parse_context_tree(document: &str) -> Result<ContextTree> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: TreeDocument = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let phrases = doc
        .phrases
        .into_iter()
        .map(|p| Phrase {
            features: p.features,
            words: p.span[0]..p.span[1],
        })
        .collect();
    ContextTree::new(
        doc.sentence,
        phrases,
        rows_to_matrix(&doc.words, "words")?,
        rows_to_matrix(&doc.syllables, "syllables")?,
        rows_to_matrix(&doc.phones, "phones")?,
        doc.alignment.word_syllable_counts,
        doc.alignment.syllable_phone_counts,
        doc.durations,
    )
}

/// Canonical JSON form: fixed key order, pretty-printed, shortest `f32`
/// representations.
pub fn serialize_context_tree(tree: &ContextTree) -> String {
    let doc = TreeDocument {
        sentence: tree.sentence.clone(),
        phrases: tree
            .phrases
            .iter()
            .map(|p| PhraseDocument {
                features: p.features.clone(),
                span: [p.words.start, p.words.end],
            })
            .collect(),
        words: matrix_to_rows(&tree.words),
        syllables: matrix_to_rows(&tree.syllables),
        phones: matrix_to_rows(&tree.phones),
        alignment: AlignmentDocument {
            word_syllable_counts: tree.word_syllable_counts.clone(),
            syllable_phone_counts: tree.syllable_phone_counts.clone(),
        },
        durations: tree.durations.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("tree document serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Frame unrolling

/// Column layout of a frame feature row:
///
/// | columns                    | content                                  |
/// |----------------------------|------------------------------------------|
/// | `0..d_sent`                | sentence features (broadcast)            |
/// | `d_sent..d_sent+d_phrase`  | features of the enclosing phrase         |
/// | `+0`                       | position in phone (0-based frames)       |
/// | `+1`                       | phone duration (frames)                  |
/// | `+2`                       | position / duration                      |
/// | `+3`                       | phone index within its syllable          |
/// | `+4`                       | syllable index within its word           |
/// | `+5`                       | word index within its phrase             |
/// | `+6`                       | utterance progress `t / L_f`             |
/// | `+7`                       | input f0: the phone's first feature      |
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub d_sent: usize,
    pub d_phrase: usize,
}

impl FrameLayout {
    pub fn new(d_sent: usize, d_phrase: usize) -> Self {
        Self { d_sent, d_phrase }
    }

    pub fn dim(&self) -> usize {
        self.d_sent + self.d_phrase + FRAME_FIXED_DIM
    }

    fn fixed(&self) -> usize {
        self.d_sent + self.d_phrase
    }

    pub fn position_col(&self) -> usize {
        self.fixed()
    }

    pub fn duration_col(&self) -> usize {
        self.fixed() + 1
    }

    pub fn normalized_position_col(&self) -> usize {
        self.fixed() + 2
    }

    pub fn phone_in_syllable_col(&self) -> usize {
        self.fixed() + 3
    }

    pub fn syllable_in_word_col(&self) -> usize {
        self.fixed() + 4
    }

    pub fn word_in_phrase_col(&self) -> usize {
        self.fixed() + 5
    }

    pub fn progress_col(&self) -> usize {
        self.fixed() + 6
    }

    pub fn f0_col(&self) -> usize {
        self.fixed() + 7
    }
}

/// Frame-rate input features `x_f(t)`, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureTrack {
    pub frames: Matrix,
    pub frame_shift_ms: f64,
    pub layout: FrameLayout,
    /// Phone index of each frame.
    pub phone_of_frame: Vec<usize>,
}

impl FrameFeatureTrack {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        self.frames.row(t)
    }

    pub fn audio_seconds(&self) -> f64 {
        self.len() as f64 * self.frame_shift_ms / 1000.0
    }
}

/// Expands a tree into frame-rate features using its phone durations.
pub fn unroll_frames(tree: &ContextTree) -> FrameFeatureTrack {
    let dims = tree.dims();
    let layout = FrameLayout::new(dims.sentence, dims.phrase);
    let total = tree.frame_count();
    let mut frames = Matrix::zeros(total, layout.dim());
    let mut phone_of_frame = Vec::with_capacity(total);

    let mut t = 0;
    let mut phone = 0;
    let mut syllable = 0;
    for phrase in &tree.phrases {
        for word in phrase.words.clone() {
            let word_in_phrase = word - phrase.words.start;
            for syl_in_word in 0..tree.word_syllable_counts[word] {
                for ph_in_syl in 0..tree.syllable_phone_counts[syllable] {
                    let dur = tree.durations[phone];
                    let f0 = tree.phones.row(phone).first().copied().unwrap_or(0.0);
                    for pos in 0..dur {
                        let row = frames.row_mut(t);
                        row[..dims.sentence].copy_from_slice(&tree.sentence);
                        row[dims.sentence..layout.fixed()].copy_from_slice(&phrase.features);
                        row[layout.position_col()] = pos as f32;
                        row[layout.duration_col()] = dur as f32;
                        row[layout.normalized_position_col()] = pos as f32 / dur as f32;
                        row[layout.phone_in_syllable_col()] = ph_in_syl as f32;
                        row[layout.syllable_in_word_col()] = syl_in_word as f32;
                        row[layout.word_in_phrase_col()] = word_in_phrase as f32;
                        row[layout.progress_col()] = t as f32 / total as f32;
                        row[layout.f0_col()] = f0;
                        phone_of_frame.push(phone);
                        t += 1;
                    }
                    phone += 1;
                }
                syllable += 1;
            }
        }
    }
    debug_assert_eq!(t, total);

    FrameFeatureTrack {
        frames,
        frame_shift_ms: FRAME_SHIFT_MS,
        layout,
        phone_of_frame,
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// How long each generated utterance should be.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtteranceLength {
    /// Word count drawn uniformly from `min..=max`.
    Words { min: usize, max: usize },
    /// Words are added until the frame total reaches the target, then the
    /// trailing phone durations are shortened to land on it.
    Frames(usize),
    /// Exactly this many phones.
    Phones(usize),
}

impl UtteranceLength {
    pub fn seconds(s: f64) -> Self {
        UtteranceLength::Frames((s * FRAMES_PER_SECOND).round() as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub utterances: usize,
    pub length: UtteranceLength,
    pub words_per_phrase: (usize, usize),
    pub syllables_per_word: (usize, usize),
    pub phones_per_syllable: (usize, usize),
    pub duration_frames: (usize, usize),
    pub dims: TreeDims,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            utterances: 1,
            length: UtteranceLength::Words { min: 5, max: 20 },
            words_per_phrase: (2, 8),
            syllables_per_word: (1, 4),
            phones_per_syllable: (1, 3),
            duration_frames: (3, 30),
            dims: TreeDims::default(),
        }
    }
}

impl CorpusSpec {
    pub fn with_length(length: UtteranceLength) -> Self {
        Self {
            length,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let range_ok = |(lo, hi): (usize, usize)| lo >= 1 && lo <= hi;
        if self.utterances == 0 {
            return bad("corpus needs at least one utterance");
        }
        match self.length {
            UtteranceLength::Words { min, max } if min == 0 || min > max => {
                return bad("word count range must satisfy 1 <= min <= max")
            }
            UtteranceLength::Frames(0) => return bad("frame target must be positive"),
            UtteranceLength::Phones(0) => return bad("phone target must be positive"),
            _ => {}
        }
        if !range_ok(self.words_per_phrase)
            || !range_ok(self.syllables_per_word)
            || !range_ok(self.phones_per_syllable)
            || !range_ok(self.duration_frames)
        {
            return bad("every count range must satisfy 1 <= min <= max");
        }
        Ok(())
    }
}

/// Generates `spec.utterances` trees from one seeded stream.
pub fn synth_corpus(seed: u64, spec: &CorpusSpec) -> Result<Vec<ContextTree>> {
    spec.check()?;
    let mut rng = Rng::new(seed);
    (0..spec.utterances)
        .map(|_| synth_tree(&mut rng, spec))
        .collect()
}

/// Convenience: one utterance of roughly `seconds` of audio.
pub fn synth_utterance(seed: u64, seconds: f64) -> Result<ContextTree> {
    let spec = CorpusSpec::with_length(UtteranceLength::seconds(seconds));
    Ok(synth_corpus(seed, &spec)?.remove(0))
}

fn synth_tree(rng: &mut Rng, spec: &CorpusSpec) -> Result<ContextTree> {
    let (syl_lo, syl_hi) = spec.syllables_per_word;
    let (ph_lo, ph_hi) = spec.phones_per_syllable;
    let (dur_lo, dur_hi) = spec.duration_frames;

    let word_target = match spec.length {
        UtteranceLength::Words { min, max } => Some(rng.range_inclusive(min, max)),
        _ => None,
    };

    let mut word_syllable_counts = Vec::new();
    let mut syllable_phone_counts = Vec::new();
    let mut durations: Vec<usize> = Vec::new();
    let mut frames = 0usize;

    loop {
        let done = match spec.length {
            UtteranceLength::Words { .. } => Some(word_syllable_counts.len()) == word_target,
            UtteranceLength::Frames(target) => frames >= target,
            UtteranceLength::Phones(target) => durations.len() >= target,
        };
        if done {
            break;
        }
        let n_syl = rng.range_inclusive(syl_lo, syl_hi);
        let mut syl_in_word = 0;
        for _ in 0..n_syl {
            let mut n_ph = rng.range_inclusive(ph_lo, ph_hi);
            if let UtteranceLength::Phones(target) = spec.length {
                n_ph = n_ph.min(target - durations.len());
            }
            if n_ph == 0 {
                break;
            }
            for _ in 0..n_ph {
                let d = rng.range_inclusive(dur_lo, dur_hi);
                durations.push(d);
                frames += d;
            }
            syllable_phone_counts.push(n_ph);
            syl_in_word += 1;
        }
        word_syllable_counts.push(syl_in_word);
    }

    if let UtteranceLength::Frames(target) = spec.length {
        let mut excess = frames - target;
        for d in durations.iter_mut().rev() {
            if excess == 0 {
                break;
            }
            let cut = (*d - dur_lo).min(excess);
            *d -= cut;
            excess -= cut;
        }
    }

    let n_words = word_syllable_counts.len();
    let mut phrases = Vec::new();
    let mut start = 0;
    while start < n_words {
        let len = rng
            .range_inclusive(spec.words_per_phrase.0, spec.words_per_phrase.1)
            .min(n_words - start);
        phrases.push(Phrase {
            features: rng.normal_vec(spec.dims.phrase),
            words: start..start + len,
        });
        start += len;
    }

    let sentence = rng.normal_vec(spec.dims.sentence);
    let mut level = |rows: usize, cols: usize| {
        Matrix::from_vec(rows, cols, rng.normal_vec(rows * cols)).expect("sized buffer")
    };
    let words = level(n_words, spec.dims.word);
    let syllables = level(syllable_phone_counts.len(), spec.dims.syllable);
    let phones = level(durations.len(), spec.dims.phone);

    ContextTree::new(
        sentence,
        phrases,
        words,
        syllables,
        phones,
        word_syllable_counts,
        syllable_phone_counts,
        durations,
    )
}
