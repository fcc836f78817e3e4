//! Triple files, vocabularies, reciprocal augmentation and the filter index.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Suffix appended to a relation name to label its reciprocal.
pub const REVERSE_SUFFIX: &str = "_reverse";

/// An id-encoded fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple { head, relation, tail }
    }
}

/// A fact as written in a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        RawTriple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::domain(format!("unknown split `{s}`"))),
        }
    }
}

/// Reads `head<TAB>relation<TAB>tail` lines in file order.
pub fn load_split(path: impl AsRef<Path>) -> Result<Vec<RawTriple>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_triples(&bytes, path)
}

fn parse_triples(bytes: &[u8], path: &Path) -> Result<Vec<RawTriple>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|b| *b == b'\n').enumerate() {
        let line_no = i + 1;
        let line = std::str::from_utf8(raw).map_err(|e| parse_err(line_no, format!("invalid UTF-8: {e}")))?;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(parse_err(line_no, "empty field".into()));
        }
        out.push(RawTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

/// Bidirectional name ↔ dense id map, ids in first-insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id of `name`, inserting it if new.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Writes `id<TAB>name` lines.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (id, name) in self.names.iter().enumerate() {
            writeln!(w, "{id}\t{name}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a file written by [`Vocab::write_tsv`]; ids must be `0..n` in order.
    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocab::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (id, name) = line.split_once('\t').ok_or_else(|| bad("expected `id<TAB>name`".into()))?;
            let id: usize = id.parse().map_err(|_| bad(format!("bad id `{id}`")))?;
            if id != vocab.len() || vocab.get(name).is_some() {
                return Err(bad(format!("id {id} out of sequence or duplicate name")));
            }
            vocab.intern(name);
        }
        Ok(vocab)
    }
}

/// Entity and relation counts plus split sizes, as in a dataset summary table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "|E| = {}, |R| = {}, train = {}, valid = {}, test = {}",
            self.entities, self.relations, self.train, self.valid, self.test
        )
    }
}

/// Published statistics of the standard benchmarks, keyed by a
/// case-insensitive name (`wn18rr`, `fb15k-237`, `yago3-10`).
pub fn reference_stats(name: &str) -> Option<DatasetStats> {
    let key: String = name
        .to_ascii_lowercase()
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect();
    match key.as_str() {
        "wn18rr" => Some(DatasetStats {
            entities: 40_493,
            relations: 11,
            train: 86_835,
            valid: 3_034,
            test: 3_134,
        }),
        "fb15k237" => Some(DatasetStats {
            entities: 14_541,
            relations: 237,
            train: 272_115,
            valid: 17_535,
            test: 20_466,
        }),
        "yago310" => Some(DatasetStats {
            entities: 123_182,
            relations: 37,
            train: 1_079_040,
            valid: 5_000,
            test: 5_000,
        }),
        _ => None,
    }
}

/// Outcome of comparing measured statistics against published ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsCheck {
    /// Deviations that fail ingestion: relation count and split sizes.
    pub mismatches: Vec<String>,
    /// Deviations that are only reported: entity count.
    pub notes: Vec<String>,
}

impl StatsCheck {
    pub fn is_ok(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn into_result(self) -> Result<Vec<String>> {
        if self.is_ok() {
            Ok(self.notes)
        } else {
            Err(Error::StatsMismatch(self.mismatches.join("\n")))
        }
    }
}

pub fn check_stats(measured: &DatasetStats, reference: &DatasetStats) -> StatsCheck {
    let mut mismatches = Vec::new();
    let mut notes = Vec::new();
    let rows = [
        ("relations", measured.relations, reference.relations),
        ("train triples", measured.train, reference.train),
        ("valid triples", measured.valid, reference.valid),
        ("test triples", measured.test, reference.test),
    ];
    for (what, got, want) in rows {
        if got != want {
            mismatches.push(format!("{what}: measured {got}, reference {want}"));
        }
    }
    if measured.entities != reference.entities {
        notes.push(format!(
            "entities: measured {}, reference {} (reported only)",
            measured.entities, reference.entities
        ));
    }
    StatsCheck { mismatches, notes }
}

/// Id-encoded splits with their vocabularies.
///
/// `relations` holds the base relations only. After
/// [`TripleStore::augment_reciprocal`] relation ids `|R|..2|R|` denote the
/// reciprocal of `id - |R|`.
#[derive(Debug, Clone)]
pub struct TripleStore {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    augmented: bool,
}

impl TripleStore {
    /// Builds vocabularies in first-appearance order over train, valid, test.
    pub fn build(train: &[RawTriple], valid: &[RawTriple], test: &[RawTriple]) -> Self {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut encode = |split: &[RawTriple]| -> Vec<Triple> {
            split
                .iter()
                .map(|t| {
                    let h = entities.intern(&t.head);
                    let r = relations.intern(&t.relation);
                    let tl = entities.intern(&t.tail);
                    Triple::new(h, r, tl)
                })
                .collect()
        };
        let train = encode(train);
        let valid = encode(valid);
        let test = encode(test);
        TripleStore {
            entities,
            relations,
            train,
            valid,
            test,
            augmented: false,
        }
    }

    /// Encodes all splits against fixed vocabularies; unknown names are errors.
    pub fn with_vocab(
        entities: Vocab,
        relations: Vocab,
        train: &[RawTriple],
        valid: &[RawTriple],
        test: &[RawTriple],
    ) -> Result<Self> {
        let train = encode(train, &entities, &relations)?;
        let valid = encode(valid, &entities, &relations)?;
        let test = encode(test, &entities, &relations)?;
        Ok(TripleStore {
            entities,
            relations,
            train,
            valid,
            test,
            augmented: false,
        })
    }

    /// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let [tr, va, te] = load_raw_splits(dir)?;
        Ok(Self::build(&tr, &va, &te))
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_base_relations(&self) -> usize {
        self.relations.len()
    }

    /// Relation ids in use: `|R|`, or `2|R|` once augmented.
    pub fn n_relations(&self) -> usize {
        if self.augmented {
            2 * self.relations.len()
        } else {
            self.relations.len()
        }
    }

    /// Counts of the (unaugmented) store.
    pub fn stats(&self) -> DatasetStats {
        let div = if self.augmented { 2 } else { 1 };
        DatasetStats {
            entities: self.n_entities(),
            relations: self.n_base_relations(),
            train: self.train.len() / div,
            valid: self.valid.len() / div,
            test: self.test.len() / div,
        }
    }

    /// Adds `(t, r + |R|, h)` after every split's original triples.
    pub fn augment_reciprocal(mut self) -> Self {
        if self.augmented {
            return self;
        }
        let nr = self.relations.len();
        for split in [&mut self.train, &mut self.valid, &mut self.test] {
            let rev: Vec<Triple> = split
                .iter()
                .map(|t| Triple::new(t.tail, t.relation + nr, t.head))
                .collect();
            split.extend(rev);
        }
        self.augmented = true;
        self
    }

    /// Base relation of `r`, folding reciprocal ids onto their original.
    pub fn base_relation(&self, r: usize) -> usize {
        let nr = self.relations.len();
        if r >= nr {
            r - nr
        } else {
            r
        }
    }

    pub fn base_relation_name(&self, r: usize) -> &str {
        self.relations.name(self.base_relation(r)).unwrap_or("?")
    }

    /// Name of relation id `r`; reciprocals carry [`REVERSE_SUFFIX`].
    pub fn relation_name(&self, r: usize) -> String {
        let base = self.base_relation_name(r);
        if r >= self.relations.len() {
            format!("{base}{REVERSE_SUFFIX}")
        } else {
            base.to_owned()
        }
    }

    /// Triple back to names; a reciprocal triple decodes to the original fact.
    pub fn decode(&self, t: &Triple) -> Option<RawTriple> {
        let nr = self.relations.len();
        let (h, r, tl) = if t.relation >= nr {
            (t.tail, t.relation - nr, t.head)
        } else {
            (t.head, t.relation, t.tail)
        };
        Some(RawTriple::new(
            self.entities.name(h)?,
            self.relations.name(r)?,
            self.entities.name(tl)?,
        ))
    }

    /// Writes `entities.tsv` and `relations.tsv` into `dir`. The relation file
    /// lists all ids in use, reciprocals included.
    pub fn write_vocab(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.entities.write_tsv(dir.join("entities.tsv"))?;
        let mut rel = Vocab::new();
        for r in 0..self.n_relations() {
            rel.intern(&self.relation_name(r));
        }
        rel.write_tsv(dir.join("relations.tsv"))
    }
}

/// The three raw splits of a dataset directory.
pub fn load_raw_splits(dir: impl AsRef<Path>) -> Result<[Vec<RawTriple>; 3]> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let path = |s: Split| -> PathBuf { dir.join(s.file_name()) };
    Ok([
        load_split(path(Split::Train))?,
        load_split(path(Split::Valid))?,
        load_split(path(Split::Test))?,
    ])
}

/// Encodes against fixed vocabularies; unseen names are a hard error.
pub fn encode(raw: &[RawTriple], entities: &Vocab, relations: &Vocab) -> Result<Vec<Triple>> {
    let ent = |n: &str| {
        entities.get(n).ok_or_else(|| Error::UnknownSymbol {
            kind: "entity",
            name: n.to_owned(),
        })
    };
    raw.iter()
        .map(|t| {
            let r = relations.get(&t.relation).ok_or_else(|| Error::UnknownSymbol {
                kind: "relation",
                name: t.relation.clone(),
            })?;
            Ok(Triple::new(ent(&t.head)?, r, ent(&t.tail)?))
        })
        .collect()
}

/// Balanced binary tree knowledge graph with `2^depth - 1` nodes named
/// `n0, n1, ...` in heap order. Every edge yields `(parent, parent_of, child)`
/// and `(child, child_of, parent)`; the triples are shuffled with `seed` and
/// split 80/10/10 into train, valid and test.
pub fn synthetic_binary_tree(depth: u32, seed: u64) -> [Vec<RawTriple>; 3] {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let n = (1usize << depth) - 1;
    let name = |i: usize| format!("n{i}");
    let mut triples = Vec::with_capacity(2 * n);
    for child in 1..n {
        let parent = (child - 1) / 2;
        triples.push(RawTriple::new(name(parent), "parent_of", name(child)));
        triples.push(RawTriple::new(name(child), "child_of", name(parent)));
    }
    triples.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let n_train = triples.len() * 8 / 10;
    let n_valid = triples.len() / 10;
    let test = triples.split_off(n_train + n_valid);
    let valid = triples.split_off(n_train);
    [triples, valid, test]
}

/// All known tails of every `(head, relation)` pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterIndex {
    map: HashMap<(usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for t in triples {
            map.entry((t.head, t.relation)).or_default().push(t.tail);
        }
        for tails in map.values_mut() {
            tails.sort_unstable();
            tails.dedup();
        }
        FilterIndex { map }
    }

    /// Union over train, valid and test.
    pub fn build(store: &TripleStore) -> Self {
        Self::from_triples(store.train.iter().chain(&store.valid).chain(&store.test))
    }

    /// Sorted known tails; empty when the pair never occurs.
    pub fn tails(&self, head: usize, relation: usize) -> &[usize] {
        self.map.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.tails(t.head, t.relation).binary_search(&t.tail).is_ok()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
