//! Transition records, state-action sample sets and their on-disk formats.
//!
//! Two interchangeable formats are supported:
//!
//! * JSON lines, one record per line:
//!   `{"s":[..],"a":[..],"s2":[..],"r":-1.0,"d":false}`. State-action sample
//!   sets write `"s2"`, `"r"` and `"d"` as `null`.
//! * Packed little-endian binary: the 5-byte magic `MCDA1`, then `u32`
//!   state dim, `u32` action dim, `u32` next-state dim (0 for sample sets),
//!   `u64` record count, then one row-major `f64` row per record laid out as
//!   `s, a` followed by `s2, r, d` when the next-state dim is nonzero
//!   (`d` stored as 0.0 / 1.0).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 5] = b"MCDA1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    #[serde(rename = "s2")]
    pub s_next: Vec<f64>,
    pub r: f64,
    #[serde(rename = "d")]
    pub done: bool,
}

impl Transition {
    pub fn new(s: Vec<f64>, a: Vec<f64>, s_next: Vec<f64>, r: f64, done: bool) -> Self {
        Self {
            s,
            a,
            s_next,
            r,
            done,
        }
    }

    /// Concatenated `[s ; a]`.
    pub fn state_action(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.s.len() + self.a.len());
        v.extend_from_slice(&self.s);
        v.extend_from_slice(&self.a);
        v
    }
}

/// Where a state-action pair (or transition) came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Emp,
    Rand,
    Dyna,
    Mocoda,
    MocodaU,
    MocodaP,
    Coda,
}

impl Provenance {
    pub const ALL: [Provenance; 7] = [
        Provenance::Emp,
        Provenance::Rand,
        Provenance::Dyna,
        Provenance::Mocoda,
        Provenance::MocodaU,
        Provenance::MocodaP,
        Provenance::Coda,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Emp => "emp",
            Provenance::Rand => "rand",
            Provenance::Dyna => "dyna",
            Provenance::Mocoda => "mocoda",
            Provenance::MocodaU => "mocoda_u",
            Provenance::MocodaP => "mocoda_p",
            Provenance::Coda => "coda",
        }
    }

    /// Column label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Emp => "Emp",
            Provenance::Rand => "Rand",
            Provenance::Dyna => "Dyna",
            Provenance::Mocoda => "Mocoda",
            Provenance::MocodaU => "Mocoda-U",
            Provenance::MocodaP => "Mocoda-P",
            Provenance::Coda => "CoDA",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Provenance::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown distribution `{s}`")))
    }
}

/// A state-action pair drawn from some parent distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SaSample {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub provenance: Provenance,
}

impl SaSample {
    pub fn from_joint(sa: &[f64], state_dim: usize, provenance: Provenance) -> Self {
        Self {
            s: sa[..state_dim].to_vec(),
            a: sa[state_dim..].to_vec(),
            provenance,
        }
    }

    pub fn state_action(&self) -> Vec<f64> {
        let mut v = self.s.clone();
        v.extend_from_slice(&self.a);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            transitions: Vec::new(),
        }
    }

    pub fn from_transitions(
        state_dim: usize,
        action_dim: usize,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        let ds = Self {
            state_dim,
            action_dim,
            transitions,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        self.check(&t)?;
        self.transitions.push(t);
        Ok(())
    }

    fn check(&self, t: &Transition) -> Result<()> {
        if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim {
            return Err(Error::DimMismatch {
                expected: self.state_dim,
                got: if t.s.len() != self.state_dim {
                    t.s.len()
                } else {
                    t.s_next.len()
                },
                context: "transition state",
            });
        }
        if t.a.len() != self.action_dim {
            return Err(Error::DimMismatch {
                expected: self.action_dim,
                got: t.a.len(),
                context: "transition action",
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.transitions.iter().try_for_each(|t| self.check(t))
    }

    pub fn sa_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    /// Shuffled train/validation split. `val_count` records go to validation.
    pub fn split<R: Rng + ?Sized>(&self, val_count: usize, rng: &mut R) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let val_count = val_count.min(self.len());
        let (val_idx, train_idx) = idx.split_at(val_count);
        let pick = |ids: &[usize]| Dataset {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            transitions: ids.iter().map(|&i| self.transitions[i].clone()).collect(),
        };
        (pick(train_idx), pick(val_idx))
    }

    pub fn sa_samples(&self, provenance: Provenance) -> Vec<SaSample> {
        self.transitions
            .iter()
            .map(|t| SaSample {
                s: t.s.clone(),
                a: t.a.clone(),
                provenance,
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match Format::from_path(path) {
            Format::JsonLines => write_jsonl(path, &self.transitions),
            Format::Binary => write_binary_transitions(path, self),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        match Format::from_path(path) {
            Format::JsonLines => {
                let transitions = read_jsonl(path)?;
                let (ds, da) = transitions
                    .first()
                    .map(|t| (t.s.len(), t.a.len()))
                    .unwrap_or((0, 0));
                Dataset::from_transitions(ds, da, transitions)
            }
            Format::Binary => read_binary(path)?.into_dataset(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    JsonLines,
    Binary,
}

impl Format {
    /// `.bin` / `.mcda` are binary; anything else is JSON lines.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("mcda") => Format::Binary,
            _ => Format::JsonLines,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SaRecord {
    s: Vec<f64>,
    a: Vec<f64>,
    s2: Option<Vec<f64>>,
    r: Option<f64>,
    d: Option<bool>,
}

fn write_jsonl(path: &Path, transitions: &[Transition]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in transitions {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl(path: &Path) -> Result<Vec<Transition>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn save_sa_samples(path: &Path, samples: &[SaSample]) -> Result<()> {
    let (ds, da) = samples
        .first()
        .map(|x| (x.s.len(), x.a.len()))
        .unwrap_or((0, 0));
    match Format::from_path(path) {
        Format::JsonLines => {
            let mut w = BufWriter::new(File::create(path)?);
            for x in samples {
                let rec = SaRecord {
                    s: x.s.clone(),
                    a: x.a.clone(),
                    s2: None,
                    r: None,
                    d: None,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Format::Binary => {
            let mut w = BufWriter::new(File::create(path)?);
            write_header(&mut w, ds, da, 0, samples.len())?;
            for x in samples {
                for v in x.s.iter().chain(&x.a) {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Loads a state-action sample set. Transition files are accepted too; their
/// next-state fields are dropped.
pub fn load_sa_samples(path: &Path, provenance: Provenance) -> Result<Vec<SaSample>> {
    match Format::from_path(path) {
        Format::JsonLines => {
            let r = BufReader::new(File::open(path)?);
            let mut out = Vec::new();
            for line in r.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: SaRecord = serde_json::from_str(&line)?;
                out.push(SaSample {
                    s: rec.s,
                    a: rec.a,
                    provenance,
                });
            }
            Ok(out)
        }
        Format::Binary => Ok(read_binary(path)?
            .rows
            .into_iter()
            .map(|row| SaSample {
                s: row.s,
                a: row.a,
                provenance,
            })
            .collect()),
    }
}

fn write_header<W: Write>(w: &mut W, ds: usize, da: usize, dn: usize, count: usize) -> Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_u32::<LittleEndian>(ds as u32)?;
    w.write_u32::<LittleEndian>(da as u32)?;
    w.write_u32::<LittleEndian>(dn as u32)?;
    w.write_u64::<LittleEndian>(count as u64)?;
    Ok(())
}

fn write_binary_transitions(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_binary_to(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

/// Writes the packed binary encoding of `ds` to any writer.
pub fn write_binary_to<W: Write>(w: &mut W, ds: &Dataset) -> Result<()> {
    write_header(w, ds.state_dim, ds.action_dim, ds.state_dim, ds.len())?;
    for t in &ds.transitions {
        for v in t.s.iter().chain(&t.a).chain(&t.s_next) {
            w.write_f64::<LittleEndian>(*v)?;
        }
        w.write_f64::<LittleEndian>(t.r)?;
        w.write_f64::<LittleEndian>(if t.done { 1.0 } else { 0.0 })?;
    }
    Ok(())
}

struct BinaryRow {
    s: Vec<f64>,
    a: Vec<f64>,
    next: Option<(Vec<f64>, f64, bool)>,
}

struct BinaryFile {
    state_dim: usize,
    action_dim: usize,
    rows: Vec<BinaryRow>,
}

impl BinaryFile {
    fn into_dataset(self) -> Result<Dataset> {
        let mut transitions = Vec::with_capacity(self.rows.len());
        for row in self.rows {
            let (s_next, r, done) = row.next.ok_or_else(|| {
                Error::Format("binary file holds state-action samples, not transitions".into())
            })?;
            transitions.push(Transition::new(row.s, row.a, s_next, r, done));
        }
        Dataset::from_transitions(self.state_dim, self.action_dim, transitions)
    }
}

fn read_binary(path: &Path) -> Result<BinaryFile> {
    let mut r = BufReader::new(File::open(path)?);
    read_binary_from(&mut r)
}

fn read_binary_from<R: Read>(r: &mut R) -> Result<BinaryFile> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format("bad magic, expected MCDA1".into()));
    }
    let ds = r.read_u32::<LittleEndian>()? as usize;
    let da = r.read_u32::<LittleEndian>()? as usize;
    let dn = r.read_u32::<LittleEndian>()? as usize;
    let count = r.read_u64::<LittleEndian>()? as usize;
    if dn != 0 && dn != ds {
        return Err(Error::Format(format!(
            "next-state dim {dn} must be 0 or equal to state dim {ds}"
        )));
    }
    let read_vec = |n: usize, r: &mut R| -> Result<Vec<f64>> {
        let mut v = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut v)?;
        Ok(v)
    };
    let mut rows = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let s = read_vec(ds, r)?;
        let a = read_vec(da, r)?;
        let next = if dn > 0 {
            let s2 = read_vec(dn, r)?;
            let rew = r.read_f64::<LittleEndian>()?;
            let d = r.read_f64::<LittleEndian>()?;
            Some((s2, rew, d != 0.0))
        } else {
            None
        };
        rows.push(BinaryRow { s, a, next });
    }
    Ok(BinaryFile {
        state_dim: ds,
        action_dim: da,
        rows,
    })
}

/// Decodes a packed binary transition file from any reader.
pub fn read_binary_dataset<R: Read>(r: &mut R) -> Result<Dataset> {
    read_binary_from(r)?.into_dataset()
}
