//! Incomplete data over continuous and finite index sets, the masking
//! function, and JSONL dataset I/O.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Latent parameters of a synthetic case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    pub a: f64,
    pub b: f64,
}

/// One case: per-channel `(time, value)` observations over `[0, 1]`.
///
/// Storage order within a channel carries no meaning; everything downstream
/// treats each channel as a multiset.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteSeries {
    pub channels: Vec<Vec<(f64, f64)>>,
    pub label: Option<usize>,
    pub truth: Option<TruthParams>,
}

impl IncompleteSeries {
    pub fn new(channels: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let s = IncompleteSeries {
            channels,
            label: None,
            truth: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn empty(num_channels: usize) -> Self {
        IncompleteSeries {
            channels: vec![Vec::new(); num_channels],
            label: None,
            truth: None,
        }
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_observations(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }

    /// Checks that every time lies in `[0, 1]` and every value is finite.
    pub fn validate(&self) -> Result<()> {
        for (c, obs) in self.channels.iter().enumerate() {
            for &(t, x) in obs {
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::invalid(format!(
                        "channel {c}: time {t} outside [0, 1]"
                    )));
                }
                if !x.is_finite() {
                    return Err(Error::invalid(format!(
                        "channel {c}: non-finite value {x} at time {t}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reorders each channel: new position `i` holds old position `perm[c][i]`.
    pub fn permute(&self, perms: &[Vec<usize>]) -> Result<IncompleteSeries> {
        if perms.len() != self.channels.len() {
            return Err(Error::InvalidPermutation(format!(
                "{} permutations for {} channels",
                perms.len(),
                self.channels.len()
            )));
        }
        let mut channels = Vec::with_capacity(self.channels.len());
        for (c, (obs, perm)) in self.channels.iter().zip(perms).enumerate() {
            if perm.len() != obs.len() {
                return Err(Error::InvalidPermutation(format!(
                    "channel {c}: permutation of length {} for {} observations",
                    perm.len(),
                    obs.len()
                )));
            }
            let mut seen = vec![false; obs.len()];
            for &p in perm {
                if p >= obs.len() || std::mem::replace(&mut seen[p], true) {
                    return Err(Error::InvalidPermutation(format!(
                        "channel {c}: {perm:?} is not a permutation"
                    )));
                }
            }
            channels.push(perm.iter().map(|&p| obs[p]).collect());
        }
        Ok(IncompleteSeries {
            channels,
            label: self.label,
            truth: self.truth,
        })
    }
}

/// Incomplete case over the finite index set `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteIncomplete {
    pub n: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl FiniteIncomplete {
    pub fn new(n: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let f = FiniteIncomplete { n, indices, values };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::invalid(format!(
                "{} indices but {} values",
                self.indices.len(),
                self.values.len()
            )));
        }
        let mut seen = vec![false; self.n];
        for &i in &self.indices {
            if i >= self.n {
                return Err(Error::invalid(format!(
                    "index {i} outside [0, {})",
                    self.n
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::DuplicateIndex(i));
            }
        }
        Ok(())
    }
}

/// Zero-filled fixed-size view of a [`FiniteIncomplete`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrid {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl MaskedGrid {
    /// Inverse of [`mask`]; indices come out ascending.
    pub fn to_incomplete(&self) -> FiniteIncomplete {
        let indices: Vec<usize> = (0..self.mask.len()).filter(|&i| self.mask[i]).collect();
        let values = indices.iter().map(|&i| self.values[i]).collect();
        FiniteIncomplete {
            n: self.mask.len(),
            indices,
            values,
        }
    }
}

/// `v[t] = Σ_i x_i·1{t_i = t}`, with the mask set at observed indices.
pub fn mask(case: &FiniteIncomplete) -> Result<MaskedGrid> {
    case.validate()?;
    let mut values = vec![0.0; case.n];
    let mut mask = vec![false; case.n];
    for (&i, &x) in case.indices.iter().zip(&case.values) {
        values[i] += x;
        mask[i] = true;
    }
    Ok(MaskedGrid { values, mask })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub schema_version: u32,
    pub channels: usize,
    pub seed: Option<u64>,
    #[serde(default)]
    pub description: String,
}

/// Cases sharing a channel count. Times always span `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub metadata: Metadata,
    pub cases: Vec<IncompleteSeries>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    obs: Vec<(usize, f64, f64)>,
    label: Option<usize>,
    truth: Option<TruthParams>,
}

impl Dataset {
    pub fn new(channels: usize, seed: Option<u64>, description: impl Into<String>) -> Self {
        Dataset {
            metadata: Metadata {
                schema_version: SCHEMA_VERSION,
                channels,
                seed,
                description: description.into(),
            },
            cases: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.metadata.channels
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.label.is_some())
    }

    /// Copy holding the cases at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            metadata: self.metadata.clone(),
            cases: idx.iter().map(|&i| self.cases[i].clone()).collect(),
        }
    }

    /// Splits off the first `n` cases.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.cases.len());
        let head = (0..n).collect::<Vec<_>>();
        let tail = (n..self.cases.len()).collect::<Vec<_>>();
        (self.subset(&head), self.subset(&tail))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.metadata)?;
        w.write_all(b"\n")?;
        for case in &self.cases {
            let obs = case
                .channels
                .iter()
                .enumerate()
                .flat_map(|(c, o)| o.iter().map(move |&(t, x)| (c, t, x)))
                .collect();
            let rec = Record {
                obs,
                label: case.label,
                truth: case.truth,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Dataset> {
        let mut lines = r.lines().enumerate();
        let metadata: Metadata = loop {
            let Some((i, line)) = lines.next() else {
                return Err(Error::Malformed {
                    line: 1,
                    msg: "missing metadata record".into(),
                });
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            break serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: i + 1,
                msg: format!("metadata: {e}"),
            })?;
        };
        if metadata.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: SCHEMA_VERSION,
                found: metadata.schema_version,
            });
        }
        let mut cases = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Malformed { line: i + 1, msg };
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| bad(format!("case record: {e}")))?;
            let mut channels = vec![Vec::new(); metadata.channels];
            for (c, t, x) in rec.obs {
                if c >= metadata.channels {
                    return Err(bad(format!(
                        "channel {c} but dataset has {} channels",
                        metadata.channels
                    )));
                }
                channels[c].push((t, x));
            }
            let case = IncompleteSeries {
                channels,
                label: rec.label,
                truth: rec.truth,
            };
            case.validate()
                .map_err(|e| bad(format!("case {}: {e}", cases.len())))?;
            cases.push(case);
        }
        Ok(Dataset { metadata, cases })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::read_jsonl(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fi(n: usize, idx: &[usize], vals: &[f64]) -> FiniteIncomplete {
        FiniteIncomplete::new(n, idx.to_vec(), vals.to_vec()).unwrap()
    }

    #[test]
    fn mask_examples() {
        let m = mask(&fi(4, &[1, 3], &[5.0, -2.0])).unwrap();
        assert_eq!(m.values, [0.0, 5.0, 0.0, -2.0]);
        assert_eq!(m.mask, [false, true, false, true]);

        let m = mask(&fi(3, &[], &[])).unwrap();
        assert_eq!(m.values, [0.0; 3]);
        assert_eq!(m.mask, [false; 3]);

        let m = mask(&fi(2, &[0, 1], &[7.0, 8.0])).unwrap();
        assert_eq!(m.values, [7.0, 8.0]);
        assert_eq!(m.mask, [true, true]);
    }

    #[test]
    fn mask_rejects_duplicates() {
        let case = FiniteIncomplete {
            n: 3,
            indices: vec![1, 1],
            values: vec![1.0, 2.0],
        };
        assert!(matches!(mask(&case), Err(Error::DuplicateIndex(1))));
    }

    #[test]
    fn masked_grid_round_trips() {
        let case = fi(5, &[4, 0, 2], &[1.0, -3.0, 0.0]);
        let back = mask(&case).unwrap().to_incomplete();
        assert_eq!(back.indices, [0, 2, 4]);
        assert_eq!(back.values, [-3.0, 0.0, 1.0]);
    }

    #[test]
    fn permute_examples() {
        let s = IncompleteSeries::new(vec![vec![(0.1, 1.0), (0.2, 2.0), (0.3, 3.0)]]).unwrap();
        assert_eq!(s.permute(&[vec![0, 1, 2]]).unwrap(), s);
        let r = s.permute(&[vec![2, 1, 0]]).unwrap();
        assert_eq!(r.channels[0], [(0.3, 3.0), (0.2, 2.0), (0.1, 1.0)]);
        assert!(s.permute(&[vec![0, 1]]).is_err());
        assert!(s.permute(&[vec![0, 0, 1]]).is_err());
    }

    #[test]
    fn rejects_out_of_range_time() {
        assert!(IncompleteSeries::new(vec![vec![(1.5, 0.0)]]).is_err());
    }

    #[test]
    fn loader_names_bad_line() {
        let text = "{\"schema_version\":1,\"channels\":1,\"seed\":null,\"description\":\"\"}\n\
                    {\"obs\":[[0,0.5,1.0]],\"label\":null,\"truth\":null}\n\
                    {\"obs\":[[0,1.5,1.0]],\"label\":null,\"truth\":null}\n";
        match Dataset::read_jsonl(text.as_bytes()) {
            Err(Error::Malformed { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("1.5"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loader_checks_schema_version() {
        let text = "{\"schema_version\":9,\"channels\":1,\"seed\":null,\"description\":\"\"}\n";
        assert!(matches!(
            Dataset::read_jsonl(text.as_bytes()),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
    }

    #[test]
    fn metadata_only_file_is_empty_dataset() {
        let text = "{\"schema_version\":1,\"channels\":3,\"seed\":4,\"description\":\"x\"}\n";
        let d = Dataset::read_jsonl(text.as_bytes()).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.channels(), 3);
        assert_eq!(d.metadata.seed, Some(4));
    }
}
