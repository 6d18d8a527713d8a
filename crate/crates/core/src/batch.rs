//! Flattened, canonically ordered observations of a minibatch.

use std::sync::Arc;

use crate::data::{FiniteIncomplete, IncompleteSeries};
use crate::error::{Error, Result};

/// Observations of `num_cases` cases laid out case-major, then channel,
/// then canonical order within the channel.
///
/// Canonical order sorts each channel by `(time, value)` under IEEE total
/// ordering. Every reduction over observations therefore visits them in the
/// same sequence regardless of how a case was stored, which makes all
/// downstream results bitwise invariant to storage permutations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    num_cases: usize,
    num_channels: usize,
    /// `num_cases * num_channels + 1` offsets into the flat arrays.
    starts: Vec<usize>,
    time: Vec<f64>,
    value: Vec<f64>,
    /// Original position of each observation within its channel.
    source: Vec<usize>,
}

impl ObsBatch {
    pub fn from_series(cases: &[&IncompleteSeries]) -> Result<ObsBatch> {
        let num_channels = cases.first().map_or(0, |c| c.num_channels());
        if let Some(bad) = cases.iter().find(|c| c.num_channels() != num_channels) {
            return Err(Error::invalid(format!(
                "batch mixes {} and {} channels",
                num_channels,
                bad.num_channels()
            )));
        }
        let total: usize = cases.iter().map(|c| c.num_observations()).sum();
        let mut b = ObsBatch {
            num_cases: cases.len(),
            num_channels,
            starts: vec![0],
            time: Vec::with_capacity(total),
            value: Vec::with_capacity(total),
            source: Vec::with_capacity(total),
        };
        for case in cases {
            for obs in &case.channels {
                b.push_channel(obs.iter().copied());
            }
        }
        Ok(b)
    }

    /// Finite-index cases as one channel whose "times" are the indices.
    pub fn from_finite(cases: &[&FiniteIncomplete]) -> Result<ObsBatch> {
        let mut b = ObsBatch {
            num_cases: cases.len(),
            num_channels: 1,
            starts: vec![0],
            time: Vec::new(),
            value: Vec::new(),
            source: Vec::new(),
        };
        for case in cases {
            case.validate()?;
            b.push_channel(
                case.indices
                    .iter()
                    .zip(&case.values)
                    .map(|(&i, &x)| (i as f64, x)),
            );
        }
        Ok(b)
    }

    /// Cases whose channels hold the given query times and zero values.
    pub fn from_times(num_channels: usize, cases: &[Vec<Vec<f64>>]) -> Result<ObsBatch> {
        let series: Vec<IncompleteSeries> = cases
            .iter()
            .map(|chans| {
                if chans.len() != num_channels {
                    return Err(Error::InvalidChannel(chans.len()));
                }
                Ok(IncompleteSeries {
                    channels: chans
                        .iter()
                        .map(|ts| ts.iter().map(|&t| (t, 0.0)).collect())
                        .collect(),
                    label: None,
                    truth: None,
                })
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&IncompleteSeries> = series.iter().collect();
        let mut b = ObsBatch::from_series(&refs)?;
        b.num_channels = num_channels;
        Ok(b)
    }

    fn push_channel(&mut self, obs: impl Iterator<Item = (f64, f64)>) {
        let mut items: Vec<(f64, f64, usize)> =
            obs.enumerate().map(|(i, (t, x))| (t, x, i)).collect();
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (t, x, i) in items {
            self.time.push(t);
            self.value.push(x);
            self.source.push(i);
        }
        self.starts.push(self.time.len());
    }

    /// Each case repeated `k` times consecutively: row `b * k + s`.
    pub fn repeat_cases(&self, k: usize) -> ObsBatch {
        let mut out = ObsBatch {
            num_cases: self.num_cases * k,
            num_channels: self.num_channels,
            starts: vec![0],
            time: Vec::with_capacity(self.time.len() * k),
            value: Vec::with_capacity(self.time.len() * k),
            source: Vec::with_capacity(self.time.len() * k),
        };
        for b in 0..self.num_cases {
            for _ in 0..k {
                for c in 0..self.num_channels {
                    let r = self.channel_range(b, c);
                    out.time.extend_from_slice(&self.time[r.clone()]);
                    out.value.extend_from_slice(&self.value[r.clone()]);
                    out.source.extend_from_slice(&self.source[r]);
                    out.starts.push(out.time.len());
                }
            }
        }
        out
    }

    pub fn num_cases(&self) -> usize {
        self.num_cases
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.time
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    pub fn channel_range(&self, case: usize, channel: usize) -> std::ops::Range<usize> {
        let i = case * self.num_channels + channel;
        self.starts[i]..self.starts[i + 1]
    }

    pub fn case_range(&self, case: usize) -> std::ops::Range<usize> {
        self.starts[case * self.num_channels]..self.starts[(case + 1) * self.num_channels]
    }

    /// Channel of each flat observation.
    pub fn channel_ids(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for b in 0..self.num_cases {
            for c in 0..self.num_channels {
                out.extend(std::iter::repeat_n(c, self.channel_range(b, c).len()));
            }
        }
        out
    }

    /// Case of each flat observation.
    pub fn case_ids(&self) -> Arc<Vec<usize>> {
        let mut out = Vec::with_capacity(self.len());
        for b in 0..self.num_cases {
            out.extend(std::iter::repeat_n(b, self.case_range(b).len()));
        }
        Arc::new(out)
    }

    /// For each observation in caller order (case, channel, stored position)
    /// its flat index in this batch.
    pub fn stored_to_flat(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for bc in 0..self.num_cases * self.num_channels {
            let start = self.starts[bc];
            for q in start..self.starts[bc + 1] {
                out[start + self.source[q]] = q;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_ignores_storage_order() {
        let a = IncompleteSeries::new(vec![vec![(0.3, 1.0), (0.1, 2.0), (0.3, 0.5)], vec![]]).unwrap();
        let b = a.permute(&[vec![2, 0, 1], vec![]]).unwrap();
        let ba = ObsBatch::from_series(&[&a]).unwrap();
        let bb = ObsBatch::from_series(&[&b]).unwrap();
        assert_eq!(ba.times(), bb.times());
        assert_eq!(ba.values(), bb.values());
        assert_eq!(ba.values(), &[2.0, 0.5, 1.0]);
    }

    #[test]
    fn stored_to_flat_inverts_sort() {
        let a = IncompleteSeries::new(vec![vec![(0.3, 1.0), (0.1, 2.0)], vec![(0.9, 4.0), (0.2, 3.0)]])
            .unwrap();
        let b = ObsBatch::from_series(&[&a, &a]).unwrap();
        let map = b.stored_to_flat();
        let stored: Vec<f64> = [&a, &a]
            .iter()
            .flat_map(|s| s.channels.iter().flatten().map(|o| o.1))
            .collect();
        for (i, &q) in map.iter().enumerate() {
            assert_eq!(b.values()[q], stored[i]);
        }
    }

    #[test]
    fn repeat_layout() {
        let a = IncompleteSeries::new(vec![vec![(0.3, 1.0)], vec![(0.5, 2.0)]]).unwrap();
        let e = IncompleteSeries::empty(2);
        let b = ObsBatch::from_series(&[&a, &e]).unwrap().repeat_cases(2);
        assert_eq!(b.num_cases(), 4);
        assert_eq!(b.values(), &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(*b.case_ids(), vec![0, 0, 1, 1]);
        assert_eq!(b.channel_ids(), vec![0, 1, 0, 1]);
        assert!(b.case_range(3).is_empty());
    }
}
