//! Continuous-time building blocks: the Epanechnikov kernel smoother that
//! maps grid references to arbitrary query times, and the continuous
//! convolution that maps irregular observations onto a grid.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::ops::Range;
use std::sync::Arc;

use crate::autodiff::{Graph, Tensor, Var};
use crate::batch::ObsBatch;
use crate::data::IncompleteSeries;
use crate::error::{Error, Result};

/// Point `j` of an evenly spaced grid of `len` points over `[0, 1]`.
pub fn grid_point(j: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        j as f64 / (len - 1) as f64
    }
}

fn grid_spacing(len: usize) -> f64 {
    1.0 / (len.max(2) - 1) as f64
}

/// Grid indices whose points lie in `[lo, hi]`, padded by one on each side
/// to absorb rounding; callers re-test the exact predicate.
fn candidate_range(lo: f64, hi: f64, len: usize) -> Range<usize> {
    let inv = (len.max(2) - 1) as f64;
    let first = ((lo * inv).floor() - 1.0).max(0.0) as usize;
    let last = ((hi * inv).ceil() + 1.0).min(len as f64 - 1.0);
    if last < 0.0 || len == 0 {
        return 0..0;
    }
    first..last as usize + 1
}

fn kernel(dist: f64, beta: f64) -> f64 {
    let r = dist / beta;
    (0.75 * (1.0 - r * r)).max(0.0)
}

/// `K(u, t) = max(3/4 (1 - (|u - t| / β)²), 0)`.
pub fn epanechnikov(u: f64, t: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {beta}")));
    }
    Ok(kernel((u - t).abs(), beta))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelSmootherConfig {
    pub references: usize,
    pub bandwidth: f64,
}

impl Default for KernelSmootherConfig {
    fn default() -> Self {
        KernelSmootherConfig {
            references: 128,
            bandwidth: 3.0 / 128.0,
        }
    }
}

impl KernelSmootherConfig {
    pub fn new(references: usize, bandwidth: f64) -> Result<Self> {
        let c = KernelSmootherConfig {
            references,
            bandwidth,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.references < 2 {
            return Err(Error::invalid("kernel smoother needs at least 2 references"));
        }
        if !(self.bandwidth > grid_spacing(self.references)) {
            return Err(Error::invalid(format!(
                "bandwidth {} must exceed reference spacing {}",
                self.bandwidth,
                grid_spacing(self.references)
            )));
        }
        Ok(())
    }

    pub fn reference(&self, i: usize) -> f64 {
        grid_point(i, self.references)
    }

    /// Unnormalized weights of references with `|u - t| < β`.
    pub fn weights(&self, t: f64) -> Vec<(usize, f64)> {
        let beta = self.bandwidth;
        candidate_range(t - beta, t + beta, self.references)
            .filter_map(|i| {
                let d = (self.reference(i) - t).abs();
                (d < beta).then(|| (i, kernel(d, beta)))
            })
            .filter(|&(_, w)| w > 0.0)
            .collect()
    }
}

/// Nadaraya–Watson interpolation of per-channel references `v[c][i]` at
/// `(channel, time)` queries.
pub fn kernel_smooth(
    cfg: &KernelSmootherConfig,
    v: &[Vec<f64>],
    queries: &[(usize, f64)],
) -> Result<Vec<f64>> {
    if cfg.references < 2 || !(cfg.bandwidth > 0.0) {
        return Err(Error::invalid(format!(
            "kernel smoother needs L >= 2 and β > 0, got L = {}, β = {}",
            cfg.references, cfg.bandwidth
        )));
    }
    if let Some(bad) = v.iter().find(|r| r.len() != cfg.references) {
        return Err(Error::shape(
            "kernel_smooth",
            format!("{} references per channel, expected {}", bad.len(), cfg.references),
        ));
    }
    queries
        .iter()
        .map(|&(c, t)| {
            let refs = v.get(c).ok_or(Error::InvalidChannel(c))?;
            let w = cfg.weights(t);
            let den: f64 = w.iter().map(|p| p.1).sum();
            if den == 0.0 {
                return Err(Error::EmptySupport(t));
            }
            let num: f64 = w.iter().map(|&(i, wi)| wi * refs[i]).sum();
            Ok(num / den)
        })
        .collect()
}

/// Degree-1 B-spline over `[0, h]` with `m` evenly spaced knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearFilter {
    pub width: f64,
    pub knots: Vec<f64>,
}

/// Segment index and fractional position of offset `s`, or `None` outside
/// the closed support `[0, h]`.
pub fn locate(width: f64, m: usize, s: f64) -> Option<(usize, f64)> {
    if !(0.0..=width).contains(&s) || m < 2 {
        return None;
    }
    let pos = s / width * (m - 1) as f64;
    let seg = (pos.floor() as usize).min(m - 2);
    let frac = (pos - seg as f64).clamp(0.0, 1.0);
    Some((seg, frac))
}

impl PiecewiseLinearFilter {
    pub fn new(width: f64, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("a filter needs at least 2 knots"));
        }
        if !(width > 0.0) {
            return Err(Error::invalid(format!("filter width must be positive, got {width}")));
        }
        Ok(PiecewiseLinearFilter { width, knots })
    }

    pub fn knot_position(&self, j: usize) -> f64 {
        self.width * (j as f64 / (self.knots.len() - 1) as f64)
    }

    pub fn eval(&self, s: f64) -> f64 {
        match locate(self.width, self.knots.len(), s) {
            Some((j, f)) => (1.0 - f) * self.knots[j] + f * self.knots[j + 1],
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Side {
    /// Observation `i` neighbors grid point `r` iff `t_i - r ∈ [0, width]`.
    Conv { width: f64 },
    /// Reference `u` neighbors query `t` iff `|u - t| < bandwidth`.
    Smoother { bandwidth: f64 },
}

/// Precomputed neighbor lists with cached offsets.
///
/// Conv side: one row per `(grid point j, channel c)` listing observation
/// positions within channel `c` and offsets `t_i - r_j`. Smoother side: one
/// row per observation listing reference indices and offsets `u - t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    side: Side,
    grid_len: usize,
    channel_lens: Vec<usize>,
    row_starts: Vec<usize>,
    items: Vec<usize>,
    offsets: Vec<f64>,
    fingerprint: u64,
}

pub fn times_fingerprint(times: &[Vec<f64>]) -> u64 {
    let mut h = DefaultHasher::new();
    times.len().hash(&mut h);
    for ch in times {
        ch.len().hash(&mut h);
        for t in ch {
            t.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn series_times(case: &IncompleteSeries) -> Vec<Vec<f64>> {
    case.channels
        .iter()
        .map(|o| o.iter().map(|p| p.0).collect())
        .collect()
}

pub fn build_neighbors(times: &[Vec<f64>], grid_len: usize, side: Side) -> Result<NeighborIndex> {
    if grid_len == 0 {
        return Err(Error::invalid("grid must have at least one point"));
    }
    let channels = times.len();
    let mut row_starts = vec![0];
    let mut items = Vec::new();
    let mut offsets = Vec::new();
    match side {
        Side::Conv { width } => {
            if !(width > 0.0) {
                return Err(Error::invalid(format!("filter width must be positive, got {width}")));
            }
            // Bucket (row, obs) pairs so each row lists observations in
            // channel order; one pass per observation over O(1) candidates.
            // The predicate is evaluated on the grid-index scale, where grid
            // points are integers, so grid-aligned boundaries are exact.
            let scale = (grid_len.max(2) - 1) as f64;
            let reach = width * scale;
            let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); grid_len * channels];
            for (c, ts) in times.iter().enumerate() {
                for (i, &t) in ts.iter().enumerate() {
                    for j in candidate_range(t - width, t, grid_len) {
                        let s = t * scale - j as f64;
                        if (0.0..=reach).contains(&s) {
                            rows[j * channels + c].push((i, (s / scale).min(width)));
                        }
                    }
                }
            }
            for row in rows {
                for (i, s) in row {
                    items.push(i);
                    offsets.push(s);
                }
                row_starts.push(items.len());
            }
        }
        Side::Smoother { bandwidth } => {
            if !(bandwidth > 0.0) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
            }
            for ts in times {
                for &t in ts {
                    for u in candidate_range(t - bandwidth, t + bandwidth, grid_len) {
                        let d = grid_point(u, grid_len) - t;
                        if d.abs() < bandwidth {
                            items.push(u);
                            offsets.push(d);
                        }
                    }
                    row_starts.push(items.len());
                }
            }
        }
    }
    Ok(NeighborIndex {
        side,
        grid_len,
        channel_lens: times.iter().map(Vec::len).collect(),
        row_starts,
        items,
        offsets,
        fingerprint: times_fingerprint(times),
    })
}

impl NeighborIndex {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn row_index(&self, query: usize, channel: usize) -> usize {
        match self.side {
            Side::Conv { .. } => query * self.channel_lens.len() + channel,
            Side::Smoother { .. } => self.channel_lens[..channel].iter().sum::<usize>() + query,
        }
    }

    /// Neighbors of a query in a channel: `(index, offset)` pairs. For the
    /// conv side `query` is a grid point; for the smoother side it is an
    /// observation position within `channel`.
    pub fn neighbors(&self, query: usize, channel: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_index(query, channel);
        let range = self.row_starts[r]..self.row_starts[r + 1];
        self.items[range.clone()]
            .iter()
            .copied()
            .zip(self.offsets[range].iter().copied())
    }
}

/// A continuous convolution layer with concrete parameters.
///
/// `knots` is laid out `[c_in][c_out][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContConv {
    pub c_in: usize,
    pub c_out: usize,
    pub grid_len: usize,
    pub width: f64,
    pub num_knots: usize,
    pub knots: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ContConv {
    pub fn new(
        c_in: usize,
        c_out: usize,
        grid_len: usize,
        width: f64,
        num_knots: usize,
        knots: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if num_knots < 2 || !(width > 0.0) || grid_len < 2 {
            return Err(Error::invalid(format!(
                "need m >= 2, h > 0 and L >= 2; got m = {num_knots}, h = {width}, L = {grid_len}"
            )));
        }
        if knots.len() != c_in * c_out * num_knots || biases.len() != c_out {
            return Err(Error::shape(
                "cont_conv",
                format!(
                    "{} knots and {} biases for C_in = {c_in}, C_out = {c_out}, m = {num_knots}",
                    knots.len(),
                    biases.len()
                ),
            ));
        }
        Ok(ContConv {
            c_in,
            c_out,
            grid_len,
            width,
            num_knots,
            knots,
            biases,
        })
    }

    pub fn filter(&self, c: usize, k: usize) -> PiecewiseLinearFilter {
        let start = (c * self.c_out + k) * self.num_knots;
        PiecewiseLinearFilter {
            width: self.width,
            knots: self.knots[start..start + self.num_knots].to_vec(),
        }
    }

    pub fn grid_point(&self, j: usize) -> f64 {
        grid_point(j, self.grid_len)
    }

    pub fn neighbors(&self, case: &IncompleteSeries) -> Result<NeighborIndex> {
        build_neighbors(&series_times(case), self.grid_len, Side::Conv { width: self.width })
    }

    /// `V[k][j] = b_k + Σ_c Σ_{i: t_ci - r_j ∈ [0,h]} w_ck(t_ci - r_j) x_ci`.
    pub fn eval(&self, case: &IncompleteSeries, nbr: &NeighborIndex) -> Result<Vec<Vec<f64>>> {
        if case.num_channels() != self.c_in {
            return Err(Error::shape(
                "cont_conv",
                format!("case has {} channels, layer expects {}", case.num_channels(), self.c_in),
            ));
        }
        if nbr.side != (Side::Conv { width: self.width })
            || nbr.grid_len != self.grid_len
            || nbr.fingerprint != times_fingerprint(&series_times(case))
        {
            return Err(Error::FingerprintMismatch);
        }
        // Sum in canonical order so storage order cannot change the result.
        let mut order: Vec<Vec<usize>> = Vec::with_capacity(self.c_in);
        for obs in &case.channels {
            let mut idx: Vec<usize> = (0..obs.len()).collect();
            idx.sort_by(|&a, &b| {
                obs[a].0.total_cmp(&obs[b].0).then(obs[a].1.total_cmp(&obs[b].1))
            });
            let mut rank = vec![0; obs.len()];
            for (r, &i) in idx.iter().enumerate() {
                rank[i] = r;
            }
            order.push(rank);
        }
        let m = self.num_knots;
        let mut out = vec![vec![0.0; self.grid_len]; self.c_out];
        let mut terms: Vec<(usize, usize, f64)> = Vec::new();
        for j in 0..self.grid_len {
            for (k, row) in out.iter_mut().enumerate() {
                row[j] = self.biases[k];
            }
            for c in 0..self.c_in {
                terms.clear();
                terms.extend(nbr.neighbors(j, c).map(|(i, s)| (order[c][i], i, s)));
                terms.sort_by_key(|p| p.0);
                for &(_, i, s) in &terms {
                    let x = case.channels[c][i].1;
                    let Some((seg, f)) = locate(self.width, m, s) else {
                        continue;
                    };
                    for (k, row) in out.iter_mut().enumerate() {
                        let kn = &self.knots[(c * self.c_out + k) * m..];
                        row[j] += ((1.0 - f) * kn[seg] + f * kn[seg + 1]) * x;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Batched continuous-convolution plan: for every `(case, grid point)` the
/// contributing observations with their channel and spline coordinates.
#[derive(Debug, Clone)]
pub struct ConvPlan {
    num_cases: usize,
    c_in: usize,
    grid_len: usize,
    num_knots: usize,
    num_obs: usize,
    row_starts: Vec<usize>,
    /// `(flat observation, channel, segment, fraction)`.
    entries: Vec<(usize, usize, usize, f64)>,
}

impl ConvPlan {
    pub fn new(batch: &ObsBatch, grid_len: usize, width: f64, num_knots: usize) -> Result<Self> {
        if num_knots < 2 {
            return Err(Error::invalid("a filter needs at least 2 knots"));
        }
        let c_in = batch.num_channels();
        let mut row_starts = vec![0];
        let mut entries = Vec::new();
        for b in 0..batch.num_cases() {
            let ranges: Vec<_> = (0..c_in).map(|c| batch.channel_range(b, c)).collect();
            let times: Vec<Vec<f64>> = ranges
                .iter()
                .map(|r| batch.times()[r.clone()].to_vec())
                .collect();
            let nbr = build_neighbors(&times, grid_len, Side::Conv { width })?;
            for j in 0..grid_len {
                for (c, r) in ranges.iter().enumerate() {
                    for (i, s) in nbr.neighbors(j, c) {
                        if let Some((seg, f)) = locate(width, num_knots, s) {
                            entries.push((r.start + i, c, seg, f));
                        }
                    }
                }
                row_starts.push(entries.len());
            }
        }
        Ok(ConvPlan {
            num_cases: batch.num_cases(),
            c_in,
            grid_len,
            num_knots,
            num_obs: batch.len(),
            row_starts,
            entries,
        })
    }

    pub fn num_cases(&self) -> usize {
        self.num_cases
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }
}

/// Batched smoother plan: for every query its decoder row, channel, and
/// kernel weights.
#[derive(Debug, Clone)]
pub struct SmoothPlan {
    rows: usize,
    channels: usize,
    references: usize,
    /// `(row, channel, denominator)` per query.
    queries: Vec<(usize, usize, f64)>,
    starts: Vec<usize>,
    weights: Vec<(usize, f64)>,
}

impl SmoothPlan {
    /// Query `q` of `batch` reads decoder row `batch`'s case index.
    pub fn new(batch: &ObsBatch, cfg: &KernelSmootherConfig) -> Result<Self> {
        cfg.validate()?;
        let channels = batch.num_channels();
        let mut queries = Vec::with_capacity(batch.len());
        let mut starts = vec![0];
        let mut weights = Vec::new();
        for b in 0..batch.num_cases() {
            for c in 0..channels {
                for q in batch.channel_range(b, c) {
                    let t = batch.times()[q];
                    let w = cfg.weights(t);
                    let den: f64 = w.iter().map(|p| p.1).sum();
                    if den == 0.0 {
                        return Err(Error::EmptySupport(t));
                    }
                    weights.extend(w);
                    starts.push(weights.len());
                    queries.push((b, c, den));
                }
            }
        }
        Ok(SmoothPlan {
            rows: batch.num_cases(),
            channels,
            references: cfg.references,
            queries,
            starts,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

impl Graph {
    /// Continuous convolution over a batch. `values: [Q]` in plan order,
    /// `knots: [c_in, c_out, m]`, `bias: [c_out]`; output `[B, c_out, L]`.
    pub fn cont_conv(&mut self, values: Var, knots: Var, bias: Var, plan: Arc<ConvPlan>) -> Result<Var> {
        let (vv, kv, bv) = (self.value(values), self.value(knots), self.value(bias));
        let ks = kv.shape();
        if vv.numel() != plan.num_obs
            || ks.len() != 3
            || ks[0] != plan.c_in
            || ks[2] != plan.num_knots
            || bv.shape() != [ks[1]]
        {
            return Err(Error::shape(
                "cont_conv",
                format!(
                    "values {:?}, knots {:?}, bias {:?} for {} observations, {} channels, {} knots",
                    vv.shape(),
                    ks,
                    bv.shape(),
                    plan.num_obs,
                    plan.c_in,
                    plan.num_knots
                ),
            ));
        }
        let c_out = ks[1];
        let (l, m) = (plan.grid_len, plan.num_knots);
        let mut out = vec![0.0; plan.num_cases * c_out * l];
        for b in 0..plan.num_cases {
            let ob = &mut out[b * c_out * l..(b + 1) * c_out * l];
            for (k, row) in ob.chunks_mut(l).enumerate() {
                row.fill(bv.data()[k]);
            }
            for j in 0..l {
                let row = b * l + j;
                for &(q, c, seg, f) in &plan.entries[plan.row_starts[row]..plan.row_starts[row + 1]] {
                    let x = vv.data()[q];
                    for k in 0..c_out {
                        let kn = &kv.data()[(c * c_out + k) * m + seg..];
                        ob[k * l + j] += ((1.0 - f) * kn[0] + f * kn[1]) * x;
                    }
                }
            }
        }
        let out = Tensor::new(vec![plan.num_cases, c_out, l], out)?;
        Ok(self.push(
            "cont_conv",
            out,
            &[values, knots, bias],
            Box::new(move |args| {
                let (vv, kv, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad.data());
                let mut dv = args.needs[0].then(|| vec![0.0; vv.len()]);
                let mut dk = args.needs[1].then(|| vec![0.0; kv.len()]);
                for b in 0..plan.num_cases {
                    for j in 0..l {
                        let row = b * l + j;
                        for &(q, c, seg, f) in
                            &plan.entries[plan.row_starts[row]..plan.row_starts[row + 1]]
                        {
                            let x = vv[q];
                            for k in 0..c_out {
                                let gk = g[(b * c_out + k) * l + j];
                                let base = (c * c_out + k) * m + seg;
                                if let Some(dv) = dv.as_mut() {
                                    dv[q] += gk * ((1.0 - f) * kv[base] + f * kv[base + 1]);
                                }
                                if let Some(dk) = dk.as_mut() {
                                    dk[base] += gk * x * (1.0 - f);
                                    dk[base + 1] += gk * x * f;
                                }
                            }
                        }
                    }
                }
                let db = args.needs[2].then(|| {
                    let mut db = vec![0.0; c_out];
                    for (i, gv) in g.iter().enumerate() {
                        db[(i / l) % c_out] += gv;
                    }
                    Tensor::from_vec(db)
                });
                vec![
                    dv.map(|d| Tensor::new(args.inputs[0].shape().to_vec(), d).expect("shape")),
                    dk.map(|d| Tensor::new(args.inputs[1].shape().to_vec(), d).expect("shape")),
                    db,
                ]
            }),
        ))
    }

    /// Kernel smoothing of references `[rows, C, L]` at the plan's queries;
    /// output `[Q]`.
    pub fn kernel_smooth(&mut self, refs: Var, plan: Arc<SmoothPlan>) -> Result<Var> {
        let rv = self.value(refs);
        if rv.shape() != [plan.rows, plan.channels, plan.references] {
            return Err(Error::shape(
                "kernel_smooth",
                format!(
                    "references {:?}, plan expects [{}, {}, {}]",
                    rv.shape(),
                    plan.rows,
                    plan.channels,
                    plan.references
                ),
            ));
        }
        let lr = plan.references;
        let out: Vec<f64> = plan
            .queries
            .iter()
            .enumerate()
            .map(|(q, &(n, c, den))| {
                let base = (n * plan.channels + c) * lr;
                let num: f64 = plan.weights[plan.starts[q]..plan.starts[q + 1]]
                    .iter()
                    .map(|&(i, w)| w * rv.data()[base + i])
                    .sum();
                num / den
            })
            .collect();
        Ok(self.push(
            "kernel_smooth",
            Tensor::from_vec(out),
            &[refs],
            Box::new(move |args| {
                let mut dr = Tensor::zeros(args.inputs[0].shape());
                let d = dr.data_mut();
                for (q, &(n, c, den)) in plan.queries.iter().enumerate() {
                    let base = (n * plan.channels + c) * lr;
                    let gq = args.grad.data()[q] / den;
                    for &(i, w) in &plan.weights[plan.starts[q]..plan.starts[q + 1]] {
                        d[base + i] += gq * w;
                    }
                }
                vec![Some(dr)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epanechnikov_examples() {
        assert_eq!(epanechnikov(0.3, 0.3, 0.1).unwrap(), 0.75);
        assert_eq!(epanechnikov(0.5, 0.25, 0.25).unwrap(), 0.0);
        assert_eq!(epanechnikov(0.5, 0.25, 0.5).unwrap(), 0.5625);
        assert!(epanechnikov(0.0, 0.0, 0.0).is_err());
        assert!(epanechnikov(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn smoother_examples() {
        let cfg = KernelSmootherConfig::new(11, 0.15).unwrap();
        let v = vec![vec![2.5; 11]];
        let out = kernel_smooth(&cfg, &v, &[(0, 0.0), (0, 0.37), (0, 1.0)]).unwrap();
        for o in out {
            assert!((o - 2.5).abs() < 1e-12);
        }

        // Bandwidths at or below the spacing are outside the config
        // invariant but still well defined away from gaps.
        let v = vec![(0..11).map(|i| i as f64).collect::<Vec<_>>()];
        let narrow = KernelSmootherConfig {
            references: 11,
            bandwidth: 0.05,
        };
        let out = kernel_smooth(&narrow, &v, &[(0, 0.3)]).unwrap();
        assert_eq!(out[0], 3.0);
        let mid = KernelSmootherConfig {
            references: 11,
            bandwidth: 0.1,
        };
        let out = kernel_smooth(&mid, &v, &[(0, 0.35)]).unwrap();
        assert!((out[0] - 3.5).abs() < 1e-12);
        let gap = KernelSmootherConfig {
            references: 11,
            bandwidth: 0.04,
        };
        assert!(matches!(
            kernel_smooth(&gap, &v, &[(0, 0.35)]),
            Err(Error::EmptySupport(_))
        ));
        assert!(KernelSmootherConfig::new(11, 0.1).is_err());
    }

    #[test]
    fn default_bandwidth_covers_unit_interval() {
        let cfg = KernelSmootherConfig::default();
        for i in 0..=10_000 {
            assert!(!cfg.weights(i as f64 / 10_000.0).is_empty());
        }
    }

    #[test]
    fn pwl_examples() {
        let f = PiecewiseLinearFilter::new(0.6, vec![1.0, 3.0, -2.0, 4.0]).unwrap();
        for j in 0..4 {
            assert!((f.eval(f.knot_position(j)) - f.knots[j]).abs() < 1e-12);
        }
        assert!((f.eval(0.3) - 0.5).abs() < 1e-12);
        assert_eq!(f.eval(-0.01), 0.0);
        assert_eq!(f.eval(0.61), 0.0);
    }

    #[test]
    fn single_observation_windows() {
        // L = 51 gives spacing 0.02, so r in {0.48, 0.5}.
        let nbr = build_neighbors(&[vec![0.5]], 51, Side::Conv { width: 0.02 }).unwrap();
        let hits: Vec<usize> = (0..51).filter(|&j| nbr.neighbors(j, 0).count() > 0).collect();
        assert_eq!(hits, [24, 25]);
        let empty = build_neighbors(&[vec![], vec![0.1]], 51, Side::Conv { width: 0.02 }).unwrap();
        assert!((0..51).all(|j| empty.neighbors(j, 0).count() == 0));
    }

    #[test]
    fn cont_conv_bias_only_and_single_term() {
        let layer = ContConv::new(1, 2, 5, 0.3, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0], vec![0.5, -0.5])
            .unwrap();
        let empty = IncompleteSeries::empty(1);
        let v = layer.eval(&empty, &layer.neighbors(&empty).unwrap()).unwrap();
        assert_eq!(v, vec![vec![0.5; 5], vec![-0.5; 5]]);

        let case = IncompleteSeries::new(vec![vec![(0.6, 2.0)]]).unwrap();
        let v = layer.eval(&case, &layer.neighbors(&case).unwrap()).unwrap();
        for j in 0..5 {
            let s = 0.6 - layer.grid_point(j);
            for k in 0..2 {
                let want = layer.biases[k] + layer.filter(0, k).eval(s) * 2.0;
                assert!((v[k][j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let layer = ContConv::new(1, 1, 5, 0.3, 2, vec![1.0, 1.0], vec![0.0]).unwrap();
        let a = IncompleteSeries::new(vec![vec![(0.6, 2.0)]]).unwrap();
        let b = IncompleteSeries::new(vec![vec![(0.7, 2.0)]]).unwrap();
        let nbr = layer.neighbors(&a).unwrap();
        assert!(matches!(layer.eval(&b, &nbr), Err(Error::FingerprintMismatch)));
    }

    #[test]
    fn graph_ops_match_plain_evaluation() {
        let case = IncompleteSeries::new(vec![
            vec![(0.05, 1.0), (0.52, -2.0), (0.9, 0.5)],
            vec![(0.33, 0.25)],
        ])
        .unwrap();
        let knots: Vec<f64> = (0..2 * 3 * 4).map(|i| (i as f64 * 0.7).sin()).collect();
        let layer = ContConv::new(2, 3, 9, 0.2, 4, knots.clone(), vec![0.1, 0.2, 0.3]).unwrap();
        let want = layer.eval(&case, &layer.neighbors(&case).unwrap()).unwrap();

        let batch = ObsBatch::from_series(&[&case]).unwrap();
        let plan = Arc::new(ConvPlan::new(&batch, 9, 0.2, 4).unwrap());
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(batch.values().to_vec()));
        let k = g.constant(Tensor::new(vec![2, 3, 4], knots).unwrap());
        let b = g.constant(Tensor::from_vec(vec![0.1, 0.2, 0.3]));
        let y = g.cont_conv(x, k, b, plan).unwrap();
        let flat: Vec<f64> = want.concat();
        assert!(g.value(y).data().iter().zip(&flat).all(|(a, b)| (a - b).abs() < 1e-14));

        let cfg = KernelSmootherConfig::new(6, 0.3).unwrap();
        let refs: Vec<Vec<f64>> = (0..2)
            .map(|c| (0..6).map(|i| (i + 3 * c) as f64 * 0.1).collect())
            .collect();
        let queries: Vec<(usize, f64)> = (0..2)
            .flat_map(|c| batch.channel_range(0, c).map(move |q| (c, q)))
            .map(|(c, q)| (c, batch.times()[q]))
            .collect();
        let want = kernel_smooth(&cfg, &refs, &queries).unwrap();
        let plan = Arc::new(SmoothPlan::new(&batch, &cfg).unwrap());
        let r = g.constant(Tensor::new(vec![1, 2, 6], refs.concat()).unwrap());
        let out = g.kernel_smooth(r, plan).unwrap();
        assert!(g.value(out).data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}
