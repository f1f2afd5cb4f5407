//! Federated edge learning with over-the-air aggregation.
//!
//! Devices hold local shards of a synthetic logistic-regression problem
//! and send one update per round. The server aggregates with perfect
//! averaging (PA), one-bit sign majority (OBDA) or vector-quantised
//! digital AirComp with codeword counting (GD-OAC).

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channels::GaussianMac;
use crate::error::{Error, Result};
use crate::simkernel::RngStream;

const CODEBOOK_MAGIC: &[u8; 4] = b"GSVQ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub dim: usize,
    pub devices: usize,
    pub samples_per_device: usize,
    /// Standard deviation of the per-device feature means.
    pub heterogeneity: f64,
    /// Norm scale of the true weight vector.
    pub signal: f64,
    pub l2: f64,
    pub test_samples: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            dim: 20,
            devices: 20,
            samples_per_device: 50,
            heterogeneity: 1.0,
            signal: 2.0,
            l2: 1e-3,
            test_samples: 2000,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.devices == 0 || self.samples_per_device == 0 || self.test_samples == 0 {
            return Err(Error::invalid("task", "dimensions and counts must be positive"));
        }
        if !(self.l2 >= 0.0) || !(self.heterogeneity >= 0.0) || !(self.signal >= 0.0) {
            return Err(Error::invalid("task", "scales must be non-negative"));
        }
        Ok(())
    }
}

/// Synthetic logistic regression split across devices with shifted
/// feature distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticTask {
    pub dim: usize,
    pub l2: f64,
    shards: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
    test: (Vec<Vec<f64>>, Vec<f64>),
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^z) without overflow
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec(d: usize, sd: f64, rng: &mut RngStream) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sd * z
        })
        .collect()
}

impl LogisticTask {
    pub fn generate(cfg: &TaskConfig, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let w_true = gaussian_vec(d, cfg.signal / (d as f64).sqrt(), rng);
        let means: Vec<Vec<f64>> = (0..cfg.devices)
            .map(|_| gaussian_vec(d, cfg.heterogeneity, rng))
            .collect();
        let draw = |mean: &[f64], rng: &mut RngStream| {
            let x: Vec<f64> = gaussian_vec(d, 1.0, rng)
                .iter()
                .zip(mean)
                .map(|(z, m)| z + m)
                .collect();
            let y = (rng.uniform() < sigmoid(dot(&w_true, &x))) as u8 as f64;
            (x, y)
        };
        let mut shards = Vec::with_capacity(cfg.devices);
        for m in &means {
            let (xs, ys) = (0..cfg.samples_per_device).map(|_| draw(m, rng)).unzip();
            shards.push((xs, ys));
        }
        let test = (0..cfg.test_samples)
            .map(|_| {
                let k = rng.below(cfg.devices as u64) as usize;
                draw(&means[k], rng)
            })
            .unzip();
        Ok(LogisticTask {
            dim: d,
            l2: cfg.l2,
            shards,
            test,
        })
    }

    pub fn devices(&self) -> usize {
        self.shards.len()
    }

    fn local_loss(&self, n: usize, w: &[f64]) -> f64 {
        let (xs, ys) = &self.shards[n];
        let data = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| softplus(dot(w, x)) - y * dot(w, x))
            .sum::<f64>()
            / xs.len() as f64;
        data + 0.5 * self.l2 * dot(w, w)
    }

    /// Regularised training loss averaged over devices.
    pub fn loss(&self, w: &[f64]) -> f64 {
        (0..self.devices()).map(|n| self.local_loss(n, w)).sum::<f64>() / self.devices() as f64
    }

    pub fn local_gradient(&self, n: usize, w: &[f64]) -> Vec<f64> {
        let (xs, ys) = &self.shards[n];
        let mut g: Vec<f64> = w.iter().map(|v| self.l2 * v).collect();
        let inv = 1.0 / xs.len() as f64;
        for (x, y) in xs.iter().zip(ys) {
            let r = (sigmoid(dot(w, x)) - y) * inv;
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += r * xi;
            }
        }
        g
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for n in 0..self.devices() {
            for (a, b) in g.iter_mut().zip(self.local_gradient(n, w)) {
                *a += b;
            }
        }
        let inv = 1.0 / self.devices() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        g
    }

    /// Fraction of held-out samples classified correctly.
    pub fn accuracy(&self, w: &[f64]) -> f64 {
        let (xs, ys) = &self.test;
        if xs.is_empty() {
            return f64::NAN;
        }
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| ((dot(w, x) >= 0.0) as u8 as f64) == **y)
            .count();
        hits as f64 / xs.len() as f64
    }

    /// Update of device `n` after `steps` local gradient steps from `w`.
    pub fn local_update(&self, n: usize, w: &[f64], lr: f64, steps: usize) -> Vec<f64> {
        let mut local = w.to_vec();
        for _ in 0..steps {
            let g = self.local_gradient(n, &local);
            for (l, gi) in local.iter_mut().zip(g) {
                *l -= lr * gi;
            }
        }
        local.iter().zip(w).map(|(a, b)| a - b).collect()
    }
}

/// Exact mean of the device updates.
pub fn feel_round_pa(updates: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = updates.first().ok_or(Error::EmptyBatch)?;
    let d = first.len();
    let mut out = vec![0.0; d];
    for u in updates {
        if u.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: u.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(u) {
            *o += v;
        }
    }
    let inv = 1.0 / updates.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Majority vote on update signs over the MAC, scaled by `lr`. Zero counts as +1.
pub fn feel_round_obda(
    updates: &[Vec<f64>],
    mac: &GaussianMac,
    lr: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let signs: Vec<Vec<f64>> = updates
        .iter()
        .map(|u| u.iter().map(|&v| sign(v)).collect())
        .collect();
    let out = mac.superpose(&signs, rng)?;
    Ok(out.received.into_iter().map(|s| lr * sign(s)).collect())
}

/// Shared vector-quantisation codebook: `2^j` centroids of length `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    /// Length of the updates the codebook is meant for.
    pub dim: usize,
    pub q: usize,
    pub j: u32,
    pub centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(dim: usize, q: usize, j: u32, centroids: Vec<Vec<f64>>) -> Result<Self> {
        let cb = Codebook { dim, q, j, centroids };
        cb.validate()?;
        Ok(cb)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || !self.dim.is_multiple_of(self.q) {
            return Err(Error::invalid("q", "block length must divide the update dimension"));
        }
        if self.j >= 24 {
            return Err(Error::invalid("j", "codebook too large"));
        }
        if self.centroids.len() != 1usize << self.j {
            return Err(Error::DimensionMismatch {
                expected: 1 << self.j,
                got: self.centroids.len(),
            });
        }
        if let Some(c) = self.centroids.iter().find(|c| c.len() != self.q) {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                got: c.len(),
            });
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    pub fn blocks(&self) -> usize {
        self.dim / self.q
    }

    /// `GSVQ` magic, then `dim`, `q`, `j` as little-endian u32, then the
    /// centroids as little-endian f64 in row order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.size() * self.q);
        out.extend_from_slice(CODEBOOK_MAGIC);
        for v in [self.dim as u32, self.q as u32, self.j] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.centroids {
            for v in c {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("codebook: {m}"));
        if bytes.len() < 16 || &bytes[..4] != CODEBOOK_MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
        let (dim, q, j) = (word(0) as usize, word(1) as usize, word(2));
        if j >= 24 {
            return Err(bad("codebook too large"));
        }
        let k = 1usize << j;
        if bytes.len() != 16 + 8 * k * q {
            return Err(bad("length does not match header"));
        }
        let mut vals = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let centroids = (0..k).map(|_| vals.by_ref().take(q).collect()).collect();
        Codebook::new(dim, q, j, centroids)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Nearest-centroid index for every length-`q` block of `update`.
pub fn quantize_vq(update: &[f64], codebook: &Codebook) -> Result<Vec<usize>> {
    if !update.len().is_multiple_of(codebook.q) {
        return Err(Error::invalid("update", "length is not a multiple of the block length"));
    }
    Ok(update
        .chunks(codebook.q)
        .map(|b| nearest(b, &codebook.centroids))
        .collect())
}

pub fn dequantize(indices: &[usize], codebook: &Codebook) -> Vec<f64> {
    indices
        .iter()
        .flat_map(|&i| codebook.centroids[i].iter().copied())
        .collect()
}

/// Lloyd's algorithm with k-means++ seeding. Empty clusters are re-seeded
/// at the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() || k == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut centroids = vec![points[rng.below(points.len() as u64) as usize].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut idx = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.below(points.len() as u64) as usize
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    let q = points[0].len();
    for _ in 0..iters {
        let assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let mut sums = vec![vec![0.0; q]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut changed = false;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[assign[a]])
                            .total_cmp(&sq_dist(&points[b], &centroids[assign[b]]))
                    })
                    .expect("non-empty");
                points[far].clone()
            };
            if next != centroids[c] {
                changed = true;
                centroids[c] = next;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(centroids)
}

/// One signature of length `len` per (block, codeword) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Signatures {
    pub blocks: usize,
    pub codewords: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl Signatures {
    /// Independent Gaussian signatures with unit expected energy.
    pub fn gaussian(blocks: usize, codewords: usize, len: usize, rng: &mut RngStream) -> Self {
        let sd = 1.0 / (len as f64).sqrt();
        Signatures {
            blocks,
            codewords,
            vectors: (0..blocks * codewords).map(|_| gaussian_vec(len, sd, rng)).collect(),
        }
    }

    /// Gaussian draws made orthonormal by Gram-Schmidt; needs
    /// `len >= blocks * codewords`.
    pub fn orthogonal(blocks: usize, codewords: usize, len: usize, rng: &mut RngStream) -> Result<Self> {
        let count = blocks * codewords;
        if len < count {
            return Err(Error::invalid("signature_len", "too short for orthogonal signatures"));
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
        while basis.len() < count {
            let mut v = gaussian_vec(len, 1.0, rng);
            for b in &basis {
                let c = dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= c * bi;
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        Ok(Signatures {
            blocks,
            codewords,
            vectors: basis,
        })
    }

    fn get(&self, block: usize, codeword: usize) -> &[f64] {
        &self.vectors[block * self.codewords + codeword]
    }
}

pub enum Detector<'a> {
    /// Exact multiset of transmitted codewords.
    Genie,
    /// Correlate the superposed signatures and round.
    MatchedFilter {
        mac: &'a GaussianMac,
        signatures: &'a Signatures,
        rng: &'a mut RngStream,
    },
}

/// Codeword multiplicities per block, `counts[block][codeword]`.
pub fn count_codewords(indices: &[Vec<usize>], codebook: &Codebook, detector: Detector<'_>) -> Result<Vec<Vec<u64>>> {
    let blocks = codebook.blocks();
    let k = codebook.size();
    if let Some(ix) = indices.iter().find(|ix| ix.len() != blocks) {
        return Err(Error::DimensionMismatch {
            expected: blocks,
            got: ix.len(),
        });
    }
    if indices.iter().flatten().any(|&c| c >= k) {
        return Err(Error::invalid("indices", "codeword index out of range"));
    }
    match detector {
        Detector::Genie => {
            let mut counts = vec![vec![0u64; k]; blocks];
            for ix in indices {
                for (b, &c) in ix.iter().enumerate() {
                    counts[b][c] += 1;
                }
            }
            Ok(counts)
        }
        Detector::MatchedFilter { mac, signatures, rng } => {
            if signatures.blocks != blocks || signatures.codewords != k {
                return Err(Error::invalid("signatures", "do not match the codebook"));
            }
            let len = signatures.vectors[0].len();
            let inputs: Vec<Vec<f64>> = indices
                .iter()
                .map(|ix| {
                    let mut x = vec![0.0; len];
                    for (b, &c) in ix.iter().enumerate() {
                        for (xi, si) in x.iter_mut().zip(signatures.get(b, c)) {
                            *xi += si;
                        }
                    }
                    x
                })
                .collect();
            let y = mac.superpose(&inputs, rng)?.received;
            Ok((0..blocks)
                .map(|b| {
                    (0..k)
                        .map(|c| {
                            let s = signatures.get(b, c);
                            let est = dot(&y, s) / dot(s, s);
                            est.round().max(0.0) as u64
                        })
                        .collect()
                })
                .collect())
        }
    }
}

/// Aggregate of one GD-OAC round: counted centroids over the device count.
pub fn gdoac_round(indices: &[Vec<usize>], codebook: &Codebook, detector: Detector<'_>) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let counts = count_codewords(indices, codebook, detector)?;
    let inv = 1.0 / indices.len() as f64;
    let mut out = Vec::with_capacity(codebook.dim);
    for block in &counts {
        let mut acc = vec![0.0; codebook.q];
        for (c, &m) in block.iter().enumerate() {
            for (a, v) in acc.iter_mut().zip(&codebook.centroids[c]) {
                *a += m as f64 * v;
            }
        }
        out.extend(acc.into_iter().map(|a| a * inv));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorKind {
    Genie,
    MatchedFilter { signature_len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeelScheme {
    Pa,
    Obda,
    GdOac { q: usize, j: u32, detector: DetectorKind },
}

impl FeelScheme {
    /// Checks the scheme against a model of dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let FeelScheme::GdOac { q, j, detector } = *self {
            if q == 0 || !dim.is_multiple_of(q) {
                return Err(Error::invalid("q", "block length must divide the model dimension"));
            }
            if j == 0 || j >= 24 {
                return Err(Error::invalid("j", "must lie in [1, 23]"));
            }
            if let DetectorKind::MatchedFilter { signature_len: 0 } = detector {
                return Err(Error::invalid("signature_len", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeelScheme::Pa => "pa",
            FeelScheme::Obda => "obda",
            FeelScheme::GdOac { .. } => "gdoac",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeelConfig {
    pub rounds: usize,
    pub lr: f64,
    pub local_steps: usize,
    /// OBDA step size at round `t` (from 0) is `obda_lr / (1 + obda_decay * t)`.
    pub obda_lr: f64,
    pub obda_decay: f64,
    pub mac_noise_var: f64,
    /// Length of the PA pre-run whose device updates train the GD-OAC codebook.
    pub warmup_rounds: usize,
    pub kmeans_iters: usize,
}

impl Default for FeelConfig {
    fn default() -> Self {
        FeelConfig {
            rounds: 200,
            lr: 0.5,
            local_steps: 1,
            obda_lr: 0.003,
            obda_decay: 0.0,
            mac_noise_var: 0.0,
            warmup_rounds: 200,
            kmeans_iters: 50,
        }
    }
}

impl FeelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 || !(self.lr > 0.0) || !(self.obda_lr > 0.0) {
            return Err(Error::invalid("feel", "steps and rates must be positive"));
        }
        if !(self.obda_decay >= 0.0) || !(self.mac_noise_var >= 0.0) {
            return Err(Error::invalid("feel", "decay and noise must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub round: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeelCurve {
    pub scheme: String,
    pub points: Vec<CurvePoint>,
    pub model: Vec<f64>,
}

impl FeelCurve {
    pub fn final_loss(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.loss)
    }

    /// Rows `round,scheme,loss,accuracy`, with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,scheme,loss,accuracy\n");
        self.append_rows(&mut out);
        out
    }

    pub fn append_rows(&self, out: &mut String) {
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.round, self.scheme, p.loss, p.accuracy);
        }
    }
}

fn point(task: &LogisticTask, round: usize, w: &[f64]) -> CurvePoint {
    CurvePoint {
        round,
        loss: task.loss(w),
        accuracy: task.accuracy(w),
    }
}

/// Full-batch gradient descent on the pooled data, the reference for PA.
pub fn train_centralized(task: &LogisticTask, cfg: &FeelConfig) -> FeelCurve {
    let mut w = vec![0.0; task.dim];
    let mut points = vec![point(task, 0, &w)];
    for r in 1..=cfg.rounds {
        let g = task.gradient(&w);
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= cfg.lr * gi;
        }
        points.push(point(task, r, &w));
    }
    FeelCurve {
        scheme: "centralized".into(),
        points,
        model: w,
    }
}

/// Codebook trained by k-means on the blocks of every device update seen
/// during `warmup_rounds` rounds of PA training from the zero model.
pub fn warmup_codebook(task: &LogisticTask, cfg: &FeelConfig, q: usize, j: u32, rng: &mut RngStream) -> Result<Codebook> {
    if q == 0 || !task.dim.is_multiple_of(q) {
        return Err(Error::invalid("q", "block length must divide the model dimension"));
    }
    let mut w = vec![0.0; task.dim];
    let mut sample = Vec::new();
    for _ in 0..cfg.warmup_rounds.max(1) {
        let updates: Vec<Vec<f64>> = (0..task.devices())
            .map(|n| task.local_update(n, &w, cfg.lr, cfg.local_steps))
            .collect();
        for u in &updates {
            sample.extend(u.chunks(q).map(<[f64]>::to_vec));
        }
        let agg = feel_round_pa(&updates)?;
        w.iter_mut().zip(agg).for_each(|(a, b)| *a += b);
    }
    let centroids = kmeans(&sample, 1 << j, cfg.kmeans_iters, rng)?;
    Codebook::new(task.dim, q, j, centroids)
}

/// Trains from the zero model with the given aggregation scheme.
pub fn train_feel(task: &LogisticTask, scheme: &FeelScheme, cfg: &FeelConfig, rng: &mut RngStream) -> Result<FeelCurve> {
    cfg.validate()?;
    scheme.validate(task.dim)?;
    let n = task.devices();
    let mac = GaussianMac::unit(n, cfg.mac_noise_var);
    let mut channel_rng = rng.child("channel");
    let (codebook, signatures) = match scheme {
        FeelScheme::GdOac { q, j, detector } => {
            let cb = warmup_codebook(task, cfg, *q, *j, &mut rng.child("codebook"))?;
            let sig = match detector {
                DetectorKind::Genie => None,
                DetectorKind::MatchedFilter { signature_len } => {
                    let mut srng = rng.child("signatures");
                    let count = cb.blocks() * cb.size();
                    Some(if *signature_len >= count {
                        Signatures::orthogonal(cb.blocks(), cb.size(), *signature_len, &mut srng)?
                    } else {
                        Signatures::gaussian(cb.blocks(), cb.size(), *signature_len, &mut srng)
                    })
                }
            };
            (Some(cb), sig)
        }
        _ => (None, None),
    };
    let mut w = vec![0.0; task.dim];
    let mut points = vec![point(task, 0, &w)];
    for r in 1..=cfg.rounds {
        let updates: Vec<Vec<f64>> = (0..n)
            .map(|k| task.local_update(k, &w, cfg.lr, cfg.local_steps))
            .collect();
        let agg = match scheme {
            FeelScheme::Pa => feel_round_pa(&updates)?,
            FeelScheme::Obda => {
                let lr = cfg.obda_lr / (1.0 + cfg.obda_decay * (r - 1) as f64);
                feel_round_obda(&updates, &mac, lr, &mut channel_rng)?
            }
            FeelScheme::GdOac { .. } => {
                let cb = codebook.as_ref().expect("built above");
                let indices = updates
                    .iter()
                    .map(|u| quantize_vq(u, cb))
                    .collect::<Result<Vec<_>>>()?;
                let detector = match &signatures {
                    None => Detector::Genie,
                    Some(s) => Detector::MatchedFilter {
                        mac: &mac,
                        signatures: s,
                        rng: &mut channel_rng,
                    },
                };
                gdoac_round(&indices, cb, detector)?
            }
        };
        w.iter_mut().zip(agg).for_each(|(a, b)| *a += b);
        points.push(point(task, r, &w));
    }
    Ok(FeelCurve {
        scheme: scheme.name().into(),
        points,
        model: w,
    })
}
