//! Soft-output sphere detection by single tree search.
//!
//! The tree is built on the Cholesky factor of `G = HᴴH/σ² + I`, which is
//! the R factor of the QR decomposition of the MMSE-extended channel
//! `[H; σI]` scaled by `1/σ`. The search metric is therefore
//! `(‖y − Hs‖² + σ²‖s‖²)/σ²` up to an `s`-independent constant, and the
//! tree is well defined even when there are more users than antennas.

use super::linalg::{cholesky_upper, solve_upper_h};
use super::{prior_cost, ComplexityCounters, DetectError, LlrVector, CMUL, NORM, RCMUL};
use crate::tx::Constellation;
use crate::C64;

/// Magnitude given to bits whose counter-hypothesis was never reached
/// when the search is truncated and no clip level is set.
const UNRESOLVED_LLR: f64 = 1e3;

/// Triangular factor of the column-sorted MMSE-extended channel.
#[derive(Debug, Clone, Default)]
pub struct AugmentedQr {
    k: usize,
    /// Upper-triangular `K × K`, row-major, positive real diagonal.
    pub r: Vec<C64>,
    /// `perm[i]` is the user at tree position `i`; position `K−1` is the root.
    pub perm: Vec<usize>,
    /// `R^{-H} Hᴴ y / σ²` in permuted order.
    pub y_hat: Vec<C64>,
    pub sigma: f64,
    gram: Vec<C64>,
}

impl AugmentedQr {
    pub fn new(y: &[C64], h: &[C64], n_users: usize, sigma2: f64, mults: &mut u64) -> Result<Self, DetectError> {
        let mut qr = AugmentedQr::default();
        qr.factor(y, h, n_users, sigma2, mults)?;
        Ok(qr)
    }

    /// Refactors in place, reusing the buffers.
    pub fn factor(&mut self, y: &[C64], h: &[C64], k: usize, sigma2: f64, mults: &mut u64) -> Result<(), DetectError> {
        let n = y.len();
        if h.len() != n * k {
            return Err(DetectError::Dimension(format!("H has {} entries, expected {}×{}", h.len(), n, k)));
        }
        let sigma2 = sigma2.max(1e-12);
        let inv = 1.0 / sigma2;
        *mults += 1;
        self.k = k;
        self.sigma = sigma2.sqrt();
        self.gram.clear();
        self.gram.resize(k * k, C64::new(0.0, 0.0));
        for i in 0..k {
            for j in i..k {
                let mut v = C64::new(0.0, 0.0);
                for row in h.chunks_exact(k) {
                    v += row[i].conj() * row[j];
                }
                if i == j {
                    self.gram[i * k + i] = C64::new(v.re * inv + 1.0, 0.0);
                    *mults += (NORM * n as u64) + 1;
                } else {
                    self.gram[i * k + j] = v * inv;
                    self.gram[j * k + i] = (v * inv).conj();
                    *mults += (CMUL * n as u64) + RCMUL;
                }
            }
        }
        // weakest column first, strongest at the root
        self.perm.clear();
        self.perm.extend(0..k);
        let g = &self.gram;
        self.perm.sort_by(|&a, &b| g[a * k + a].re.total_cmp(&g[b * k + b].re).then(a.cmp(&b)));

        self.r.clear();
        self.r.resize(k * k, C64::new(0.0, 0.0));
        for i in 0..k {
            for j in 0..k {
                self.r[i * k + j] = self.gram[self.perm[i] * k + self.perm[j]];
            }
        }
        if !cholesky_upper(&mut self.r, k, mults) {
            return Err(DetectError::Dimension("augmented Gram matrix is not positive definite".into()));
        }

        self.y_hat.clear();
        for &u in &self.perm {
            let mut v = C64::new(0.0, 0.0);
            for (row, yr) in h.chunks_exact(k).zip(y) {
                v += row[u].conj() * yr;
            }
            self.y_hat.push(v * inv);
        }
        *mults += (CMUL * n as u64 + RCMUL) * k as u64;
        solve_upper_h(&self.r, k, &mut self.y_hat, mults);
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.k
    }

    /// Upper-triangular factor of `[H P; σ I]`, i.e. `σ·R`.
    pub fn r_unscaled(&self) -> Vec<C64> {
        self.r.iter().map(|v| v * self.sigma).collect()
    }

    /// Orthonormal factor `Q = [H P; σ I] (σR)^{-1}` of the extended
    /// channel, `(n_rx + K) × K` row-major. Diagnostic only.
    pub fn q(&self, h: &[C64], n_rx: usize) -> Vec<C64> {
        let k = self.k;
        let ru = self.r_unscaled();
        let mut out = vec![C64::new(0.0, 0.0); (n_rx + k) * k];
        for row in 0..n_rx + k {
            // a = row of [H P; σI], solve q R = a (forward substitution over columns)
            let a: Vec<C64> = (0..k)
                .map(|j| {
                    if row < n_rx {
                        h[row * k + self.perm[j]]
                    } else if row - n_rx == self.perm[j] {
                        C64::new(self.sigma, 0.0)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
                .collect();
            for j in 0..k {
                let mut v = a[j];
                for i in 0..j {
                    v -= out[row * k + i] * ru[i * k + j];
                }
                out[row * k + j] = v / ru[j * k + j].re;
            }
        }
        out
    }
}

/// Result of one sphere detection.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereOutput {
    pub llr: LlrVector,
    pub truncated: bool,
    pub nodes_visited: u64,
}

/// Single-tree-search soft-output sphere detector for a fixed user count
/// and constellation. Holds scratch space so repeated calls do not
/// allocate.
#[derive(Debug, Clone)]
pub struct SphereDetector {
    k: usize,
    constellation: Constellation,
    node_budget: Option<u64>,
    clip: Option<f64>,
    qr: AugmentedQr,
    // cache[(i * K + j) * M + p] = R_ij · point(p), valid when stamp matches
    cache: Vec<C64>,
    stamp: Vec<u32>,
    epoch: u32,
    // per tree level
    order: Vec<usize>,
    inc: Vec<f64>,
    next: Vec<usize>,
    dpart: Vec<f64>,
    label: Vec<usize>,
    // per bit, in tree (permuted) order
    lambda_bar: Vec<f64>,
    x_map: Vec<u8>,
}

impl SphereDetector {
    pub fn new(n_users: usize, constellation: Constellation, node_budget: Option<u64>) -> Self {
        let m = constellation.bits_per_symbol();
        let order_m = constellation.order();
        let k = n_users;
        SphereDetector {
            k,
            constellation,
            node_budget,
            clip: None,
            qr: AugmentedQr::default(),
            cache: vec![C64::new(0.0, 0.0); k * k * order_m],
            stamp: vec![0; k * k * order_m],
            epoch: 0,
            order: vec![0; k * order_m],
            inc: vec![0.0; k * order_m],
            next: vec![0; k],
            dpart: vec![0.0; k],
            label: vec![0; k],
            lambda_bar: vec![f64::INFINITY; k * m],
            x_map: vec![0; k * m],
        }
    }

    /// Clip output LLRs to `±limit` on exit.
    pub fn with_clip(mut self, limit: f64) -> Self {
        self.clip = Some(limit);
        self
    }

    pub fn n_users(&self) -> usize {
        self.k
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.constellation.bits_per_symbol()
    }

    pub fn detect(
        &mut self,
        y: &[C64],
        h: &[C64],
        sigma2: f64,
        priors: Option<&[f64]>,
        counters: &mut ComplexityCounters,
    ) -> Result<SphereOutput, DetectError> {
        let mut out = vec![0.0; self.k * self.constellation.bits_per_symbol()];
        let before = counters.nodes_visited;
        let truncated = self.detect_into(y, h, sigma2, priors, &mut out, counters)?;
        Ok(SphereOutput {
            llr: LlrVector(out),
            truncated,
            nodes_visited: counters.nodes_visited - before,
        })
    }

    /// Writes user-major posterior LLRs into `out`; returns whether the
    /// node budget cut the search short.
    pub fn detect_into(
        &mut self,
        y: &[C64],
        h: &[C64],
        sigma2: f64,
        priors: Option<&[f64]>,
        out: &mut [f64],
        counters: &mut ComplexityCounters,
    ) -> Result<bool, DetectError> {
        let k = self.k;
        let m = self.constellation.bits_per_symbol();
        let mm = self.constellation.order();
        if k == 0 {
            return Err(DetectError::UserCount { expected: 1, got: 0 });
        }
        if out.len() != k * m {
            return Err(DetectError::Dimension(format!("{} output slots for {} bits", out.len(), k * m)));
        }
        if let Some(p) = priors {
            if p.len() != k * m {
                return Err(DetectError::Dimension(format!("{} priors for {} bits", p.len(), k * m)));
            }
        }
        counters.detector_runs += 1;
        self.qr.factor(y, h, k, sigma2, &mut counters.real_mults)?;
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }

        self.lambda_bar.iter_mut().for_each(|l| *l = f64::INFINITY);
        let mut lambda_map = f64::INFINITY;
        let mut global_max = f64::INFINITY;
        let mut nodes = 0u64;
        let mut truncated = false;

        let mut i = k - 1;
        self.dpart[i] = 0.0;
        self.expand(i, priors, &mut counters.real_mults);
        'search: loop {
            if self.next[i] == mm {
                i += 1;
                if i == k {
                    break;
                }
                continue;
            }
            let slot = i * mm + self.next[i];
            self.next[i] += 1;
            let p = self.order[slot];
            let d = self.dpart[i] + self.inc[slot];
            if d > global_max {
                // children are sorted, so no later sibling survives either
                self.next[i] = mm;
                continue;
            }
            self.label[i] = p;
            if lambda_map < f64::INFINITY && d > self.radius(i) {
                continue;
            }
            if let Some(b) = self.node_budget {
                if nodes >= b {
                    truncated = true;
                    break 'search;
                }
            }
            nodes += 1;
            if i > 0 {
                i -= 1;
                self.dpart[i] = d;
                self.expand(i, priors, &mut counters.real_mults);
                continue;
            }
            // leaf
            if d < lambda_map {
                if lambda_map < f64::INFINITY {
                    for lvl in 0..k {
                        for b in 0..m {
                            let bit = self.constellation.bit(self.label[lvl], b);
                            if bit != self.x_map[lvl * m + b] {
                                self.lambda_bar[lvl * m + b] = lambda_map;
                            }
                        }
                    }
                }
                lambda_map = d;
                for lvl in 0..k {
                    for b in 0..m {
                        self.x_map[lvl * m + b] = self.constellation.bit(self.label[lvl], b);
                    }
                }
            } else {
                for lvl in 0..k {
                    for b in 0..m {
                        let idx = lvl * m + b;
                        if self.constellation.bit(self.label[lvl], b) != self.x_map[idx] && d < self.lambda_bar[idx] {
                            self.lambda_bar[idx] = d;
                        }
                    }
                }
            }
            global_max = self.lambda_bar.iter().fold(lambda_map, |a, &b| a.max(b));
        }
        counters.nodes_visited += nodes;

        let clip = self.clip;
        for lvl in 0..k {
            let user = self.qr.perm[lvl];
            for b in 0..m {
                let idx = lvl * m + b;
                let llr = if lambda_map == f64::INFINITY {
                    0.0
                } else if self.lambda_bar[idx] == f64::INFINITY {
                    let mag = clip.unwrap_or(UNRESOLVED_LLR);
                    if self.x_map[idx] == 0 {
                        mag
                    } else {
                        -mag
                    }
                } else if self.x_map[idx] == 0 {
                    self.lambda_bar[idx] - lambda_map
                } else {
                    lambda_map - self.lambda_bar[idx]
                };
                out[user * m + b] = match clip {
                    Some(c) => llr.clamp(-c, c),
                    None => llr,
                };
            }
        }
        Ok(truncated)
    }

    /// Computes and sorts the child increments of tree level `i` given the
    /// symbols already fixed above it.
    fn expand(&mut self, i: usize, priors: Option<&[f64]>, mults: &mut u64) {
        let k = self.k;
        let mm = self.constellation.order();
        let m = self.constellation.bits_per_symbol();
        let mut b = self.qr.y_hat[i];
        for j in i + 1..k {
            b -= self.product(i, j, self.label[j], mults);
        }
        let user = self.qr.perm[i];
        for p in 0..mm {
            let e = b - self.product(i, i, p, mults);
            let mut v = e.norm_sqr();
            if let Some(pr) = priors {
                v += prior_cost(p, m, &pr[user * m..(user + 1) * m]);
            }
            // insertion sort, ascending
            let base = i * mm;
            let mut pos = p;
            while pos > 0 && self.inc[base + pos - 1] > v {
                self.inc[base + pos] = self.inc[base + pos - 1];
                self.order[base + pos] = self.order[base + pos - 1];
                pos -= 1;
            }
            self.inc[base + pos] = v;
            self.order[base + pos] = p;
        }
        *mults += NORM * mm as u64;
        self.next[i] = 0;
    }

    #[inline]
    fn product(&mut self, i: usize, j: usize, p: usize, mults: &mut u64) -> C64 {
        let idx = (i * self.k + j) * self.constellation.order() + p;
        if self.stamp[idx] != self.epoch {
            self.stamp[idx] = self.epoch;
            let r = self.qr.r[i * self.k + j];
            self.cache[idx] = r * self.constellation.point(p);
            *mults += if i == j { RCMUL } else { CMUL };
        }
        self.cache[idx]
    }

    /// Pruning radius for the node just assigned at level `i`: the largest
    /// metric any leaf below it could still improve.
    fn radius(&self, i: usize) -> f64 {
        let m = self.constellation.bits_per_symbol();
        let mut r = f64::NEG_INFINITY;
        for &l in &self.lambda_bar[..i * m] {
            r = r.max(l);
        }
        for lvl in i..self.k {
            for b in 0..m {
                let idx = lvl * m + b;
                if self.constellation.bit(self.label[lvl], b) != self.x_map[idx] {
                    r = r.max(self.lambda_bar[idx]);
                }
            }
        }
        r
    }
}
