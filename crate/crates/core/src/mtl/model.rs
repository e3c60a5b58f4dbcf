//! Shared encoder and the two task heads, with hand-written backprop.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::fnv1a64;

/// A trainable text encoder producing a fixed-size pooled vector.
///
/// Parameters live in one flat buffer so optimizers, checkpoints and
/// gradient checks can treat every encoder alike. Pretrained encoders attach
/// by implementing this trait.
pub trait Encoder {
    type Cache;

    fn hidden_dim(&self) -> usize;
    fn encode(&self, tokens: &[String]) -> (Vec<f64>, Self::Cache);
    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    fn backward(&self, cache: &Self::Cache, grad_output: &[f64], grad: &mut [f64]);
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeskEncoderSpec {
    /// Hashed vocabulary size.
    pub buckets: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Longer token sequences are truncated.
    pub max_len: usize,
}

impl DeskEncoderSpec {
    pub fn base() -> Self {
        Self { buckets: 4096, embed_dim: 32, hidden_dim: 32, max_len: 64 }
    }

    pub fn large() -> Self {
        Self { buckets: 4096, embed_dim: 64, hidden_dim: 64, max_len: 64 }
    }

    pub fn param_count(&self) -> usize {
        self.buckets * self.embed_dim + self.hidden_dim * self.embed_dim + self.hidden_dim
    }
}

/// Desk-scale encoder: hashed token embeddings, mean pooling, then one
/// `tanh` layer.
///
/// Layout of `params`: embedding table `[buckets x embed_dim]`, weight
/// `[hidden_dim x embed_dim]`, bias `[hidden_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskEncoder {
    pub spec: DeskEncoderSpec,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DeskCache {
    ids: Vec<usize>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
}

impl DeskEncoder {
    pub fn new(spec: DeskEncoderSpec, rng: &mut impl Rng) -> Self {
        let mut params = Vec::with_capacity(spec.param_count());
        let emb = Uniform::new_inclusive(-0.5, 0.5);
        params.extend((0..spec.buckets * spec.embed_dim).map(|_| emb.sample(rng)));
        let a = (6.0 / (spec.embed_dim + spec.hidden_dim) as f64).sqrt();
        let w = Uniform::new_inclusive(-a, a);
        params.extend((0..spec.hidden_dim * spec.embed_dim).map(|_| w.sample(rng)));
        params.extend(std::iter::repeat(0.0).take(spec.hidden_dim));
        Self { spec, params }
    }

    pub fn from_params(spec: DeskEncoderSpec, params: Vec<f64>) -> Option<Self> {
        (params.len() == spec.param_count()).then_some(Self { spec, params })
    }

    fn token_id(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.spec.buckets as u64) as usize
    }

    fn weight_offset(&self) -> usize {
        self.spec.buckets * self.spec.embed_dim
    }

    fn bias_offset(&self) -> usize {
        self.weight_offset() + self.spec.hidden_dim * self.spec.embed_dim
    }
}

impl Encoder for DeskEncoder {
    type Cache = DeskCache;

    fn hidden_dim(&self) -> usize {
        self.spec.hidden_dim
    }

    fn encode(&self, tokens: &[String]) -> (Vec<f64>, DeskCache) {
        let (e, h) = (self.spec.embed_dim, self.spec.hidden_dim);
        if tokens.len() > self.spec.max_len {
            log::debug!("truncating {} tokens to {}", tokens.len(), self.spec.max_len);
        }
        let ids: Vec<usize> = tokens.iter().take(self.spec.max_len).map(|t| self.token_id(t)).collect();
        let mut pooled = vec![0.0; e];
        for &id in &ids {
            for (p, x) in pooled.iter_mut().zip(&self.params[id * e..(id + 1) * e]) {
                *p += x;
            }
        }
        if !ids.is_empty() {
            let n = ids.len() as f64;
            pooled.iter_mut().for_each(|p| *p /= n);
        }
        let w = &self.params[self.weight_offset()..self.bias_offset()];
        let b = &self.params[self.bias_offset()..];
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let z: f64 = w[j * e..(j + 1) * e].iter().zip(&pooled).map(|(a, x)| a * x).sum::<f64>() + b[j];
                z.tanh()
            })
            .collect();
        (hidden.clone(), DeskCache { ids, pooled, hidden })
    }

    fn backward(&self, cache: &DeskCache, grad_output: &[f64], grad: &mut [f64]) {
        let (e, h) = (self.spec.embed_dim, self.spec.hidden_dim);
        let (wo, bo) = (self.weight_offset(), self.bias_offset());
        let gz: Vec<f64> = (0..h).map(|j| grad_output[j] * (1.0 - cache.hidden[j] * cache.hidden[j])).collect();
        let mut gpool = vec![0.0; e];
        for j in 0..h {
            grad[bo + j] += gz[j];
            let row = wo + j * e;
            for i in 0..e {
                grad[row + i] += gz[j] * cache.pooled[i];
                gpool[i] += gz[j] * self.params[row + i];
            }
        }
        if cache.ids.is_empty() {
            return;
        }
        let n = cache.ids.len() as f64;
        for &id in &cache.ids {
            for i in 0..e {
                grad[id * e + i] += gpool[i] / n;
            }
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

/// Classification head (`labels` logits) and priority regression head.
///
/// Layout of `params`: classifier weight `[labels x hidden]`, classifier bias
/// `[labels]`, regression weight `[hidden]`, regression bias `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskHead {
    pub hidden_dim: usize,
    pub labels: usize,
    params: Vec<f64>,
}

impl MultiTaskHead {
    pub fn param_count(hidden_dim: usize, labels: usize) -> usize {
        labels * hidden_dim + labels + hidden_dim + 1
    }

    pub fn zeros(hidden_dim: usize, labels: usize) -> Self {
        Self { hidden_dim, labels, params: vec![0.0; Self::param_count(hidden_dim, labels)] }
    }

    pub fn new(hidden_dim: usize, labels: usize, rng: &mut impl Rng) -> Self {
        let mut head = Self::zeros(hidden_dim, labels);
        let a = (6.0 / (hidden_dim + labels) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        for w in &mut head.params[..labels * hidden_dim] {
            *w = dist.sample(rng);
        }
        let a = (6.0 / (hidden_dim + 1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        let ro = labels * hidden_dim + labels;
        for w in &mut head.params[ro..ro + hidden_dim] {
            *w = dist.sample(rng);
        }
        head
    }

    pub fn from_params(hidden_dim: usize, labels: usize, params: Vec<f64>) -> Option<Self> {
        (params.len() == Self::param_count(hidden_dim, labels)).then_some(Self { hidden_dim, labels, params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Returns the class logits and the raw (pre-sigmoid) regression output.
    pub fn forward(&self, hidden: &[f64]) -> (Vec<f64>, f64) {
        let (h, k) = (self.hidden_dim, self.labels);
        let w = &self.params[..k * h];
        let b = &self.params[k * h..k * h + k];
        let logits = (0..k)
            .map(|c| w[c * h..(c + 1) * h].iter().zip(hidden).map(|(a, x)| a * x).sum::<f64>() + b[c])
            .collect();
        let ro = k * h + k;
        let r = self.params[ro..ro + h].iter().zip(hidden).map(|(a, x)| a * x).sum::<f64>() + self.params[ro + h];
        (logits, r)
    }

    /// Accumulates head gradients and returns `d loss / d hidden`.
    pub fn backward(&self, hidden: &[f64], g_logits: &[f64], g_reg: f64, grad: &mut [f64]) -> Vec<f64> {
        let (h, k) = (self.hidden_dim, self.labels);
        let mut g_hidden = vec![0.0; h];
        for c in 0..k {
            let row = c * h;
            for j in 0..h {
                grad[row + j] += g_logits[c] * hidden[j];
                g_hidden[j] += g_logits[c] * self.params[row + j];
            }
            grad[k * h + c] += g_logits[c];
        }
        let ro = k * h + k;
        for j in 0..h {
            grad[ro + j] += g_reg * hidden[j];
            g_hidden[j] += g_reg * self.params[ro + j];
        }
        grad[ro + h] += g_reg;
        g_hidden
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
