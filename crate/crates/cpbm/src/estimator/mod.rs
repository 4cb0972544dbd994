//! AllPairs estimation of examination propensities.
//!
//! The estimator jointly fits a propensity model `h(k, x)` and an
//! average-relevance model `g(k, k', x)` by maximizing the IPS-weighted
//! likelihood over all position pairs of a harvested dataset:
//!
//! ```text
//! sum_j sum_{k != k'} [ c_hat[k,k']^j(k)     * log(h(k,x^j) g(k,k',x^j))
//!                     + not_c_hat[k,k']^j(k) * log(1 - h(k,x^j) g(k,k',x^j)) ]
//! ```
//!
//! Both heads are sigmoid-constrained to (0, 1). Only the product `h * g` is
//! identified per (k, k', x), so propensities are consumed as anchor ratios
//! `h(k,x) / h(1,x)`.
//!
//! Three model families share one objective/gradient/training path:
//!
//! - `Pbm`: context-free logits per position plus one logit per unordered
//!   position pair (asymmetry unrepresentable by construction).
//! - `Cpbm`: a sigmoid dense layer `h(x) = sigmoid(W_p x + b_p)` and a
//!   symmetrized relevance layer `g(x) = (R + R^T) / 2` with
//!   `R = sigmoid(W_r x + b_r)`.
//! - `CpbmContextFreeRel`: the CPBM propensity head with the PBM's pairwise
//!   relevance parameters, for ablating the context-dependent relevance
//!   model.

mod objective;
mod train;

pub use objective::{allpairs_objective, cross_entropy_form, objective_gradient};
pub use train::{fit, fit_cpbm, fit_pbm, EpochStat, FitResult, TrainConfig};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// Which model family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Pbm,
    Cpbm,
    CpbmContextFreeRel,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelFamily::Pbm => write!(f, "pbm"),
            ModelFamily::Cpbm => write!(f, "cpbm"),
            ModelFamily::CpbmContextFreeRel => write!(f, "cpbm_context_free_rel"),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Context-free position-based model: one propensity logit per position and
/// one relevance logit per unordered position pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PbmModel {
    k_max: usize,
    /// Layout: `[p_logits (k_max) | r_logits (k_max choose 2)]`.
    params: Vec<f64>,
}

impl PbmModel {
    pub fn new(k_max: usize) -> Self {
        let n = k_max + k_max * (k_max - 1) / 2;
        PbmModel {
            k_max,
            params: vec![0.0; n],
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Index of the relevance logit for unordered pair {k, k'} (1-based).
    fn pair_index(&self, k: usize, k_prime: usize) -> usize {
        debug_assert!(k != k_prime);
        let (a, b) = (k.min(k_prime) - 1, k.max(k_prime) - 1);
        // Upper-triangle row-major: row a spans (k_max - 1 - a) entries.
        self.k_max + a * self.k_max - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn propensities(&self) -> Vec<f64> {
        (0..self.k_max).map(|k| sigmoid(self.params[k])).collect()
    }

    pub fn relevance(&self, k: usize, k_prime: usize) -> f64 {
        if k == k_prime {
            return 0.5;
        }
        sigmoid(self.params[self.pair_index(k, k_prime)])
    }

    /// Set the position-`k` propensity to `p` (stored as a logit).
    pub fn set_propensity(&mut self, k: usize, p: f64) {
        assert!(p > 0.0 && p < 1.0, "propensity must lie in (0, 1)");
        self.params[k - 1] = (p / (1.0 - p)).ln();
    }

    /// Set the pairwise average relevance for {k, k'} to `r`.
    pub fn set_relevance(&mut self, k: usize, k_prime: usize, r: f64) {
        assert!(r > 0.0 && r < 1.0, "relevance must lie in (0, 1)");
        let idx = self.pair_index(k, k_prime);
        self.params[idx] = (r / (1.0 - r)).ln();
    }
}

/// Relevance-head flavor of a [`CpbmModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceHead {
    /// Symmetrized sigmoid dense layer over the context.
    Neural,
    /// One logit per unordered position pair, shared across contexts.
    ContextFree,
}

/// Contextual position-based model.
#[derive(Debug, Clone, PartialEq)]
pub struct CpbmModel {
    t: usize,
    k_max: usize,
    relevance_head: RelevanceHead,
    /// Neural head: `[W_p (k_max*t) | b_p (k_max) | W_r (k_max^2*t) | b_r (k_max^2)]`.
    /// Context-free head: `[W_p | b_p | r_logits (k_max choose 2)]`.
    params: Vec<f64>,
}

impl CpbmModel {
    pub fn new(t: usize, k_max: usize, relevance_head: RelevanceHead) -> Self {
        let n = match relevance_head {
            RelevanceHead::Neural => k_max * t + k_max + k_max * k_max * t + k_max * k_max,
            RelevanceHead::ContextFree => k_max * t + k_max + k_max * (k_max - 1) / 2,
        };
        CpbmModel {
            t,
            k_max,
            relevance_head,
            params: vec![0.0; n],
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn relevance_head(&self) -> RelevanceHead {
        self.relevance_head
    }

    fn off_bp(&self) -> usize {
        self.k_max * self.t
    }

    fn off_rel(&self) -> usize {
        self.k_max * self.t + self.k_max
    }

    fn rel_pair_index(&self, k: usize, k_prime: usize) -> usize {
        debug_assert!(matches!(self.relevance_head, RelevanceHead::ContextFree));
        let (a, b) = (k.min(k_prime) - 1, k.max(k_prime) - 1);
        self.off_rel() + a * self.k_max - a * (a + 1) / 2 + (b - a - 1)
    }

    fn check_context(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.t {
            return Err(Error::input(format!(
                "context has dimension {}, model expects {}",
                x.len(),
                self.t
            )));
        }
        Ok(())
    }

    /// Propensity vector `p(x) = sigmoid(W_p x + b_p)`.
    pub fn propensities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_context(x)?;
        let mut out = vec![0.0; self.k_max];
        self.propensities_unchecked(x, &mut out);
        Ok(out)
    }

    fn propensities_unchecked(&self, x: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate().take(self.k_max) {
            let row = &self.params[k * self.t..(k + 1) * self.t];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                + self.params[self.off_bp() + k];
            *slot = sigmoid(z);
        }
    }

    /// Pre-symmetrization relevance matrix `sigmoid(W_r x + b_r)`,
    /// row-major `k_max x k_max`. Neural head only.
    fn rtilde_unchecked(&self, x: &[f64], out: &mut [f64]) {
        debug_assert!(matches!(self.relevance_head, RelevanceHead::Neural));
        let off_wr = self.off_rel();
        let off_br = off_wr + self.k_max * self.k_max * self.t;
        for (idx, slot) in out.iter_mut().enumerate().take(self.k_max * self.k_max) {
            let row = &self.params[off_wr + idx * self.t..off_wr + (idx + 1) * self.t];
            let z: f64 =
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.params[off_br + idx];
            *slot = sigmoid(z);
        }
    }

    /// Symmetric average-relevance matrix `g(x)`, row-major `k_max x k_max`.
    /// For the neural head this is `(R + R^T) / 2`; the diagonal is unused by
    /// the objective.
    pub fn relevances(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_context(x)?;
        let k_max = self.k_max;
        let mut out = vec![0.5; k_max * k_max];
        match self.relevance_head {
            RelevanceHead::Neural => {
                let mut rtilde = vec![0.0; k_max * k_max];
                self.rtilde_unchecked(x, &mut rtilde);
                for a in 0..k_max {
                    for b in 0..k_max {
                        out[a * k_max + b] = 0.5 * (rtilde[a * k_max + b] + rtilde[b * k_max + a]);
                    }
                }
            }
            RelevanceHead::ContextFree => {
                for a in 1..=k_max {
                    for b in 1..=k_max {
                        if a != b {
                            out[(a - 1) * k_max + (b - 1)] =
                                sigmoid(self.params[self.rel_pair_index(a, b)]);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A trained propensity/relevance model of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Pbm(PbmModel),
    Cpbm(CpbmModel),
}

impl Model {
    /// Fresh model with uniform `[-init_scale, init_scale]` dense weights and
    /// zero biases/logits, drawn deterministically from `seed`.
    pub fn init(family: ModelFamily, t: usize, k_max: usize, init_scale: f64, seed: u64) -> Model {
        match family {
            ModelFamily::Pbm => Model::Pbm(PbmModel::new(k_max)),
            ModelFamily::Cpbm | ModelFamily::CpbmContextFreeRel => {
                let head = if family == ModelFamily::Cpbm {
                    RelevanceHead::Neural
                } else {
                    RelevanceHead::ContextFree
                };
                let mut model = CpbmModel::new(t, k_max, head);
                let mut rng = stream(seed, "model-init", 0);
                let n_wp = k_max * t;
                for i in 0..n_wp {
                    model.params[i] = rng.random_range(-init_scale..=init_scale);
                }
                if head == RelevanceHead::Neural {
                    let off_wr = model.off_rel();
                    for i in 0..k_max * k_max * t {
                        model.params[off_wr + i] = rng.random_range(-init_scale..=init_scale);
                    }
                }
                Model::Cpbm(model)
            }
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            Model::Pbm(_) => ModelFamily::Pbm,
            Model::Cpbm(m) => match m.relevance_head {
                RelevanceHead::Neural => ModelFamily::Cpbm,
                RelevanceHead::ContextFree => ModelFamily::CpbmContextFreeRel,
            },
        }
    }

    pub fn k_max(&self) -> usize {
        match self {
            Model::Pbm(m) => m.k_max,
            Model::Cpbm(m) => m.k_max,
        }
    }

    /// Context dimension consumed by the model (0 for the PBM).
    pub fn context_dim(&self) -> usize {
        match self {
            Model::Pbm(_) => 0,
            Model::Cpbm(m) => m.t,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Pbm(m) => &m.params,
            Model::Cpbm(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Pbm(m) => &mut m.params,
            Model::Cpbm(m) => &mut m.params,
        }
    }

    /// Index ranges of dense (context-multiplying) weights, the only
    /// parameters subject to weight decay, split by head:
    /// `(propensity W_p, relevance W_r)`. Both empty for the PBM.
    pub(crate) fn dense_weight_ranges(
        &self,
    ) -> (Vec<std::ops::Range<usize>>, Vec<std::ops::Range<usize>>) {
        match self {
            Model::Pbm(_) => (Vec::new(), Vec::new()),
            Model::Cpbm(m) => {
                let propensity: Vec<_> = std::iter::once(0..m.k_max * m.t).collect();
                let relevance: Vec<_> = if m.relevance_head == RelevanceHead::Neural {
                    let off_wr = m.off_rel();
                    std::iter::once(off_wr..off_wr + m.k_max * m.k_max * m.t).collect()
                } else {
                    Vec::new()
                };
                (propensity, relevance)
            }
        }
    }

    /// Raw propensity outputs `h(., x)`.
    pub fn propensities(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Pbm(m) => Ok(m.propensities()),
            Model::Cpbm(m) => m.propensities(x),
        }
    }

    /// Raw relevance outputs `g(., ., x)`, row-major `k_max x k_max`.
    pub fn relevances(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Pbm(m) => {
                let k_max = m.k_max;
                let mut out = vec![0.5; k_max * k_max];
                for a in 1..=k_max {
                    for b in 1..=k_max {
                        if a != b {
                            out[(a - 1) * k_max + (b - 1)] = m.relevance(a, b);
                        }
                    }
                }
                Ok(out)
            }
            Model::Cpbm(m) => m.relevances(x),
        }
    }

    /// Anchor-normalized propensity ratios `h(k, x) / h(1, x)` for
    /// k = 1..k_max; the first element is exactly 1.
    pub fn relative_propensities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.propensities(x)?;
        let anchor = h[0];
        Ok(h.iter()
            .enumerate()
            .map(|(i, &v)| if i == 0 { 1.0 } else { v / anchor })
            .collect())
    }

    /// Forward pass into reusable buffers (training hot path).
    pub(crate) fn forward(&self, x: &[f64], buf: &mut ForwardBuffers) {
        let k_max = self.k_max();
        buf.h.resize(k_max, 0.0);
        buf.g.resize(k_max * k_max, 0.5);
        match self {
            Model::Pbm(m) => {
                for k in 0..k_max {
                    buf.h[k] = sigmoid(m.params[k]);
                }
                for a in 1..=k_max {
                    for b in 1..=k_max {
                        if a != b {
                            buf.g[(a - 1) * k_max + (b - 1)] = m.relevance(a, b);
                        }
                    }
                }
            }
            Model::Cpbm(m) => {
                m.propensities_unchecked(x, &mut buf.h);
                match m.relevance_head {
                    RelevanceHead::Neural => {
                        buf.rtilde.resize(k_max * k_max, 0.0);
                        m.rtilde_unchecked(x, &mut buf.rtilde);
                        for a in 0..k_max {
                            for b in 0..k_max {
                                buf.g[a * k_max + b] =
                                    0.5 * (buf.rtilde[a * k_max + b] + buf.rtilde[b * k_max + a]);
                            }
                        }
                    }
                    RelevanceHead::ContextFree => {
                        for a in 1..=k_max {
                            for b in 1..=k_max {
                                if a != b {
                                    buf.g[(a - 1) * k_max + (b - 1)] =
                                        sigmoid(m.params[m.rel_pair_index(a, b)]);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Chain per-context output gradients `d_h` (dL/dh, length k_max) and
    /// `d_g` (dL/dg at ordered (k, k'), row-major) into parameter space.
    pub(crate) fn backprop(
        &self,
        x: &[f64],
        buf: &ForwardBuffers,
        d_h: &[f64],
        d_g: &[f64],
        grad: &mut [f64],
    ) {
        let k_max = self.k_max();
        match self {
            Model::Pbm(m) => {
                for k in 0..k_max {
                    let h = buf.h[k];
                    grad[k] += d_h[k] * h * (1.0 - h);
                }
                for a in 1..=k_max {
                    for b in (a + 1)..=k_max {
                        let pull = d_g[(a - 1) * k_max + (b - 1)] + d_g[(b - 1) * k_max + (a - 1)];
                        if pull != 0.0 {
                            let g = buf.g[(a - 1) * k_max + (b - 1)];
                            grad[m.pair_index(a, b)] += pull * g * (1.0 - g);
                        }
                    }
                }
            }
            Model::Cpbm(m) => {
                let t = m.t;
                for k in 0..k_max {
                    let dz = d_h[k] * buf.h[k] * (1.0 - buf.h[k]);
                    if dz == 0.0 {
                        continue;
                    }
                    let row = &mut grad[k * t..(k + 1) * t];
                    for (g_w, &xv) in row.iter_mut().zip(x) {
                        *g_w += dz * xv;
                    }
                    grad[m.off_bp() + k] += dz;
                }
                match m.relevance_head {
                    RelevanceHead::Neural => {
                        let off_wr = m.off_rel();
                        let off_br = off_wr + k_max * k_max * t;
                        for a in 0..k_max {
                            for b in 0..k_max {
                                // g[a,b] = (rtilde[a,b] + rtilde[b,a]) / 2, so
                                // rtilde[a,b] feeds both ordered cells.
                                let pull =
                                    0.5 * (d_g[a * k_max + b] + d_g[b * k_max + a]);
                                if pull == 0.0 {
                                    continue;
                                }
                                let idx = a * k_max + b;
                                let r = buf.rtilde[idx];
                                let dz = pull * r * (1.0 - r);
                                let row = &mut grad[off_wr + idx * t..off_wr + (idx + 1) * t];
                                for (g_w, &xv) in row.iter_mut().zip(x) {
                                    *g_w += dz * xv;
                                }
                                grad[off_br + idx] += dz;
                            }
                        }
                    }
                    RelevanceHead::ContextFree => {
                        for a in 1..=k_max {
                            for b in (a + 1)..=k_max {
                                let pull = d_g[(a - 1) * k_max + (b - 1)]
                                    + d_g[(b - 1) * k_max + (a - 1)];
                                if pull != 0.0 {
                                    let g = buf.g[(a - 1) * k_max + (b - 1)];
                                    grad[m.rel_pair_index(a, b)] += pull * g * (1.0 - g);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Reusable per-context forward buffers.
#[derive(Debug, Default, Clone)]
pub(crate) struct ForwardBuffers {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub rtilde: Vec<f64>,
}

const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    family: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    relevance: Option<RelevanceHead>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    t: Option<usize>,
    k_max: usize,
    params: Vec<f64>,
}

/// Persist a model as structured JSON with named dimensions and a version
/// field. Parameter values survive a save/load round trip bit-exactly.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let file = match model {
        Model::Pbm(m) => ModelFile {
            version: MODEL_FILE_VERSION,
            family: "pbm".into(),
            relevance: None,
            t: None,
            k_max: m.k_max,
            params: m.params.clone(),
        },
        Model::Cpbm(m) => ModelFile {
            version: MODEL_FILE_VERSION,
            family: "cpbm".into(),
            relevance: Some(m.relevance_head),
            t: Some(m.t),
            k_max: m.k_max,
            params: m.params.clone(),
        },
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &file)
        .map_err(|e| Error::data(format!("model serialization: {e}")))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Load any model family.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let reader = BufReader::new(File::open(path)?);
    let file: ModelFile =
        serde_json::from_reader(reader).map_err(|e| Error::format(format!("model file: {e}")))?;
    if file.version != MODEL_FILE_VERSION {
        return Err(Error::format(format!(
            "unsupported model file version {}",
            file.version
        )));
    }
    match file.family.as_str() {
        "pbm" => {
            let mut m = PbmModel::new(file.k_max);
            if file.params.len() != m.params.len() {
                return Err(Error::format(format!(
                    "pbm parameter count {} does not match k_max {}",
                    file.params.len(),
                    file.k_max
                )));
            }
            m.params = file.params;
            Ok(Model::Pbm(m))
        }
        "cpbm" => {
            let t = file
                .t
                .ok_or_else(|| Error::format("cpbm model file missing t"))?;
            let head = file
                .relevance
                .ok_or_else(|| Error::format("cpbm model file missing relevance head"))?;
            let mut m = CpbmModel::new(t, file.k_max, head);
            if file.params.len() != m.params.len() {
                return Err(Error::format(format!(
                    "cpbm parameter count {} does not match t={}, k_max={}",
                    file.params.len(),
                    t,
                    file.k_max
                )));
            }
            m.params = file.params;
            Ok(Model::Cpbm(m))
        }
        other => Err(Error::format(format!("unknown model family `{other}`"))),
    }
}

/// Load a model that must be a CPBM (either relevance head).
pub fn load_cpbm(path: impl AsRef<Path>) -> Result<CpbmModel> {
    match load_model(path)? {
        Model::Cpbm(m) => Ok(m),
        Model::Pbm(_) => Err(Error::format("expected a cpbm model file, found pbm")),
    }
}
