//! Trainable computation: embeddings, state perceiver, temporal calibration,
//! sequence backbones, query attention and scoring.

mod forward;
pub mod params;
pub mod tape;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{EstError, Result};
use params::{Init, ParamId, ParamStore};

pub use forward::{QueryContext, QueryForward, QueryLoss, StateSource};

const MAGIC: &[u8; 8] = b"ESTMODEL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Rnn,
    Lstm,
    Transformer,
    Mamba,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 4] = [
        BackboneKind::Rnn,
        BackboneKind::Lstm,
        BackboneKind::Transformer,
        BackboneKind::Mamba,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Rnn => "rnn",
            BackboneKind::Lstm => "lstm",
            BackboneKind::Transformer => "transformer",
            BackboneKind::Mamba => "mamba",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneKind {
    type Err = EstError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| EstError::Config(format!("unknown backbone '{s}' (valid: rnn, lstm, transformer, mamba)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    DistMult,
    Mlp,
    ComplEx,
    RotatE,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 4] = [ScorerKind::DistMult, ScorerKind::Mlp, ScorerKind::ComplEx, ScorerKind::RotatE];

    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::DistMult => "distmult",
            ScorerKind::Mlp => "mlp",
            ScorerKind::ComplEx => "complex",
            ScorerKind::RotatE => "rotate",
        }
    }

    fn needs_even_dim(self) -> bool {
        matches!(self, ScorerKind::ComplEx | ScorerKind::RotatE)
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScorerKind {
    type Err = EstError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| EstError::Config(format!("unknown scorer '{s}' (valid: distmult, mlp, complex, rotate)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub time_dim: usize,
    pub entity_count: usize,
    /// Relation embedding rows, including inverse relations when present.
    pub relation_count: usize,
    /// Maximum window length; sizes the transformer position table.
    pub history_len: usize,
    pub backbone: BackboneKind,
    pub scorer: ScorerKind,
    pub heads: usize,
    pub mamba_state: usize,
}

impl ModelConfig {
    pub fn new(entity_count: usize, relation_count: usize) -> Self {
        ModelConfig {
            dim: 64,
            time_dim: 32,
            entity_count,
            relation_count,
            history_len: 32,
            backbone: BackboneKind::Transformer,
            scorer: ScorerKind::DistMult,
            heads: 1,
            mamba_state: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EstError::Config(m));
        if self.dim == 0 || self.time_dim == 0 {
            return bad("dim and time_dim must be positive".into());
        }
        if self.entity_count == 0 || self.relation_count == 0 {
            return bad("model needs at least one entity and one relation".into());
        }
        if self.history_len == 0 {
            return bad("history_len must be at least 1".into());
        }
        if self.scorer.needs_even_dim() && !self.dim.is_multiple_of(2) {
            return bad(format!("scorer {} needs an even dim, got {}", self.scorer, self.dim));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("heads ({}) must divide dim ({})", self.heads, self.dim));
        }
        if self.mamba_state == 0 {
            return bad("mamba_state must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Mlp2 {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum BackboneParams {
    Rnn { wu: ParamId, wh: ParamId },
    Lstm { wx: ParamId, wh: ParamId, b: ParamId },
    Transformer {
        pos: ParamId,
        wq: ParamId,
        bq: ParamId,
        wk: ParamId,
        bk: ParamId,
        wv: ParamId,
        bv: ParamId,
        wo: ParamId,
        bo: ParamId,
    },
    Mamba {
        dt_w: ParamId,
        dt_b: ParamId,
        b_w: ParamId,
        c_w: ParamId,
        a_raw: ParamId,
    },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamIds {
    pub entity: ParamId,
    pub relation: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub structural: Mlp2,
    pub time_w: ParamId,
    pub time_b: ParamId,
    pub calib: Mlp2,
    pub backbone: BackboneParams,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub att_w: ParamId,
    pub att_b: ParamId,
    pub att_v: ParamId,
    pub query: Mlp2,
    pub scorer_mlp: Option<Mlp2>,
}

#[derive(Debug, Clone)]
pub struct EstModel {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

fn mlp2(ps: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, inp: usize, hidden: usize, out: usize) -> Mlp2 {
    Mlp2 {
        w1: ps.add(&format!("{prefix}.w1"), hidden, inp, Init::FanIn(inp), rng),
        b1: ps.add(&format!("{prefix}.b1"), 1, hidden, Init::Zeros, rng),
        w2: ps.add(&format!("{prefix}.w2"), out, hidden, Init::FanIn(hidden), rng),
        b2: ps.add(&format!("{prefix}.b2"), 1, out, Init::Zeros, rng),
    }
}

/// `a_raw` range giving `-softplus(a_raw)` in `[-1, -0.1]`.
fn a_raw_range() -> (f64, f64) {
    let inv = |y: f64| y.exp_m1().ln();
    (inv(0.1), inv(1.0))
}

impl EstModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let d = config.dim;
        let dt = config.time_dim;
        let mut ps = ParamStore::new();
        // lookups see a one-hot input, so their fan-in is 1
        let entity = ps.add("entity", config.entity_count, d, Init::FanIn(1), rng);
        let relation = ps.add("relation", config.relation_count, d, Init::FanIn(1), rng);
        let gate_w = ps.add("gate.w", d, 2 * d, Init::FanIn(2 * d), rng);
        let gate_b = ps.add("gate.b", 1, d, Init::Zeros, rng);
        let structural = mlp2(&mut ps, rng, "struct", 2 * d, d, d);
        let time_w = ps.add("time.w", dt, 1, Init::FanIn(1), rng);
        let time_b = ps.add("time.b", 1, dt, Init::Zeros, rng);
        let calib = mlp2(&mut ps, rng, "calib", 2 * d + dt, d, d);
        let backbone = match config.backbone {
            BackboneKind::Rnn => BackboneParams::Rnn {
                wu: ps.add("rnn.wu", d, d, Init::FanIn(d), rng),
                wh: ps.add("rnn.wh", d, d, Init::FanIn(d), rng),
            },
            BackboneKind::Lstm => BackboneParams::Lstm {
                wx: ps.add("lstm.wx", 4 * d, d, Init::FanIn(d), rng),
                wh: ps.add("lstm.wh", 4 * d, d, Init::FanIn(d), rng),
                b: ps.add("lstm.b", 1, 4 * d, Init::Zeros, rng),
            },
            BackboneKind::Transformer => BackboneParams::Transformer {
                pos: ps.add("attn.pos", config.history_len, d, Init::FanIn(1), rng),
                wq: ps.add("attn.wq", d, d, Init::FanIn(d), rng),
                bq: ps.add("attn.bq", 1, d, Init::Zeros, rng),
                wk: ps.add("attn.wk", d, d, Init::FanIn(d), rng),
                bk: ps.add("attn.bk", 1, d, Init::Zeros, rng),
                wv: ps.add("attn.wv", d, d, Init::FanIn(d), rng),
                bv: ps.add("attn.bv", 1, d, Init::Zeros, rng),
                wo: ps.add("attn.wo", d, d, Init::FanIn(d), rng),
                bo: ps.add("attn.bo", 1, d, Init::Zeros, rng),
            },
            BackboneKind::Mamba => {
                let n = config.mamba_state;
                let (lo, hi) = a_raw_range();
                BackboneParams::Mamba {
                    dt_w: ps.add("ssm.dt_w", d, d, Init::FanIn(d), rng),
                    dt_b: ps.add("ssm.dt_b", 1, d, Init::Zeros, rng),
                    b_w: ps.add("ssm.b_w", n, d, Init::FanIn(d), rng),
                    c_w: ps.add("ssm.c_w", n, d, Init::FanIn(d), rng),
                    a_raw: ps.add("ssm.a_raw", d, n, Init::Uniform(lo, hi), rng),
                }
            }
        };
        let proj_w = ps.add("proj.w", d, d, Init::FanIn(d), rng);
        let proj_b = ps.add("proj.b", 1, d, Init::Zeros, rng);
        let att_w = ps.add("att.w", d, 2 * d + dt, Init::FanIn(2 * d + dt), rng);
        let att_b = ps.add("att.b", 1, d, Init::Zeros, rng);
        let att_v = ps.add("att.v", 1, d, Init::FanIn(d), rng);
        let query = mlp2(&mut ps, rng, "query", 2 * d, d, d);
        let scorer_mlp = match config.scorer {
            ScorerKind::Mlp => Some(mlp2(&mut ps, rng, "scorer", 3 * d, d, 1)),
            _ => None,
        };
        let ids = ParamIds {
            entity,
            relation,
            gate_w,
            gate_b,
            structural,
            time_w,
            time_b,
            calib,
            backbone,
            proj_w,
            proj_b,
            att_w,
            att_b,
            att_v,
            query,
            scorer_mlp,
        };
        Ok(EstModel { config, params: ps, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Mutable view of a named tensor's data, for tests and tooling.
    pub fn param_data_mut(&mut self, name: &str) -> Result<&mut Vec<f64>> {
        let id = self
            .params
            .find(name)
            .ok_or_else(|| EstError::Lookup(format!("no parameter named '{name}'")))?;
        Ok(&mut self.params.get_mut(id).data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        for v in [c.dim, c.time_dim, c.entity_count, c.relation_count, c.history_len, c.heads, c.mamba_state] {
            w.u64(v as u64);
        }
        w.str(c.backbone.name());
        w.str(c.scorer.name());
        w.u64(self.params.len() as u64);
        for id in self.params.ids() {
            let t = self.params.get(id);
            w.str(self.params.name(id));
            w.u64(t.rows as u64);
            w.u64(t.cols as u64);
            w.f64s(&t.data);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(MAGIC.len())? != MAGIC {
            return Err(EstError::Deserialize("not a model checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(EstError::Deserialize(format!("unsupported model checkpoint version {version}")));
        }
        let mut dims = [0usize; 7];
        for v in dims.iter_mut() {
            *v = r.usize()?;
        }
        let backbone: BackboneKind = r.str()?.parse().map_err(|e: EstError| EstError::Deserialize(e.to_string()))?;
        let scorer: ScorerKind = r.str()?.parse().map_err(|e: EstError| EstError::Deserialize(e.to_string()))?;
        let config = ModelConfig {
            dim: dims[0],
            time_dim: dims[1],
            entity_count: dims[2],
            relation_count: dims[3],
            history_len: dims[4],
            heads: dims[5],
            mamba_state: dims[6],
            backbone,
            scorer,
        };
        let mut model = EstModel::new(config, 0).map_err(|e| EstError::Deserialize(e.to_string()))?;
        let count = r.usize()?;
        if count != model.params.len() {
            return Err(EstError::Deserialize(format!(
                "checkpoint has {count} tensors, model expects {}",
                model.params.len()
            )));
        }
        for _ in 0..count {
            let name = r.str()?;
            let rows = r.usize()?;
            let cols = r.usize()?;
            let id = model
                .params
                .find(&name)
                .ok_or_else(|| EstError::Deserialize(format!("unexpected tensor '{name}'")))?;
            let t = model.params.get_mut(id);
            if (t.rows, t.cols) != (rows, cols) {
                return Err(EstError::Deserialize(format!(
                    "tensor '{name}' is {rows}x{cols}, expected {}x{}",
                    t.rows, t.cols
                )));
            }
            t.data = r.f64s(rows * cols)?;
        }
        r.expect_end()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_kind_names() {
        assert_eq!("Mamba".parse::<BackboneKind>().unwrap(), BackboneKind::Mamba);
        assert_eq!("rotate".parse::<ScorerKind>().unwrap(), ScorerKind::RotatE);
        let err = "gru".parse::<BackboneKind>().unwrap_err();
        assert!(err.to_string().contains("rnn, lstm, transformer, mamba"));
    }

    #[test]
    fn odd_dim_rejected_for_complex() {
        let mut c = ModelConfig::new(4, 2);
        c.dim = 5;
        c.scorer = ScorerKind::ComplEx;
        assert!(matches!(EstModel::new(c, 0), Err(EstError::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        for backbone in BackboneKind::ALL {
            let mut c = ModelConfig::new(5, 4);
            c.dim = 6;
            c.time_dim = 3;
            c.history_len = 4;
            c.backbone = backbone;
            c.scorer = ScorerKind::Mlp;
            let m = EstModel::new(c, 9).unwrap();
            let bytes = m.to_bytes();
            let back = EstModel::from_bytes(&bytes).unwrap();
            assert_eq!(back.params(), m.params());
            assert_eq!(back.config(), m.config());
            assert!(EstModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        }
    }

    #[test]
    fn mamba_decay_initialized_in_range() {
        let mut c = ModelConfig::new(3, 2);
        c.backbone = BackboneKind::Mamba;
        let m = EstModel::new(c, 1).unwrap();
        let id = m.params().find("ssm.a_raw").unwrap();
        for &a in &m.params().get(id).data {
            let v = -tape::softplus(a);
            assert!((-1.0 - 1e-12..=-0.1 + 1e-12).contains(&v), "{v}");
        }
    }
}
