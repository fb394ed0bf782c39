use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::pack::{cls_targets, pack_input, FieldedInput, Mode, SpanMap};
use super::vocab::{Vocab, PAD};
use super::ModelConfig;
use crate::corpus::Example;
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng::{normal, stream};
use crate::{Error, Result};

/// Encoder-decoder generator with a classification head on the shared
/// encoder. Weights live in `params` under stable names (`enc.0.attn.wq`,
/// `dec.1.xattn.wo`, `cls.ffn.w1`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct E2eModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub vocab: Vocab,
}

/// Graph handles for one example's losses. `cls` is absent when the
/// classification branch was not built.
#[derive(Debug, Clone, Copy)]
pub struct ExampleLoss {
    pub gen: Var,
    pub cls: Option<Var>,
    pub total: Var,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: crate::rng::SeededRng,
}

impl Init<'_> {
    fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> Result<()> {
        let data = (0..rows * cols).map(|_| std * normal(&mut self.rng)).collect();
        self.store.insert(name, Tensor::from_rows(rows, cols, data)?, true)?;
        Ok(())
    }

    fn weight(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<()> {
        self.normal(name, d_in, d_out, 1.0 / libm::sqrt(d_in as f64))
    }

    fn constant(&mut self, name: &str, cols: usize, v: f64) -> Result<()> {
        self.store
            .insert(name, Tensor::from_rows(1, cols, alloc::vec![v; cols])?, true)?;
        Ok(())
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) -> Result<()> {
        self.constant(&format!("{prefix}.g"), d, 1.0)?;
        self.constant(&format!("{prefix}.b"), d, 0.0)
    }

    fn attention(&mut self, prefix: &str, d: usize) -> Result<()> {
        for w in ["wq", "wk", "wv", "wo"] {
            self.weight(&format!("{prefix}.{w}"), d, d)?;
        }
        Ok(())
    }

    fn ffn(&mut self, prefix: &str, d_in: usize, d_hidden: usize, d_out: usize) -> Result<()> {
        self.weight(&format!("{prefix}.w1"), d_in, d_hidden)?;
        self.constant(&format!("{prefix}.b1"), d_hidden, 0.0)?;
        self.weight(&format!("{prefix}.w2"), d_hidden, d_out)?;
        self.constant(&format!("{prefix}.b2"), d_out, 0.0)
    }
}

/// Sinusoidal position table, `n x d`.
pub(crate) fn positions(n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d {
            let freq = libm::pow(10_000.0, -((i - i % 2) as f64) / d as f64);
            let angle = pos as f64 * freq;
            data.push(if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) });
        }
    }
    Tensor::from_rows(n, d, data).expect("sized above")
}

impl E2eModel {
    /// Fresh weights drawn from `seed`. `config.vocab_size` is overwritten
    /// with the vocabulary size.
    pub fn new(mut config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let d = config.d_model;
        let mut init = Init {
            store: &mut ParamStore::new(),
            rng: stream(seed, "model-init"),
        };
        init.normal("embed", config.vocab_size, d, 1.0)?;
        for l in 0..config.n_layers_enc {
            init.layer_norm(&format!("enc.{l}.ln1"), d)?;
            init.attention(&format!("enc.{l}.attn"), d)?;
            init.layer_norm(&format!("enc.{l}.ln2"), d)?;
            init.ffn(&format!("enc.{l}.ffn"), d, config.d_ff, d)?;
        }
        init.layer_norm("enc.ln", d)?;
        for l in 0..config.n_layers_dec {
            init.layer_norm(&format!("dec.{l}.ln1"), d)?;
            init.attention(&format!("dec.{l}.attn"), d)?;
            init.layer_norm(&format!("dec.{l}.ln2"), d)?;
            init.attention(&format!("dec.{l}.xattn"), d)?;
            init.layer_norm(&format!("dec.{l}.ln3"), d)?;
            init.ffn(&format!("dec.{l}.ffn"), d, config.d_ff, d)?;
        }
        init.layer_norm("dec.ln", d)?;
        let feat = if config.cls_projections {
            for w in ["cls.wq", "cls.wk", "cls.wv"] {
                init.weight(w, d, config.d_k)?;
            }
            config.d_k
        } else {
            d
        };
        init.ffn("cls.ffn", feat, config.d_k, 2)?;
        if !config.share_cls_ffn {
            init.ffn("cls.ffn_s", feat, config.d_k, 2)?;
        }
        let params = core::mem::take(init.store);
        Ok(E2eModel {
            config,
            params,
            vocab,
        })
    }

    /// Reassembles a model from stored parts, checking that every weight the
    /// configuration needs is present with the right shape.
    pub fn from_parts(config: ModelConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "config vocab_size {} but vocabulary has {} entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        let reference = E2eModel::new(config.clone(), vocab.clone(), 0)?;
        for (_, p) in reference.params.iter() {
            let got = params.by_name(&p.name)?;
            if got.value.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "from_parts",
                    lhs: p.value.shape().to_vec(),
                    rhs: got.value.shape().to_vec(),
                });
            }
        }
        Ok(E2eModel {
            config,
            params,
            vocab,
        })
    }

    /// Names of the classification-head weights.
    pub fn cls_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .into_iter()
            .filter(|n| n.starts_with("cls."))
            .collect()
    }

    /// Names of weights used only by the decoder (the tied embedding is
    /// shared with the encoder and excluded).
    pub fn decoder_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .into_iter()
            .filter(|n| n.starts_with("dec."))
            .collect()
    }

    fn p(&self, g: &mut Graph, name: &str) -> Result<Var> {
        Ok(g.param(&self.params, self.params.id(name)?))
    }

    /// `x · W`, plus the low-rank path when an adapter targets `name`.
    pub(crate) fn linear(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.p(g, name)?;
        let y = g.matmul(x, w)?;
        let Some(a) = self.params.adapter(name) else {
            return Ok(y);
        };
        let down = self.p(g, &a.down)?;
        let up = self.p(g, &a.up)?;
        let t = g.matmul_bt(x, down)?;
        let u = g.matmul_bt(t, up)?;
        let u = g.scale(u, a.scaling());
        g.add(y, u)
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.p(g, &format!("{prefix}.g"))?;
        let bias = self.p(g, &format!("{prefix}.b"))?;
        g.layer_norm(x, gain, bias)
    }

    fn ffn(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(g, x, &format!("{prefix}.w1"))?;
        let b1 = self.p(g, &format!("{prefix}.b1"))?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let o = self.linear(g, h, &format!("{prefix}.w2"))?;
        let b2 = self.p(g, &format!("{prefix}.b2"))?;
        g.add_row(o, b2)
    }

    fn attention(&self, g: &mut Graph, x: Var, memory: Var, prefix: &str, causal: bool) -> Result<Var> {
        let q = self.linear(g, x, &format!("{prefix}.wq"))?;
        let k = self.linear(g, memory, &format!("{prefix}.wk"))?;
        let v = self.linear(g, memory, &format!("{prefix}.wv"))?;
        let dh = self.config.d_model / self.config.n_heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, a, b)?;
            let kh = g.slice_cols(k, a, b)?;
            let vh = g.slice_cols(v, a, b)?;
            let s = g.matmul_bt(qh, kh)?;
            let s = g.scale(s, scale);
            let w = g.softmax_rows(s, causal)?;
            heads.push(g.matmul(w, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        self.linear(g, cat, &format!("{prefix}.wo"))
    }

    fn embed(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Precondition(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let table = self.p(g, "embed")?;
        let x = g.embedding(table, ids)?;
        let pe = g.input(positions(ids.len(), self.config.d_model));
        g.add(x, pe)
    }

    /// Encoder states, one row per input token.
    pub fn encode_graph(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Precondition("cannot encode an empty input".into()));
        }
        if ids.len() > self.config.max_input_len {
            return Err(Error::Precondition(format!(
                "input of {} tokens exceeds max_input_len {}; pack_input must truncate first",
                ids.len(),
                self.config.max_input_len
            )));
        }
        let mut x = self.embed(g, ids)?;
        for l in 0..self.config.n_layers_enc {
            let h = self.layer_norm(g, x, &format!("enc.{l}.ln1"))?;
            let a = self.attention(g, h, h, &format!("enc.{l}.attn"), false)?;
            x = g.add(x, a)?;
            let h = self.layer_norm(g, x, &format!("enc.{l}.ln2"))?;
            let f = self.ffn(g, h, &format!("enc.{l}.ffn"))?;
            x = g.add(x, f)?;
        }
        self.layer_norm(g, x, "enc.ln")
    }

    /// Next-token logits for every decoder position, `len(dec_in) x V`.
    pub fn decoder_logits(&self, g: &mut Graph, enc: Var, dec_in: &[usize]) -> Result<Var> {
        if dec_in.is_empty() {
            return Err(Error::Precondition("decoder input is empty".into()));
        }
        let mut x = self.embed(g, dec_in)?;
        for l in 0..self.config.n_layers_dec {
            let h = self.layer_norm(g, x, &format!("dec.{l}.ln1"))?;
            let a = self.attention(g, h, h, &format!("dec.{l}.attn"), true)?;
            x = g.add(x, a)?;
            let h = self.layer_norm(g, x, &format!("dec.{l}.ln2"))?;
            let c = self.attention(g, h, enc, &format!("dec.{l}.xattn"), false)?;
            x = g.add(x, c)?;
            let h = self.layer_norm(g, x, &format!("dec.{l}.ln3"))?;
            let f = self.ffn(g, h, &format!("dec.{l}.ffn"))?;
            x = g.add(x, f)?;
        }
        let h = self.layer_norm(g, x, "dec.ln")?;
        let table = self.p(g, "embed")?;
        let logits = g.matmul_bt(h, table)?;
        Ok(g.scale(logits, 1.0 / libm::sqrt(self.config.d_model as f64)))
    }

    /// Pooled cross-attention of the query span over `span`, then the
    /// two-layer classifier: a `1 x 2` logit row.
    fn cls_branch(&self, g: &mut Graph, enc: Var, spans: &SpanMap, span: &core::ops::Range<usize>, ffn: &str) -> Result<Var> {
        let q = g.slice_rows(enc, spans.query.start, spans.query.end)?;
        let p = g.slice_rows(enc, span.start, span.end)?;
        let (q, k, v) = if self.config.cls_projections {
            (
                self.linear(g, q, "cls.wq")?,
                self.linear(g, p, "cls.wk")?,
                self.linear(g, p, "cls.wv")?,
            )
        } else {
            (q, p, p)
        };
        let s = g.matmul_bt(q, k)?;
        let s = g.scale(s, 1.0 / libm::sqrt(self.config.d_k as f64));
        let w = g.softmax_rows(s, false)?;
        let alpha = g.matmul(w, v)?;
        let pooled = g.mean_rows(alpha)?;
        self.ffn(g, pooled, ffn)
    }

    /// Classification logits, one row per passage span followed by the
    /// pseudo-answer row.
    pub fn cls_logits(&self, g: &mut Graph, enc: Var, spans: &SpanMap) -> Result<Var> {
        let pseudo = spans
            .pseudo
            .as_ref()
            .ok_or_else(|| Error::Precondition("classification needs a pseudo-answer span".into()))?;
        let mut rows = Vec::with_capacity(spans.passages.len() + 1);
        for span in &spans.passages {
            rows.push(self.cls_branch(g, enc, spans, span, "cls.ffn")?);
        }
        let s_ffn = if self.config.share_cls_ffn { "cls.ffn" } else { "cls.ffn_s" };
        rows.push(self.cls_branch(g, enc, spans, pseudo, s_ffn)?);
        g.concat_rows(&rows)
    }

    /// Decoder input and target for a gold answer: `<pad> o_1 .. o_{L-1}` and
    /// `o_1 .. o_L` where `o_L = <eos>`, cut to `max_output_len`.
    pub fn teacher_forcing(&self, answer: &str) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut target = self.vocab.encode(answer);
        if target.is_empty() {
            return Err(Error::Precondition("gold answer is empty after tokenization".into()));
        }
        target.truncate(self.config.max_output_len - 1);
        target.push(super::vocab::EOS);
        let mut dec_in = alloc::vec![PAD];
        dec_in.extend_from_slice(&target[..target.len() - 1]);
        Ok((dec_in, target))
    }

    pub fn pack(&self, example: &Example, mode: Mode) -> Result<FieldedInput> {
        pack_input(example, &self.vocab, mode, self.config.max_input_len)
    }

    /// Builds `L_gen`, `L_cls` and `(1 - σ)·L_gen + σ·L_cls` for one example
    /// on a single shared encoding. The classification branch is built only
    /// in E2E mode.
    pub fn example_loss(&self, g: &mut Graph, example: &Example, mode: Mode, sigma: f64) -> Result<ExampleLoss> {
        let input = self.pack(example, mode)?;
        let gold = example
            .gold_answers
            .first()
            .ok_or_else(|| Error::Precondition(format!("example {} has no gold answer", example.id)))?;
        let (dec_in, target) = self.teacher_forcing(gold)?;
        let enc = self.encode_graph(g, &input.ids)?;
        let logits = self.decoder_logits(g, enc, &dec_in)?;
        let gen = g.cross_entropy(logits, &target)?;
        if mode != Mode::E2e {
            return Ok(ExampleLoss { gen, cls: None, total: gen });
        }
        let targets = cls_targets(example, &input).ok_or_else(|| {
            Error::Precondition(format!(
                "example {} has no silver labels; run the label stage first",
                example.id
            ))
        })?;
        let cl = self.cls_logits(g, enc, &input.spans)?;
        let cls = g.cross_entropy(cl, &targets)?;
        let a = g.scale(gen, 1.0 - sigma);
        let b = g.scale(cls, sigma);
        let total = g.add(a, b)?;
        Ok(ExampleLoss {
            gen,
            cls: Some(cls),
            total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> E2eModel {
        let vocab = Vocab::build(["a b c d e f g"]);
        let config = ModelConfig {
            d_model: 8,
            d_k: 8,
            d_ff: 16,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            max_input_len: 16,
            max_output_len: 4,
            ..ModelConfig::default()
        };
        E2eModel::new(config, vocab, 7).unwrap()
    }

    #[test]
    fn encoder_shape_and_length_check() {
        let m = tiny();
        let mut g = Graph::new();
        let e = m.encode_graph(&mut g, &[4, 5, 6]).unwrap();
        assert_eq!(g.value(e).shape(), &[3, 8]);
        assert!(m.encode_graph(&mut g, &[4; 17]).is_err());
        assert!(m.encode_graph(&mut g, &[99]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(tiny(), tiny());
        let other = E2eModel::new(tiny().config, tiny().vocab, 8).unwrap();
        assert_ne!(tiny().params, other.params);
    }

    #[test]
    fn teacher_forcing_shift_and_cut() {
        let m = tiny();
        let (i, t) = m.teacher_forcing("a b").unwrap();
        assert_eq!(i, alloc::vec![PAD, m.vocab.id("a"), m.vocab.id("b")]);
        assert_eq!(t, alloc::vec![m.vocab.id("a"), m.vocab.id("b"), super::super::EOS]);
        let (_, t) = m.teacher_forcing("a b c d e").unwrap();
        assert_eq!(t.len(), 4);
        assert!(m.teacher_forcing("").is_err());
    }

    #[test]
    fn positions_alternate_sin_cos() {
        let p = positions(2, 4);
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((p.get(1, 0) - libm::sin(1.0)).abs() < 1e-15);
    }
}
