//! Shared Transformer encoder with text, image and audio front-ends.
//!
//! Every modality is turned into a packed sequence of `h`-dimensional rows
//! with a CLS row at position 0. The Transformer stack and final layer norm
//! are one parameter set used by all modalities; only the front-ends
//! (token table, patch projections, CLS vectors, positional tables) are
//! modality specific. The representation of an input is the final-layer row
//! at its CLS position.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::rng::{normal, StreamKey};
use crate::tensor::dropout_mask;
use crate::{Error, Result, Tensor};

pub const CLS_TOKEN: u32 = 0;
pub const PAD_TOKEN: u32 = 1;
/// First id available to words.
pub const FIRST_WORD_TOKEN: u32 = 2;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub dropout_rate: f64,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    /// Image height and width in pixels.
    pub image_size: (usize, usize),
    /// Patch rows and columns; the patch size is `image_size / patch_grid`.
    pub patch_grid: (usize, usize),
    /// Spectrogram time frames.
    pub spectrogram_frames: usize,
    /// Spectrogram frequency bins.
    pub spectrogram_bins: usize,
    /// Audio block size in (frames, bins). Trailing frames or bins that do
    /// not fill a whole block are dropped.
    pub audio_block: (usize, usize),
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    /// Laptop-sized default.
    pub fn desk() -> Self {
        EncoderConfig {
            num_layers: 2,
            num_heads: 4,
            hidden_dim: 64,
            ff_dim: 128,
            dropout_rate: 0.1,
            max_seq_len: 64,
            vocab_size: 512,
            image_size: (16, 16),
            patch_grid: (4, 4),
            spectrogram_frames: 32,
            spectrogram_bins: 8,
            audio_block: (8, 8),
            layer_norm_eps: 1e-5,
        }
    }

    /// BERT-base sized stack with ViT-B/16 image patches (224×224 in 16-pixel
    /// patches) and 1024×128 spectrograms cut into 24×24 blocks. Used for
    /// shape arithmetic only; never instantiate weights at this size.
    pub fn full_scale() -> Self {
        EncoderConfig {
            num_layers: 12,
            num_heads: 12,
            hidden_dim: 768,
            ff_dim: 3072,
            dropout_rate: 0.1,
            max_seq_len: 512,
            vocab_size: 30522,
            image_size: (224, 224),
            patch_grid: (14, 14),
            spectrogram_frames: 1024,
            spectrogram_bins: 128,
            audio_block: (24, 24),
            layer_norm_eps: 1e-12,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Pixel size of one patch, `(height, width)`.
    pub fn patch_size(&self) -> Result<(usize, usize)> {
        let (h, w) = self.image_size;
        let (r, c) = self.patch_grid;
        if r == 0 || c == 0 || h % r != 0 || w % c != 0 {
            return Err(Error::Patching(format!(
                "{h}×{w} image does not divide into a {r}×{c} patch grid"
            )));
        }
        Ok((h / r, w / c))
    }

    /// Number of audio blocks along (time, frequency).
    pub fn audio_grid(&self) -> Result<(usize, usize)> {
        let (bt, bf) = self.audio_block;
        if bt == 0 || bf == 0 {
            return Err(Error::Patching("audio block dimensions must be positive".into()));
        }
        let grid = (self.spectrogram_frames / bt, self.spectrogram_bins / bf);
        if grid.0 == 0 || grid.1 == 0 {
            return Err(Error::Patching(format!(
                "{}×{} spectrogram is smaller than a {bt}×{bf} block",
                self.spectrogram_frames, self.spectrogram_bins
            )));
        }
        Ok(grid)
    }

    /// Sequence length (CLS included) produced by the image front-end.
    pub fn image_seq_len(&self) -> Result<usize> {
        self.patch_size()?;
        Ok(self.patch_grid.0 * self.patch_grid.1 + 1)
    }

    /// Sequence length (CLS included) produced by the audio front-end.
    pub fn audio_seq_len(&self) -> Result<usize> {
        let (nt, nf) = self.audio_grid()?;
        Ok(nt * nf + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_dim", self.hidden_dim),
            ("ff_dim", self.ff_dim),
            ("max_seq_len", self.max_seq_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.hidden_dim < 2 {
            return Err(Error::Config("hidden_dim must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.vocab_size <= FIRST_WORD_TOKEN as usize {
            return Err(Error::Config("vocab_size leaves no room for words".into()));
        }
        let longest = self.image_seq_len()?.max(self.audio_seq_len()?);
        if longest > self.max_seq_len {
            return Err(Error::Config(format!(
                "max_seq_len {} is shorter than the {longest}-row modal sequences",
                self.max_seq_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Modality {
    Text,
    Image,
    Audio,
}

/// Token sequences padded to a common length. Position 0 of every sequence
/// holds [`CLS_TOKEN`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    token_ids: Vec<u32>,
    seq_len: usize,
    lengths: Vec<usize>,
}

impl TokenBatch {
    /// Prepends CLS to each sentence and pads with [`PAD_TOKEN`].
    pub fn from_sentences<S: AsRef<[u32]>>(sentences: &[S]) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("empty token batch".into()));
        }
        let seq_len = 1 + sentences.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut token_ids = Vec::with_capacity(seq_len * sentences.len());
        let mut lengths = Vec::with_capacity(sentences.len());
        for s in sentences {
            let s = s.as_ref();
            token_ids.push(CLS_TOKEN);
            token_ids.extend_from_slice(s);
            token_ids.extend(core::iter::repeat(PAD_TOKEN).take(seq_len - 1 - s.len()));
            lengths.push(s.len() + 1);
        }
        Ok(TokenBatch {
            token_ids,
            seq_len,
            lengths,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Attended length of each sequence, CLS included.
    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn sequence(&self, b: usize) -> &[u32] {
        &self.token_ids[b * self.seq_len..b * self.seq_len + self.lengths[b]]
    }
}

/// Images as `B × 3 × H × W` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    pub pixels: Tensor,
}

/// Spectrograms as `B × T × F`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramBatch {
    pub frames: Tensor,
}

/// One embedding per input, `B × h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub vectors: Tensor,
}

/// Embedded inputs on a tape: packed rows plus `(start, len)` per sequence.
#[derive(Clone, Debug)]
pub struct Features {
    pub rows: Var,
    pub seqs: Vec<(usize, usize)>,
}

impl Features {
    pub fn batch_size(&self) -> usize {
        self.seqs.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout off.
    Eval,
    /// Dropout on, every mask derived from this seed.
    Train { dropout_seed: u64 },
}

#[derive(Clone, Debug)]
struct LayerIds {
    ln1: (ParamId, ParamId),
    qkv: (ParamId, ParamId),
    out: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
struct FrontEnd {
    // Text: token table; image/audio: projection weight.
    table: ParamId,
    proj_bias: Option<ParamId>,
    cls: Option<ParamId>,
    pos: ParamId,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    store: ParamStore,
    text: FrontEnd,
    image: FrontEnd,
    audio: FrontEnd,
    layers: Vec<LayerIds>,
    final_ln: (ParamId, ParamId),
}

enum Init {
    Normal(f64),
    Xavier,
    Zeros,
    Ones,
}

struct Builder<'a> {
    store: ParamStore,
    key: StreamKey,
    layout: Option<&'a ParamStore>,
}

impl Builder<'_> {
    fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if let Some(src) = self.layout {
            let id = src
                .id(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
            let value = src.get(id).value();
            if value.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    left: shape.to_vec(),
                    right: value.shape().to_vec(),
                });
            }
            return self.store.add(name, value.clone());
        }
        let n: usize = shape.iter().product();
        let mut rng = self.key.child(name).rng();
        let data: Vec<f64> = match init {
            Init::Normal(sd) => (0..n).map(|_| sd * normal(&mut rng)).collect(),
            Init::Xavier => {
                let bound = libm::sqrt(6.0 / (shape[0] + shape[1]) as f64);
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        self.store.add(name, Tensor::new(shape.to_vec(), data)?)
    }
}

impl Encoder {
    /// Fresh encoder; initialization is a pure function of `(config, seed)`.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        Self::build(config, StreamKey::root(seed).child("init"), None)
    }

    /// Rebuilds an encoder from stored parameters, checking that every
    /// expected parameter is present with the expected shape.
    pub fn from_params(config: EncoderConfig, params: &ParamStore) -> Result<Self> {
        let enc = Self::build(config, StreamKey::root(0), Some(params))?;
        if enc.store.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, found {}",
                enc.store.len(),
                params.len()
            )));
        }
        Ok(enc)
    }

    fn build(config: EncoderConfig, key: StreamKey, layout: Option<&ParamStore>) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let mut b = Builder {
            store: ParamStore::new(),
            key,
            layout,
        };
        let text = FrontEnd {
            table: b.add("text.token_embedding", &[config.vocab_size, h], Init::Normal(0.02))?,
            proj_bias: None,
            cls: None,
            pos: b.add("text.position_embedding", &[config.max_seq_len, h], Init::Normal(0.02))?,
        };
        let (ph, pw) = config.patch_size()?;
        let image = FrontEnd {
            table: b.add("image.patch_proj.weight", &[3 * ph * pw, h], Init::Xavier)?,
            proj_bias: Some(b.add("image.patch_proj.bias", &[h], Init::Zeros)?),
            cls: Some(b.add("image.cls", &[1, h], Init::Normal(0.02))?),
            pos: b.add(
                "image.position_embedding",
                &[config.image_seq_len()?, h],
                Init::Normal(0.02),
            )?,
        };
        let (bt, bf) = config.audio_block;
        let audio = FrontEnd {
            table: b.add("audio.block_proj.weight", &[bt * bf, h], Init::Xavier)?,
            proj_bias: Some(b.add("audio.block_proj.bias", &[h], Init::Zeros)?),
            cls: Some(b.add("audio.cls", &[1, h], Init::Normal(0.02))?),
            pos: b.add(
                "audio.position_embedding",
                &[config.audio_seq_len()?, h],
                Init::Normal(0.02),
            )?,
        };
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let p = |s: &str| -> String { format!("encoder.layer{l}.{s}") };
            let f = config.ff_dim;
            layers.push(LayerIds {
                ln1: (
                    b.add(&p("ln1.gain"), &[h], Init::Ones)?,
                    b.add(&p("ln1.bias"), &[h], Init::Zeros)?,
                ),
                qkv: (
                    b.add(&p("attn.qkv.weight"), &[h, 3 * h], Init::Xavier)?,
                    b.add(&p("attn.qkv.bias"), &[3 * h], Init::Zeros)?,
                ),
                out: (
                    b.add(&p("attn.out.weight"), &[h, h], Init::Xavier)?,
                    b.add(&p("attn.out.bias"), &[h], Init::Zeros)?,
                ),
                ln2: (
                    b.add(&p("ln2.gain"), &[h], Init::Ones)?,
                    b.add(&p("ln2.bias"), &[h], Init::Zeros)?,
                ),
                ff1: (
                    b.add(&p("ff.in.weight"), &[h, f], Init::Xavier)?,
                    b.add(&p("ff.in.bias"), &[f], Init::Zeros)?,
                ),
                ff2: (
                    b.add(&p("ff.out.weight"), &[f, h], Init::Xavier)?,
                    b.add(&p("ff.out.bias"), &[h], Init::Zeros)?,
                ),
            });
        }
        let final_ln = (
            b.add("encoder.final_ln.gain", &[h], Init::Ones)?,
            b.add("encoder.final_ln.bias", &[h], Init::Zeros)?,
        );
        Ok(Encoder {
            config,
            store: b.store,
            text,
            image,
            audio,
            layers,
            final_ln,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Parameters of the Transformer stack, shared by every modality.
    pub fn shared_param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            for (a, b) in [l.ln1, l.qkv, l.out, l.ln2, l.ff1, l.ff2] {
                ids.push(a);
                ids.push(b);
            }
        }
        ids.push(self.final_ln.0);
        ids.push(self.final_ln.1);
        ids
    }

    pub fn front_end_param_ids(&self, modality: Modality) -> Vec<ParamId> {
        let fe = self.front_end(modality);
        let mut ids = vec![fe.table];
        ids.extend(fe.proj_bias);
        ids.extend(fe.cls);
        ids.push(fe.pos);
        ids
    }

    /// Everything a forward pass over `modality` touches.
    pub fn param_ids_for(&self, modality: Modality) -> Vec<ParamId> {
        let mut ids = self.front_end_param_ids(modality);
        ids.extend(self.shared_param_ids());
        ids
    }

    fn front_end(&self, modality: Modality) -> &FrontEnd {
        match modality {
            Modality::Text => &self.text,
            Modality::Image => &self.image,
            Modality::Audio => &self.audio,
        }
    }

    /// Token plus learned position embeddings; CLS sits at position 0.
    pub fn embed_text(&self, tape: &mut Tape, batch: &TokenBatch) -> Result<Features> {
        if batch.seq_len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: batch.seq_len(),
                max: self.config.max_seq_len,
            });
        }
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut seqs = Vec::with_capacity(batch.batch_size());
        for b in 0..batch.batch_size() {
            let seq = batch.sequence(b);
            if seq.first() != Some(&CLS_TOKEN) {
                return Err(Error::InvalidArgument(format!(
                    "sequence {b} does not start with the CLS token"
                )));
            }
            seqs.push((ids.len(), seq.len()));
            for (p, &tok) in seq.iter().enumerate() {
                if tok as usize >= self.config.vocab_size {
                    return Err(Error::Vocabulary {
                        token: tok,
                        vocab_size: self.config.vocab_size,
                    });
                }
                ids.push(tok as usize);
                positions.push(p);
            }
        }
        let table = tape.param(&self.store, self.text.table);
        let pos = tape.param(&self.store, self.text.pos);
        let tok = tape.gather_rows(table, &ids)?;
        let pe = tape.gather_rows(pos, &positions)?;
        Ok(Features {
            rows: tape.add(tok, pe)?,
            seqs,
        })
    }

    /// Non-overlapping patches, linearly projected, with a learned CLS row
    /// and learned positions.
    pub fn embed_image(&self, tape: &mut Tape, batch: &PatchBatch) -> Result<Features> {
        let patches = patchify_image(&self.config, &batch.pixels)?;
        self.embed_blocks(tape, Modality::Image, patches, self.config.image_seq_len()? - 1)
    }

    /// Non-overlapping time-frequency blocks, projected like image patches.
    pub fn embed_audio(&self, tape: &mut Tape, batch: &SpectrogramBatch) -> Result<Features> {
        let blocks = blockify_spectrogram(&self.config, &batch.frames)?;
        self.embed_blocks(tape, Modality::Audio, blocks, self.config.audio_seq_len()? - 1)
    }

    fn embed_blocks(
        &self,
        tape: &mut Tape,
        modality: Modality,
        blocks: Tensor,
        per_example: usize,
    ) -> Result<Features> {
        let fe = self.front_end(modality);
        let batch = blocks.shape()[0] / per_example;
        let w = tape.param(&self.store, fe.table);
        let b = fe.proj_bias.map(|id| tape.param(&self.store, id));
        let x = tape.constant(blocks);
        let proj = tape.linear(x, w, b)?;
        let cls = tape.param(&self.store, fe.cls.expect("modal front-end has CLS"));
        let stacked = tape.concat_rows(&[cls, proj])?;
        let seq_len = per_example + 1;
        let mut order = Vec::with_capacity(batch * seq_len);
        let mut positions = Vec::with_capacity(batch * seq_len);
        let mut seqs = Vec::with_capacity(batch);
        for e in 0..batch {
            seqs.push((e * seq_len, seq_len));
            order.push(0);
            positions.push(0);
            for p in 0..per_example {
                order.push(1 + e * per_example + p);
                positions.push(p + 1);
            }
        }
        let rows = tape.gather_rows(stacked, &order)?;
        let pos = tape.param(&self.store, fe.pos);
        let pe = tape.gather_rows(pos, &positions)?;
        Ok(Features {
            rows: tape.add(rows, pe)?,
            seqs,
        })
    }

    fn dropout(&self, tape: &mut Tape, x: Var, mode: Mode, site: u64) -> Result<Var> {
        match mode {
            Mode::Train { dropout_seed } if self.config.dropout_rate > 0.0 => {
                let seed = StreamKey::root(dropout_seed).child("encoder-dropout").at(site).value();
                let mask = dropout_mask(tape.value(x).shape(), self.config.dropout_rate, seed)?;
                tape.mul_const(x, mask)
            }
            _ => Ok(x),
        }
    }

    /// Pre-norm Transformer stack; returns the CLS row of each sequence.
    pub fn encode(&self, tape: &mut Tape, features: &Features, mode: Mode) -> Result<Var> {
        if let Some(&(_, len)) = features.seqs.iter().find(|s| s.1 > self.config.max_seq_len) {
            return Err(Error::SequenceTooLong {
                len,
                max: self.config.max_seq_len,
            });
        }
        let eps = self.config.layer_norm_eps;
        let cls_rows: Vec<usize> = features.seqs.iter().map(|s| s.0).collect();
        let cls_seqs: Vec<(usize, usize)> = (0..cls_rows.len()).map(|i| (i, 1)).collect();
        let mut x = self.dropout(tape, features.rows, mode, 0)?;
        let mut seqs = features.seqs.clone();
        let last = self.layers.len() - 1;
        for (l, ids) in self.layers.iter().enumerate() {
            let site = 1 + 2 * l as u64;
            let g = tape.param(&self.store, ids.ln1.0);
            let b = tape.param(&self.store, ids.ln1.1);
            let a = tape.layer_norm(x, g, b, eps)?;
            let w = tape.param(&self.store, ids.qkv.0);
            let bq = tape.param(&self.store, ids.qkv.1);
            let qkv = tape.linear(a, w, Some(bq))?;
            let mut att = tape.attention(qkv, &seqs, self.config.num_heads)?;
            if l == last {
                // Only the CLS rows of the last layer are ever read.
                att = tape.gather_rows(att, &cls_rows)?;
                x = tape.gather_rows(x, &cls_rows)?;
                seqs = cls_seqs.clone();
            }
            let w = tape.param(&self.store, ids.out.0);
            let bo = tape.param(&self.store, ids.out.1);
            let o = tape.linear(att, w, Some(bo))?;
            let o = self.dropout(tape, o, mode, site)?;
            x = tape.add(x, o)?;

            let g = tape.param(&self.store, ids.ln2.0);
            let b = tape.param(&self.store, ids.ln2.1);
            let a = tape.layer_norm(x, g, b, eps)?;
            let w = tape.param(&self.store, ids.ff1.0);
            let b1 = tape.param(&self.store, ids.ff1.1);
            let f = tape.linear(a, w, Some(b1))?;
            let f = tape.gelu(f);
            let w = tape.param(&self.store, ids.ff2.0);
            let b2 = tape.param(&self.store, ids.ff2.1);
            let f = tape.linear(f, w, Some(b2))?;
            let f = self.dropout(tape, f, mode, site + 1)?;
            x = tape.add(x, f)?;
        }
        let g = tape.param(&self.store, self.final_ln.0);
        let b = tape.param(&self.store, self.final_ln.1);
        tape.layer_norm(x, g, b, eps)
    }

    /// Two encodings of the same features under independent dropout masks.
    pub fn encode_twice(
        &self,
        tape: &mut Tape,
        features: &Features,
        seed_a: u64,
        seed_b: u64,
    ) -> Result<(Var, Var)> {
        if seed_a == seed_b {
            return Err(Error::InvalidArgument(
                "encode_twice needs two different dropout seeds".into(),
            ));
        }
        let a = self.encode(tape, features, Mode::Train { dropout_seed: seed_a })?;
        let b = self.encode(tape, features, Mode::Train { dropout_seed: seed_b })?;
        Ok((a, b))
    }

    /// Eval-mode sentence embeddings, processed in chunks of `chunk`.
    pub fn represent_text<S: AsRef<[u32]>>(&self, sentences: &[S], chunk: usize) -> Result<Representation> {
        let mut data = Vec::with_capacity(sentences.len() * self.config.hidden_dim);
        for part in sentences.chunks(chunk.max(1)) {
            let mut tape = Tape::new();
            let batch = TokenBatch::from_sentences(part)?;
            let feats = self.embed_text(&mut tape, &batch)?;
            let cls = self.encode(&mut tape, &feats, Mode::Eval)?;
            data.extend_from_slice(tape.value(cls).data());
        }
        Ok(Representation {
            vectors: Tensor::new(vec![sentences.len(), self.config.hidden_dim], data)?,
        })
    }
}

/// Flattens `B×3×H×W` pixels into `(B·P) × (3·ph·pw)` patch rows, patches in
/// row-major grid order, each patch channel-major.
pub fn patchify_image(config: &EncoderConfig, pixels: &Tensor) -> Result<Tensor> {
    let (ph, pw) = config.patch_size()?;
    let (b, c, h, w) = match pixels.shape() {
        &[b, c, h, w] => (b, c, h, w),
        s => return Err(Error::Patching(format!("expected B×3×H×W pixels, got {s:?}"))),
    };
    if c != 3 || (h, w) != config.image_size {
        return Err(Error::Patching(format!(
            "expected 3×{}×{} images, got {c}×{h}×{w}",
            config.image_size.0, config.image_size.1
        )));
    }
    let (rows, cols) = config.patch_grid;
    let dim = 3 * ph * pw;
    let src = pixels.data();
    let mut out = Vec::with_capacity(b * rows * cols * dim);
    for e in 0..b {
        for r in 0..rows {
            for q in 0..cols {
                for ch in 0..3 {
                    for y in 0..ph {
                        let start = ((e * 3 + ch) * h + r * ph + y) * w + q * pw;
                        out.extend_from_slice(&src[start..start + pw]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![b * rows * cols, dim], out)
}

/// Cuts `B×T×F` spectrograms into `(B·S) × (bt·bf)` block rows, time-major.
pub fn blockify_spectrogram(config: &EncoderConfig, frames: &Tensor) -> Result<Tensor> {
    let (nt, nf) = config.audio_grid()?;
    let (bt, bf) = config.audio_block;
    let (b, t, f) = match frames.shape() {
        &[b, t, f] => (b, t, f),
        s => return Err(Error::Patching(format!("expected B×T×F frames, got {s:?}"))),
    };
    if (t, f) != (config.spectrogram_frames, config.spectrogram_bins) {
        return Err(Error::Patching(format!(
            "expected {}×{} spectrograms, got {t}×{f}",
            config.spectrogram_frames, config.spectrogram_bins
        )));
    }
    let src = frames.data();
    let mut out = Vec::with_capacity(b * nt * nf * bt * bf);
    for e in 0..b {
        for i in 0..nt {
            for j in 0..nf {
                for y in 0..bt {
                    let start = (e * t + i * bt + y) * f + j * bf;
                    out.extend_from_slice(&src[start..start + bf]);
                }
            }
        }
    }
    Tensor::new(vec![b * nt * nf, bt * bf], out)
}
