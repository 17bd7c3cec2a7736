//! The velocity network: a small transformer over latent-frame tokens.
//!
//! Input tokens are rows of the channel-concatenated conditioning tensor. Each
//! block runs temporal self-attention, windowed audio cross-attention,
//! reference cross-attention, and a feed-forward layer, all pre-normalized and
//! residual. The diffusion time enters as an additive embedding on every token.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::ConditioningBundle;
use crate::error::{Error, Result};
use crate::latent::C_LAT;
use crate::model::autodiff::{AttnMask, Grads, ParamId, ParamSet, Tape, Var};
use crate::tensor::{Mat, Real};
use crate::world::D_AUDIO;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub c_lat: usize,
    pub m_ch: usize,
    pub d_ref: usize,
    /// Latent frames on each side of a token that its audio cross-attention sees.
    pub audio_window: usize,
    pub ff_mult: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 128,
            heads: 4,
            c_lat: C_LAT,
            m_ch: 1,
            d_ref: 64,
            audio_window: 2,
            ff_mult: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if !self.width.is_multiple_of(2) {
            return Err(Error::Config("width must be even for sinusoidal embeddings".into()));
        }
        if self.c_lat == 0 || self.m_ch == 0 || self.d_ref == 0 || self.ff_mult == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.c_lat + self.m_ch
    }

    pub fn audio_token_dim(&self) -> usize {
        D_AUDIO * (2 * self.audio_window + 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    self_attn: Attn,
    audio_attn: Attn,
    ref_attn: Attn,
    ff_in: Linear,
    ff_out: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Embedders {
    time_1: Linear,
    time_2: Linear,
    audio: Linear,
    reference: Linear,
}

#[derive(Clone, Debug)]
struct Layout {
    input: Linear,
    output: Linear,
    embed: Option<Embedders>,
    blocks: Vec<Block>,
}

/// The trained field estimator `v_θ(x_t | c)`.
#[derive(Clone, Debug)]
pub struct VelocityModel {
    config: ModelConfig,
    params: ParamSet<f32>,
    layout: Layout,
}

struct Init<'a> {
    params: &'a mut ParamSet<f32>,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Mat::from_vec(
            fan_in,
            fan_out,
            (0..fan_in * fan_out)
                .map(|_| self.rng.random_range(-bound..bound) as f32)
                .collect(),
        );
        Linear {
            w: self.params.register(format!("{name}.weight"), w),
            b: self.params.register(format!("{name}.bias"), Mat::zeros(1, fan_out)),
        }
    }

    fn attn(&mut self, name: &str, width: usize, kv_dim: usize) -> Attn {
        Attn {
            q: self.linear(&format!("{name}.q"), width, width),
            k: self.linear(&format!("{name}.k"), kv_dim, width),
            v: self.linear(&format!("{name}.v"), kv_dim, width),
            o: self.linear(&format!("{name}.o"), width, width),
        }
    }
}

impl VelocityModel {
    /// Fresh model with seeded Xavier-uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut init = Init {
            params: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let w = config.width;
        let input = init.linear("input_proj", config.input_dim(), w);
        let embed = (config.depth > 0).then(|| Embedders {
            time_1: init.linear("time_embed.0", w, w),
            time_2: init.linear("time_embed.1", w, w),
            audio: init.linear("audio_embed", config.audio_token_dim(), w),
            reference: init.linear("ref_embed", config.c_lat, config.d_ref),
        });
        let blocks = (0..config.depth)
            .map(|i| Block {
                self_attn: init.attn(&format!("blocks.{i}.self_attn"), w, w),
                audio_attn: init.attn(&format!("blocks.{i}.audio_attn"), w, w),
                ref_attn: init.attn(&format!("blocks.{i}.ref_attn"), w, config.d_ref),
                ff_in: init.linear(&format!("blocks.{i}.ff.0"), w, w * config.ff_mult),
                ff_out: init.linear(&format!("blocks.{i}.ff.1"), w * config.ff_mult, w),
            })
            .collect();
        let output = init.linear("output_proj", w, config.c_lat);
        Ok(Self {
            config,
            params,
            layout: Layout {
                input,
                output,
                embed,
                blocks,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    /// Exact number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.scalar_count()
    }

    /// Replace parameters, checking names and shapes against this architecture.
    pub fn load_params(&mut self, params: ParamSet<f32>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameter blocks, architecture has {}",
                params.len(),
                self.params.len()
            )));
        }
        for ((n1, m1), (n2, m2)) in self.params.iter().zip(params.iter()) {
            if n1 != n2 || m1.shape() != m2.shape() {
                return Err(Error::Shape(format!(
                    "parameter {n2} {:?} does not match {n1} {:?}",
                    m2.shape(),
                    m1.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    fn check_bundle(&self, bundle: &ConditioningBundle) -> Result<()> {
        let c = &self.config;
        if bundle.z().cols() != c.input_dim() {
            return Err(Error::Shape(format!(
                "conditioning has {} channels, model expects {}",
                bundle.z().cols(),
                c.input_dim()
            )));
        }
        if c.depth > 0 && bundle.audio_tokens().cols() != c.audio_token_dim() {
            return Err(Error::Shape(format!(
                "audio tokens have {} channels, model expects {}",
                bundle.audio_tokens().cols(),
                c.audio_token_dim()
            )));
        }
        if bundle.references().cols() != c.c_lat {
            return Err(Error::Shape("reference width does not match c_lat".into()));
        }
        Ok(())
    }

    /// Velocity at every temporal position, `[len × c_lat]`.
    pub fn forward(&self, bundle: &ConditioningBundle, t: f32) -> Result<Mat<f32>> {
        self.check_bundle(bundle)?;
        if !t.is_finite() {
            return Err(Error::Numerical(format!("non-finite time {t}")));
        }
        let mut tape = Tape::new(&self.params);
        let out = build_forward(&self.config, &self.layout, &mut tape, bundle, t as f64);
        Ok(tape.value(out).clone())
    }

    /// Independent forward passes over a batch.
    pub fn forward_batch(&self, bundles: &[ConditioningBundle], t: &[f32]) -> Result<Vec<Mat<f32>>> {
        if bundles.len() != t.len() {
            return Err(Error::Shape("one time value per bundle required".into()));
        }
        bundles
            .iter()
            .zip(t)
            .map(|(b, &tt)| self.forward(b, tt))
            .collect()
    }

    /// Flow-matching loss on the noisy span and its parameter gradients.
    pub fn loss_and_grads(
        &self,
        bundle: &ConditioningBundle,
        t: f32,
        target: &Mat<f32>,
    ) -> Result<(f32, Grads<f32>)> {
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_grads(&self.params, bundle, t as f64, target, &mut grads)?;
        Ok((loss, grads))
    }

    /// Loss at arbitrary precision and parameters; gradients are added to `grads`.
    pub fn accumulate_grads<T: Real>(
        &self,
        params: &ParamSet<T>,
        bundle: &ConditioningBundle,
        t: f64,
        target: &Mat<f32>,
        grads: &mut Grads<T>,
    ) -> Result<T> {
        self.check_bundle(bundle)?;
        let span = bundle.noisy_span();
        if target.shape() != (span.len(), self.config.c_lat) {
            return Err(Error::Shape(format!(
                "target {:?} does not cover noisy span of {} frames",
                target.shape(),
                span.len()
            )));
        }
        let mut tape = Tape::new(params);
        let out = build_forward(&self.config, &self.layout, &mut tape, bundle, t);
        if !tape.value(out).all_finite() {
            return Err(Error::Numerical("non-finite velocity in forward pass".into()));
        }
        let loss = tape.mse_rows(out, target.cast(), span.start, span.end);
        tape.backward(loss, grads);
        Ok(tape.value(loss).get(0, 0))
    }

    /// Loss only, at arbitrary precision and parameters.
    pub fn loss_with<T: Real>(
        &self,
        params: &ParamSet<T>,
        bundle: &ConditioningBundle,
        t: f64,
        target: &Mat<f32>,
    ) -> Result<T> {
        self.check_bundle(bundle)?;
        let span = bundle.noisy_span();
        let mut tape = Tape::new(params);
        let out = build_forward(&self.config, &self.layout, &mut tape, bundle, t);
        let loss = tape.mse_rows(out, target.cast(), span.start, span.end);
        Ok(tape.value(loss).get(0, 0))
    }
}

/// Sinusoidal features of `pos` scaled into `width` channels.
fn sinusoid<T: Real>(pos: f64, width: usize) -> Vec<T> {
    let half = width / 2;
    let mut v = Vec::with_capacity(width);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        v.push(T::from_f64((pos * freq).sin()));
    }
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        v.push(T::from_f64((pos * freq).cos()));
    }
    v
}

fn positional<T: Real>(len: usize, width: usize) -> Mat<T> {
    let mut m = Mat::zeros(len, width);
    for i in 0..len {
        m.row_mut(i).copy_from_slice(&sinusoid(i as f64, width));
    }
    m
}

fn linear<T: Real>(tape: &mut Tape<'_, T>, x: Var, l: Linear) -> Var {
    tape.linear(x, l.w, l.b)
}

fn attention<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    kv: Var,
    a: Attn,
    heads: usize,
    mask: Option<&AttnMask>,
) -> Var {
    let q = linear(tape, x, a.q);
    let k = linear(tape, kv, a.k);
    let v = linear(tape, kv, a.v);
    let o = tape.attention(q, k, v, heads, mask);
    linear(tape, o, a.o)
}

fn build_forward<T: Real>(
    cfg: &ModelConfig,
    layout: &Layout,
    tape: &mut Tape<'_, T>,
    bundle: &ConditioningBundle,
    t: f64,
) -> Var {
    let len = bundle.len();
    let z = tape.leaf(bundle.z().cast());
    let mut h = linear(tape, z, layout.input);

    if let Some(embed) = layout.embed {
        let pos = tape.leaf(positional(len, cfg.width));
        h = tape.add(h, pos);

        let t_feat = tape.leaf(Mat::from_vec(1, cfg.width, sinusoid(1000.0 * t, cfg.width)));
        let te = linear(tape, t_feat, embed.time_1);
        let te = tape.silu(te);
        let te = linear(tape, te, embed.time_2);
        h = tape.add_row(h, te);

        let audio = tape.leaf(bundle.audio_tokens().cast());
        let audio = linear(tape, audio, embed.audio);
        // Without positions every key in the ±window band looks alike and the mouth blurs.
        let audio = tape.add(audio, pos);
        let refs = tape.leaf(bundle.references().cast());
        let refs = linear(tape, refs, embed.reference);

        let window = cfg.audio_window;
        let audio_mask = AttnMask::new(len, len, |i, j| i.abs_diff(j) <= window);

        for block in &layout.blocks {
            let n = tape.layer_norm(h);
            let a = attention(tape, n, n, block.self_attn, cfg.heads, None);
            h = tape.add(h, a);

            let n = tape.layer_norm(h);
            let a = attention(tape, n, audio, block.audio_attn, cfg.heads, Some(&audio_mask));
            h = tape.add(h, a);

            let n = tape.layer_norm(h);
            let a = attention(tape, n, refs, block.ref_attn, cfg.heads, None);
            h = tape.add(h, a);

            let n = tape.layer_norm(h);
            let f = linear(tape, n, block.ff_in);
            let f = tape.gelu(f);
            let f = linear(tape, f, block.ff_out);
            h = tape.add(h, f);
        }
        h = tape.layer_norm(h);
    }
    linear(tape, h, layout.output)
}
