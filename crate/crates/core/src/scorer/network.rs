//! Siamese difference encoder–decoder: a weight-shared encoder for the two
//! acquisitions, an optional auxiliary encoder, a residual fusion block over
//! the deep difference features and a skip-free upsampling decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{avg_pool2, avg_pool2_backward, sigmoid, silu, silu_grad, upsample2, upsample2_backward, Conv, Real, Tensor};
use crate::error::{Error, Result};
use crate::raster::RasterGrid;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerConfig {
    /// SAR channels per acquisition.
    pub input_channels: usize,
    pub aux_channels: usize,
    /// Encoder stage widths; each stage halves the resolution.
    pub widths: Vec<usize>,
    pub use_aux: bool,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            input_channels: 2,
            aux_channels: 0,
            widths: vec![16, 32, 64],
            use_aux: false,
        }
    }
}

impl ScorerConfig {
    pub fn with_aux(mut self, channels: usize) -> Self {
        self.use_aux = true;
        self.aux_channels = channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::InvalidArgument("input_channels must be positive".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidArgument("encoder widths must be nonempty and positive".into()));
        }
        if self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!("encoder widths must increase: {:?}", self.widths)));
        }
        if self.use_aux != (self.aux_channels > 0) {
            return Err(Error::InvalidArgument(format!(
                "use_aux = {} is inconsistent with aux_channels = {}",
                self.use_aux, self.aux_channels
            )));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// Patch sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.stages()
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    a: Conv,
    b: Conv,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<Block>,
    aux_encoder: Option<Vec<Block>>,
    fuse_proj: Conv,
    fuse_a: Conv,
    fuse_b: Conv,
    decoder: Vec<Conv>,
    head: Conv,
    len: usize,
}

impl Layout {
    fn new(cfg: &ScorerConfig) -> Self {
        let mut off = 0;
        let blocks = |cin: usize, off: &mut usize| {
            let mut c = cin;
            cfg.widths
                .iter()
                .map(|&w| {
                    let b = Block {
                        a: Conv::new(c, w, 3, off),
                        b: Conv::new(w, w, 3, off),
                    };
                    c = w;
                    b
                })
                .collect::<Vec<_>>()
        };
        let encoder = blocks(cfg.input_channels, &mut off);
        let aux_encoder = cfg.use_aux.then(|| blocks(cfg.aux_channels, &mut off));
        let deep = *cfg.widths.last().unwrap();
        let fused_in = if cfg.use_aux { 2 * deep } else { deep };
        let fuse_proj = Conv::new(fused_in, deep, 3, &mut off);
        let fuse_a = Conv::new(deep, deep, 3, &mut off);
        let fuse_b = Conv::new(deep, deep, 3, &mut off);
        let mut decoder = Vec::new();
        let mut c = deep;
        for i in (0..cfg.widths.len()).rev() {
            let out = cfg.widths[i.saturating_sub(1)];
            decoder.push(Conv::new(c, out, 3, &mut off));
            c = out;
        }
        let head = Conv::new(c, 1, 1, &mut off);
        Self {
            encoder,
            aux_encoder,
            fuse_proj,
            fuse_a,
            fuse_b,
            decoder,
            head,
            len: off,
        }
    }

    fn convs(&self) -> Vec<Conv> {
        let mut v: Vec<Conv> = self.encoder.iter().flat_map(|b| [b.a, b.b]).collect();
        if let Some(aux) = &self.aux_encoder {
            v.extend(aux.iter().flat_map(|b| [b.a, b.b]));
        }
        v.extend([self.fuse_proj, self.fuse_a, self.fuse_b]);
        v.extend(&self.decoder);
        v.push(self.head);
        v
    }
}

struct StageCache<T> {
    input: Tensor<T>,
    z1: Tensor<T>,
    a1: Tensor<T>,
    z2: Tensor<T>,
}

struct EncoderPass<T> {
    stages: Vec<StageCache<T>>,
    out: Tensor<T>,
}

fn activate<T: Real>(z: &Tensor<T>) -> Tensor<T> {
    z.map(silu)
}

fn through_activation<T: Real>(d: &Tensor<T>, z: &Tensor<T>) -> Tensor<T> {
    d.zip_map(z, |g, z| g * silu_grad(z))
}

fn encode<T: Real>(blocks: &[Block], params: &[T], x: &Tensor<T>) -> EncoderPass<T> {
    let mut cur = x.clone();
    let mut stages = Vec::with_capacity(blocks.len());
    for b in blocks {
        let z1 = b.a.forward(params, &cur);
        let a1 = activate(&z1);
        let z2 = b.b.forward(params, &a1);
        let next = avg_pool2(&activate(&z2));
        stages.push(StageCache { input: cur, z1, a1, z2 });
        cur = next;
    }
    EncoderPass { stages, out: cur }
}

fn encode_backward<T: Real>(blocks: &[Block], params: &[T], grads: &mut [T], pass: &EncoderPass<T>, d_out: Tensor<T>) {
    let mut d = d_out;
    for (b, st) in blocks.iter().zip(&pass.stages).rev() {
        let dz2 = through_activation(&avg_pool2_backward(&d), &st.z2);
        let dz1 = through_activation(&b.b.backward(params, grads, &st.a1, &dz2), &st.z1);
        d = b.a.backward(params, grads, &st.input, &dz1);
    }
}

/// Everything a backward pass needs, plus the intermediate maps worth inspecting.
pub struct Forward<T> {
    pre: EncoderPass<T>,
    post: EncoderPass<T>,
    aux: Option<EncoderPass<T>>,
    /// Deep post − pre features.
    pub diff: Tensor<T>,
    fused_in: Tensor<T>,
    zp: Tensor<T>,
    h: Tensor<T>,
    za: Tensor<T>,
    g: Tensor<T>,
    r: Tensor<T>,
    dec_inputs: Vec<Tensor<T>>,
    dec_z: Vec<Tensor<T>>,
    head_in: Tensor<T>,
    /// Pre-sigmoid outputs, one channel.
    pub logits: Tensor<T>,
}

impl<T: Real> Forward<T> {
    pub fn pre_features(&self) -> &Tensor<T> {
        &self.pre.out
    }

    pub fn post_features(&self) -> &Tensor<T> {
        &self.post.out
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.logits.data.iter().map(|&z| sigmoid(z)).collect()
    }
}

/// The change scorer with parameters of type `T`; [`ScorerModel`] is the
/// 32-bit instance used for training and inference.
#[derive(Debug, Clone)]
pub struct Scorer<T> {
    config: ScorerConfig,
    layout: Layout,
    params: Vec<T>,
}

pub type ScorerModel = Scorer<f32>;

impl<T: Real> Scorer<T> {
    /// Fan-in scaled uniform weights from a seeded stream, zero biases.
    pub fn new(config: ScorerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::zero(); layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = layout.convs();
        let last = convs.len() - 1;
        for (i, conv) in convs.iter().enumerate() {
            let gain = if i == last { 3.0 } else { 6.0 };
            let bound = (gain / conv.fan_in() as f64).sqrt();
            for p in &mut params[conv.w_off..conv.w_off + conv.weight_len()] {
                *p = T::real(rng.random_range(-bound..bound));
            }
        }
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ScorerConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(Error::SizeMismatch {
                expected: layout.len,
                actual: params.len(),
            });
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Index range of the shared temporal encoder parameters.
    pub fn encoder_params(&self) -> std::ops::Range<usize> {
        let first = self.layout.encoder[0].a.w_off;
        let last = self.layout.encoder.last().unwrap().b.param_range().end;
        first..last
    }

    /// Parameter index ranges, one per convolution, in network order.
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.layout.convs().iter().map(|c| c.param_range()).collect()
    }

    pub fn cast<U: Real>(&self) -> Scorer<U> {
        Scorer {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::real(p.as_f64())).collect(),
        }
    }

    fn check_input(&self, name: &str, x: &Tensor<T>, channels: usize, dims: (usize, usize)) -> Result<()> {
        if x.c != channels || (x.h, x.w) != dims {
            return Err(Error::Dimension(format!(
                "{name} input is {}x{}x{}, expected {channels}x{}x{}",
                x.c, x.h, x.w, dims.0, dims.1
            )));
        }
        Ok(())
    }

    pub fn forward(&self, pre: &Tensor<T>, post: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<Forward<T>> {
        let dims = (pre.h, pre.w);
        let m = self.config.size_multiple();
        if dims.0 == 0 || dims.1 == 0 || dims.0 % m != 0 || dims.1 % m != 0 {
            return Err(Error::Dimension(format!(
                "patch {}x{} is not a positive multiple of {m}",
                dims.0, dims.1
            )));
        }
        self.check_input("pre", pre, self.config.input_channels, dims)?;
        self.check_input("post", post, self.config.input_channels, dims)?;
        match (aux, self.config.use_aux) {
            (Some(a), true) => self.check_input("aux", a, self.config.aux_channels, dims)?,
            (None, false) => {}
            (Some(_), false) => return Err(Error::Dimension("model was built without an auxiliary branch".into())),
            (None, true) => return Err(Error::Dimension("model requires auxiliary input".into())),
        }

        let p = &self.params;
        let l = &self.layout;
        let pre_pass = encode(&l.encoder, p, pre);
        let post_pass = encode(&l.encoder, p, post);
        let aux_pass = aux.map(|a| encode(l.aux_encoder.as_ref().unwrap(), p, a));
        let diff = post_pass.out.zip_map(&pre_pass.out, |a, b| a - b);
        let fused_in = match &aux_pass {
            Some(ap) => Tensor::concat(&diff, &ap.out),
            None => diff.clone(),
        };
        let zp = l.fuse_proj.forward(p, &fused_in);
        let h = activate(&zp);
        let za = l.fuse_a.forward(p, &h);
        let g = activate(&za);
        let zb = l.fuse_b.forward(p, &g);
        let r = h.zip_map(&zb, |a, b| a + b);
        let mut x = activate(&r);
        let mut dec_inputs = Vec::with_capacity(l.decoder.len());
        let mut dec_z = Vec::with_capacity(l.decoder.len());
        for conv in &l.decoder {
            let up = upsample2(&x);
            let z = conv.forward(p, &up);
            x = activate(&z);
            dec_inputs.push(up);
            dec_z.push(z);
        }
        let logits = l.head.forward(p, &x);
        Ok(Forward {
            pre: pre_pass,
            post: post_pass,
            aux: aux_pass,
            diff,
            fused_in,
            zp,
            h,
            za,
            g,
            r,
            dec_inputs,
            dec_z,
            head_in: x,
            logits,
        })
    }

    /// Accumulates into `grads` the parameter gradient for an upstream
    /// gradient `d_logits` on the output logits.
    pub fn backward(&self, fwd: &Forward<T>, d_logits: &Tensor<T>, grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len());
        let p = &self.params;
        let l = &self.layout;
        let mut dx = l.head.backward(p, grads, &fwd.head_in, d_logits);
        for ((conv, up), z) in l.decoder.iter().zip(&fwd.dec_inputs).zip(&fwd.dec_z).rev() {
            let dz = through_activation(&dx, z);
            dx = upsample2_backward(&conv.backward(p, grads, up, &dz));
        }
        let dr = through_activation(&dx, &fwd.r);
        let dg = l.fuse_b.backward(p, grads, &fwd.g, &dr);
        let dza = through_activation(&dg, &fwd.za);
        let dh = l.fuse_a.backward(p, grads, &fwd.h, &dza).zip_map(&dr, |a, b| a + b);
        let dzp = through_activation(&dh, &fwd.zp);
        let d_fused = l.fuse_proj.backward(p, grads, &fwd.fused_in, &dzp);
        let (d_diff, d_aux) = match &fwd.aux {
            Some(_) => {
                let (a, b) = d_fused.split(fwd.diff.c);
                (a, Some(b))
            }
            None => (d_fused, None),
        };
        if let (Some(pass), Some(d)) = (&fwd.aux, d_aux) {
            encode_backward(l.aux_encoder.as_ref().unwrap(), p, grads, pass, d);
        }
        encode_backward(&l.encoder, p, grads, &fwd.post, d_diff.clone());
        encode_backward(&l.encoder, p, grads, &fwd.pre, d_diff.map(|v| -v));
    }

    /// Change probabilities for one patch, row-major.
    pub fn predict(&self, pre: &RasterGrid, post: &RasterGrid, aux: Option<&RasterGrid>) -> Result<Vec<f32>> {
        let fwd = self.forward(&grid_tensor(pre), &grid_tensor(post), aux.map(grid_tensor).as_ref())?;
        Ok(fwd.probabilities().iter().map(|p| p.as_f64() as f32).collect())
    }
}

pub fn grid_tensor<T: Real>(grid: &RasterGrid) -> Tensor<T> {
    Tensor::from_vec(
        grid.channels(),
        grid.height(),
        grid.width(),
        grid.data().iter().map(|&v| T::real(v as f64)).collect(),
    )
}
