//! Convolutional feature extractor with a projection head.
//!
//! conv3×3 (pad 1, stride s) → ReLU, repeated per block; global average
//! pool; dense → feature vector; ReLU → dense → projection; L2 normalize.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ops::NORM_EPS;
use super::params::{Param, ParamSet, ParamSpec};
use super::Scalar;
use crate::error::{Result, SrhError};

/// Samples per unit of parallel work. Fixed so gradient reduction order,
/// and hence the result, does not depend on the thread count.
pub const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureExtractorConfig {
    /// Side of the square network input, after downsampling the patch.
    pub input_side: usize,
    pub in_channels: usize,
    pub blocks: Vec<ConvBlock>,
    pub feature_dim: usize,
    pub projection_dim: usize,
}

impl Default for FeatureExtractorConfig {
    fn default() -> Self {
        Self {
            input_side: 60,
            in_channels: 3,
            blocks: [16, 32, 64, 128]
                .into_iter()
                .map(|c| ConvBlock {
                    out_channels: c,
                    stride: 2,
                })
                .collect(),
            feature_dim: 128,
            projection_dim: 32,
        }
    }
}

pub fn conv_out_side(input: usize, stride: usize) -> usize {
    (input - 1) / stride + 1
}

impl FeatureExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.projection_dim < 2 || self.feature_dim < self.projection_dim {
            return Err(SrhError::Contract(format!(
                "need feature_dim >= projection_dim >= 2, got {} and {}",
                self.feature_dim, self.projection_dim
            )));
        }
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.stride == 0 || b.out_channels == 0) {
            return Err(SrhError::Contract("conv blocks need positive channels and stride".into()));
        }
        if self.input_side == 0 || self.in_channels == 0 {
            return Err(SrhError::Contract("input side and channels must be positive".into()));
        }
        Ok(())
    }

    /// (in_channels, out_channels, in_side, out_side, stride) per block.
    fn layer_dims(&self) -> Vec<(usize, usize, usize, usize, usize)> {
        let mut dims = Vec::with_capacity(self.blocks.len());
        let (mut c, mut s) = (self.in_channels, self.input_side);
        for b in &self.blocks {
            let o = conv_out_side(s, b.stride);
            dims.push((c, b.out_channels, s, o, b.stride));
            c = b.out_channels;
            s = o;
        }
        dims
    }

    fn pooled_channels(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.out_channels)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for (i, (cin, cout, ..)) in self.layer_dims().into_iter().enumerate() {
            specs.push(ParamSpec {
                name: format!("conv{i}.weight"),
                shape: vec![cout, cin, 3, 3],
            });
            specs.push(ParamSpec {
                name: format!("conv{i}.bias"),
                shape: vec![cout],
            });
        }
        let (c, d, p) = (self.pooled_channels(), self.feature_dim, self.projection_dim);
        specs.extend([
            ParamSpec { name: "feature.weight".into(), shape: vec![d, c] },
            ParamSpec { name: "feature.bias".into(), shape: vec![d] },
            ParamSpec { name: "projection.weight".into(), shape: vec![p, d] },
            ParamSpec { name: "projection.bias".into(), shape: vec![p] },
        ]);
        specs
    }
}

/// Batch of images, NCHW.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<F> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<F>,
    /// Gradient with respect to `data`, when requested.
    pub grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor4<F> {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(SrhError::Shape(format!(
                "tensor {n}x{c}x{h}x{w} needs {} values, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data, grad: None })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![F::zero(); n * c * h * w], grad: None }
    }

    pub fn sample(&self, i: usize) -> &[F] {
        let s = self.c * self.h * self.w;
        &self.data[i * s..(i + 1) * s]
    }
}

/// Fan-in scaled uniform initialization; biases start at zero.
pub fn init_params<F: Scalar>(specs: &[ParamSpec], seed: u64) -> ParamSet<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParamSet {
        tensors: specs
            .iter()
            .map(|s| {
                let data = if s.name.ends_with(".bias") {
                    vec![F::zero(); s.len()]
                } else {
                    let fan_in: usize = s.shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..s.len())
                        .map(|_| F::from_f64_lossy(rng.random_range(-bound..bound)))
                        .collect()
                };
                Param { spec: s.clone(), data }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<F> {
    pub config: FeatureExtractorConfig,
    pub params: ParamSet<F>,
}

/// Features (N×D) and unit-norm projections (N×d), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorOutput<F> {
    pub features: Vec<F>,
    pub projections: Vec<F>,
}

#[derive(Debug, Clone)]
struct SampleCache<F> {
    cols: Vec<Vec<F>>,
    acts: Vec<Vec<F>>,
    pooled: Vec<F>,
    features: Vec<F>,
    hidden: Vec<F>,
    proj_norm: F,
    z: Vec<F>,
}

fn im2col<F: Scalar>(x: &[F], c: usize, side: usize, stride: usize, out: usize, cols: &mut [F]) {
    let p = out * out;
    for ci in 0..c {
        let plane = &x[ci * side * side..(ci + 1) * side * side];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * p..(ci * 9 + ky * 3 + kx + 1) * p];
                for oy in 0..out {
                    let iy = (oy * stride + ky) as isize - 1;
                    let dst = &mut row[oy * out..(oy + 1) * out];
                    if iy < 0 || iy >= side as isize {
                        dst.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * side..(iy as usize + 1) * side];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        *d = if ix < 0 || ix >= side as isize { F::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<F: Scalar>(dcols: &[F], c: usize, side: usize, stride: usize, out: usize, dx: &mut [F]) {
    let p = out * out;
    for ci in 0..c {
        let plane = &mut dx[ci * side * side..(ci + 1) * side * side];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcols[(ci * 9 + ky * 3 + kx) * p..(ci * 9 + ky * 3 + kx + 1) * p];
                for oy in 0..out {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    for ox in 0..out {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < side as isize {
                            plane[iy as usize * side + ix as usize] += row[oy * out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = W x + b` for a row-major `W` of shape (out, in).
fn dense<F: Scalar>(w: &[F], b: &[F], x: &[F]) -> Vec<F> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| bias + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(&a, &v)| a * v).sum::<F>())
        .collect()
}

fn idx(specs_len: usize, layers: usize) -> (usize, usize) {
    // (feature weight index, projection weight index)
    debug_assert_eq!(specs_len, 2 * layers + 4);
    (2 * layers, 2 * layers + 2)
}

impl<F: Scalar> FeatureExtractor<F> {
    pub fn new(config: FeatureExtractorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.param_specs(), seed);
        Ok(Self { config, params })
    }

    pub fn from_params(config: FeatureExtractorConfig, params: ParamSet<F>) -> Result<Self> {
        config.validate()?;
        if params.specs() != config.param_specs() {
            return Err(SrhError::Shape("parameters do not match extractor config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn cast<G: Scalar>(&self) -> FeatureExtractor<G> {
        FeatureExtractor { config: self.config.clone(), params: self.params.cast() }
    }

    fn check_input(&self, batch: &Tensor4<F>) -> Result<()> {
        let c = &self.config;
        if batch.c != c.in_channels || batch.h != c.input_side || batch.w != c.input_side {
            return Err(SrhError::Shape(format!(
                "expected N x {} x {} x {} input, got N x {} x {} x {}",
                c.in_channels, c.input_side, c.input_side, batch.c, batch.h, batch.w
            )));
        }
        Ok(())
    }

    fn forward_sample(&self, x: &[F], normalize: bool) -> Result<SampleCache<F>> {
        let dims = self.config.layer_dims();
        let t = &self.params.tensors;
        let mut cols_all = Vec::with_capacity(dims.len());
        let mut acts = Vec::with_capacity(dims.len());
        let mut input: &[F] = x;
        for (l, &(cin, cout, side, out, stride)) in dims.iter().enumerate() {
            let (k, p) = (cin * 9, out * out);
            let mut cols = vec![F::zero(); k * p];
            im2col(input, cin, side, stride, out, &mut cols);
            let mut y = vec![F::zero(); cout * p];
            F::gemm(cout, k, p, F::one(), &t[2 * l].data, k as isize, 1, &cols, p as isize, 1, F::zero(), &mut y, p as isize, 1);
            for (co, row) in y.chunks_exact_mut(p).enumerate() {
                let b = t[2 * l + 1].data[co];
                row.iter_mut().for_each(|v| *v = (*v + b).max(F::zero()));
            }
            cols_all.push(cols);
            acts.push(y);
            input = acts.last().unwrap();
        }
        let (_, cout, _, out, _) = *dims.last().unwrap();
        let p = F::from_usize(out * out).unwrap();
        let pooled: Vec<F> = acts
            .last()
            .unwrap()
            .chunks_exact(out * out)
            .take(cout)
            .map(|row| row.iter().copied().sum::<F>() / p)
            .collect();
        let (fw, pw) = idx(t.len(), dims.len());
        let features = dense(&t[fw].data, &t[fw + 1].data, &pooled);
        let hidden: Vec<F> = features.iter().map(|v| v.max(F::zero())).collect();
        let proj_raw = dense(&t[pw].data, &t[pw + 1].data, &hidden);
        let proj_norm = proj_raw.iter().map(|&v| v * v).sum::<F>().sqrt();
        let z = if normalize {
            if !(proj_norm.to_f64_lossy() > NORM_EPS) {
                return Err(SrhError::DegenerateNorm { norm: proj_norm.to_f64_lossy(), eps: NORM_EPS });
            }
            proj_raw.iter().map(|&v| v / proj_norm).collect()
        } else {
            Vec::new()
        };
        Ok(SampleCache { cols: cols_all, acts, pooled, features, hidden, proj_norm, z })
    }

    fn run(&self, batch: &Tensor4<F>, normalize: bool) -> Result<Vec<SampleCache<F>>> {
        self.check_input(batch)?;
        (0..batch.n)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| self.forward_sample(batch.sample(i), normalize))
            .collect()
    }

    /// Pure forward pass: features and unit-norm projections.
    pub fn forward(&self, batch: &Tensor4<F>) -> Result<ExtractorOutput<F>> {
        let caches = self.run(batch, true)?;
        Ok(ExtractorOutput {
            features: caches.iter().flat_map(|c| c.features.iter().copied()).collect(),
            projections: caches.iter().flat_map(|c| c.z.iter().copied()).collect(),
        })
    }

    /// Pre-projection features only (N×D); never fails on degenerate projections.
    pub fn features(&self, batch: &Tensor4<F>) -> Result<Vec<F>> {
        let caches = self.run(batch, false)?;
        Ok(caches.into_iter().flat_map(|c| c.features).collect())
    }

    /// Activation signs of every ReLU for one sample; used to detect kinks
    /// crossed by finite-difference probes.
    pub fn relu_pattern(&self, batch: &Tensor4<F>) -> Result<Vec<bool>> {
        let caches = self.run(batch, false)?;
        Ok(caches
            .iter()
            .flat_map(|c| {
                c.acts
                    .iter()
                    .flat_map(|a| a.iter().map(|&v| v > F::zero()))
                    .chain(c.features.iter().map(|&v| v > F::zero()))
                    .collect::<Vec<_>>()
            })
            .collect())
    }
}

/// A forward pass that remembers activations for a later backward pass.
pub struct ForwardPass<'a, F> {
    net: &'a FeatureExtractor<F>,
    cache: Option<Vec<SampleCache<F>>>,
    input_grad: bool,
    projections: bool,
}

/// Parameter gradients, plus the input gradient when requested.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub params: ParamSet<F>,
    pub input: Option<Vec<F>>,
}

impl<'a, F: Scalar> ForwardPass<'a, F> {
    pub fn new(net: &'a FeatureExtractor<F>) -> Self {
        Self { net, cache: None, input_grad: false, projections: true }
    }

    /// Also compute the gradient with respect to the input batch.
    pub fn with_input_grad(mut self) -> Self {
        self.input_grad = true;
        self
    }

    /// Skip the projection normalization; `projections` comes back empty
    /// and `backward` accepts no projection gradient.
    pub fn without_projections(mut self) -> Self {
        self.projections = false;
        self
    }

    pub fn forward(&mut self, batch: &Tensor4<F>) -> Result<ExtractorOutput<F>> {
        let caches = self.net.run(batch, self.projections)?;
        let out = ExtractorOutput {
            features: caches.iter().flat_map(|c| c.features.iter().copied()).collect(),
            projections: caches.iter().flat_map(|c| c.z.iter().copied()).collect(),
        };
        self.cache = Some(caches);
        Ok(out)
    }

    /// Back-propagates upstream gradients with respect to the features
    /// (N×D) and the normalized projections (N×d). Either may be omitted.
    pub fn backward(&self, d_features: Option<&[F]>, d_projections: Option<&[F]>) -> Result<Gradients<F>> {
        let caches = self
            .cache
            .as_ref()
            .ok_or_else(|| SrhError::State("backward called before forward".into()))?;
        let cfg = &self.net.config;
        let (n, dd, pd) = (caches.len(), cfg.feature_dim, cfg.projection_dim);
        if d_projections.is_some() && !self.projections {
            return Err(SrhError::State("projection gradient given to a pass without projections".into()));
        }
        if d_features.is_some_and(|g| g.len() != n * dd) || d_projections.is_some_and(|g| g.len() != n * pd) {
            return Err(SrhError::Shape("upstream gradient does not match cached batch".into()));
        }
        let zeros = self.net.params.zeros_like();
        let chunks: Vec<(ParamSet<F>, Vec<F>)> = caches
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut g = zeros.clone();
                let mut dx_all = Vec::new();
                for (j, cache) in chunk.iter().enumerate() {
                    let i = ci * CHUNK + j;
                    let df = d_features.map(|d| &d[i * dd..(i + 1) * dd]);
                    let dz = d_projections.map(|d| &d[i * pd..(i + 1) * pd]);
                    let dx = self.backward_sample(cache, df, dz, &mut g);
                    if let Some(dx) = dx {
                        dx_all.extend(dx);
                    }
                }
                (g, dx_all)
            })
            .collect();
        let mut total = zeros;
        let mut input = self.input_grad.then(Vec::new);
        for (g, dx) in chunks {
            total.add_assign(&g)?;
            if let Some(acc) = input.as_mut() {
                acc.extend(dx);
            }
        }
        Ok(Gradients { params: total, input })
    }

    fn backward_sample(&self, c: &SampleCache<F>, df: Option<&[F]>, dz: Option<&[F]>, g: &mut ParamSet<F>) -> Option<Vec<F>> {
        let dims = self.net.config.layer_dims();
        let t = &self.net.params.tensors;
        let (fw, pw) = idx(t.len(), dims.len());
        let (d, p) = (self.net.config.feature_dim, self.net.config.projection_dim);

        let mut d_feat: Vec<F> = df.map_or_else(|| vec![F::zero(); d], <[F]>::to_vec);
        if let Some(dz) = dz {
            // z = u/|u|  =>  du = (dz - z (z·dz)) / |u|
            let dot: F = c.z.iter().zip(dz).map(|(&a, &b)| a * b).sum();
            let du: Vec<F> = dz.iter().zip(&c.z).map(|(&g_, &z)| (g_ - z * dot) / c.proj_norm).collect();
            for o in 0..p {
                let row = &mut g.tensors[pw].data[o * d..(o + 1) * d];
                for (w, &h) in row.iter_mut().zip(&c.hidden) {
                    *w += du[o] * h;
                }
                g.tensors[pw + 1].data[o] += du[o];
            }
            let wp = &t[pw].data;
            for (k, df_k) in d_feat.iter_mut().enumerate() {
                if c.features[k] > F::zero() {
                    let mut s = F::zero();
                    for o in 0..p {
                        s += wp[o * d + k] * du[o];
                    }
                    *df_k += s;
                }
            }
        }

        let cp = c.pooled.len();
        let mut d_pooled = vec![F::zero(); cp];
        for o in 0..d {
            let gf = d_feat[o];
            if gf == F::zero() {
                continue;
            }
            let row = &mut g.tensors[fw].data[o * cp..(o + 1) * cp];
            for (w, &x) in row.iter_mut().zip(&c.pooled) {
                *w += gf * x;
            }
            g.tensors[fw + 1].data[o] += gf;
            for (dp, &w) in d_pooled.iter_mut().zip(&t[fw].data[o * cp..(o + 1) * cp]) {
                *dp += gf * w;
            }
        }

        let (_, _, _, last_out, _) = *dims.last().unwrap();
        let area = F::from_usize(last_out * last_out).unwrap();
        let mut d_act: Vec<F> = d_pooled
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v / area, last_out * last_out))
            .collect();

        for l in (0..dims.len()).rev() {
            let (cin, cout, side, out, stride) = dims[l];
            let (k, pp) = (cin * 9, out * out);
            for (dv, &a) in d_act.iter_mut().zip(&c.acts[l]) {
                if a <= F::zero() {
                    *dv = F::zero();
                }
            }
            // dW += dY · colsᵀ
            F::gemm(cout, pp, k, F::one(), &d_act, pp as isize, 1, &c.cols[l], 1, pp as isize, F::one(), &mut g.tensors[2 * l].data, k as isize, 1);
            for (co, row) in d_act.chunks_exact(pp).enumerate() {
                g.tensors[2 * l + 1].data[co] += row.iter().copied().sum::<F>();
            }
            if l == 0 && !self.input_grad {
                break;
            }
            // dcols = Wᵀ · dY
            let mut dcols = vec![F::zero(); k * pp];
            F::gemm(k, cout, pp, F::one(), &t[2 * l].data, 1, k as isize, &d_act, pp as isize, 1, F::zero(), &mut dcols, pp as isize, 1);
            let mut dx = vec![F::zero(); cin * side * side];
            col2im_add(&dcols, cin, side, stride, out, &mut dx);
            d_act = dx;
        }
        self.input_grad.then_some(d_act)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> FeatureExtractorConfig {
        FeatureExtractorConfig {
            input_side: 9,
            in_channels: 3,
            blocks: vec![ConvBlock { out_channels: 4, stride: 2 }, ConvBlock { out_channels: 6, stride: 2 }],
            feature_dim: 8,
            projection_dim: 4,
        }
    }

    fn batch(n: usize, side: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 3 * side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor4::new(n, 3, side, side, data).unwrap()
    }

    #[test]
    fn default_config_layers() {
        let cfg = FeatureExtractorConfig::default();
        cfg.validate().unwrap();
        let sides: Vec<usize> = cfg.layer_dims().iter().map(|d| d.3).collect();
        assert_eq!(sides, vec![30, 15, 8, 4]);
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.projection_dim = 1;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.feature_dim = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn projections_are_unit_norm() {
        let net = FeatureExtractor::<f64>::new(small_config(), 3).unwrap();
        let out = net.forward(&batch(5, 9, 1)).unwrap();
        for row in out.projections.chunks(4) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert_eq!(out.features.len(), 5 * 8);
    }

    #[test]
    fn zero_network_is_degenerate() {
        let mut net = FeatureExtractor::<f64>::new(small_config(), 3).unwrap();
        net.params.scale(0.0);
        let zero = Tensor4::zeros(2, 3, 9, 9);
        assert!(net.features(&zero).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(net.forward(&zero), Err(SrhError::DegenerateNorm { .. })));
    }

    #[test]
    fn duplicated_rows_give_identical_outputs() {
        let net = FeatureExtractor::<f32>::new(small_config(), 4).unwrap();
        let one = batch(1, 9, 8);
        let data: Vec<f32> = one.data.iter().chain(&one.data).map(|&v| v as f32).collect();
        let out = net.forward(&Tensor4::new(2, 3, 9, 9, data).unwrap()).unwrap();
        assert_eq!(out.features[..8], out.features[8..]);
        assert_eq!(out.projections[..4], out.projections[4..]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = FeatureExtractor::<f64>::new(small_config(), 3).unwrap();
        assert!(matches!(net.forward(&batch(1, 10, 0)), Err(SrhError::Shape(_))));
        assert!(Tensor4::<f64>::new(1, 3, 2, 2, vec![0.0; 11]).is_err());
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let net = FeatureExtractor::<f64>::new(small_config(), 3).unwrap();
        let pass = ForwardPass::new(&net);
        assert!(matches!(pass.backward(None, None), Err(SrhError::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = FeatureExtractor::<f64>::new(small_config(), 3).unwrap();
        let mut pass = ForwardPass::new(&net);
        pass.forward(&batch(3, 9, 2)).unwrap();
        let g = pass.backward(Some(&[0.0; 24]), Some(&[0.0; 12])).unwrap();
        assert_eq!(g.params.max_abs(), 0.0);
    }

    #[test]
    fn gradient_independent_of_chunking() {
        // 19 samples span three chunks; compare with per-sample sums.
        let net = FeatureExtractor::<f64>::new(small_config(), 5).unwrap();
        let b = batch(19, 9, 3);
        let up: Vec<f64> = (0..19 * 4).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let mut pass = ForwardPass::new(&net);
        pass.forward(&b).unwrap();
        let whole = pass.backward(None, Some(&up)).unwrap().params;
        let mut summed = net.params.zeros_like();
        for i in 0..19 {
            let one = Tensor4::new(1, 3, 9, 9, b.sample(i).to_vec()).unwrap();
            let mut p = ForwardPass::new(&net);
            p.forward(&one).unwrap();
            summed.add_assign(&p.backward(None, Some(&up[i * 4..(i + 1) * 4])).unwrap().params).unwrap();
        }
        for (a, b) in whole.iter_scalars().zip(summed.iter_scalars()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
