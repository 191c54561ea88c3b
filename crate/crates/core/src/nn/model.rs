use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchConfig, StageShape, EMBED_DIM};
use super::layers::{self, ConvGeom};
use super::real::Real;
use crate::error::{Error, Result};
use crate::pair_gen::{Patch, PatchPair};

/// A named learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainMeta {
    /// Epochs completed so far (the saved parameters come from `best_epoch`).
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Two-branch similarity network. Both branches read the same parameter
/// storage; there is exactly one copy of the conv weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Real = f32> {
    arch: ArchConfig,
    trace: Vec<StageShape>,
    params: Vec<Param<T>>,
    pub meta: TrainMeta,
}

/// Output of a single branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput<T> {
    /// Channel-wise spatial mean of `conv_map`.
    pub embedding: Vec<T>,
    /// Last conv stage activation, `512 x side x side`, channel-major.
    pub conv_map: Vec<T>,
    pub side: usize,
}

struct StageCache<T> {
    col: Vec<T>,
    /// post-ReLU conv output, before pooling
    y: Vec<T>,
    pool_arg: Option<Vec<u32>>,
}

struct BranchCache<T> {
    stages: Vec<StageCache<T>>,
}

struct HeadCache<T> {
    /// input to each dense layer
    inputs: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchSide {
    First,
    Second,
}

impl<T: Real> ModelState<T> {
    /// Fan-in scaled uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let trace = arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut in_c = 1;
        for (i, st) in arch.conv.iter().enumerate() {
            let fan_in = in_c * st.kernel * st.kernel;
            params.push(uniform_param(
                format!("conv{}.weight", i + 1),
                vec![st.filters, in_c, st.kernel, st.kernel],
                fan_in,
                &mut rng,
            ));
            params.push(zero_param(format!("conv{}.bias", i + 1), st.filters));
            in_c = st.filters;
        }
        let mut inp = arch.head_input();
        for (j, &out) in arch.head.iter().enumerate() {
            params.push(uniform_param(format!("fc{}.weight", j + 1), vec![out, inp], inp, &mut rng));
            params.push(zero_param(format!("fc{}.bias", j + 1), out));
            inp = out;
        }
        Ok(ModelState {
            arch: arch.clone(),
            trace,
            params,
            meta: TrainMeta::default(),
        })
    }

    pub(crate) fn from_parts(arch: ArchConfig, params: Vec<Param<T>>, meta: TrainMeta) -> Result<Self> {
        let reference = Self::init(&arch, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (want, got) in reference.params.iter().zip(&params) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {} {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        Ok(ModelState {
            arch,
            trace: reference.trace,
            params,
            meta,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn input_side(&self) -> usize {
        self.arch.input_side
    }

    /// Side m of the conv map.
    pub fn map_side(&self) -> usize {
        self.trace.last().expect("validated").out_side
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Parameters read by one branch. Both sides resolve to the same storage.
    pub fn branch_parameters(&self, _side: BranchSide) -> &[Param<T>] {
        &self.params[..2 * self.arch.conv.len()]
    }

    pub fn head_parameters(&self) -> &[Param<T>] {
        &self.params[2 * self.arch.conv.len()..]
    }

    /// Convert to another scalar type (e.g. f32 -> f64 for gradient checks).
    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            arch: self.arch.clone(),
            trace: self.trace.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.to_f64().unwrap())).collect(),
                })
                .collect(),
            meta: self.meta.clone(),
        }
    }

    fn check_side(&self, side: usize) -> Result<()> {
        if side != self.arch.input_side {
            return Err(Error::Shape {
                layer: "input".into(),
                message: format!("patch side {side} does not match model input side {}", self.arch.input_side),
            });
        }
        Ok(())
    }

    pub fn branch_forward(&self, patch: &Patch) -> Result<BranchOutput<T>> {
        self.check_side(patch.side)?;
        Ok(self.branch_pixels(&patch.pixels))
    }

    /// Branch forward on a raw `p x p` intensity buffer (no size check beyond length).
    pub fn branch_pixels(&self, pixels: &[f32]) -> BranchOutput<T> {
        assert_eq!(pixels.len(), self.arch.input_side * self.arch.input_side);
        let x: Vec<T> = pixels.iter().map(|&v| T::of(v as f64)).collect();
        let (map, _) = self.branch_impl(x, false);
        let side = self.map_side();
        let embedding = global_mean(&map, side * side);
        BranchOutput {
            embedding,
            conv_map: map,
            side,
        }
    }

    /// Similarity probability in (0,1). Order matters: the head sees `[emb(a), emb(b)]`.
    pub fn pair_forward(&self, pair: &PatchPair) -> Result<f64> {
        self.check_side(pair.a.side)?;
        self.check_side(pair.b.side)?;
        Ok(sigmoid(self.pair_logit(&pair.a.pixels, &pair.b.pixels).to_f64().unwrap()))
    }

    pub(crate) fn pair_logit(&self, a: &[f32], b: &[f32]) -> T {
        let ea = self.branch_pixels(a).embedding;
        let eb = self.branch_pixels(b).embedding;
        let mut z = ea;
        z.extend(eb);
        let (out, _) = self.head_impl(z, false);
        out
    }

    /// Binary cross-entropy for one pair; accumulates parameter gradients into `grads`
    /// (aligned with [`params`](Self::params)). Returns `(loss, probability)`.
    pub fn loss_and_grad(&self, a: &[f32], b: &[f32], label: f64, grads: &mut [Vec<T>]) -> (f64, f64) {
        let side = self.map_side();
        let area = side * side;
        let to_t = |p: &[f32]| p.iter().map(|&v| T::of(v as f64)).collect::<Vec<T>>();
        let (map_a, cache_a) = self.branch_impl(to_t(a), true);
        let (map_b, cache_b) = self.branch_impl(to_t(b), true);
        let mut z = global_mean(&map_a, area);
        z.extend(global_mean(&map_b, area));
        let (logit, head_cache) = self.head_impl(z, true);
        let logit = logit.to_f64().unwrap();
        let prob = sigmoid(logit);
        let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();

        let dz = self.head_backward(T::of(prob - label), head_cache.expect("cached"), grads);
        let (dea, deb) = dz.split_at(EMBED_DIM);
        self.branch_backward(dea, area, cache_a.expect("cached"), grads);
        self.branch_backward(deb, area, cache_b.expect("cached"), grads);
        (loss, prob)
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect()
    }

    fn branch_impl(&self, mut x: Vec<T>, keep: bool) -> (Vec<T>, Option<BranchCache<T>>) {
        let mut side = self.arch.input_side;
        let mut in_c = 1;
        let mut stages = Vec::new();
        let mut col = Vec::new();
        for (i, (st, shape)) in self.arch.conv.iter().zip(&self.trace).enumerate() {
            let g = ConvGeom {
                in_c,
                in_side: side,
                kernel: st.kernel,
                stride: st.stride,
                padding: st.padding,
                out_side: shape.conv_side,
            };
            let w = &self.params[2 * i].data;
            let b = &self.params[2 * i + 1].data;
            let y = layers::conv_relu_forward(&x, &g, w, b, &mut col);
            let (out, pool_arg) = match st.pool {
                Some(p) => {
                    let (o, a) = layers::maxpool_forward(&y, st.filters, shape.conv_side, p.size, p.stride, shape.out_side);
                    (o, Some(a))
                }
                None => (y.clone(), None),
            };
            if keep {
                stages.push(StageCache {
                    col: std::mem::take(&mut col),
                    y,
                    pool_arg,
                });
            }
            x = out;
            side = shape.out_side;
            in_c = st.filters;
        }
        (x, keep.then_some(BranchCache { stages }))
    }

    fn branch_backward(&self, d_emb: &[T], area: usize, cache: BranchCache<T>, grads: &mut [Vec<T>]) {
        let scale = T::one() / T::of(area as f64);
        let mut dout: Vec<T> = d_emb
            .iter()
            .flat_map(|&g| std::iter::repeat(g * scale).take(area))
            .collect();
        let mut in_c_side = vec![(1usize, self.arch.input_side)];
        for (st, sh) in self.arch.conv.iter().zip(&self.trace) {
            in_c_side.push((st.filters, sh.out_side));
        }
        for (i, stage) in cache.stages.into_iter().enumerate().rev() {
            let st = &self.arch.conv[i];
            let shape = self.trace[i];
            let mut dy = match &stage.pool_arg {
                Some(arg) => layers::maxpool_backward(&dout, arg, stage.y.len()),
                None => dout,
            };
            let (in_c, in_side) = in_c_side[i];
            let g = ConvGeom {
                in_c,
                in_side,
                kernel: st.kernel,
                stride: st.stride,
                padding: st.padding,
                out_side: shape.conv_side,
            };
            let (gw, gb) = two_mut(grads, 2 * i);
            let dx = layers::conv_relu_backward(
                &mut dy,
                &stage.y,
                &g,
                &self.params[2 * i].data,
                &stage.col,
                gw,
                gb,
                i > 0,
            );
            match dx {
                Some(dx) => dout = dx,
                None => break,
            }
        }
    }

    fn head_impl(&self, mut z: Vec<T>, keep: bool) -> (T, Option<HeadCache<T>>) {
        let off = 2 * self.arch.conv.len();
        let n = self.arch.head.len();
        let mut inputs = Vec::new();
        for j in 0..n {
            let y = layers::dense_forward(&z, &self.params[off + 2 * j].data, &self.params[off + 2 * j + 1].data);
            if keep {
                inputs.push(std::mem::take(&mut z));
            }
            z = y;
            if j + 1 < n {
                z.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v = T::zero()
                    }
                });
            }
        }
        (z[0], keep.then_some(HeadCache { inputs }))
    }

    fn head_backward(&self, dlogit: T, cache: HeadCache<T>, grads: &mut [Vec<T>]) -> Vec<T> {
        let off = 2 * self.arch.conv.len();
        let n = self.arch.head.len();
        let mut dy = vec![dlogit];
        for j in (0..n).rev() {
            let x = &cache.inputs[j];
            let (gw, gb) = two_mut(grads, off + 2 * j);
            let mut dx = layers::dense_backward(&dy, x, &self.params[off + 2 * j].data, gw, gb);
            if j > 0 {
                // x is the ReLU output of layer j-1
                for (d, &v) in dx.iter_mut().zip(x) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            dy = dx;
        }
        dy
    }

    /// Hidden activations of every layer for one pair, for inspection in tests.
    pub fn pair_activations(&self, a: &[f32], b: &[f32]) -> Vec<Vec<T>> {
        let mut acts = Vec::new();
        for p in [a, b] {
            let x: Vec<T> = p.iter().map(|&v| T::of(v as f64)).collect();
            let (_, cache) = self.branch_impl(x, true);
            for s in cache.expect("cached").stages {
                acts.push(s.y);
            }
        }
        let area = self.map_side() * self.map_side();
        let mut z = global_mean(&self.branch_impl(a.iter().map(|&v| T::of(v as f64)).collect(), false).0, area);
        z.extend(global_mean(&self.branch_impl(b.iter().map(|&v| T::of(v as f64)).collect(), false).0, area));
        let (_, head) = self.head_impl(z, true);
        // inputs[1..] are ReLU outputs of the hidden dense layers
        acts.extend(head.expect("cached").inputs.into_iter().skip(1));
        acts
    }
}

fn two_mut<T>(v: &mut [Vec<T>], i: usize) -> (&mut [T], &mut [T]) {
    let (lo, hi) = v.split_at_mut(i + 1);
    (&mut lo[i], &mut hi[0])
}

fn global_mean<T: Real>(map: &[T], area: usize) -> Vec<T> {
    let inv = T::one() / T::of(area as f64);
    map.chunks_exact(area).map(|ch| ch.iter().copied().sum::<T>() * inv).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn uniform_param<T: Real>(name: String, shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Param<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
    Param { name, shape, data }
}

fn zero_param<T: Real>(name: String, n: usize) -> Param<T> {
    Param {
        name,
        shape: vec![n],
        data: vec![T::zero(); n],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pair_gen::{Patch, PatchPair};

    fn patch(side: usize, f: impl Fn(usize, usize) -> f32) -> Patch {
        let pixels = (0..side * side).map(|i| f(i / side, i % side)).collect();
        Patch::new(pixels, side, (0, 0), "t").unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a: ModelState = ModelState::init(&ArchConfig::tiny(), 5).unwrap();
        let b: ModelState = ModelState::init(&ArchConfig::tiny(), 5).unwrap();
        assert_eq!(a, b);
        let c: ModelState = ModelState::init(&ArchConfig::tiny(), 6).unwrap();
        assert_ne!(a, c);
        assert!(a.params().iter().filter(|p| p.name.ends_with("bias")).all(|p| p.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_patch_gives_zero_embedding_and_half() {
        let m: ModelState = ModelState::init(&ArchConfig::compact(32), 1).unwrap();
        let z = patch(32, |_, _| 0.0);
        let out = m.branch_forward(&z).unwrap();
        assert_eq!(out.embedding.len(), EMBED_DIM);
        assert!(out.embedding.iter().all(|&v| v == 0.0));
        let pair = PatchPair::similar(z.clone(), z);
        assert_eq!(m.pair_forward(&pair).unwrap(), 0.5);
    }

    #[test]
    fn embedding_is_channel_mean_of_map() {
        let m: ModelState = ModelState::init(&ArchConfig::compact(32), 2).unwrap();
        let p = patch(32, |r, c| ((r * 7 + c * 3) % 11) as f32 / 10.0);
        let out = m.branch_forward(&p).unwrap();
        let area = out.side * out.side;
        assert_eq!(out.conv_map.len(), EMBED_DIM * area);
        for ch in 0..EMBED_DIM {
            let mean: f64 = out.conv_map[ch * area..(ch + 1) * area].iter().map(|&v| v as f64).sum::<f64>() / area as f64;
            let e = out.embedding[ch] as f64;
            assert!((mean - e).abs() <= 1e-5 * mean.abs().max(1e-6), "channel {ch}");
        }
        assert_eq!(m.branch_forward(&p).unwrap(), out);
    }

    #[test]
    fn wrong_patch_size_rejected() {
        let m: ModelState = ModelState::init(&ArchConfig::tiny(), 0).unwrap();
        assert!(m.branch_forward(&patch(9, |_, _| 1.0)).is_err());
    }

    #[test]
    fn activations_non_negative_and_probability_in_range() {
        let m: ModelState = ModelState::init(&ArchConfig::tiny(), 3).unwrap();
        let a: Vec<f32> = (0..64).map(|i| (i % 5) as f32 / 4.0).collect();
        let b: Vec<f32> = (0..64).map(|i| (i % 3) as f32 / 2.0).collect();
        for act in m.pair_activations(&a, &b) {
            assert!(act.iter().all(|&v| v >= 0.0));
        }
        let p = m.pair_forward(&PatchPair::similar(
            Patch::new(a, 8, (0, 0), "x").unwrap(),
            Patch::new(b, 8, (0, 0), "x").unwrap(),
        ))
        .unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn branches_share_storage() {
        let m: ModelState = ModelState::init(&ArchConfig::tiny(), 0).unwrap();
        assert!(std::ptr::eq(
            m.branch_parameters(BranchSide::First),
            m.branch_parameters(BranchSide::Second)
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m: ModelState<f64> = ModelState::init(&ArchConfig::tiny(), 11).unwrap();
        let a: Vec<f32> = (0..64).map(|i| ((i * 13) % 17) as f32 / 16.0).collect();
        let b: Vec<f32> = (0..64).map(|i| ((i * 5) % 7) as f32 / 6.0).collect();
        let mut grads = m.zero_grads();
        m.loss_and_grad(&a, &b, 1.0, &mut grads);
        let loss = |mm: &ModelState<f64>| {
            let z = mm.pair_logit(&a, &b);
            z.max(0.0) - z + (-z.abs()).exp().ln_1p()
        };
        let eps = 1e-6;
        for (pi, p) in m.params().iter().enumerate() {
            for k in [0, p.data.len() / 2, p.data.len() - 1] {
                let mut plus = m.clone();
                plus.params_mut()[pi].data[k] += eps;
                let mut minus = m.clone();
                minus.params_mut()[pi].data[k] -= eps;
                let num = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let ana = grads[pi][k];
                let denom = num.abs().max(ana.abs()).max(1e-6);
                assert!((num - ana).abs() / denom < 1e-4, "{} [{k}]: {ana} vs {num}", p.name);
            }
        }
    }
}
