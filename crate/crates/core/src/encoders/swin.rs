//! A small shifted-window transformer. Tokens are kept as `N x H x W x C`.

use agri_autograd::nn::{Conv2d, Ctx, LayerNorm, Linear};
use agri_autograd::{array, Array, ParamKind, ParamStore, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderSpec;

const DEPTHS: [usize; 4] = [2, 2, 2, 2];
const HEADS: [usize; 4] = [1, 2, 4, 8];
const MLP_RATIO: usize = 4;
const MASK_NEG: f64 = -100.0;

/// Zero-pad axes 1 and 2 of a `N x H x W x C` tensor up to `(hp, wp)`.
fn pad_hw(x: &Var, hp: usize, wp: usize) -> Var {
    let s = x.shape().to_vec();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut y = x.clone();
    if hp > h {
        y = Var::cat(&[y, Var::constant(ArrayD::zeros(IxDyn(&[n, hp - h, w, c])))], 1);
    }
    if wp > w {
        y = Var::cat(&[y, Var::constant(ArrayD::zeros(IxDyn(&[n, hp, wp - w, c])))], 2);
    }
    y
}

fn pad_nchw(x: &Var, hp: usize, wp: usize) -> Var {
    pad_hw(&x.permute(&[0, 2, 3, 1]), hp, wp).permute(&[0, 3, 1, 2])
}

#[derive(Debug, Clone)]
struct SwinBlock {
    name: String,
    dim: usize,
    heads: usize,
    shift: bool,
    window: usize,
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl SwinBlock {
    fn new(name: String, dim: usize, heads: usize, window: usize, shift: bool) -> Self {
        SwinBlock {
            norm1: LayerNorm::new(format!("{name}.norm1"), dim),
            qkv: Linear::new(format!("{name}.qkv"), dim, 3 * dim),
            proj: Linear::new(format!("{name}.proj"), dim, dim),
            norm2: LayerNorm::new(format!("{name}.norm2"), dim),
            fc1: Linear::new(format!("{name}.fc1"), dim, MLP_RATIO * dim),
            fc2: Linear::new(format!("{name}.fc2"), MLP_RATIO * dim, dim),
            name,
            dim,
            heads,
            shift,
            window,
        }
    }

    fn bias_name(&self) -> String {
        format!("{}.rel_bias", self.name)
    }

    fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.norm1.init(store);
        self.qkv.init(store, rng);
        self.proj.init(store, rng);
        self.norm2.init(store);
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
        let span = 2 * self.window - 1;
        let dist = Normal::new(0.0, 0.02).unwrap();
        let table = (0..span * span * self.heads).map(|_| dist.sample(rng)).collect();
        store.insert(self.bias_name(), array(&[span * span, self.heads], table), ParamKind::Weight);
    }

    /// Index into the bias table for every (query, key) pair in a `w x w` window.
    fn relative_index(w: usize) -> Vec<usize> {
        let span = 2 * w - 1;
        let coords: Vec<(usize, usize)> = (0..w).flat_map(|i| (0..w).map(move |j| (i, j))).collect();
        let mut idx = Vec::with_capacity(coords.len() * coords.len());
        for &(qi, qj) in &coords {
            for &(ki, kj) in &coords {
                idx.push((qi + w - 1 - ki) * span + (qj + w - 1 - kj));
            }
        }
        idx
    }

    /// `nW x L x L` additive mask keeping attention inside the regions that
    /// were contiguous before the cyclic shift.
    fn shift_mask(hp: usize, wp: usize, w: usize, s: usize) -> Array {
        let region = |i: usize, n: usize| {
            if i < n - w {
                0
            } else if i < n - s {
                1
            } else {
                2
            }
        };
        let (nh, nw, l) = (hp / w, wp / w, w * w);
        let mut mask = vec![0.0; nh * nw * l * l];
        for bi in 0..nh {
            for bj in 0..nw {
                let ids: Vec<usize> = (0..l)
                    .map(|t| {
                        let (i, j) = (bi * w + t / w, bj * w + t % w);
                        region(i, hp) * 3 + region(j, wp)
                    })
                    .collect();
                let base = (bi * nw + bj) * l * l;
                for a in 0..l {
                    for b in 0..l {
                        if ids[a] != ids[b] {
                            mask[base + a * l + b] = MASK_NEG;
                        }
                    }
                }
            }
        }
        array(&[nh * nw, l, l], mask)
    }

    fn forward(&self, ctx: &mut Ctx, x: &Var) -> Var {
        let s = x.shape().to_vec();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let win = self.window.min(h).min(w);
        let shift = if self.shift && win < h.min(w) { win / 2 } else { 0 };
        let (hp, wp) = (h.div_ceil(win) * win, w.div_ceil(win) * win);
        let (nh, nw, l) = (hp / win, wp / win, win * win);
        let (heads, hd) = (self.heads, c / self.heads);

        let mut t = pad_hw(&self.norm1.forward(ctx, x), hp, wp);
        if shift > 0 {
            t = t.roll(1, -(shift as isize)).roll(2, -(shift as isize));
        }
        let b = n * nh * nw;
        let windows = t
            .reshape(&[n, nh, win, nw, win, c])
            .permute(&[0, 1, 3, 2, 4, 5])
            .reshape(&[b, l, c]);
        let qkv = self
            .qkv
            .forward(ctx, &windows)
            .reshape(&[b, l, 3, heads, hd])
            .permute(&[2, 0, 3, 1, 4]);
        let part = |i: usize| qkv.narrow(0, i, 1).reshape(&[b * heads, l, hd]);
        let (q, k, v) = (part(0).scale(1.0 / (hd as f64).sqrt()), part(1), part(2));

        let mut attn = q.bmm(&k.permute(&[0, 2, 1])).reshape(&[n, nh * nw, heads, l, l]);
        let table = ctx.p(&self.bias_name()).clone();
        // the table is sized for the configured window; crop the index set when the map is smaller
        let full = self.window;
        let idx: Vec<usize> = if win == full {
            Self::relative_index(win)
        } else {
            let span_full = 2 * full - 1;
            Self::relative_index(win)
                .into_iter()
                .map(|k| {
                    let span = 2 * win - 1;
                    let (di, dj) = (k / span, k % span);
                    (di + full - win) * span_full + (dj + full - win)
                })
                .collect()
        };
        let bias = table.index_select(&idx).reshape(&[l, l, heads]).permute(&[2, 0, 1]);
        attn = attn.add(&bias.reshape(&[1, 1, heads, l, l]));
        if shift > 0 {
            let mask = Self::shift_mask(hp, wp, win, shift).into_shape_with_order(IxDyn(&[1, nh * nw, 1, l, l])).unwrap();
            attn = attn.add(&Var::constant(mask));
        }
        let attn = attn.softmax_last().reshape(&[b * heads, l, l]);
        let out = attn
            .bmm(&v)
            .reshape(&[b, heads, l, hd])
            .permute(&[0, 2, 1, 3])
            .reshape(&[b, l, c]);
        let out = self.proj.forward(ctx, &out);
        let mut y = out
            .reshape(&[n, nh, nw, win, win, c])
            .permute(&[0, 1, 3, 2, 4, 5])
            .reshape(&[n, hp, wp, c]);
        if shift > 0 {
            y = y.roll(1, shift as isize).roll(2, shift as isize);
        }
        if hp > h || wp > w {
            y = y.narrow(1, 0, h).narrow(2, 0, w);
        }
        let x = x.add(&y);
        let h = self.norm2.forward(ctx, &x);
        let h = self.fc1.forward(ctx, &h).gelu();
        let mlp = self.fc2.forward(ctx, &h);
        debug_assert_eq!(self.dim, c);
        x.add(&mlp)
    }
}

#[derive(Debug, Clone)]
enum Transition {
    /// 2x2 token merge: layer norm over 4C, then a linear map to 2C.
    Merge { norm: LayerNorm, reduce: Linear },
    /// Width change without downsampling.
    Widen(Linear),
}

#[derive(Debug, Clone)]
pub struct SwinBackbone {
    patch: usize,
    embed: Conv2d,
    embed_norm: LayerNorm,
    transitions: Vec<Transition>,
    stages: Vec<Vec<SwinBlock>>,
    final_norm: LayerNorm,
    dims: Vec<usize>,
}

impl SwinBackbone {
    pub fn new(spec: &EncoderSpec) -> Self {
        let r = spec.reductions() as usize;
        let merges = r.min(3);
        let patch = 1usize << (r - merges);
        let c = spec.base_width;
        let dims: Vec<usize> = (0..4).map(|i| c << i).collect();
        let embed = Conv2d::new("backbone.embed", spec.in_channels, c, patch, patch)
            .with_padding(0)
            .with_bias();
        let transitions = (1..4)
            .map(|i| {
                let name = format!("backbone.transition{i}");
                let (din, dout) = (dims[i - 1], dims[i]);
                if i <= merges {
                    let mut reduce = Linear::new(format!("{name}.reduce"), 4 * din, dout);
                    reduce.bias = false;
                    Transition::Merge {
                        norm: LayerNorm::new(format!("{name}.norm"), 4 * din),
                        reduce,
                    }
                } else {
                    Transition::Widen(Linear::new(format!("{name}.widen"), din, dout))
                }
            })
            .collect();
        let stages = (0..4)
            .map(|s| {
                (0..DEPTHS[s])
                    .map(|b| SwinBlock::new(format!("backbone.stage{}.{}", s + 1, b), dims[s], HEADS[s].min(dims[s]), spec.window, b % 2 == 1))
                    .collect()
            })
            .collect();
        SwinBackbone {
            patch,
            embed,
            embed_norm: LayerNorm::new("backbone.embed_norm", c),
            transitions,
            stages,
            final_norm: LayerNorm::new("backbone.norm", dims[3]),
            dims,
        }
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.dims.clone()
    }

    pub fn input_weight_name(&self) -> String {
        self.embed.weight_name()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.embed.init(store, rng);
        self.embed_norm.init(store);
        for t in &self.transitions {
            match t {
                Transition::Merge { norm, reduce } => {
                    norm.init(store);
                    reduce.init(store, rng);
                }
                Transition::Widen(l) => l.init(store, rng),
            }
        }
        for blk in self.stages.iter().flatten() {
            blk.init(store, rng);
        }
        self.final_norm.init(store);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Var) -> Vec<Var> {
        let s = x.shape().to_vec();
        let p = self.patch;
        let x = pad_nchw(x, s[2].div_ceil(p) * p, s[3].div_ceil(p) * p);
        let e = self.embed.forward(ctx, &x).permute(&[0, 2, 3, 1]);
        let mut t = self.embed_norm.forward(ctx, &e);
        let mut outs = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                t = match &self.transitions[i - 1] {
                    Transition::Merge { norm, reduce } => {
                        let sh = t.shape().to_vec();
                        let (n, h, w, c) = (sh[0], sh[1], sh[2], sh[3]);
                        let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
                        let merged = pad_hw(&t, 2 * h2, 2 * w2)
                            .reshape(&[n, h2, 2, w2, 2, c])
                            .permute(&[0, 1, 3, 2, 4, 5])
                            .reshape(&[n, h2, w2, 4 * c]);
                        let normed = norm.forward(ctx, &merged);
                        reduce.forward(ctx, &normed)
                    }
                    Transition::Widen(l) => l.forward(ctx, &t),
                };
            }
            for blk in stage {
                t = blk.forward(ctx, &t);
            }
            let out = if i == 3 { self.final_norm.forward(ctx, &t) } else { t.clone() };
            outs.push(out.permute(&[0, 3, 1, 2]));
        }
        outs
    }
}
