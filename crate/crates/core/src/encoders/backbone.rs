use agri_autograd::nn::{BatchNorm, Conv2d, Ctx};
use agri_autograd::{ParamStore, Var};
use rand::Rng;

use super::swin::SwinBackbone;
use super::{EncoderSpec, Family};

/// conv -> batch norm -> optional ReLU.
#[derive(Debug, Clone)]
pub(crate) struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize, relu: bool) -> Self {
        ConvBn {
            conv: Conv2d::new(format!("{name}.conv"), cin, cout, k, stride),
            bn: BatchNorm::new(format!("{name}.bn"), cout),
            relu,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.conv.init(store, rng);
        self.bn.init(store);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Var) -> Var {
        let c = self.conv.forward(ctx, x);
        let y = self.bn.forward(ctx, &c);
        if self.relu {
            y.relu()
        } else {
            y
        }
    }
}

#[derive(Debug, Clone)]
enum Block {
    Plain(ConvBn),
    Basic {
        a: ConvBn,
        b: ConvBn,
        down: Option<ConvBn>,
    },
    Bottleneck {
        a: ConvBn,
        b: ConvBn,
        c: ConvBn,
        down: Option<ConvBn>,
    },
}

impl Block {
    fn basic(name: &str, cin: usize, cout: usize, stride: usize) -> Block {
        Block::Basic {
            a: ConvBn::new(&format!("{name}.a"), cin, cout, 3, stride, true),
            b: ConvBn::new(&format!("{name}.b"), cout, cout, 3, 1, false),
            down: (stride != 1 || cin != cout).then(|| ConvBn::new(&format!("{name}.down"), cin, cout, 1, stride, false)),
        }
    }

    fn bottleneck(name: &str, cin: usize, width: usize, stride: usize) -> Block {
        let cout = width * 4;
        Block::Bottleneck {
            a: ConvBn::new(&format!("{name}.a"), cin, width, 1, 1, true),
            b: ConvBn::new(&format!("{name}.b"), width, width, 3, stride, true),
            c: ConvBn::new(&format!("{name}.c"), width, cout, 1, 1, false),
            down: (stride != 1 || cin != cout).then(|| ConvBn::new(&format!("{name}.down"), cin, cout, 1, stride, false)),
        }
    }

    fn layers(&self) -> Vec<&ConvBn> {
        match self {
            Block::Plain(l) => vec![l],
            Block::Basic { a, b, down } => [Some(a), Some(b), down.as_ref()].into_iter().flatten().collect(),
            Block::Bottleneck { a, b, c, down } => [Some(a), Some(b), Some(c), down.as_ref()].into_iter().flatten().collect(),
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: &Var) -> Var {
        match self {
            Block::Plain(l) => l.forward(ctx, x),
            Block::Basic { a, b, down } => {
                let ya = a.forward(ctx, x);
                let y = b.forward(ctx, &ya);
                let short = down.as_ref().map_or_else(|| x.clone(), |d| d.forward(ctx, x));
                y.add(&short).relu()
            }
            Block::Bottleneck { a, b, c, down } => {
                let ya = a.forward(ctx, x);
                let yb = b.forward(ctx, &ya);
                let y = c.forward(ctx, &yb);
                let short = down.as_ref().map_or_else(|| x.clone(), |d| d.forward(ctx, x));
                y.add(&short).relu()
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<Block>,
    /// Max-pool (3x3, stride 2) before the blocks.
    pool: bool,
}

#[derive(Debug, Clone)]
pub struct CnnBackbone {
    stem: ConvBn,
    stages: Vec<Stage>,
    channels: Vec<usize>,
}

impl CnnBackbone {
    fn micro(spec: &EncoderSpec) -> Self {
        let w = spec.base_width;
        let widths = [w, 2 * w, 3 * w, 4 * w, 6 * w];
        let r = spec.reductions() as usize;
        let stride = |i: usize| if i < r { 2 } else { 1 };
        let stem = ConvBn::new("backbone.stem", spec.in_channels, widths[0], 3, stride(0), true);
        let stages = (1..5)
            .map(|i| Stage {
                blocks: vec![Block::Plain(ConvBn::new(
                    &format!("backbone.stage{i}"),
                    widths[i - 1],
                    widths[i],
                    3,
                    stride(i),
                    true,
                ))],
                pool: false,
            })
            .collect();
        CnnBackbone {
            stem,
            stages,
            channels: widths.to_vec(),
        }
    }

    fn resnet(spec: &EncoderSpec, bottleneck: bool) -> Self {
        let w = spec.base_width;
        let depths: [usize; 4] = if bottleneck { [3, 4, 6, 3] } else { [2, 2, 2, 2] };
        let r = spec.reductions() as usize;
        // reduction slots in network order: stem, pool, stage2, stage3, stage4
        let slot = |i: usize| i < r;
        let stem = ConvBn::new("backbone.stem", spec.in_channels, w, 3, if slot(0) { 2 } else { 1 }, true);
        let mut channels = vec![w];
        let mut cin = w;
        let mut stages = Vec::new();
        for (s, &depth) in depths.iter().enumerate() {
            let width = w << s;
            let stride = if s > 0 && slot(s + 1) { 2 } else { 1 };
            let blocks = (0..depth)
                .map(|b| {
                    let name = format!("backbone.stage{}.{}", s + 1, b);
                    let st = if b == 0 { stride } else { 1 };
                    let blk = if bottleneck {
                        Block::bottleneck(&name, cin, width, st)
                    } else {
                        Block::basic(&name, cin, width, st)
                    };
                    cin = if bottleneck { width * 4 } else { width };
                    blk
                })
                .collect();
            stages.push(Stage {
                blocks,
                pool: s == 0 && slot(1),
            });
            channels.push(cin);
        }
        CnnBackbone { stem, stages, channels }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.stem.init(store, rng);
        for st in &self.stages {
            for b in &st.blocks {
                for l in b.layers() {
                    l.init(store, rng);
                }
            }
        }
    }

    fn forward(&self, ctx: &mut Ctx, x: &Var) -> Vec<Var> {
        let mut feats = vec![self.stem.forward(ctx, x)];
        for st in &self.stages {
            let mut h = feats.last().unwrap().clone();
            if st.pool {
                h = h.max_pool2d(3, 2, 1);
            }
            for b in &st.blocks {
                h = b.forward(ctx, &h);
            }
            feats.push(h);
        }
        feats
    }
}

/// Feature extractor producing one map per stage, finest first.
#[derive(Debug, Clone)]
pub enum Backbone {
    Cnn(CnnBackbone),
    Swin(SwinBackbone),
}

impl Backbone {
    pub fn new(spec: &EncoderSpec) -> Self {
        match spec.family {
            Family::MicroCnn => Backbone::Cnn(CnnBackbone::micro(spec)),
            Family::Resnet18Like => Backbone::Cnn(CnnBackbone::resnet(spec, false)),
            Family::Resnet50Like => Backbone::Cnn(CnnBackbone::resnet(spec, true)),
            Family::SwinTinyLike => Backbone::Swin(SwinBackbone::new(spec)),
        }
    }

    /// Channels of each stage output, finest first.
    pub fn stage_channels(&self) -> Vec<usize> {
        match self {
            Backbone::Cnn(b) => b.channels.clone(),
            Backbone::Swin(b) => b.stage_channels(),
        }
    }

    pub fn out_channels(&self) -> usize {
        *self.stage_channels().last().unwrap()
    }

    /// Name of the first convolution's weight, the layer that sees raw channels.
    pub fn input_weight_name(&self) -> String {
        match self {
            Backbone::Cnn(b) => b.stem.conv.weight_name(),
            Backbone::Swin(b) => b.input_weight_name(),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        match self {
            Backbone::Cnn(b) => b.init(store, rng),
            Backbone::Swin(b) => b.init(store, rng),
        }
    }

    /// Stage outputs, each `N x C_s x H_s x W_s`; the last is the dense map.
    pub fn forward(&self, ctx: &mut Ctx, x: &Var) -> Vec<Var> {
        match self {
            Backbone::Cnn(b) => b.forward(ctx, x),
            Backbone::Swin(b) => b.forward(ctx, x),
        }
    }
}
