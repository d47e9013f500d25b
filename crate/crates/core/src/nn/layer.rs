//! Layer definitions with per-layer forward and backward passes.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    Relu,
    MaxPool2x2,
    AvgPoolGlobal,
    Flatten,
    Dense,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2x2 => "maxpool2x2",
            LayerKind::AvgPoolGlobal => "avgpool_global",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "conv2d" => LayerKind::Conv2d,
            "relu" => LayerKind::Relu,
            "maxpool2x2" => LayerKind::MaxPool2x2,
            "avgpool_global" => LayerKind::AvgPoolGlobal,
            "flatten" => LayerKind::Flatten,
            "dense" => LayerKind::Dense,
            _ => return None,
        })
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// 2-D convolution with zero padding.
///
/// `weight` has shape `(out_ch, in_ch, kh, kw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

/// Fully connected layer, `weight` shaped `(out_dim, in_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    MaxPool2x2,
    AvgPoolGlobal,
    Flatten,
    Dense(Dense),
}

/// Why a layer cannot accept a given input shape or holds invalid parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerShapeIssue {
    Input { expected: String, found: Vec<usize> },
    Params(String),
}

impl std::fmt::Display for LayerShapeIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerShapeIssue::Input { expected, found } => {
                write!(f, "expects input {expected}, got {found:?}")
            }
            LayerShapeIssue::Params(msg) => f.write_str(msg),
        }
    }
}

/// Gradients of one layer's parameters, laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer state kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub(crate) enum Saved {
    None,
    Argmax(Vec<usize>),
}

/// Dot product with eight interleaved partial sums.
///
/// The summation order is fixed, so results are reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Vec<f64>, stride: usize, padding: usize) -> Self {
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    fn check_params(&self) -> Result<(), LayerShapeIssue> {
        if self.weight.shape().len() != 4 || self.weight.shape().contains(&0) {
            return Err(LayerShapeIssue::Params(format!(
                "weight shape {:?} is not (out_ch, in_ch, kh, kw)",
                self.weight.shape()
            )));
        }
        if self.bias.len() != self.out_channels() {
            return Err(LayerShapeIssue::Params(format!(
                "bias length {} != out_ch {}",
                self.bias.len(),
                self.out_channels()
            )));
        }
        if self.stride == 0 {
            return Err(LayerShapeIssue::Params("stride must be >= 1".into()));
        }
        Ok(())
    }

    fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < kh || pw < kw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    /// Output columns `ox` whose source column `ox*s + kx - p` lies in `[0, w)`.
    fn valid_range(&self, k: usize, out: usize, input: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let p = self.padding as isize;
        let k = k as isize;
        // smallest ox with ox*s + k - p >= 0
        let lo = ((p - k).max(0) + s - 1) / s;
        // largest ox with ox*s + k - p <= input - 1
        let hi_num = input as isize - 1 + p - k;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out as isize);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw) = self.kernel();
        let (oh, ow) = self.output_hw(h, w).expect("shape checked");
        let c_out = self.out_channels();
        let s = self.stride;
        let p = self.padding;
        let wd = self.weight.data();
        let xd = x.data();
        let mut out = vec![0.0; c_out * oh * ow];
        for oc in 0..c_out {
            let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
            plane.fill(self.bias[oc]);
            for ic in 0..c_in {
                let src = &xd[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    let (oy0, oy1) = self.valid_range(ky, oh, h);
                    for kx in 0..kw {
                        let wv = wd[((oc * c_in + ic) * kh + ky) * kw + kx];
                        let (ox0, ox1) = self.valid_range(kx, ow, w);
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let row = &src[iy * w..(iy + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let ix0 = ox0 + kx - p;
                                let n = ox1 - ox0;
                                for (o, i) in orow[ox0..ox1].iter_mut().zip(&row[ix0..ix0 + n]) {
                                    *o += wv * i;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    orow[ox] += wv * row[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![c_out, oh, ow], out).expect("conv output length")
    }

    fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        want_input: bool,
        param: Option<&mut ParamGrad>,
    ) -> Option<Tensor> {
        let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw) = self.kernel();
        let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
        let c_out = self.out_channels();
        let s = self.stride;
        let p = self.padding;
        let wd = self.weight.data();
        let xd = x.data();
        let gd = grad_out.data();
        let mut gin = want_input.then(|| vec![0.0; c_in * h * w]);
        let mut param = param;
        for oc in 0..c_out {
            let gplane = &gd[oc * oh * ow..(oc + 1) * oh * ow];
            if let Some(pg) = param.as_deref_mut() {
                pg.bias[oc] += gplane.iter().sum::<f64>();
            }
            for ic in 0..c_in {
                let src = &xd[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    let (oy0, oy1) = self.valid_range(ky, oh, h);
                    for kx in 0..kw {
                        let widx = ((oc * c_in + ic) * kh + ky) * kw + kx;
                        let wv = wd[widx];
                        let (ox0, ox1) = self.valid_range(kx, ow, w);
                        let mut wgrad = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let row = &src[iy * w..(iy + 1) * w];
                            if s == 1 {
                                let ix0 = ox0 + kx - p;
                                wgrad += dot(&grow[ox0..ox1], &row[ix0..ix0 + (ox1 - ox0)]);
                            } else {
                                for ox in ox0..ox1 {
                                    wgrad += grow[ox] * row[ox * s + kx - p];
                                }
                            }
                            if let Some(gi) = gin.as_mut() {
                                let girow = &mut gi[ic * h * w + iy * w..ic * h * w + (iy + 1) * w];
                                for ox in ox0..ox1 {
                                    girow[ox * s + kx - p] += wv * grow[ox];
                                }
                            }
                        }
                        if let Some(pg) = param.as_deref_mut() {
                            pg.weight[widx] += wgrad;
                        }
                    }
                }
            }
        }
        gin.map(|g| Tensor::new(vec![c_in, h, w], g).expect("conv grad length"))
    }
}

impl Dense {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Self {
        Self { weight, bias }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn check_params(&self) -> Result<(), LayerShapeIssue> {
        if self.weight.shape().len() != 2 || self.weight.shape().contains(&0) {
            return Err(LayerShapeIssue::Params(format!(
                "weight shape {:?} is not (out_dim, in_dim)",
                self.weight.shape()
            )));
        }
        if self.bias.len() != self.out_dim() {
            return Err(LayerShapeIssue::Params(format!(
                "bias length {} != out_dim {}",
                self.bias.len(),
                self.out_dim()
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let n = self.in_dim();
        let out: Vec<f64> = self
            .weight
            .data()
            .chunks_exact(n)
            .zip(&self.bias)
            .map(|(row, b)| b + dot(row, x.data()))
            .collect();
        Tensor::new(vec![out.len()], out).expect("dense output length")
    }

    fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        want_input: bool,
        param: Option<&mut ParamGrad>,
    ) -> Option<Tensor> {
        let n = self.in_dim();
        let g = grad_out.data();
        if let Some(pg) = param {
            for (o, go) in g.iter().enumerate() {
                pg.bias[o] += go;
                for (dw, xv) in pg.weight[o * n..(o + 1) * n].iter_mut().zip(x.data()) {
                    *dw += go * xv;
                }
            }
        }
        want_input.then(|| {
            let mut gin = vec![0.0; n];
            for (row, go) in self.weight.data().chunks_exact(n).zip(g) {
                for (gi, w) in gin.iter_mut().zip(row) {
                    *gi += go * w;
                }
            }
            Tensor::new(x.shape().to_vec(), gin).expect("dense grad length")
        })
    }
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2x2 => LayerKind::MaxPool2x2,
            Layer::AvgPoolGlobal => LayerKind::AvgPoolGlobal,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
        }
    }

    /// Weight and bias slices for parametric layers.
    pub fn params(&self) -> Option<(&Tensor, &[f64])> {
        match self {
            Layer::Conv2d(c) => Some((&c.weight, &c.bias)),
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Vec<f64>)> {
        match self {
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }

    pub fn zero_grad(&self) -> Option<ParamGrad> {
        self.params().map(|(w, b)| ParamGrad {
            weight: vec![0.0; w.len()],
            bias: vec![0.0; b.len()],
        })
    }

    pub fn params_finite(&self) -> bool {
        self.params()
            .map(|(w, b)| w.all_finite() && b.iter().all(|v| v.is_finite()))
            .unwrap_or(true)
    }

    /// Shape produced by this layer for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, LayerShapeIssue> {
        let bad = |expected: &str| LayerShapeIssue::Input {
            expected: expected.to_string(),
            found: input.to_vec(),
        };
        match self {
            Layer::Conv2d(c) => {
                c.check_params()?;
                if input.len() != 3 || input[0] != c.in_channels() {
                    return Err(bad(&format!("({}, H, W)", c.in_channels())));
                }
                let (oh, ow) = c
                    .output_hw(input[1], input[2])
                    .ok_or_else(|| bad("spatial size at least the kernel size"))?;
                Ok(vec![c.out_channels(), oh, ow])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2x2 => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return Err(bad("(C, H>=2, W>=2)"));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            Layer::AvgPoolGlobal => {
                if input.len() != 3 {
                    return Err(bad("(C, H, W)"));
                }
                Ok(vec![input[0]])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => {
                d.check_params()?;
                if input != [d.in_dim()] {
                    return Err(bad(&format!("({},)", d.in_dim())));
                }
                Ok(vec![d.out_dim()])
            }
        }
    }

    pub(crate) fn forward(&self, x: &Tensor) -> (Tensor, Saved) {
        match self {
            Layer::Conv2d(c) => (c.forward(x), Saved::None),
            Layer::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                (
                    Tensor::new(x.shape().to_vec(), data).expect("relu length"),
                    Saved::None,
                )
            }
            Layer::MaxPool2x2 => {
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (oh, ow) = (h / 2, w / 2);
                let xd = x.data();
                let mut out = Vec::with_capacity(c * oh * ow);
                let mut arg = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let base = ch * h * w + 2 * oy * w + 2 * ox;
                            // first maximum in scan order wins ties
                            let mut best = base;
                            for idx in [base + 1, base + w, base + w + 1] {
                                if xd[idx] > xd[best] {
                                    best = idx;
                                }
                            }
                            out.push(xd[best]);
                            arg.push(best);
                        }
                    }
                }
                (
                    Tensor::new(vec![c, oh, ow], out).expect("pool length"),
                    Saved::Argmax(arg),
                )
            }
            Layer::AvgPoolGlobal => {
                let c = x.shape()[0];
                let plane = x.len() / c;
                let out = x
                    .data()
                    .chunks_exact(plane)
                    .map(|p| p.iter().sum::<f64>() / plane as f64)
                    .collect();
                (Tensor::new(vec![c], out).expect("gap length"), Saved::None)
            }
            Layer::Flatten => (
                x.clone().reshape(vec![x.len()]).expect("flatten length"),
                Saved::None,
            ),
            Layer::Dense(d) => (d.forward(x), Saved::None),
        }
    }

    /// Propagates `grad_out` back through the layer.
    ///
    /// `x` is the layer input from the forward pass. Parameter gradients are
    /// accumulated into `param` when given. Returns the input gradient when
    /// `want_input` is set.
    pub(crate) fn backward(
        &self,
        x: &Tensor,
        saved: &Saved,
        grad_out: &Tensor,
        want_input: bool,
        param: Option<&mut ParamGrad>,
    ) -> Option<Tensor> {
        match self {
            Layer::Conv2d(c) => c.backward(x, grad_out, want_input, param),
            Layer::Dense(d) => d.backward(x, grad_out, want_input, param),
            _ if !want_input => None,
            Layer::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                Some(Tensor::new(x.shape().to_vec(), data).expect("relu grad length"))
            }
            Layer::MaxPool2x2 => {
                let Saved::Argmax(arg) = saved else {
                    unreachable!("maxpool forward always saves argmax")
                };
                let mut gin = vec![0.0; x.len()];
                for (g, &idx) in grad_out.data().iter().zip(arg) {
                    gin[idx] += g;
                }
                Some(Tensor::new(x.shape().to_vec(), gin).expect("pool grad length"))
            }
            Layer::AvgPoolGlobal => {
                let c = x.shape()[0];
                let plane = x.len() / c;
                let mut gin = Vec::with_capacity(x.len());
                for g in grad_out.data() {
                    gin.extend(std::iter::repeat_n(g / plane as f64, plane));
                }
                Some(Tensor::new(x.shape().to_vec(), gin).expect("gap grad length"))
            }
            Layer::Flatten => Some(
                grad_out
                    .clone()
                    .reshape(x.shape().to_vec())
                    .expect("flatten grad length"),
            ),
        }
    }
}
